//! Build an index over SIFT-like vectors and run a few k-NN queries.

use lsm_ann::bench::{ground_truth, recall_at_k, sift_like};
use lsm_ann::{IndexConfig, LsmVecIndex, SearchParams};

fn main() -> lsm_ann::Result<()> {
    let dir = tempfile::tempdir()?;
    let dim = 64;
    let mut index = LsmVecIndex::create(dir.path(), IndexConfig::new(dim))?;

    let base = sift_like(3000, dim, 32, 1, 0);
    let corpus: Vec<_> = base
        .iter()
        .map(|x| Ok((index.insert(x)?, x.clone())))
        .collect::<lsm_ann::Result<_>>()?;
    println!(
        "indexed {} vectors, top level {}",
        index.len(),
        index.max_level()
    );

    let queries = sift_like(5, dim, 32, 1, 1);
    let truth = ground_truth(&queries, &corpus, 10)?;
    let params = SearchParams::new(10, 64);
    for (i, (q, g)) in queries.iter().zip(&truth).enumerate() {
        let r = index.search(q, &params)?;
        println!(
            "query {i}: nearest {:?} at {:.1}, recall@10 {:.2}, {} vector fetches",
            r.ids[0],
            r.dists[0],
            recall_at_k(&r.ids, g, 10)?,
            r.io.vector_fetches
        );
    }
    Ok(())
}
