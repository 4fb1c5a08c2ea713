//! SimHash codes, Hoeffding collision thresholds, and the effect of the
//! sampling ratio on recall and vector fetches.

use lsm_ann::bench::{ground_truth, recall_at_k, sift_like};
use lsm_ann::simhash::{collision_threshold, collisions, filter_neighbors, ProjectionSet};
use lsm_ann::{FilterParams, IndexConfig, LsmVecIndex, SearchParams};

fn main() -> lsm_ann::Result<()> {
    let proj = ProjectionSet::new(128, 4, 7)?;
    let q = [1.0, 0.0, 0.0, 0.0];
    let near = [0.9, 0.3, 0.0, 0.1];
    let far = [-0.2, 0.1, 1.0, 0.0];
    let cq = proj.hash(&q)?;
    for (name, x) in [("near", near), ("far", far)] {
        println!(
            "{name}: {} of 128 bits collide",
            collisions(&cq, &proj.hash(&x)?)?
        );
    }
    for eps in [0.01, 0.1, 0.5] {
        println!(
            "threshold at delta=0.5, eps={eps}: {}",
            collision_threshold(128, eps, 0.5, &q)?
        );
    }
    let cands = [(1, proj.hash(&near)?), (2, proj.hash(&far)?)];
    let refs: Vec<_> = cands.iter().map(|(id, c)| (*id, c)).collect();
    println!(
        "selected with rho=0.5, T=100: {:?}",
        filter_neighbors(&cq, &refs, 0.5, 100)?
    );

    let dir = tempfile::tempdir()?;
    let dim = 128;
    let mut index = LsmVecIndex::create(dir.path(), IndexConfig::new(dim))?;
    let corpus: Vec<_> = sift_like(4000, dim, 32, 3, 0)
        .into_iter()
        .map(|x| Ok((index.insert(&x)?, x)))
        .collect::<lsm_ann::Result<_>>()?;
    let queries = sift_like(50, dim, 32, 3, 1);
    let truth = ground_truth(&queries, &corpus, 10)?;
    println!("rho  recall  vector_fetches/query");
    for rho in [1.0, 0.9, 0.8, 0.7, 0.5] {
        let p = SearchParams::new(10, 100).with_filter(FilterParams {
            rho,
            ..FilterParams::default()
        });
        let (mut recall, mut fetches) = (0.0, 0);
        for (q, g) in queries.iter().zip(&truth) {
            let r = index.search(q, &p)?;
            recall += recall_at_k(&r.ids, g, 10)?;
            fetches += r.io.vector_fetches;
        }
        let n = queries.len() as f64;
        println!("{rho:<4} {:.3}   {:.1}", recall / n, fetches as f64 / n);
    }
    Ok(())
}
