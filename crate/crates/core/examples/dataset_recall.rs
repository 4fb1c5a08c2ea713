//! Round-trip base, query and ground-truth files in fvecs/ivecs format and
//! score an index against them at several pool sizes.

use lsm_ann::bench::{
    ground_truth, read_ivecs, read_vectors, recall_at_k, sift_like, write_fvecs, write_ivecs,
};
use lsm_ann::{IndexConfig, LsmVecIndex, SearchParams};

fn main() -> lsm_ann::Result<()> {
    let dir = tempfile::tempdir()?;
    let base_path = dir.path().join("base.fvecs");
    let query_path = dir.path().join("query.fvecs");
    let gt_path = dir.path().join("gt.ivecs");
    let dim = 48;

    let base = sift_like(2000, dim, 24, 4, 0);
    let queries = sift_like(20, dim, 24, 4, 1);
    write_fvecs(&base_path, &base)?;
    write_fvecs(&query_path, &queries)?;
    let ids: Vec<_> = (0..base.len() as u64).zip(base.iter().cloned()).collect();
    let gt: Vec<Vec<i32>> = ground_truth(&queries, &ids, 10)?
        .into_iter()
        .map(|r| r.into_iter().map(|i| i as i32).collect())
        .collect();
    write_ivecs(&gt_path, &gt)?;
    println!("base file {} bytes", std::fs::metadata(&base_path)?.len());

    let base = read_vectors(&base_path, None)?;
    let queries = read_vectors(&query_path, None)?;
    let gt = read_ivecs(&gt_path, None)?;

    let mut index = LsmVecIndex::create(dir.path().join("index"), IndexConfig::new(dim))?;
    for x in &base {
        index.insert(x)?;
    }
    for ef in [10, 20, 40, 80] {
        let p = SearchParams::new(10, ef);
        let mut recall = 0.0;
        for (q, g) in queries.iter().zip(&gt) {
            let truth: Vec<u64> = g.iter().map(|&i| i as u64).collect();
            recall += recall_at_k(&index.search(q, &p)?.ids, &truth, 10)?;
        }
        println!("ef {ef:>3}: recall@10 {:.3}", recall / queries.len() as f64);
    }
    Ok(())
}
