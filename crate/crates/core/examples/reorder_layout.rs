//! Record traversal heat from queries, then rewrite the on-disk layout so
//! hot paths span fewer storage windows. Answers do not change.

use lsm_ann::bench::sift_like;
use lsm_ann::{IndexConfig, LsmVecIndex, SearchParams};

fn main() -> lsm_ann::Result<()> {
    let dir = tempfile::tempdir()?;
    let dim = 32;
    let mut cfg = IndexConfig::new(dim);
    cfg.score.window = 8;
    cfg.score.lambda = 4.0;
    let mut index = LsmVecIndex::create(dir.path(), cfg)?;
    for x in sift_like(3000, dim, 16, 5, 0) {
        index.insert(&x)?;
    }

    let queries = sift_like(40, dim, 16, 5, 1);
    let mut p = SearchParams::new(10, 50);
    p.record_heat = true;
    let before: Vec<_> = queries
        .iter()
        .map(|q| index.search(q, &p))
        .collect::<lsm_ann::Result<_>>()?;
    let heat = index.heat_map();
    println!(
        "heat map: {} pairs, hottest count {}",
        heat.len(),
        heat.max_count()
    );
    print!(
        "{}",
        heat.to_csv().lines().take(4).collect::<Vec<_>>().join("\n")
    );
    println!("\n...");

    let report = index.reorder_layout()?;
    println!("{report}");

    p.record_heat = false;
    let same = queries
        .iter()
        .zip(&before)
        .all(|(q, b)| index.search(q, &p).map(|r| r.ids == b.ids).unwrap_or(false));
    println!("results unchanged after reorder: {same}");
    Ok(())
}
