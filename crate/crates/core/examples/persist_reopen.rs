//! Persist an index after updates, reopen it, and inspect its statistics
//! and invariant report.

use lsm_ann::bench::uniform;
use lsm_ann::{IndexConfig, LsmVecIndex, SearchParams};

fn main() -> lsm_ann::Result<()> {
    let dir = tempfile::tempdir()?;
    let q = vec![0.0; 16];
    let before = {
        let mut index = LsmVecIndex::create(dir.path(), IndexConfig::new(16))?;
        for x in uniform(1500, 16, 9) {
            index.insert(&x)?;
        }
        for id in (0..1500).step_by(5) {
            index.delete(id)?;
        }
        index.persist()?;
        index.search(&q, &SearchParams::new(5, 50))?.ids
    };

    let index = LsmVecIndex::open(dir.path())?;
    println!("{}", index.stats()?);
    let report = index.check_invariants()?;
    println!(
        "invariants ok: {}, {} bottom edges, {} unreachable",
        report.is_ok(),
        report.bottom_edges,
        report.unreachable
    );
    assert_eq!(index.search(&q, &SearchParams::new(5, 50))?.ids, before);
    println!("reopened index answers identically");
    Ok(())
}
