//! The bottom layer as an LSM edge store: one record per directed edge,
//! tombstones for deletions, flushes and compactions.

use std::sync::Arc;

use lsm_ann::lsm::{LsmGraphStore, LsmOptions};
use lsm_ann::IoCounters;

fn main() -> lsm_ann::Result<()> {
    let dir = tempfile::tempdir()?;
    let opts = LsmOptions {
        auto_compact: false,
        ..LsmOptions::default()
    };
    let mut store = LsmGraphStore::open(dir.path(), opts, Arc::new(IoCounters::new()))?;

    // A new node 9 joins with neighbors 4 and 5: four records.
    for (a, b) in [(9, 4), (4, 9), (9, 5), (5, 9)] {
        store.put_edge(a, b)?;
    }
    let run = store.flush_memtable()?.expect("memtable was not empty");
    for e in store.run_entries(run.id)? {
        println!("run {} record ({}, {}) {:?}", run.id, e.src, e.dst, e.op);
    }

    store.delete_edge(9, 4)?;
    store.delete_edge(4, 9)?;
    store.flush_memtable()?;
    println!(
        "runs before compaction: {:?}",
        store
            .run_infos()
            .iter()
            .map(|r| (r.level, r.entries))
            .collect::<Vec<_>>()
    );
    println!("neighbors(9) = {:?}", store.neighbors(9)?);

    store.compact_all()?;
    println!(
        "runs after compaction:  {:?}",
        store
            .run_infos()
            .iter()
            .map(|r| (r.level, r.entries))
            .collect::<Vec<_>>()
    );
    println!("neighbors(9) = {:?}", store.neighbors(9)?);
    store.check_invariants().map_err(lsm_ann::Error::InvalidParam)?;
    println!("LSM invariants hold");
    Ok(())
}
