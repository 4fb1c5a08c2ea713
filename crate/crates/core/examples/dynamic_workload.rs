//! Insert-heavy and delete-heavy workloads with per-batch recall against a
//! recomputed ground truth, with two searcher threads running alongside.

use lsm_ann::bench::{run_workload, sift_like, Scenario, WorkloadSpec};
use lsm_ann::{IndexConfig, LsmVecIndex};

fn main() -> lsm_ann::Result<()> {
    let dim = 32;
    let base = sift_like(3000, dim, 16, 8, 0);
    let reserve = sift_like(1000, dim, 16, 8, 2);
    let queries = sift_like(30, dim, 16, 8, 1);

    for scenario in [Scenario::InsertHeavy, Scenario::DeleteHeavy] {
        let dir = tempfile::tempdir()?;
        let mut index = LsmVecIndex::create(dir.path(), IndexConfig::new(dim))?;
        let initial: Vec<_> = base
            .iter()
            .map(|x| Ok((index.insert(x)?, x.clone())))
            .collect::<lsm_ann::Result<_>>()?;
        let mut spec = WorkloadSpec::new(scenario, 5, 1);
        spec.batch_size = Some(60);
        spec.check_invariants = true;
        spec.concurrent_searchers = 2;
        let report = run_workload(&mut index, &initial, &reserve, &queries, &spec)?;
        println!(
            "{} (peak memory estimate {} bytes):",
            scenario.name(),
            report.peak_memory_bytes
        );
        print!("{}", report.to_csv(true));
    }
    Ok(())
}
