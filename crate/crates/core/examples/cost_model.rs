//! I/O cost model: closed-form costs, and measured vector fetches against
//! the `rho * d * T` prediction.

use lsm_ann::bench::sift_like;
use lsm_ann::metrics::{cost_full, cost_sampling, cost_saving, predict_vs_measure, CostReport};
use lsm_ann::{FilterParams, IndexConfig, LsmVecIndex, SearchParams};

fn main() -> lsm_ann::Result<()> {
    let (t, d, t_n, t_v) = (100.0, 32.0, 1.0, 1.0);
    println!(
        "full {}  sampling(0.5) {}  saving {}",
        cost_full(t, d, t_n, t_v),
        cost_sampling(t, d, t_n, t_v, 0.5)?,
        cost_saving(t, d, t_v, 0.5)?
    );

    let dir = tempfile::tempdir()?;
    let dim = 64;
    let mut index = LsmVecIndex::create(dir.path(), IndexConfig::new(dim))?;
    for x in sift_like(4000, dim, 32, 2, 0) {
        index.insert(&x)?;
    }
    let queries = sift_like(50, dim, 32, 2, 1);
    println!("{}", CostReport::CSV_HEADER);
    for rho in [1.0, 0.75, 0.5, 0.25] {
        let p = SearchParams::new(10, 100).with_filter(FilterParams {
            rho,
            ..FilterParams::default()
        });
        let r = predict_vs_measure(&index, &queries, &p, 1.0, 4.0)?;
        println!("{}", r.to_csv());
    }
    let before = index.io_snapshot();
    index.search(&queries[0], &SearchParams::new(10, 100))?;
    println!("one unfiltered query:\n{}", index.io_snapshot() - before);
    Ok(())
}
