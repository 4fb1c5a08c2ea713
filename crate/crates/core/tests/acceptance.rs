//! End-to-end acceptance checks. Runs without the libtest harness and
//! prints one `PASS`/`FAIL` line per criterion; exits nonzero if any fail.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use lsm_ann::bench::{
    ground_truth, recall_at_k, run_workload, sift_like, uniform, Scenario, WorkloadSpec,
};
use lsm_ann::metrics::{cost_full, cost_sampling, cost_saving};
use lsm_ann::reorder::{
    layout_objective, reorder, Graph, HeatMap, LayoutScorer, Permutation, ScoreMode, ScoreParams,
};
use lsm_ann::simhash::{collision_threshold, collisions, ProjectionSet};
use lsm_ann::{FilterParams, HnswParams, IndexConfig, LsmVecIndex, SearchParams, VectorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const DIM: usize = 128;
const CLUSTERS: usize = 64;
const SEED: u64 = 42;

/// 10k SIFT-like base, 100 queries and their exact top-10.
struct Sift10k {
    _dir: tempfile::TempDir,
    index: LsmVecIndex,
    base: Vec<(VectorId, Vec<f32>)>,
    queries: Vec<Vec<f32>>,
    truth: Vec<Vec<VectorId>>,
}

impl Sift10k {
    fn build() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut index = LsmVecIndex::create(dir.path(), IndexConfig::new(DIM)).unwrap();
        let base: Vec<_> = sift_like(10_000, DIM, CLUSTERS, SEED, 0)
            .into_iter()
            .map(|x| (index.insert(&x).unwrap(), x))
            .collect();
        let queries = sift_like(100, DIM, CLUSTERS, SEED, 1);
        let truth = ground_truth(&queries, &base, 10).unwrap();
        Self {
            _dir: dir,
            index,
            base,
            queries,
            truth,
        }
    }

    /// (mean recall, total vector fetches) over the query set.
    fn run(&self, p: &SearchParams) -> (f64, u64) {
        let mut recall = 0.0;
        let mut fetches = 0;
        for (q, g) in self.queries.iter().zip(&self.truth) {
            let r = self.index.search(q, p).unwrap();
            recall += recall_at_k(&r.ids, g, 10).unwrap();
            fetches += r.io.vector_fetches;
        }
        (recall / self.queries.len() as f64, fetches)
    }
}

fn sampled(rho: f64) -> SearchParams {
    SearchParams::new(10, 100).with_filter(FilterParams {
        rho,
        ..FilterParams::default()
    })
}

fn brute_force_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    let mut sizes = Vec::new();
    for inst in 0..20u64 {
        let dim = [8, 32, 128][inst as usize % 3];
        let n = rng.random_range(200..=2000);
        sizes.push(n);
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = IndexConfig::new(dim);
        cfg.level_seed = inst;
        let mut idx = LsmVecIndex::create(dir.path(), cfg).unwrap();
        let pts = if inst % 2 == 0 {
            uniform(n, dim, inst)
        } else {
            sift_like(n, dim, 16, inst, 0)
        };
        let corpus: Vec<_> = pts
            .into_iter()
            .map(|x| (idx.insert(&x).unwrap(), x))
            .collect();
        let queries = uniform(10, dim, 1000 + inst);
        let queries: Vec<Vec<f32>> = if inst % 2 == 0 {
            queries
        } else {
            sift_like(10, dim, 16, inst, 1)
        };
        let truth = ground_truth(&queries, &corpus, 10).unwrap();
        let mut recall = 0.0;
        for (q, g) in queries.iter().zip(&truth) {
            let r = idx.search(q, &SearchParams::new(10, n)).unwrap();
            recall += recall_at_k(&r.ids, g, 10).unwrap();
        }
        recall /= queries.len() as f64;
        if recall < 1.0 {
            failures.push(format!(
                "instance {inst} (n={n}, d={dim}) recall {recall:.3}"
            ));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "20 instances, n in {}..={}, recall 1.0 everywhere",
                sizes.iter().min().unwrap(),
                sizes.iter().max().unwrap()
            )
        } else {
            failures.join("; ")
        },
    )
}

fn dynamic_integrity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = IndexConfig::new(16);
    cfg.hnsw = HnswParams {
        m: 8,
        m_max: 16,
        ef_construction: 40,
    };
    cfg.lsm.memtable_bytes = 25 * 512;
    cfg.lsm.level1_bytes = 25 * 4096;
    cfg.lsm.l0_run_limit = 3;
    cfg.lsm.run_max_entries = 2048;
    cfg.lsm.size_ratio = 4;
    let mut idx = LsmVecIndex::create(dir.path(), cfg).unwrap();
    idx.enable_audit().unwrap();
    let pts = uniform(10_000, 16, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut ins, mut del, mut flush, mut compact) = (0usize, 0usize, 0usize, 0usize);
    let mut bad = Vec::new();
    for op in 0..10_000 {
        let r: f64 = rng.random();
        let live = idx.live_ids();
        if r < 0.5 || live.is_empty() {
            idx.insert(&pts[ins]).unwrap();
            ins += 1;
        } else if r < 0.8 {
            idx.delete(live[rng.random_range(0..live.len())]).unwrap();
            del += 1;
        } else if r < 0.9 {
            idx.flush().unwrap();
            flush += 1;
        } else {
            if rng.random_bool(0.2) {
                idx.compact_all().unwrap();
            } else {
                idx.maybe_compact().unwrap();
            }
            compact += 1;
        }
        if (op + 1) % 2000 == 0 {
            let rep = idx.check_invariants().unwrap();
            if !rep.is_ok() {
                bad.push(format!(
                    "after op {}: {:?}",
                    op + 1,
                    &rep.violations[..rep.violations.len().min(3)]
                ));
            }
        }
    }
    let rep = idx.check_invariants().unwrap();
    let live_ok = idx.len() == ins - del && idx.vector_store().live_ids().len() == idx.len();
    check(
        bad.is_empty() && rep.is_ok() && live_ok,
        format!(
            "{ins} inserts, {del} deletes, {flush} flushes, {compact} compactions; {} bottom edges, {} unreachable; {}",
            rep.bottom_edges,
            rep.unreachable,
            if bad.is_empty() { "no violations".into() } else { bad.join("; ") }
        ),
    )
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit vector at angle `theta` from unit `q`.
fn at_angle(rng: &mut ChaCha8Rng, q: &[f32], theta: f64) -> Vec<f32> {
    let r = unit(rng, q.len());
    let dot: f32 = r.iter().zip(q).map(|(a, b)| a * b).sum();
    let mut u: Vec<f32> = r.iter().zip(q).map(|(a, b)| a - dot * b).collect();
    let n = u.iter().map(|x| x * x).sum::<f32>().sqrt();
    u.iter_mut().for_each(|x| *x /= n);
    q.iter()
        .zip(&u)
        .map(|(a, b)| theta.cos() as f32 * a + theta.sin() as f32 * b)
        .collect()
}

fn hoeffding_guarantee() -> Outcome {
    const BITS: usize = 128;
    const EPS: f64 = 0.05;
    const DIM: usize = 32;
    let delta = 1.0f64;
    let theta_max = 2.0 * (delta / 2.0).asin();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut misses, mut boundary_misses, trials) = (0usize, 0usize, 100_000usize);
    let mut proj = ProjectionSet::new(BITS, DIM, 0).unwrap();
    for i in 0..trials {
        if i % 100 == 0 {
            proj = ProjectionSet::new(BITS, DIM, i as u64).unwrap();
        }
        let q = unit(&mut rng, DIM);
        let boundary = i % 2 == 0;
        let theta = if boundary {
            theta_max
        } else {
            rng.random_range(0.0..theta_max)
        };
        let x = at_angle(&mut rng, &q, theta);
        let t = collision_threshold(BITS, EPS, delta, &q).unwrap();
        let c = collisions(&proj.hash(&q).unwrap(), &proj.hash(&x).unwrap()).unwrap();
        if c < t {
            misses += 1;
            boundary_misses += boundary as usize;
        }
    }
    let rate = misses as f64 / trials as f64;
    let brate = boundary_misses as f64 / (trials / 2) as f64;
    check(
        rate <= EPS + 0.005 && brate <= EPS + 0.005,
        format!("false-negative rate {rate:.4} over all pairs, {brate:.4} at distance exactly delta (bound {EPS})"),
    )
}

fn cost_model(fx: &Sift10k) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut exact_bad = 0;
    let mut real_bad = 0;
    for _ in 0..10_000 {
        let t = rng.random_range(0..5000) as f64;
        let d = rng.random_range(0..64) as f64;
        let tn = rng.random_range(1..100) as f64;
        let tv = rng.random_range(1..100) as f64;
        let rho = rng.random_range(1..=1024) as f64 / 1024.0;
        let lhs = cost_full(t, d, tn, tv) - cost_sampling(t, d, tn, tv, rho).unwrap();
        if lhs != cost_saving(t, d, tv, rho).unwrap() || lhs != t * (1.0 - rho) * d * tv {
            exact_bad += 1;
        }
        let (t, d, tn, tv): (f64, f64, f64, f64) = (
            rng.random_range(0.0..1e4),
            rng.random_range(0.0..64.0),
            rng.random_range(0.01..10.0),
            rng.random_range(0.01..10.0),
        );
        let rho = rng.random_range(1e-6..=1.0);
        let lhs = cost_full(t, d, tn, tv) - cost_sampling(t, d, tn, tv, rho).unwrap();
        let rhs = t * (1.0 - rho) * d * tv;
        if (lhs - rhs).abs() > 1e-9 * cost_full(t, d, tn, tv).max(1.0) {
            real_bad += 1;
        }
    }
    let (_, full) = fx.run(&sampled(1.0));
    let (_, half) = fx.run(&sampled(0.5));
    let ratio = half as f64 / full as f64;
    check(
        exact_bad == 0 && real_bad == 0 && (0.45..=0.75).contains(&ratio),
        format!(
            "identity: {exact_bad} exact and {real_bad} real-valued mismatches in 10000 cases each; fetches rho=1.0 {full}, rho=0.5 {half}, ratio {ratio:.3}"
        ),
    )
}

fn sampling_trend(fx: &Sift10k) -> Outcome {
    let rows: Vec<(f64, f64, u64)> = [1.0, 0.9, 0.8, 0.7]
        .into_iter()
        .map(|rho| {
            let (r, f) = fx.run(&sampled(rho));
            (rho, r, f)
        })
        .collect();
    let recall_ok = rows.windows(2).all(|w| w[1].1 <= w[0].1);
    let fetch_ok = rows.windows(2).all(|w| w[1].2 < w[0].2);
    let drop = rows[0].1 - rows[2].1;
    let table: Vec<String> = rows
        .iter()
        .map(|(p, r, f)| format!("rho {p}: recall {r:.3}, fetches {f}"))
        .collect();
    check(
        recall_ok && fetch_ok && drop <= 0.08,
        format!(
            "{}; drop 1.0->0.8 {:.1} points",
            table.join(", "),
            drop * 100.0
        ),
    )
}

fn random_graph(rng: &mut ChaCha8Rng, n: u64, p: f64) -> Graph {
    let mut g: Graph = (0..n).map(|i| (i, Vec::new())).collect();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(p) {
                g.get_mut(&a).unwrap().push(b);
            }
        }
    }
    g
}

fn permutations(items: &[u64]) -> Vec<Vec<u64>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

fn reordering(fx: &mut Sift10k) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut below_identity = 0;
    for trial in 0..300 {
        let n = rng.random_range(2..60);
        let p = rng.random_range(0.02..0.3);
        let g = random_graph(&mut rng, n, p);
        let mut heat = HeatMap::new(0.5);
        for _ in 0..rng.random_range(0..50) {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            heat.record_traversal(a, b);
        }
        let params = ScoreParams {
            lambda: rng.random_range(0.0..10.0),
            window: 1 + trial % 8,
            mode: ScoreMode::Heat,
        };
        let s = LayoutScorer::new(&g, &heat, params);
        let id = Permutation::identity(&(0..n).collect::<Vec<_>>()).unwrap();
        if layout_objective(&reorder(&s, &id).unwrap(), &s).unwrap()
            < layout_objective(&id, &s).unwrap()
        {
            below_identity += 1;
        }
    }

    let pairs: Vec<(u64, u64)> = (0..4)
        .flat_map(|a| (0..4).map(move |b| (a, b)))
        .filter(|(a, b)| a != b)
        .collect();
    let perms = permutations(&[0, 1, 2, 3]);
    let id4 = Permutation::identity(&[0, 1, 2, 3]).unwrap();
    let mut worst = f64::INFINITY;
    let mut instances = 0;
    for mask in 0u32..(1 << pairs.len()) {
        let mut g: Graph = (0..4).map(|i| (i, Vec::new())).collect();
        let edges: Vec<_> = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, e)| *e)
            .collect();
        for &(a, b) in &edges {
            g.get_mut(&a).unwrap().push(b);
        }
        let mut heats = vec![HeatMap::new(0.5)];
        for &(a, b) in &edges {
            let mut h = HeatMap::new(0.5);
            h.record_traversal(a, b);
            heats.push(h);
        }
        for heat in &heats {
            let s = LayoutScorer::new(
                &g,
                heat,
                ScoreParams {
                    lambda: 1.0,
                    window: 1,
                    mode: ScoreMode::Heat,
                },
            );
            let best = perms
                .iter()
                .map(|p| {
                    layout_objective(&Permutation::from_order(p.clone()).unwrap(), &s).unwrap()
                })
                .fold(0.0, f64::max);
            let got = layout_objective(&reorder(&s, &id4).unwrap(), &s).unwrap();
            instances += 1;
            if best > 0.0 {
                worst = worst.min(got / best);
            }
        }
    }

    let mut p = SearchParams::new(10, 100);
    p.record_heat = true;
    let before: Vec<_> = fx
        .queries
        .iter()
        .map(|q| fx.index.search(q, &p).unwrap())
        .collect();
    let rep = fx.index.reorder_layout().unwrap();
    p.record_heat = false;
    let identical = fx.queries.iter().zip(&before).all(|(q, b)| {
        let r = fx.index.search(q, &p).unwrap();
        r.ids == b.ids
            && r.dists
                .iter()
                .zip(&b.dists)
                .all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let invariants = fx.index.check_invariants().unwrap().is_ok();
    check(
        below_identity == 0 && worst >= 0.8 && rep.windows_after <= rep.windows_before && identical && invariants,
        format!(
            "greedy below identity on {below_identity}/300 random inputs; worst 4-node ratio {worst:.3} over {instances} instances; hot-path windows {:.2} -> {:.2} over {} paths; 100 queries identical after reorder: {identical}",
            rep.windows_before, rep.windows_after, rep.hot_paths
        ),
    )
}

fn workload(fx: &mut Sift10k) -> Outcome {
    let reserve = sift_like(2_000, DIM, CLUSTERS, SEED, 2);
    let mut spec = WorkloadSpec::new(Scenario::Balanced, 20, SEED);
    spec.check_invariants = true;
    let rep = run_workload(&mut fx.index, &fx.base, &reserve, &fx.queries, &spec).unwrap();
    let first = rep.first_batch_recall().unwrap_or(0.0);
    let drop = rep.max_drop_from_first();
    let inv = rep.rows.iter().all(|r| r.invariants_ok);
    let batches = rep.rows.len() - 1;
    let min = rep.rows.iter().map(|r| r.recall).fold(1.0, f64::min);
    check(
        batches == 20 && drop <= 0.10 && inv,
        format!(
            "{batches} batches of {}; batch-1 recall {first:.3}, minimum {min:.3}, max drop {:.1} points; invariants held at every boundary: {inv}",
            rep.batch_size,
            drop * 100.0
        ),
    )
}

/// Removes columns whose header names a wall-clock quantity.
fn strip_timing(report: &str) -> String {
    let mut lines = report.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let cols: Vec<&str> = header.split(',').collect();
    let keep: Vec<bool> = cols
        .iter()
        .map(|c| !(c.ends_with("_us") || c.ends_with("_seconds") || *c == "concurrent_searches"))
        .collect();
    std::iter::once(header)
        .chain(lines)
        .map(|l| {
            l.split(',')
                .zip(keep.iter().chain(std::iter::repeat(&true)))
                .filter(|(_, k)| **k)
                .map(|(v, _)| v)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn cli(dir: &Path, config: &Path, args: &[&str]) -> Result<String, String> {
    let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    full.extend([
        "--index".into(),
        dir.display().to_string(),
        "--config".into(),
        config.display().to_string(),
    ]);
    let out = Command::new(env!("CARGO_BIN_EXE_lsm-ann"))
        .args(&full)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("run.conf");
    std::fs::write(
        &config,
        "# shared settings\nseed = 9\ndim = 32\nclusters = 16\nm = 8\nm_max = 16\nef_construction = 60\nmemtable_bytes = 65536\nk = 10\nef = 60\n",
    )
    .unwrap();
    let commands: &[&[&str]] = &[
        &["build", "--synthetic", "3000"],
        &["search", "--synthetic-queries", "50", "--rho", "0.5"],
        &["insert", "--synthetic", "200"],
        &["delete", "--random", "150"],
        &[
            "reorder",
            "--synthetic-queries",
            "50",
            "--window",
            "4",
            "--lambda",
            "2",
        ],
        &["search", "--synthetic-queries", "50"],
        &[
            "stats",
            "--format",
            "csv",
            "--synthetic-queries",
            "20",
            "--rho",
            "0.7",
        ],
    ];
    let mut mismatched = Vec::new();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for args in commands {
        let ra = cli(&a, &config, args)?;
        let rb = cli(&b, &config, args)?;
        if strip_timing(&ra) != strip_timing(&rb) {
            mismatched.push(args[0].to_string());
        }
    }
    let bench: &[&str] = &[
        "bench",
        "--synthetic",
        "3000",
        "--synthetic-queries",
        "30",
        "--scenario",
        "balanced",
        "--batches",
        "4",
        "--searchers",
        "2",
    ];
    let ba = cli(&root.path().join("ba"), &config, bench)?;
    let bb = cli(&root.path().join("bb"), &config, bench)?;
    if strip_timing(&ba) != strip_timing(&bb) {
        mismatched.push("bench".into());
    }
    check(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!(
                "{} commands produced identical reports twice",
                commands.len() + 1
            )
        } else {
            format!("reports differ for: {}", mismatched.join(", "))
        },
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, start: Instant, r: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("criterion {n} {name}: PASS ({secs:.1}s) {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({secs:.1}s) {d}");
            }
        }
    };
    let t = Instant::now();
    report(1, "brute-force equivalence", t, brute_force_equivalence());
    let t = Instant::now();
    report(2, "dynamic integrity", t, dynamic_integrity());
    let t = Instant::now();
    report(3, "hoeffding guarantee", t, hoeffding_guarantee());
    let t = Instant::now();
    let mut fx = Sift10k::build();
    println!(
        "built 10k SIFT-like index in {:.1}s",
        t.elapsed().as_secs_f64()
    );
    let t = Instant::now();
    report(4, "cost model", t, cost_model(&fx));
    let t = Instant::now();
    report(5, "sampling trend", t, sampling_trend(&fx));
    let t = Instant::now();
    report(6, "reordering efficacy", t, reordering(&mut fx));
    let t = Instant::now();
    report(7, "workload robustness", t, workload(&mut fx));
    let t = Instant::now();
    report(8, "determinism", t, determinism());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
