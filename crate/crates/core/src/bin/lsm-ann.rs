//! Command-line driver. Every `--flag-name VALUE` can also be given as a
//! `flag_name = value` line in the file passed to `--config`; flags win.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Arg, ArgMatches, Command};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lsm_ann::bench::{
    ground_truth, read_ivecs, read_vectors, recall_at_k, run_workload, sift_like, write_ivecs,
    Scenario, WorkloadSpec,
};
use lsm_ann::config::{apply_index_config, parse_score_mode, KvConfig, INDEX_KEYS};
use lsm_ann::metrics::predict_vs_measure;
use lsm_ann::{FilterParams, IndexConfig, IoSnapshot, LsmVecIndex, SearchParams, VectorId};

type Keys = &'static [(&'static str, &'static str)];

const COMMON: Keys = &[
    ("index", "index directory"),
    ("seed", "seed for synthetic data and random choices"),
    ("timing", "include wall-clock columns (true/false)"),
    ("out", "also write the report to this file"),
];
const BASE: Keys = &[
    ("base", "base vectors (.fvecs or .bvecs)"),
    ("limit", "read at most this many base vectors"),
    (
        "synthetic",
        "generate this many SIFT-like base vectors instead of reading --base",
    ),
    ("clusters", "cluster count for synthetic data"),
];
const QUERY: Keys = &[
    ("queries", "query vectors (.fvecs or .bvecs)"),
    ("synthetic_queries", "generate this many SIFT-like queries"),
    ("query_limit", "read at most this many queries"),
    ("clusters", "cluster count for synthetic data"),
];
const SEARCH: Keys = &[
    ("k", "neighbors per query"),
    ("ef", "search pool size"),
    ("rho", "sampling ratio; enables the collision filter"),
    (
        "epsilon",
        "false-negative target; enables the collision filter",
    ),
];
const SEARCH_ONLY: Keys = &[
    (
        "truth",
        "ground-truth ids (.ivecs); brute force over the index when absent",
    ),
    ("results", "write result ids here (.ivecs)"),
];
const INSERT: Keys = &[
    ("vectors", "vectors to insert (.fvecs or .bvecs)"),
    ("synthetic", "generate this many SIFT-like vectors instead"),
    ("clusters", "cluster count for synthetic data"),
];
const DELETE: Keys = &[
    ("ids", "comma-separated ids to delete"),
    ("random", "delete this many random live ids"),
];
const BENCH: Keys = &[
    (
        "scenario",
        "insert_only, insert_heavy, balanced or delete_heavy",
    ),
    ("batches", "number of update batches"),
    (
        "batch_size",
        "updates per batch (default 1% of the initial set)",
    ),
    (
        "initial",
        "base vectors indexed up front; the rest feed inserts",
    ),
    ("searchers", "concurrent search threads during updates"),
    (
        "check_invariants",
        "run the invariant suite at every batch boundary",
    ),
];
const REORDER: Keys = &[
    ("heat_csv", "dump the heat map as u,v,count"),
    ("score_mode", "heat or literal"),
];
const STATS: Keys = &[
    ("format", "table or csv"),
    ("t_n", "modeled cost of one neighbor-list fetch"),
    ("t_v", "modeled cost of one vector fetch"),
];

fn subcommands() -> Vec<(&'static str, &'static str, Vec<Keys>)> {
    let index_keys: Keys = &[
        ("dim", "vector dimension"),
        ("m", "links per new node"),
        ("m_max", "degree cap"),
        ("ef_construction", "build-time pool size"),
        ("bits", "SimHash code length"),
        ("hash_seed", "projection seed"),
        ("level_seed", "level sampling seed"),
        ("heat_decay", "heat multiplier applied after each reorder"),
        ("lambda", "heat weight in the layout score"),
        ("window", "layout window"),
        ("score_mode", "heat or literal"),
        (
            "reorder_every",
            "auto-reorder after this fraction of live count in updates; 0 = off",
        ),
        ("memtable_bytes", "memtable flush threshold"),
        ("size_ratio", "LSM level size ratio"),
        ("l0_run_limit", "level-0 runs before compaction"),
        ("level1_bytes", "level-1 size target"),
        ("max_levels", "LSM level count"),
        ("run_max_entries", "entries per compaction output run"),
        ("bloom", "per-run bloom filters"),
        ("auto_compact", "flush and compact automatically"),
    ];
    vec![
        (
            "build",
            "create an index from a base set",
            vec![COMMON, BASE, index_keys],
        ),
        (
            "search",
            "run queries and report recall and I/O",
            vec![COMMON, QUERY, SEARCH, SEARCH_ONLY],
        ),
        (
            "insert",
            "insert vectors into an index",
            vec![COMMON, INSERT],
        ),
        (
            "delete",
            "delete vectors from an index",
            vec![COMMON, DELETE],
        ),
        (
            "bench",
            "build an index and run a dynamic workload",
            vec![COMMON, BASE, QUERY, SEARCH, BENCH, index_keys],
        ),
        (
            "reorder",
            "record heat from queries, then rewrite the layout",
            vec![
                COMMON,
                QUERY,
                SEARCH,
                REORDER,
                &[("window", "layout window"), ("lambda", "heat weight")],
            ],
        ),
        (
            "stats",
            "print index statistics and the cost model",
            vec![COMMON, QUERY, SEARCH, STATS],
        ),
    ]
}

fn keys_of(groups: &[Keys]) -> Vec<(&'static str, &'static str)> {
    let mut out: Vec<(&str, &str)> = Vec::new();
    for &(k, h) in groups.iter().flat_map(|g| g.iter()) {
        if !out.iter().any(|(o, _)| *o == k) {
            out.push((k, h));
        }
    }
    out
}

fn cli() -> Command {
    let mut cmd = Command::new("lsm-ann")
        .about("Disk-based dynamic ANN index with an LSM bottom layer")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("key = value file; keys are flag names with '_' for '-'"),
        );
    for (name, about, groups) in subcommands() {
        let mut sub = Command::new(name).about(about);
        for (k, h) in keys_of(&groups) {
            sub = sub.arg(
                Arg::new(k)
                    .long(k.replace('_', "-"))
                    .value_name("VALUE")
                    .help(h),
            );
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Config file values overlaid with command-line flags.
struct Opts(KvConfig);

impl Opts {
    fn new(sub: &str, m: &ArgMatches, config: Option<&String>) -> Result<Self> {
        let kv = match config {
            Some(p) => KvConfig::load(p).with_context(|| format!("reading {p}"))?,
            None => KvConfig::default(),
        };
        let all: Vec<&str> = subcommands()
            .iter()
            .flat_map(|(_, _, g)| keys_of(g))
            .map(|(k, _)| k)
            .collect();
        kv.reject_unknown(&all)?;
        let own: Vec<&str> = subcommands()
            .into_iter()
            .find(|(n, _, _)| *n == sub)
            .map(|(_, _, g)| keys_of(&g).into_iter().map(|(k, _)| k).collect())
            .unwrap_or_default();
        let mut merged = KvConfig::default();
        for k in kv.keys().filter(|k| own.contains(k)) {
            merged.set(k, kv.get_str(k).unwrap_or_default());
        }
        for id in m.ids() {
            let id = id.as_str();
            if let Some(v) = m.get_one::<String>(id).filter(|_| own.contains(&id)) {
                merged.set(id, v);
            }
        }
        Ok(Self(merged))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        Ok(self.0.get(key)?)
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn req<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| anyhow!("missing --{}", key.replace('_', "-")))
    }

    fn has(&self, key: &str) -> bool {
        self.0.get_str(key).is_some()
    }

    fn index(&self) -> Result<PathBuf> {
        self.req("index")
    }

    fn seed(&self) -> Result<u64> {
        self.or("seed", 42)
    }

    fn timing(&self) -> Result<bool> {
        self.or("timing", true)
    }

    fn search_params(&self, default_k: usize) -> Result<SearchParams> {
        let k = self.or("k", default_k)?;
        let mut p = SearchParams::new(k, self.or("ef", 100usize.max(k))?);
        if self.has("rho") || self.has("epsilon") {
            let d = FilterParams::default();
            p = p.with_filter(FilterParams {
                rho: self.or("rho", d.rho)?,
                epsilon: self.or("epsilon", d.epsilon)?,
            });
        }
        p.validate()?;
        Ok(p)
    }

    fn vectors(
        &self,
        file_key: &str,
        synth_key: &str,
        limit_key: &str,
        dim: usize,
        stream: u64,
    ) -> Result<Vec<Vec<f32>>> {
        if let Some(path) = self.get::<PathBuf>(file_key)? {
            let v = read_vectors(&path, self.get(limit_key)?)
                .with_context(|| format!("reading {}", path.display()))?;
            if let Some(x) = v.first().filter(|x| x.len() != dim) {
                bail!(
                    "{} has dimension {}, expected {dim}",
                    path.display(),
                    x.len()
                );
            }
            return Ok(v);
        }
        if let Some(n) = self.get::<usize>(synth_key)? {
            return Ok(sift_like(
                n,
                dim,
                self.or("clusters", 64)?,
                self.seed()?,
                stream,
            ));
        }
        bail!(
            "need --{} or --{}",
            file_key.replace('_', "-"),
            synth_key.replace('_', "-")
        )
    }

    fn queries(&self, dim: usize) -> Result<Vec<Vec<f32>>> {
        self.vectors("queries", "synthetic_queries", "query_limit", dim, 1)
    }

    fn index_config(&self) -> Result<IndexConfig> {
        let dim = match (self.get::<usize>("dim")?, self.get::<PathBuf>("base")?) {
            (Some(d), _) => d,
            (None, Some(p)) => read_vectors(&p, Some(1))?
                .first()
                .map(Vec::len)
                .ok_or_else(|| anyhow!("{} is empty", p.display()))?,
            (None, None) => 128,
        };
        let mut cfg = IndexConfig::new(dim);
        let mut kv = KvConfig::default();
        for k in INDEX_KEYS.iter().filter(|k| self.has(k)) {
            kv.set(k, self.0.get_str(k).unwrap_or_default());
        }
        apply_index_config(&kv, &mut cfg)?;
        cfg.dim = dim;
        cfg.validate()?;
        Ok(cfg)
    }

    fn emit(&self, report: &str) -> Result<()> {
        print!("{report}");
        if let Some(p) = self.get::<PathBuf>("out")? {
            std::fs::write(&p, report).with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(())
    }
}

fn build_index(o: &Opts, cfg: IndexConfig, base: &[Vec<f32>]) -> Result<LsmVecIndex> {
    let dir = o.index()?;
    let mut idx =
        LsmVecIndex::create(&dir, cfg).with_context(|| format!("creating {}", dir.display()))?;
    for x in base {
        idx.insert(x)?;
    }
    idx.persist()?;
    Ok(idx)
}

fn cmd_build(o: &Opts) -> Result<String> {
    let cfg = o.index_config()?;
    let base = o.vectors("base", "synthetic", "limit", cfg.dim, 0)?;
    let start = Instant::now();
    let idx = build_index(o, cfg, &base)?;
    let secs = start.elapsed().as_secs_f64();
    let st = idx.stats()?;
    let edges: usize = idx.graph_store().scan_all()?.values().map(Vec::len).sum();
    let mut s = String::from("live,dim,max_level,bottom_edges,lsm_runs,memory_bytes");
    let timing = o.timing()?;
    s.push_str(if timing { ",build_seconds\n" } else { "\n" });
    let _ = write!(
        s,
        "{},{},{},{},{},{}",
        st.live,
        st.dim,
        st.max_level,
        edges,
        st.runs.len(),
        st.memory_bytes
    );
    if timing {
        let _ = write!(s, ",{secs:.3}");
    }
    s.push('\n');
    Ok(s)
}

fn exact_truth(idx: &LsmVecIndex, queries: &[Vec<f32>], k: usize) -> Result<Vec<Vec<VectorId>>> {
    let corpus: Vec<(VectorId, Vec<f32>)> = idx
        .live_ids()
        .into_iter()
        .map(|id| Ok((id, idx.get_vector(id)?)))
        .collect::<lsm_ann::Result<_>>()?;
    Ok(ground_truth(queries, &corpus, k)?)
}

fn cmd_search(o: &Opts) -> Result<String> {
    let idx = LsmVecIndex::open(o.index()?)?;
    let queries = o.queries(idx.dim())?;
    let p = o.search_params(10)?;
    let k = p.k.min(idx.len());
    let truth: Vec<Vec<VectorId>> = match o.get::<PathBuf>("truth")? {
        Some(path) => read_ivecs(&path, Some(queries.len()))?
            .into_iter()
            .map(|r| r.into_iter().take(k).map(|x| x as VectorId).collect())
            .collect(),
        None => exact_truth(&idx, &queries, k)?,
    };
    let mut io = IoSnapshot::default();
    let mut recall = 0.0;
    let mut results = Vec::with_capacity(queries.len());
    let start = Instant::now();
    for (q, g) in queries.iter().zip(&truth) {
        let r = idx.search(q, &p)?;
        io += r.io;
        recall += recall_at_k(&r.ids, g, k)?;
        results.push(r.ids.iter().map(|&i| i as i32).collect::<Vec<_>>());
    }
    let us = start.elapsed().as_secs_f64() * 1e6 / queries.len().max(1) as f64;
    if let Some(path) = o.get::<PathBuf>("results")? {
        write_ivecs(path, &results)?;
    }
    let n = queries.len().max(1) as f64;
    let (rho, eps) = p.filter.map_or((1.0, 0.0), |f| (f.rho, f.epsilon));
    let timing = o.timing()?;
    let mut s = String::from(
        "queries,k,ef,rho,epsilon,recall,vector_fetches,neighbor_fetches,nodes_visited,bytes_read",
    );
    s.push_str(if timing { ",mean_latency_us\n" } else { "\n" });
    let _ = write!(
        s,
        "{},{},{},{},{},{:.6},{:.3},{:.3},{:.3},{:.1}",
        queries.len(),
        p.k,
        p.ef_search,
        rho,
        eps,
        recall / n,
        io.vector_fetches as f64 / n,
        io.neighbor_list_fetches as f64 / n,
        io.nodes_visited as f64 / n,
        io.bytes_read as f64 / n
    );
    if timing {
        let _ = write!(s, ",{us:.2}");
    }
    s.push('\n');
    Ok(s)
}

fn cmd_insert(o: &Opts) -> Result<String> {
    let mut idx = LsmVecIndex::open(o.index()?)?;
    let xs = o.vectors("vectors", "synthetic", "limit", idx.dim(), 2)?;
    let ids: Vec<VectorId> = xs
        .iter()
        .map(|x| idx.insert(x))
        .collect::<lsm_ann::Result<_>>()?;
    idx.persist()?;
    let span = match (ids.first(), ids.last()) {
        (Some(a), Some(b)) => format!("{a},{b}"),
        _ => ",".into(),
    };
    Ok(format!(
        "inserted,first_id,last_id,live\n{},{span},{}\n",
        ids.len(),
        idx.len()
    ))
}

fn cmd_delete(o: &Opts) -> Result<String> {
    let mut idx = LsmVecIndex::open(o.index()?)?;
    let mut ids: Vec<VectorId> = match o.0.get_str("ids") {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().with_context(|| format!("bad id {t:?}")))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    if let Some(n) = o.get::<usize>("random")? {
        let mut live = idx.live_ids();
        live.retain(|id| !ids.contains(id));
        live.shuffle(&mut ChaCha8Rng::seed_from_u64(o.seed()?));
        ids.extend(live.into_iter().take(n));
    }
    if ids.is_empty() {
        bail!("need --ids or --random");
    }
    for &id in &ids {
        idx.delete(id).with_context(|| format!("deleting {id}"))?;
    }
    idx.persist()?;
    Ok(format!("deleted,live\n{},{}\n", ids.len(), idx.len()))
}

fn cmd_bench(o: &Opts) -> Result<String> {
    let cfg = o.index_config()?;
    let base = o.vectors("base", "synthetic", "limit", cfg.dim, 0)?;
    let queries = o.queries(cfg.dim)?;
    let initial = o.or("initial", base.len() * 9 / 10)?.min(base.len());
    let idx_initial = &base[..initial];
    let mut idx = build_index(o, cfg, idx_initial)?;
    let corpus: Vec<(VectorId, Vec<f32>)> = idx
        .live_ids()
        .into_iter()
        .zip(idx_initial.iter().cloned())
        .collect();
    let mut spec = WorkloadSpec::new(
        o.or("scenario", "balanced".to_string())?
            .parse::<Scenario>()?,
        o.or("batches", 20)?,
        o.seed()?,
    );
    spec.batch_size = o.get("batch_size")?;
    spec.search = o.search_params(10)?;
    spec.concurrent_searchers = o.or("searchers", 0)?;
    spec.check_invariants = o.or("check_invariants", true)?;
    let report = run_workload(&mut idx, &corpus, &base[initial..], &queries, &spec)?;
    idx.persist()?;
    if report.ended_early {
        eprintln!(
            "note: insert reserve exhausted after {} batches",
            report.rows.len() - 1
        );
    }
    Ok(report.to_csv(o.timing()?))
}

fn cmd_reorder(o: &Opts) -> Result<String> {
    let mut idx = LsmVecIndex::open(o.index()?)?;
    let mut score = idx.config().score;
    score.window = o.or("window", score.window)?;
    score.lambda = o.or("lambda", score.lambda)?;
    if let Some(m) = o.0.get_str("score_mode") {
        score.mode = parse_score_mode(m)?;
    }
    idx.set_score_params(score)?;
    if o.has("queries") || o.has("synthetic_queries") {
        let mut p = o.search_params(10)?;
        p.record_heat = true;
        for q in o.queries(idx.dim())? {
            idx.search(&q, &p)?;
        }
    }
    if let Some(path) = o.get::<PathBuf>("heat_csv")? {
        std::fs::write(&path, idx.heat_map().to_csv())?;
    }
    let r = idx.reorder_layout()?;
    idx.persist()?;
    Ok(format!(
        "nodes,objective_before,objective_after,hot_paths,windows_before,windows_after,changed\n{},{:.6},{:.6},{},{:.6},{:.6},{}\n",
        r.nodes, r.objective_before, r.objective_after, r.hot_paths, r.windows_before, r.windows_after, r.changed
    ))
}

fn cmd_stats(o: &Opts) -> Result<String> {
    let idx = LsmVecIndex::open(o.index()?)?;
    let st = idx.stats()?;
    let csv = match o.or("format", "table".to_string())?.as_str() {
        "csv" => true,
        "table" => false,
        f => bail!("unknown format {f:?}"),
    };
    let mut s = String::new();
    if csv {
        let entries: usize = st.runs.iter().map(|r| r.entries).sum();
        s.push_str("live,dim,max_level,lsm_runs,lsm_entries,memtable_entries,memory_bytes,vector_file_bytes\n");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            st.live,
            st.dim,
            st.max_level,
            st.runs.len(),
            entries,
            st.memtable_entries,
            st.memory_bytes,
            st.vector_file_bytes
        );
    } else {
        let _ = writeln!(s, "{st}");
    }
    if o.has("queries") || o.has("synthetic_queries") {
        let p = o.search_params(10)?;
        let rep = predict_vs_measure(
            &idx,
            &o.queries(idx.dim())?,
            &p,
            o.or("t_n", 1.0)?,
            o.or("t_v", 1.0)?,
        )?;
        if csv {
            let _ = writeln!(
                s,
                "{}\n{}",
                lsm_ann::metrics::CostReport::CSV_HEADER,
                rep.to_csv()
            );
        } else {
            let _ = writeln!(s, "\n{rep}");
        }
    }
    Ok(s)
}

fn main() -> Result<()> {
    let m = cli().get_matches();
    let config = m.get_one::<String>("config");
    let (name, sub) = m.subcommand().ok_or_else(|| anyhow!("no subcommand"))?;
    let o = Opts::new(name, sub, config)?;
    let report = match name {
        "build" => cmd_build(&o),
        "search" => cmd_search(&o),
        "insert" => cmd_insert(&o),
        "delete" => cmd_delete(&o),
        "bench" => cmd_bench(&o),
        "reorder" => cmd_reorder(&o),
        "stats" => cmd_stats(&o),
        other => Err(anyhow!("unknown subcommand {other}")),
    }?;
    o.emit(&report)
}
