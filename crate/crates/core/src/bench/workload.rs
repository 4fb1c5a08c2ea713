//! Batched insert/delete workloads with per-batch recall.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Instant;

use parking_lot::RwLock;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::truth::{ground_truth, recall_at_k};
use crate::error::{Error, Result};
use crate::hnsw::{LsmVecIndex, SearchParams};
use crate::metrics::IoSnapshot;
use crate::VectorId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    InsertOnly,
    InsertHeavy,
    Balanced,
    DeleteHeavy,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::InsertOnly,
        Scenario::InsertHeavy,
        Scenario::Balanced,
        Scenario::DeleteHeavy,
    ];

    pub fn insert_ratio(self) -> f64 {
        match self {
            Scenario::InsertOnly => 1.0,
            Scenario::InsertHeavy => 0.7,
            Scenario::Balanced => 0.5,
            Scenario::DeleteHeavy => 0.3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::InsertOnly => "insert_only",
            Scenario::InsertHeavy => "insert_heavy",
            Scenario::Balanced => "balanced",
            Scenario::DeleteHeavy => "delete_heavy",
        }
    }

    /// `(inserts, deletes)` for one batch.
    pub fn split(self, batch_size: usize) -> (usize, usize) {
        let ins = (batch_size as f64 * self.insert_ratio()).round() as usize;
        (ins, batch_size - ins)
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub scenario: Scenario,
    pub batches: usize,
    /// Updates per batch; `None` means 1% of the initial live count.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub search: SearchParams,
    /// Search threads running alongside each batch's updates; 0 = off.
    pub concurrent_searchers: usize,
    pub check_invariants: bool,
}

impl WorkloadSpec {
    pub fn new(scenario: Scenario, batches: usize, seed: u64) -> Self {
        Self {
            scenario,
            batches,
            batch_size: None,
            seed,
            search: SearchParams::new(10, 100),
            concurrent_searchers: 0,
            check_invariants: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRow {
    /// 0 is the state before any update.
    pub batch: usize,
    pub inserts: usize,
    pub deletes: usize,
    pub live: usize,
    pub recall: f64,
    /// Summed over the query set.
    pub io: IoSnapshot,
    pub memory_bytes: usize,
    pub invariants_ok: bool,
    pub update_latency_us: f64,
    pub search_latency_us: f64,
    /// Searches completed by concurrent workers during the batch.
    pub concurrent_searches: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub scenario: Scenario,
    pub batch_size: usize,
    pub rows: Vec<BatchRow>,
    /// The reserve pool ran out before all batches ran.
    pub ended_early: bool,
    pub peak_memory_bytes: usize,
}

impl BenchReport {
    /// Wall-clock dependent columns come last and end in `_us` or are
    /// `concurrent_searches`; drop them with `timing = false`.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s = String::from(
            "batch,inserts,deletes,live,recall,vector_fetches,neighbor_fetches,nodes_visited,bytes_read,memory_bytes,invariants_ok",
        );
        if timing {
            s.push_str(",update_latency_us,search_latency_us,concurrent_searches");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{},{},{:.6},{},{},{},{},{},{}",
                r.batch,
                r.inserts,
                r.deletes,
                r.live,
                r.recall,
                r.io.vector_fetches,
                r.io.neighbor_list_fetches,
                r.io.nodes_visited,
                r.io.bytes_read,
                r.memory_bytes,
                r.invariants_ok
            );
            if timing {
                let _ = write!(
                    s,
                    ",{:.3},{:.3},{}",
                    r.update_latency_us, r.search_latency_us, r.concurrent_searches
                );
            }
            s.push('\n');
        }
        s
    }

    pub fn first_batch_recall(&self) -> Option<f64> {
        self.rows.iter().find(|r| r.batch == 1).map(|r| r.recall)
    }

    /// Largest recall drop below batch 1 over later batches.
    pub fn max_drop_from_first(&self) -> f64 {
        let Some(first) = self.first_batch_recall() else {
            return 0.0;
        };
        self.rows
            .iter()
            .filter(|r| r.batch >= 1)
            .map(|r| first - r.recall)
            .fold(0.0, f64::max)
    }
}

/// Live ids with O(1) uniform sampling and removal.
struct LiveSet {
    ids: Vec<VectorId>,
    pos: HashMap<VectorId, usize>,
}

impl LiveSet {
    fn new(mut ids: Vec<VectorId>) -> Self {
        ids.sort_unstable();
        let pos = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Self { ids, pos }
    }

    fn insert(&mut self, id: VectorId) {
        self.pos.insert(id, self.ids.len());
        self.ids.push(id);
    }

    fn remove_random(&mut self, rng: &mut ChaCha8Rng) -> Option<VectorId> {
        if self.ids.is_empty() {
            return None;
        }
        let i = rng.random_range(0..self.ids.len());
        let id = self.ids.swap_remove(i);
        self.pos.remove(&id);
        if let Some(&moved) = self.ids.get(i) {
            self.pos.insert(moved, i);
        }
        Some(id)
    }
}

fn evaluate(
    index: &LsmVecIndex,
    corpus: &BTreeMap<VectorId, Vec<f32>>,
    queries: &[Vec<f32>],
    params: &SearchParams,
) -> Result<(f64, IoSnapshot, f64)> {
    let k = params.k.min(corpus.len());
    if queries.is_empty() || k == 0 {
        return Ok((0.0, IoSnapshot::default(), 0.0));
    }
    let live: Vec<(VectorId, Vec<f32>)> = corpus.iter().map(|(&id, v)| (id, v.clone())).collect();
    let truth = ground_truth(queries, &live, k)?;
    let p = SearchParams { k, ..*params };
    let mut io = IoSnapshot::default();
    let mut recall = 0.0;
    let start = Instant::now();
    for (q, g) in queries.iter().zip(&truth) {
        let r = index.search(q, &p)?;
        io += r.io;
        recall += recall_at_k(&r.ids, g, k)?;
    }
    let us = start.elapsed().as_secs_f64() * 1e6 / queries.len() as f64;
    Ok((recall / queries.len() as f64, io, us))
}

/// Runs `spec` against `index`, whose live contents must equal `initial`.
/// Inserts draw from `reserve` in order; deleted vectors never return.
pub fn run_workload(
    index: &mut LsmVecIndex,
    initial: &[(VectorId, Vec<f32>)],
    reserve: &[Vec<f32>],
    queries: &[Vec<f32>],
    spec: &WorkloadSpec,
) -> Result<BenchReport> {
    spec.search.validate()?;
    if initial.len() != index.len() {
        return Err(Error::invalid(format!(
            "initial corpus has {} vectors, index holds {}",
            initial.len(),
            index.len()
        )));
    }
    let batch_size = spec
        .batch_size
        .unwrap_or_else(|| (initial.len() / 100).max(1));
    let (n_ins, n_del) = spec.scenario.split(batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut corpus: BTreeMap<VectorId, Vec<f32>> = initial.iter().cloned().collect();
    let mut live = LiveSet::new(corpus.keys().copied().collect());
    let mut next_reserve = 0usize;
    let mut report = BenchReport {
        scenario: spec.scenario,
        batch_size,
        rows: Vec::new(),
        ended_early: false,
        peak_memory_bytes: index.memory_bytes(),
    };

    let (recall, io, search_us) = evaluate(index, &corpus, queries, &spec.search)?;
    report.rows.push(BatchRow {
        batch: 0,
        inserts: 0,
        deletes: 0,
        live: index.len(),
        recall,
        io,
        memory_bytes: index.memory_bytes(),
        invariants_ok: !spec.check_invariants || index.check_invariants()?.is_ok(),
        update_latency_us: 0.0,
        search_latency_us: search_us,
        concurrent_searches: 0,
    });

    for batch in 1..=spec.batches {
        if reserve.len() - next_reserve < n_ins {
            report.ended_early = true;
            break;
        }
        let mut ops: Vec<bool> = std::iter::repeat_n(true, n_ins)
            .chain(std::iter::repeat_n(false, n_del))
            .collect();
        ops.shuffle(&mut rng);
        let mut deletes = 0;
        let start = Instant::now();
        let concurrent = AtomicU64::new(0);
        {
            let shared = RwLock::new(&mut *index);
            let done = AtomicBool::new(false);
            let r: Result<()> = std::thread::scope(|s| {
                for w in 0..spec.concurrent_searchers {
                    let (shared, done, concurrent) = (&shared, &done, &concurrent);
                    s.spawn(move || {
                        let mut i = w;
                        while !done.load(Ordering::Relaxed) && !queries.is_empty() {
                            let q = &queries[i % queries.len()];
                            let guard = shared.read();
                            if !guard.is_empty() && guard.search(q, &spec.search).is_ok() {
                                concurrent.fetch_add(1, Ordering::Relaxed);
                            }
                            drop(guard);
                            i += spec.concurrent_searchers;
                        }
                    });
                }
                let mut run = || -> Result<()> {
                    for &is_insert in &ops {
                        if is_insert {
                            let x = &reserve[next_reserve];
                            next_reserve += 1;
                            let id = shared.write().insert(x)?;
                            corpus.insert(id, x.clone());
                            live.insert(id);
                        } else if let Some(id) = live.remove_random(&mut rng) {
                            shared.write().delete(id)?;
                            corpus.remove(&id);
                            deletes += 1;
                        }
                    }
                    Ok(())
                };
                let r = run();
                done.store(true, Ordering::Relaxed);
                r
            });
            r?;
        }
        let update_us = start.elapsed().as_secs_f64() * 1e6 / ops.len().max(1) as f64;
        if corpus.len() != index.len() {
            return Err(Error::invalid(
                "live-set bookkeeping diverged from the index",
            ));
        }
        let (recall, io, search_us) = evaluate(index, &corpus, queries, &spec.search)?;
        let mem = index.memory_bytes();
        report.peak_memory_bytes = report.peak_memory_bytes.max(mem);
        report.rows.push(BatchRow {
            batch,
            inserts: n_ins,
            deletes,
            live: index.len(),
            recall,
            io,
            memory_bytes: mem,
            invariants_ok: !spec.check_invariants || index.check_invariants()?.is_ok(),
            update_latency_us: update_us,
            search_latency_us: search_us,
            concurrent_searches: concurrent.load(Ordering::Relaxed),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_split() {
        assert_eq!(Scenario::InsertOnly.split(100), (100, 0));
        assert_eq!(Scenario::Balanced.split(100), (50, 50));
        assert_eq!(Scenario::InsertHeavy.split(100), (70, 30));
        assert_eq!(Scenario::DeleteHeavy.split(100), (30, 70));
        assert_eq!("balanced".parse::<Scenario>().unwrap(), Scenario::Balanced);
        assert!("mixed".parse::<Scenario>().is_err());
    }
}
