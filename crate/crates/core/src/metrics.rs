//! I/O counters and the closed-form traversal cost model.
//!
//! The counters are shared (`Arc<IoCounters>`) between the vector store, the
//! LSM edge store and the index. Every vector fetch and every neighbor-list
//! fetch bumps exactly one counter. Per-query numbers are obtained by
//! diffing snapshots, or from the local tally a search returns.
//!
//! The cost model prices a bottom-layer traversal that expands `T` nodes of
//! average candidate degree `d`: each expansion pays one neighbor-list fetch
//! (`t_n`) plus one vector fetch (`t_v`) for every evaluated candidate.
//! Sampling with ratio `rho` evaluates only a fraction of candidates.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::hnsw::{LsmVecIndex, SearchParams};

#[derive(Debug, Default)]
pub struct IoCounters {
    vector_fetches: AtomicU64,
    neighbor_list_fetches: AtomicU64,
    nodes_visited: AtomicU64,
    candidates_seen: AtomicU64,
    bytes_read: AtomicU64,
}

impl IoCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add_vector_fetch(&self, bytes: u64) {
        self.vector_fetches.fetch_add(1, Ordering::Relaxed);
        self.bytes_read.fetch_add(bytes, Ordering::Relaxed);
    }

    pub(crate) fn add_neighbor_fetch(&self, bytes: u64) {
        self.neighbor_list_fetches.fetch_add(1, Ordering::Relaxed);
        self.bytes_read.fetch_add(bytes, Ordering::Relaxed);
    }

    /// Records one bottom-layer expansion that exposed `candidates` unvisited neighbors.
    pub(crate) fn add_expansion(&self, candidates: u64) {
        self.nodes_visited.fetch_add(1, Ordering::Relaxed);
        self.candidates_seen
            .fetch_add(candidates, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> IoSnapshot {
        IoSnapshot {
            vector_fetches: self.vector_fetches.load(Ordering::Relaxed),
            neighbor_list_fetches: self.neighbor_list_fetches.load(Ordering::Relaxed),
            nodes_visited: self.nodes_visited.load(Ordering::Relaxed),
            candidates_seen: self.candidates_seen.load(Ordering::Relaxed),
            bytes_read: self.bytes_read.load(Ordering::Relaxed),
        }
    }
}

/// Plain copy of the counters at one instant, or a difference of two.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct IoSnapshot {
    pub vector_fetches: u64,
    pub neighbor_list_fetches: u64,
    /// Bottom-layer expansions (`T` in the cost model).
    pub nodes_visited: u64,
    /// Sum over expansions of the candidate-list length handed to the filter.
    pub candidates_seen: u64,
    pub bytes_read: u64,
}

impl Sub for IoSnapshot {
    type Output = IoSnapshot;

    fn sub(self, rhs: IoSnapshot) -> IoSnapshot {
        IoSnapshot {
            vector_fetches: self.vector_fetches - rhs.vector_fetches,
            neighbor_list_fetches: self.neighbor_list_fetches - rhs.neighbor_list_fetches,
            nodes_visited: self.nodes_visited - rhs.nodes_visited,
            candidates_seen: self.candidates_seen - rhs.candidates_seen,
            bytes_read: self.bytes_read - rhs.bytes_read,
        }
    }
}

impl Add for IoSnapshot {
    type Output = IoSnapshot;

    fn add(self, rhs: IoSnapshot) -> IoSnapshot {
        IoSnapshot {
            vector_fetches: self.vector_fetches + rhs.vector_fetches,
            neighbor_list_fetches: self.neighbor_list_fetches + rhs.neighbor_list_fetches,
            nodes_visited: self.nodes_visited + rhs.nodes_visited,
            candidates_seen: self.candidates_seen + rhs.candidates_seen,
            bytes_read: self.bytes_read + rhs.bytes_read,
        }
    }
}

impl AddAssign for IoSnapshot {
    fn add_assign(&mut self, rhs: IoSnapshot) {
        *self = *self + rhs;
    }
}

impl IoSnapshot {
    pub const CSV_HEADER: &'static str =
        "vector_fetches,neighbor_list_fetches,nodes_visited,candidates_seen,bytes_read";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.vector_fetches,
            self.neighbor_list_fetches,
            self.nodes_visited,
            self.candidates_seen,
            self.bytes_read
        )
    }
}

impl fmt::Display for IoSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "vector fetches        {:>12}", self.vector_fetches)?;
        writeln!(
            f,
            "neighbor-list fetches {:>12}",
            self.neighbor_list_fetches
        )?;
        writeln!(f, "nodes visited         {:>12}", self.nodes_visited)?;
        writeln!(f, "candidates seen       {:>12}", self.candidates_seen)?;
        write!(f, "bytes read            {:>12}", self.bytes_read)
    }
}

/// Abstract unit costs for the model. Not wall-clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModelParams {
    pub t_n: f64,
    pub t_v: f64,
    pub degree: f64,
    pub rho: f64,
}

impl CostModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_n > 0.0 && self.t_v > 0.0) {
            return Err(Error::invalid("t_n and t_v must be positive"));
        }
        if self.degree.is_nan() || self.degree < 0.0 {
            return Err(Error::invalid("degree must be nonnegative"));
        }
        check_rho(self.rho)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "sampling ratio {rho} outside (0, 1]"
        )))
    }
}

/// Cost of a traversal that evaluates every neighbor: `T * (t_n + d * t_v)`.
pub fn cost_full(visited: f64, degree: f64, t_n: f64, t_v: f64) -> f64 {
    visited * (t_n + degree * t_v)
}

/// Cost with sampling ratio `rho`: `T * (t_n + rho * d * t_v)`.
pub fn cost_sampling(visited: f64, degree: f64, t_n: f64, t_v: f64, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(visited * (t_n + rho * degree * t_v))
}

/// Expected saving from sampling: `T * (1 - rho) * d * t_v`.
pub fn cost_saving(visited: f64, degree: f64, t_v: f64, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(visited * (1.0 - rho) * degree * t_v)
}

/// Measured vs. predicted vector fetches over a query batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub queries: usize,
    pub rho: f64,
    /// Mean expansions per query (measured `T`).
    pub mean_visited: f64,
    /// Mean candidate-list length per expansion (measured `d`).
    pub mean_degree: f64,
    pub mean_vector_fetches: f64,
    pub mean_neighbor_fetches: f64,
    /// `rho * d * T` using the measured `d` and `T`.
    pub predicted_vector_fetches: f64,
    /// `(measured - predicted) / predicted`.
    pub relative_deviation: f64,
    pub modeled_cost_full: f64,
    pub modeled_cost_sampling: f64,
    pub io: IoSnapshot,
}

impl CostReport {
    pub const CSV_HEADER: &'static str = "queries,rho,mean_visited,mean_degree,mean_vector_fetches,mean_neighbor_fetches,predicted_vector_fetches,relative_deviation,cost_full,cost_sampling";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.6},{:.4},{:.4}",
            self.queries,
            self.rho,
            self.mean_visited,
            self.mean_degree,
            self.mean_vector_fetches,
            self.mean_neighbor_fetches,
            self.predicted_vector_fetches,
            self.relative_deviation,
            self.modeled_cost_full,
            self.modeled_cost_sampling
        )
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "queries                 {}", self.queries)?;
        writeln!(f, "rho                     {}", self.rho)?;
        writeln!(f, "mean visited (T)        {:.2}", self.mean_visited)?;
        writeln!(f, "mean degree (d)         {:.2}", self.mean_degree)?;
        writeln!(f, "vector fetches/query    {:.2}", self.mean_vector_fetches)?;
        writeln!(
            f,
            "predicted rho*d*T       {:.2}",
            self.predicted_vector_fetches
        )?;
        writeln!(f, "relative deviation      {:+.4}", self.relative_deviation)?;
        writeln!(f, "model cost (full)       {:.2}", self.modeled_cost_full)?;
        write!(
            f,
            "model cost (sampling)   {:.2}",
            self.modeled_cost_sampling
        )
    }
}

/// Runs `queries` against the index and compares measured vector fetches with
/// the model prediction. `t_n`/`t_v` price the modeled costs; `d` and `T`
/// are measured, `rho` comes from `params`.
pub fn predict_vs_measure(
    index: &LsmVecIndex,
    queries: &[Vec<f32>],
    params: &SearchParams,
    t_n: f64,
    t_v: f64,
) -> Result<CostReport> {
    if queries.is_empty() {
        return Err(Error::Empty("query batch"));
    }
    let rho = params.filter.map(|f| f.rho).unwrap_or(1.0);
    check_rho(rho)?;
    let mut io = IoSnapshot::default();
    for q in queries {
        let res = index.search(q, params)?;
        io += res.io;
    }
    let n = queries.len() as f64;
    let mean_visited = io.nodes_visited as f64 / n;
    let mean_degree = if io.nodes_visited == 0 {
        0.0
    } else {
        io.candidates_seen as f64 / io.nodes_visited as f64
    };
    let mean_vector_fetches = io.vector_fetches as f64 / n;
    let predicted = rho * mean_degree * mean_visited;
    let relative_deviation = if predicted > 0.0 {
        (mean_vector_fetches - predicted) / predicted
    } else {
        0.0
    };
    Ok(CostReport {
        queries: queries.len(),
        rho,
        mean_visited,
        mean_degree,
        mean_vector_fetches,
        mean_neighbor_fetches: io.neighbor_list_fetches as f64 / n,
        predicted_vector_fetches: predicted,
        relative_deviation,
        modeled_cost_full: cost_full(mean_visited, mean_degree, t_n, t_v),
        modeled_cost_sampling: cost_sampling(mean_visited, mean_degree, t_n, t_v, rho)?,
        io,
    })
}
