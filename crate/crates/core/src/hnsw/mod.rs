//! Hierarchical proximity graph with in-memory upper layers and an
//! LSM-resident bottom layer.

mod index;
mod persist;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lsm::LsmOptions;
use crate::metrics::IoSnapshot;
use crate::reorder::ScoreParams;
use crate::simhash::{FilterParams, DEFAULT_BITS};
use crate::vector_store::l2;
use crate::VectorId;

pub use index::{IndexStats, InvariantReport, LsmVecIndex, ReorderReport};

/// Levels are capped here; the chance of sampling past it is about e^-32.
pub const MAX_LEVEL: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HnswParams {
    /// Neighbors chosen for a new node at each layer.
    pub m: usize,
    /// Hard degree cap; overflowing lists are pruned to the closest `m_max`.
    pub m_max: usize,
    pub ef_construction: usize,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            m_max: 32,
            ef_construction: 100,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > self.m_max {
            return Err(Error::invalid(format!(
                "need 1 <= M <= M_max, got M={} M_max={}",
                self.m, self.m_max
            )));
        }
        if self.ef_construction < self.m {
            return Err(Error::invalid("ef_construction must be at least M"));
        }
        Ok(())
    }
}

/// Everything fixed at index creation.
#[derive(Debug, Clone)]
pub struct IndexConfig {
    pub dim: usize,
    pub hnsw: HnswParams,
    pub lsm: LsmOptions,
    /// SimHash code length.
    pub bits: usize,
    pub hash_seed: u64,
    pub level_seed: u64,
    pub heat_decay: f64,
    pub score: ScoreParams,
    /// Reorder automatically after this fraction of the live count in
    /// updates; 0 disables.
    pub reorder_every: f64,
}

impl IndexConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            hnsw: HnswParams::default(),
            lsm: LsmOptions::default(),
            bits: DEFAULT_BITS,
            hash_seed: 0x5eed,
            level_seed: 0x1e7e1,
            heat_decay: 0.5,
            score: ScoreParams::default(),
            reorder_every: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if self.bits == 0 {
            return Err(Error::invalid("code length must be positive"));
        }
        if !(self.heat_decay > 0.0 && self.heat_decay <= 1.0) {
            return Err(Error::invalid("heat decay must be in (0, 1]"));
        }
        if self.reorder_every.is_nan() || self.reorder_every < 0.0 {
            return Err(Error::invalid("reorder_every must be nonnegative"));
        }
        self.score.validate()?;
        self.hnsw.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    pub k: usize,
    pub ef_search: usize,
    /// `None` evaluates every unvisited neighbor.
    pub filter: Option<FilterParams>,
    /// Record traversed edges into the heat map and keep the path.
    pub record_heat: bool,
}

impl SearchParams {
    pub fn new(k: usize, ef_search: usize) -> Self {
        Self {
            k,
            ef_search,
            filter: None,
            record_heat: false,
        }
    }

    pub fn with_filter(mut self, filter: FilterParams) -> Self {
        self.filter = Some(filter);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.ef_search < self.k {
            return Err(Error::invalid("ef_search must be at least k"));
        }
        if let Some(f) = &self.filter {
            f.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchResult {
    pub ids: Vec<VectorId>,
    pub dists: Vec<f32>,
    /// Bottom-layer I/O spent by this query alone.
    pub io: IoSnapshot,
    /// `k` exceeded the live count; every live vector was returned.
    pub truncated: bool,
}

/// Draws a level with `Pr(L = l)` proportional to `e^-l`, `l >= 1`.
pub fn sample_level<R: Rng + ?Sized>(rng: &mut R) -> usize {
    // floor of an Exp(1) draw is geometric with ratio e^-1
    let u: f64 = 1.0 - rng.random::<f64>();
    (1 + (-u.ln()).floor() as usize).min(MAX_LEVEL)
}

/// Deterministic per-id level so placement does not depend on history.
pub(crate) fn level_for(seed: u64, id: VectorId) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    sample_level(&mut rng)
}

/// `(distance, id)` ordered by distance, then id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Scored {
    pub dist: f32,
    pub id: VectorId,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One in-memory layer (level >= 2).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerGraph {
    pub level: usize,
    pub adj: BTreeMap<VectorId, Vec<VectorId>>,
}

impl LayerGraph {
    pub fn new(level: usize) -> Self {
        Self {
            level,
            adj: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn contains(&self, id: VectorId) -> bool {
        self.adj.contains_key(&id)
    }

    pub fn neighbors(&self, id: VectorId) -> &[VectorId] {
        self.adj.get(&id).map_or(&[], Vec::as_slice)
    }

    pub(crate) fn add_node(&mut self, id: VectorId) {
        self.adj.entry(id).or_default();
    }

    pub(crate) fn link(&mut self, a: VectorId, b: VectorId) {
        for (x, y) in [(a, b), (b, a)] {
            let l = self.adj.entry(x).or_default();
            if let Err(pos) = l.binary_search(&y) {
                l.insert(pos, y);
            }
        }
    }

    pub(crate) fn unlink(&mut self, a: VectorId, b: VectorId) {
        for (x, y) in [(a, b), (b, a)] {
            if let Some(l) = self.adj.get_mut(&x) {
                if let Ok(pos) = l.binary_search(&y) {
                    l.remove(pos);
                }
            }
        }
    }

    /// Bidirectionality, no self-loops, degree cap, endpoints present.
    pub fn check(&self, m_max: usize) -> std::result::Result<(), String> {
        for (&u, list) in &self.adj {
            if list.len() > m_max {
                return Err(format!(
                    "layer {}: node {u} has degree {}",
                    self.level,
                    list.len()
                ));
            }
            for &v in list {
                if v == u {
                    return Err(format!("layer {}: self-loop at {u}", self.level));
                }
                if !self.neighbors(v).contains(&u) {
                    return Err(format!(
                        "layer {}: edge {u}->{v} has no reverse",
                        self.level
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Single-step descent: moves to the closest strictly better neighbor until
/// none exists. Returns a 1-hop local minimum.
pub fn greedy_search_layer<D>(layer: &LayerGraph, entry: VectorId, dist: D) -> Result<VectorId>
where
    D: Fn(VectorId) -> Result<f32>,
{
    if !layer.contains(entry) {
        return Err(Error::NotFound(entry));
    }
    let mut best = Scored {
        dist: dist(entry)?,
        id: entry,
    };
    loop {
        let mut moved = false;
        for &v in layer.neighbors(best.id) {
            let s = Scored {
                dist: dist(v)?,
                id: v,
            };
            if s.dist < best.dist {
                best = s;
                moved = true;
            }
        }
        if !moved {
            return Ok(best.id);
        }
    }
}

/// Best-first search with pool `ef` over an in-memory layer. Sorted
/// ascending by (distance, id).
pub(crate) fn search_layer_mem<D>(
    layer: &LayerGraph,
    entries: &[VectorId],
    ef: usize,
    dist: D,
) -> Result<Vec<Scored>>
where
    D: Fn(VectorId) -> Result<f32>,
{
    let mut visited: HashSet<VectorId> = HashSet::new();
    let mut cand = BinaryHeap::new();
    let mut found: BinaryHeap<Scored> = BinaryHeap::new();
    for &e in entries {
        if layer.contains(e) && visited.insert(e) {
            let s = Scored {
                dist: dist(e)?,
                id: e,
            };
            cand.push(std::cmp::Reverse(s));
            found.push(s);
        }
    }
    while found.len() > ef {
        found.pop();
    }
    while let Some(std::cmp::Reverse(c)) = cand.pop() {
        if found.len() >= ef && found.peek().is_some_and(|w| c > *w) {
            break;
        }
        for &v in layer.neighbors(c.id) {
            if !visited.insert(v) {
                continue;
            }
            let s = Scored {
                dist: dist(v)?,
                id: v,
            };
            if found.len() < ef || found.peek().is_some_and(|w| s < *w) {
                cand.push(std::cmp::Reverse(s));
                found.push(s);
                if found.len() > ef {
                    found.pop();
                }
            }
        }
    }
    Ok(found.into_sorted_vec())
}

pub(crate) fn dist_to(q: &[f32], x: &[f32]) -> f32 {
    l2(q, x)
}
