use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::Mutex;

use super::{
    dist_to, greedy_search_layer, level_for, search_layer_mem, IndexConfig, LayerGraph, Scored,
    SearchParams, SearchResult, MAX_LEVEL,
};
use crate::error::{Error, Result};
use crate::lsm::{LsmGraphStore, RunInfo};
use crate::metrics::{IoCounters, IoSnapshot};
use crate::reorder::{
    layout_objective, mean_distinct_windows, reorder, Graph, HeatMap, LayoutScorer, Permutation,
    ScoreMode, ScoreParams,
};
use crate::simhash::{
    collision_probability, filter_neighbors, threshold_for_probability, FilterParams, HashCode,
    ProjectionSet,
};
use crate::vector_store::{validate_vector, VectorStore};
use crate::VectorId;

const MAX_PATHS: usize = 256;
const MAX_QUERY_CODES: usize = 1024;

/// Search traces kept for reordering.
#[derive(Debug, Default)]
pub(crate) struct Trace {
    pub heat: HeatMap,
    pub paths: VecDeque<Vec<VectorId>>,
    pub queries: VecDeque<HashCode>,
}

/// The index. Mutations take `&mut self`; searches take `&self` and may run
/// concurrently.
pub struct LsmVecIndex {
    pub(crate) dir: PathBuf,
    pub(crate) config: IndexConfig,
    pub(crate) counters: Arc<IoCounters>,
    pub(crate) vectors: VectorStore,
    pub(crate) graph: LsmGraphStore,
    pub(crate) projections: ProjectionSet,
    pub(crate) codes: HashMap<VectorId, HashCode>,
    pub(crate) levels: HashMap<VectorId, usize>,
    /// `upper[i]` is level `i + 2`.
    pub(crate) upper: Vec<LayerGraph>,
    pub(crate) upper_vectors: HashMap<VectorId, Vec<f32>>,
    pub(crate) entry: Option<VectorId>,
    pub(crate) trace: Mutex<Trace>,
    pub(crate) updates_since_reorder: usize,
}

impl fmt::Debug for LsmVecIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LsmVecIndex")
            .field("dir", &self.dir)
            .field("live", &self.len())
            .field("max_level", &self.max_level())
            .field("entry", &self.entry)
            .finish()
    }
}

/// Result of [`LsmVecIndex::check_invariants`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvariantReport {
    pub violations: Vec<String>,
    pub bottom_edges: usize,
    /// Live nodes not reachable from the entry point in the bottom layer.
    /// Reported, not treated as a violation.
    pub unreachable: usize,
}

impl InvariantReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReorderReport {
    pub nodes: usize,
    pub objective_before: f64,
    pub objective_after: f64,
    pub hot_paths: usize,
    pub windows_before: f64,
    pub windows_after: f64,
    /// False when the greedy layout did not beat the current one.
    pub changed: bool,
}

impl fmt::Display for ReorderReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nodes            {}", self.nodes)?;
        writeln!(
            f,
            "objective        {:.3} -> {:.3}",
            self.objective_before, self.objective_after
        )?;
        writeln!(f, "hot paths        {}", self.hot_paths)?;
        writeln!(
            f,
            "windows/path     {:.3} -> {:.3}",
            self.windows_before, self.windows_after
        )?;
        write!(f, "layout changed   {}", self.changed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexStats {
    pub live: usize,
    pub dim: usize,
    pub max_level: usize,
    pub layer_sizes: Vec<(usize, usize)>,
    pub entry: Option<VectorId>,
    pub runs: Vec<RunInfo>,
    pub memtable_entries: usize,
    pub memory_bytes: usize,
    pub vector_file_bytes: u64,
    pub heat_pairs: usize,
    pub io: IoSnapshot,
}

impl fmt::Display for IndexStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "live vectors     {}", self.live)?;
        writeln!(f, "dimension        {}", self.dim)?;
        writeln!(f, "max level        {}", self.max_level)?;
        writeln!(f, "entry point      {:?}", self.entry)?;
        for (level, n) in &self.layer_sizes {
            writeln!(f, "layer {level:<2}         {n} nodes")?;
        }
        writeln!(f, "lsm runs         {}", self.runs.len())?;
        for r in &self.runs {
            writeln!(
                f,
                "  run {:>6} level {} entries {}",
                r.id, r.level, r.entries
            )?;
        }
        writeln!(f, "memtable entries {}", self.memtable_entries)?;
        writeln!(f, "memory estimate  {} bytes", self.memory_bytes)?;
        writeln!(f, "vector file      {} bytes", self.vector_file_bytes)?;
        writeln!(f, "heat pairs       {}", self.heat_pairs)?;
        write!(f, "io since open")?;
        for line in self.io.to_string().lines() {
            write!(f, "\n  {line}")?;
        }
        Ok(())
    }
}

/// Per-operation vector cache for maintenance paths.
struct VecCache(HashMap<VectorId, Vec<f32>>);

impl VecCache {
    fn new() -> Self {
        Self(HashMap::new())
    }

    fn get<'a>(&'a mut self, index: &LsmVecIndex, id: VectorId) -> Result<&'a [f32]> {
        match self.0.entry(id) {
            Entry::Occupied(e) => Ok(e.into_mut()),
            Entry::Vacant(e) => {
                let v = match index.upper_vectors.get(&id) {
                    Some(v) => v.clone(),
                    None => index.vectors.get(id)?,
                };
                Ok(e.insert(v))
            }
        }
    }
}

impl LsmVecIndex {
    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    /// Replaces the layout scoring parameters used by later reorder passes.
    pub fn set_score_params(&mut self, score: ScoreParams) -> Result<()> {
        score.validate()?;
        self.config.score = score;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, id: VectorId) -> bool {
        self.vectors.contains(id)
    }

    pub fn live_ids(&self) -> Vec<VectorId> {
        self.vectors.live_ids()
    }

    pub fn counters(&self) -> &Arc<IoCounters> {
        &self.counters
    }

    pub fn io_snapshot(&self) -> IoSnapshot {
        self.counters.snapshot()
    }

    pub fn entry_point(&self) -> Option<VectorId> {
        self.entry
    }

    /// Highest populated level; 0 for an empty index.
    pub fn max_level(&self) -> usize {
        if self.entry.is_none() {
            0
        } else {
            self.upper.len() + 1
        }
    }

    pub fn level_of(&self, id: VectorId) -> Option<usize> {
        self.levels.get(&id).copied()
    }

    /// In-memory layer at `level >= 2`.
    pub fn upper_layer(&self, level: usize) -> Option<&LayerGraph> {
        level.checked_sub(2).and_then(|i| self.upper.get(i))
    }

    pub fn graph_store(&self) -> &LsmGraphStore {
        &self.graph
    }

    pub fn vector_store(&self) -> &VectorStore {
        &self.vectors
    }

    pub fn projections(&self) -> &ProjectionSet {
        &self.projections
    }

    pub fn code_of(&self, id: VectorId) -> Option<&HashCode> {
        self.codes.get(&id)
    }

    /// Reads a stored vector (counted as a vector fetch).
    pub fn get_vector(&self, id: VectorId) -> Result<Vec<f32>> {
        self.vectors.get(id)
    }

    /// Bottom-layer neighbors of `id` (counted as a neighbor-list fetch).
    pub fn bottom_neighbors(&self, id: VectorId) -> Result<Vec<VectorId>> {
        self.graph.neighbors(id)
    }

    pub fn heat_map(&self) -> HeatMap {
        self.trace.lock().heat.clone()
    }

    pub fn hot_paths(&self) -> Vec<Vec<VectorId>> {
        self.trace.lock().paths.iter().cloned().collect()
    }

    pub fn flush(&mut self) -> Result<()> {
        self.graph.flush_memtable().map(|_| ())
    }

    pub fn compact_all(&mut self) -> Result<()> {
        self.graph.compact_all()
    }

    pub fn maybe_compact(&mut self) -> Result<()> {
        self.graph.maybe_compact()
    }

    /// Records every edge write from now on, so [`Self::check_invariants`]
    /// also compares the LSM contents with a sequential replay.
    pub fn enable_audit(&mut self) -> Result<()> {
        self.graph.enable_audit()
    }

    fn layer_mut(&mut self, level: usize) -> &mut LayerGraph {
        while self.upper.len() + 1 < level {
            let l = self.upper.len() + 2;
            self.upper.push(LayerGraph::new(l));
        }
        &mut self.upper[level - 2]
    }

    fn upper_dist<'a>(&'a self, q: &'a [f32]) -> impl Fn(VectorId) -> Result<f32> + 'a {
        move |v| {
            self.upper_vectors
                .get(&v)
                .map(|x| dist_to(q, x))
                .ok_or(Error::NotFound(v))
        }
    }

    /// Vector of a search seed. Seeds come from the in-memory layers or are
    /// the entry point, so they are not charged as bottom-layer fetches.
    fn seed_vector(&self, id: VectorId) -> Result<Vec<f32>> {
        match self.upper_vectors.get(&id) {
            Some(v) => Ok(v.clone()),
            None => self.vectors.read_uncounted(id),
        }
    }

    /// Greedy descent through the in-memory layers down to (excluding)
    /// `stop_above`. Returns the entry for the next layer.
    fn descend(&self, q: &[f32], stop_above: usize) -> Result<VectorId> {
        let mut ep = self.entry.ok_or(Error::Empty("index"))?;
        let top = self.max_level();
        let dist = self.upper_dist(q);
        for level in (stop_above + 1..=top).rev() {
            if level < 2 {
                break;
            }
            ep = greedy_search_layer(&self.upper[level - 2], ep, &dist)?;
        }
        Ok(ep)
    }

    /// Best-first search over the LSM bottom layer. With a filter, the whole
    /// neighbor list is ranked by collisions and only the selected, not yet
    /// visited neighbors are fetched; the rest stay eligible via other nodes.
    #[allow(clippy::too_many_arguments)]
    fn search_bottom(
        &self,
        q: &[f32],
        entries: &[VectorId],
        ef: usize,
        k: usize,
        filter: Option<(FilterParams, &HashCode)>,
        io: &mut IoSnapshot,
        mut trace: Option<&mut Vec<(VectorId, VectorId)>>,
    ) -> Result<Vec<Scored>> {
        let record_bytes = 4 * self.dim() as u64;
        let q_norm_sq: f64 = q.iter().map(|v| (*v as f64) * (*v as f64)).sum();
        let mut visited: HashSet<VectorId> = HashSet::new();
        let mut cand: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();
        let mut found: BTreeSet<Scored> = BTreeSet::new();
        let mut parent: HashMap<VectorId, VectorId> = HashMap::new();
        for &e in entries {
            if visited.insert(e) {
                let s = Scored {
                    dist: dist_to(q, &self.seed_vector(e)?),
                    id: e,
                };
                cand.push(std::cmp::Reverse(s));
                found.insert(s);
            }
        }
        while found.len() > ef {
            found.pop_last();
        }
        while let Some(std::cmp::Reverse(c)) = cand.pop() {
            if found.len() >= ef && found.last().is_some_and(|w| c > *w) {
                break;
            }
            let (nbrs, bytes) = self.graph.neighbors_with_bytes(c.id)?;
            io.neighbor_list_fetches += 1;
            io.bytes_read += bytes;
            if let Some(t) = trace.as_deref_mut() {
                t.push((parent.get(&c.id).copied().unwrap_or(c.id), c.id));
            }
            io.nodes_visited += 1;
            io.candidates_seen += nbrs.len() as u64;
            self.counters.add_expansion(nbrs.len() as u64);
            let selected = match filter {
                None => nbrs,
                Some((fp, q_code)) => {
                    let delta = if found.len() >= k {
                        found
                            .iter()
                            .nth(k - 1)
                            .map_or(f64::INFINITY, |s| s.dist as f64)
                    } else {
                        f64::INFINITY
                    };
                    let p = collision_probability(delta, q_norm_sq);
                    let t = threshold_for_probability(self.config.bits, fp.epsilon, p);
                    let cands: Vec<(VectorId, &HashCode)> = nbrs
                        .iter()
                        .map(|v| {
                            self.codes
                                .get(v)
                                .map(|c| (*v, c))
                                .ok_or(Error::NotFound(*v))
                        })
                        .collect::<Result<_>>()?;
                    filter_neighbors(q_code, &cands, fp.rho, t)?
                }
            };
            for v in selected {
                if !visited.insert(v) {
                    continue;
                }
                let x = self.vectors.get(v)?;
                io.vector_fetches += 1;
                io.bytes_read += record_bytes;
                let s = Scored {
                    dist: dist_to(q, &x),
                    id: v,
                };
                if found.len() < ef || found.last().is_some_and(|w| s < *w) {
                    cand.push(std::cmp::Reverse(s));
                    found.insert(s);
                    parent.insert(v, c.id);
                    if found.len() > ef {
                        found.pop_last();
                    }
                }
            }
        }
        Ok(found.into_iter().collect())
    }

    /// k nearest live vectors to `q`.
    pub fn search(&self, q: &[f32], params: &SearchParams) -> Result<SearchResult> {
        params.validate()?;
        validate_vector(q, self.dim())?;
        let live = self.len();
        if self.entry.is_none() {
            return Ok(SearchResult {
                truncated: params.k > live,
                ..SearchResult::default()
            });
        }
        let ep = self.descend(q, 1)?;
        let q_code = match params.filter.is_some() || params.record_heat {
            true => Some(self.projections.hash(q)?),
            false => None,
        };
        let filter = params.filter.zip(q_code.as_ref());
        let mut io = IoSnapshot::default();
        let mut edges = Vec::new();
        let found = self.search_bottom(
            q,
            &[ep],
            params.ef_search,
            params.k,
            filter,
            &mut io,
            params.record_heat.then_some(&mut edges),
        )?;
        if params.record_heat {
            let mut t = self.trace.lock();
            for &(u, v) in &edges {
                t.heat.record_traversal(u, v);
            }
            t.paths.push_back(edges.iter().map(|&(_, v)| v).collect());
            if t.paths.len() > MAX_PATHS {
                t.paths.pop_front();
            }
            if let Some(c) = q_code {
                t.queries.push_back(c);
                if t.queries.len() > MAX_QUERY_CODES {
                    t.queries.pop_front();
                }
            }
        }
        let top: Vec<Scored> = found.into_iter().take(params.k).collect();
        Ok(SearchResult {
            ids: top.iter().map(|s| s.id).collect(),
            dists: top.iter().map(|s| s.dist).collect(),
            io,
            truncated: params.k > live,
        })
    }

    /// Inserts `x` at its sampled level and returns the new id.
    pub fn insert(&mut self, x: &[f32]) -> Result<VectorId> {
        let level = level_for(self.config.level_seed, self.vectors.next_id());
        self.insert_with_level(x, level)
    }

    /// Inserts `x` at a caller-chosen level.
    pub fn insert_with_level(&mut self, x: &[f32], level: usize) -> Result<VectorId> {
        validate_vector(x, self.dim())?;
        if !(1..=MAX_LEVEL).contains(&level) {
            return Err(Error::invalid(format!(
                "level {level} outside 1..={MAX_LEVEL}"
            )));
        }
        let code = self.projections.hash(x)?;
        let id = self.vectors.append(x)?;
        self.codes.insert(id, code);
        self.levels.insert(id, level);
        if level >= 2 {
            self.upper_vectors.insert(id, x.to_vec());
        }
        let Some(_) = self.entry else {
            for l in 2..=level {
                self.layer_mut(l).add_node(id);
            }
            self.entry = Some(id);
            return self.after_update().map(|_| id);
        };
        let hp = self.config.hnsw;
        let top = self.max_level();
        let mut ep = vec![self.descend(x, level)?];
        for l in (2..=level.min(top)).rev() {
            let w = search_layer_mem(
                &self.upper[l - 2],
                &ep,
                hp.ef_construction,
                self.upper_dist(x),
            )?;
            let chosen: Vec<VectorId> = w.iter().take(hp.m).map(|s| s.id).collect();
            let layer = self.layer_mut(l);
            layer.add_node(id);
            for &c in &chosen {
                layer.link(id, c);
            }
            for &c in &chosen {
                self.prune_upper(l, c)?;
            }
            ep = w.iter().map(|s| s.id).collect();
        }
        for l in top + 1..=level {
            self.layer_mut(l).add_node(id);
        }
        let mut scratch = IoSnapshot::default();
        let w = self.search_bottom(x, &ep, hp.ef_construction, hp.m, None, &mut scratch, None)?;
        let chosen: Vec<VectorId> = w
            .iter()
            .filter(|s| s.id != id)
            .take(hp.m)
            .map(|s| s.id)
            .collect();
        for &c in &chosen {
            self.graph.put_edge(id, c)?;
            self.graph.put_edge(c, id)?;
        }
        let mut cache = VecCache::new();
        for &c in &chosen {
            self.prune_bottom(c, &mut cache)?;
        }
        if level > top {
            self.entry = Some(id);
        }
        self.after_update()?;
        Ok(id)
    }

    /// Keeps the `m_max` closest neighbors of `u` at an upper layer.
    fn prune_upper(&mut self, level: usize, u: VectorId) -> Result<()> {
        let m_max = self.config.hnsw.m_max;
        let layer = &self.upper[level - 2];
        if layer.neighbors(u).len() <= m_max {
            return Ok(());
        }
        let uv = &self.upper_vectors[&u];
        let mut scored: Vec<Scored> = layer
            .neighbors(u)
            .iter()
            .map(|&v| Scored {
                dist: dist_to(uv, &self.upper_vectors[&v]),
                id: v,
            })
            .collect();
        scored.sort_unstable();
        let drop: Vec<VectorId> = scored[m_max..].iter().map(|s| s.id).collect();
        let layer = &mut self.upper[level - 2];
        for v in drop {
            layer.unlink(u, v);
        }
        Ok(())
    }

    /// Bottom-layer counterpart of [`Self::prune_upper`]; dropped edges are
    /// removed in both directions.
    fn prune_bottom(&mut self, u: VectorId, cache: &mut VecCache) -> Result<()> {
        let m_max = self.config.hnsw.m_max;
        let nbrs = self.graph.neighbors(u)?;
        if nbrs.len() <= m_max {
            return Ok(());
        }
        let uv = cache.get(self, u)?.to_vec();
        let mut scored = Vec::with_capacity(nbrs.len());
        for v in nbrs {
            scored.push(Scored {
                dist: dist_to(&uv, cache.get(self, v)?),
                id: v,
            });
        }
        scored.sort_unstable();
        for s in &scored[m_max..] {
            self.graph.delete_edge(u, s.id)?;
            self.graph.delete_edge(s.id, u)?;
        }
        Ok(())
    }

    /// Removes `id` and repairs its neighborhoods at every layer it occupies.
    pub fn delete(&mut self, id: VectorId) -> Result<()> {
        if !self.vectors.contains(id) {
            return Err(Error::NotFound(id));
        }
        let level = self.levels[&id];
        let m = self.config.hnsw.m;
        let xv = self.seed_vector(id)?;

        for l in (2..=level).rev() {
            let layer = &mut self.upper[l - 2];
            let n: Vec<VectorId> = layer.neighbors(id).to_vec();
            for &p in &n {
                layer.unlink(id, p);
            }
            layer.adj.remove(&id);
            let mut pool: BTreeSet<VectorId> = n.iter().copied().collect();
            for &p in &n {
                pool.extend(layer.neighbors(p).iter().copied());
            }
            pool.remove(&id);
            for &p in &n {
                let pv = &self.upper_vectors[&p];
                let mut c: Vec<Scored> = pool
                    .iter()
                    .filter(|&&c| c != p)
                    .map(|&c| Scored {
                        dist: dist_to(pv, &self.upper_vectors[&c]),
                        id: c,
                    })
                    .collect();
                c.sort_unstable();
                let top: Vec<VectorId> = c.iter().take(m).map(|s| s.id).collect();
                for &t in &top {
                    self.upper[l - 2].link(p, t);
                }
                self.prune_upper(l, p)?;
                for &t in &top {
                    self.prune_upper(l, t)?;
                }
            }
        }

        let n = self.graph.neighbors(id)?;
        for &p in &n {
            self.graph.delete_edge(id, p)?;
            self.graph.delete_edge(p, id)?;
        }
        let mut pool: BTreeSet<VectorId> = n.iter().copied().collect();
        for &p in &n {
            pool.extend(self.graph.neighbors(p)?);
        }
        pool.remove(&id);
        let mut cache = VecCache::new();
        for &p in &n {
            let pv = cache.get(self, p)?.to_vec();
            let mut c = Vec::with_capacity(pool.len());
            for &cid in pool.iter().filter(|&&c| c != p) {
                c.push(Scored {
                    dist: dist_to(&pv, cache.get(self, cid)?),
                    id: cid,
                });
            }
            c.sort_unstable();
            let current: HashSet<VectorId> = self.graph.neighbors(p)?.into_iter().collect();
            let top: Vec<VectorId> = c.iter().take(m).map(|s| s.id).collect();
            for &t in top.iter().filter(|t| !current.contains(t)) {
                self.graph.put_edge(p, t)?;
                self.graph.put_edge(t, p)?;
            }
            self.prune_bottom(p, &mut cache)?;
            for &t in &top {
                self.prune_bottom(t, &mut cache)?;
            }
        }

        self.vectors.mark_deleted(id)?;
        self.codes.remove(&id);
        self.levels.remove(&id);
        self.upper_vectors.remove(&id);
        self.trace.lock().heat.forget(id);
        while self.upper.last().is_some_and(LayerGraph::is_empty) {
            self.upper.pop();
        }
        if self.entry == Some(id) {
            self.entry = self.promote_entry(&xv)?;
        }
        self.after_update()
    }

    /// Nearest remaining node to `x` at the highest populated layer.
    fn promote_entry(&self, x: &[f32]) -> Result<Option<VectorId>> {
        if let Some(layer) = self.upper.last() {
            return Ok(layer
                .adj
                .keys()
                .map(|&v| Scored {
                    dist: dist_to(x, &self.upper_vectors[&v]),
                    id: v,
                })
                .min()
                .map(|s| s.id));
        }
        let mut best: Option<Scored> = None;
        for v in self.vectors.live_ids() {
            let s = Scored {
                dist: dist_to(x, &self.vectors.read_uncounted(v)?),
                id: v,
            };
            if best.is_none_or(|b| s < b) {
                best = Some(s);
            }
        }
        Ok(best.map(|s| s.id))
    }

    fn after_update(&mut self) -> Result<()> {
        self.updates_since_reorder += 1;
        let every = self.config.reorder_every;
        if every > 0.0 && !self.is_empty() {
            let limit = (every * self.len() as f64).ceil().max(1.0) as usize;
            if self.updates_since_reorder >= limit {
                self.reorder_layout()?;
            }
        }
        Ok(())
    }

    /// Live ids ordered by their current storage slot.
    pub fn current_layout(&self) -> Result<Permutation> {
        let mut ids = self.vectors.live_ids();
        ids.sort_by_key(|&id| self.vectors.slot_of(id));
        Permutation::from_order(ids)
    }

    /// Bottom-layer adjacency with every live id present.
    pub fn bottom_graph(&self) -> Result<Graph> {
        let mut g: Graph = self.graph.scan_all()?;
        for id in self.vectors.live_ids() {
            g.entry(id).or_default();
        }
        Ok(g)
    }

    /// Computes a windowed layout from the bottom graph and accumulated heat,
    /// then rewrites vector slots and LSM keys to follow it. Logical results
    /// are unchanged. Heat decays once per pass.
    pub fn reorder_layout(&mut self) -> Result<ReorderReport> {
        let graph = self.bottom_graph()?;
        let current = self.current_layout()?;
        let (phi, report) = {
            let t = self.trace.lock();
            let mut scorer = LayoutScorer::new(&graph, &t.heat, self.config.score);
            if self.config.score.mode == ScoreMode::Literal {
                let q: Vec<HashCode> = t.queries.iter().cloned().collect();
                scorer = scorer.with_query_codes(&self.codes, &q);
            }
            let phi = reorder(&scorer, &current)?;
            let paths: Vec<Vec<VectorId>> = t.paths.iter().cloned().collect();
            let w = self.config.score.window;
            let slot = |p: &Permutation| {
                let p = p.clone();
                move |id| p.position(id).map(|x| x as u64)
            };
            let report = ReorderReport {
                nodes: graph.len(),
                objective_before: layout_objective(&current, &scorer)?,
                objective_after: layout_objective(&phi, &scorer)?,
                hot_paths: paths.len(),
                windows_before: mean_distinct_windows(&paths, w, slot(&current)),
                windows_after: mean_distinct_windows(&paths, w, slot(&phi)),
                changed: phi != current,
            };
            (phi, report)
        };
        self.vectors.apply_permutation(&phi)?;
        self.graph.apply_permutation(&phi)?;
        self.trace.lock().heat.decay();
        self.updates_since_reorder = 0;
        Ok(report)
    }

    /// Runs the structural checks over every layer and store.
    pub fn check_invariants(&self) -> Result<InvariantReport> {
        let mut r = InvariantReport::default();
        let live: HashSet<VectorId> = self.vectors.live_ids().into_iter().collect();
        let m_max = self.config.hnsw.m_max;

        if let Err(e) = self.vectors.slot_table().check() {
            r.violations.push(format!("slot table: {e}"));
        }
        if let Err(e) = self.graph.check_invariants() {
            r.violations.push(format!("lsm: {e}"));
        }
        if let Err(e) = self.graph.check_audit() {
            r.violations.push(format!("lsm replay: {e}"));
        }

        let bottom = self.graph.scan_all()?;
        for (&u, list) in &bottom {
            if !live.contains(&u) {
                r.violations
                    .push(format!("bottom: edge source {u} not live"));
            }
            if list.len() > m_max {
                r.violations
                    .push(format!("bottom: node {u} has degree {}", list.len()));
            }
            for &v in list {
                r.bottom_edges += 1;
                if u == v {
                    r.violations.push(format!("bottom: self-loop at {u}"));
                }
                if !live.contains(&v) {
                    r.violations
                        .push(format!("bottom: edge {u}->{v} to non-live id"));
                }
                if bottom.get(&v).is_none_or(|l| l.binary_search(&u).is_err()) {
                    r.violations
                        .push(format!("bottom: edge {u}->{v} has no reverse"));
                }
            }
        }

        for layer in &self.upper {
            if let Err(e) = layer.check(m_max) {
                r.violations.push(e);
            }
            for (&u, list) in &layer.adj {
                for &x in std::iter::once(&u).chain(list) {
                    if !live.contains(&x) {
                        r.violations
                            .push(format!("layer {}: {x} not live", layer.level));
                    }
                }
                if self.levels.get(&u).is_none_or(|&l| l < layer.level) {
                    r.violations
                        .push(format!("layer {}: {u} above its level", layer.level));
                }
            }
            if layer.is_empty() {
                r.violations.push(format!("layer {} is empty", layer.level));
            }
        }
        for (&id, &level) in &self.levels {
            for l in 2..=level {
                if self.upper_layer(l).is_none_or(|g| !g.contains(id)) {
                    r.violations
                        .push(format!("node {id} missing from layer {l}"));
                }
            }
            if (level >= 2) != self.upper_vectors.contains_key(&id) {
                r.violations
                    .push(format!("node {id}: vector cache disagrees with level"));
            }
        }
        if self.levels.len() != live.len() || !self.levels.keys().all(|k| live.contains(k)) {
            r.violations
                .push("level table does not match live ids".into());
        }
        if self.codes.len() != live.len() || !self.codes.keys().all(|k| live.contains(k)) {
            r.violations.push("hash codes do not match live ids".into());
        }

        match self.entry {
            None if !live.is_empty() => r.violations.push("no entry point".into()),
            Some(e) if !live.contains(&e) => r.violations.push(format!("entry {e} not live")),
            Some(e) if self.levels.get(&e) != Some(&self.max_level()) => {
                r.violations.push(format!("entry {e} not at the top level"))
            }
            Some(e) => {
                let mut seen = HashSet::from([e]);
                let mut stack = vec![e];
                while let Some(u) = stack.pop() {
                    for &v in bottom.get(&u).into_iter().flatten() {
                        if seen.insert(v) {
                            stack.push(v);
                        }
                    }
                }
                r.unreachable = live.len() - seen.len().min(live.len());
            }
            None => {}
        }
        Ok(r)
    }

    /// Rough resident memory: codes, levels, upper layers and their vectors,
    /// slot table and LSM memtable.
    pub fn memory_bytes(&self) -> usize {
        let code = self.config.bits.div_ceil(64) * 8 + 40;
        let upper: usize = self
            .upper
            .iter()
            .map(|l| l.adj.values().map(|v| 48 + v.len() * 8).sum::<usize>())
            .sum();
        self.codes.len() * code
            + self.levels.len() * 24
            + upper
            + self.upper_vectors.len() * (self.dim() * 4 + 40)
            + self.vectors.memory_bytes()
            + self.graph.memory_bytes()
    }

    pub fn stats(&self) -> Result<IndexStats> {
        let mut layer_sizes = vec![(1, self.len())];
        layer_sizes.extend(self.upper.iter().map(|l| (l.level, l.len())));
        Ok(IndexStats {
            live: self.len(),
            dim: self.dim(),
            max_level: self.max_level(),
            layer_sizes,
            entry: self.entry,
            runs: self.graph.run_infos(),
            memtable_entries: self.graph.memtable_len(),
            memory_bytes: self.memory_bytes(),
            vector_file_bytes: self.vectors.vector_file_len()?,
            heat_pairs: self.trace.lock().heat.len(),
            io: self.io_snapshot(),
        })
    }
}
