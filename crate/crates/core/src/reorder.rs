//! Locality-aware placement of bottom-layer vectors.
//!
//! Pairs of nodes are scored by shared in-neighbors plus direct links, the
//! link term boosted by how often searches traversed the edge. A layout
//! (permutation of live ids onto storage positions) is rated by summing the
//! score of every ordered pair placed within `w` positions of each other.
//! [`reorder`] builds a layout greedily: start at the node with the largest
//! weighted degree, then repeatedly append the unplaced node with the largest
//! summed score against the last `w` placed nodes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::simhash::HashCode;
use crate::VectorId;

/// Bijection from live ids to storage positions `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<VectorId>,
    position: HashMap<VectorId, usize>,
}

impl Permutation {
    /// `order[i]` is the id placed at position `i`.
    pub fn from_order(order: Vec<VectorId>) -> Result<Self> {
        let mut position = HashMap::with_capacity(order.len());
        for (i, &id) in order.iter().enumerate() {
            if position.insert(id, i).is_some() {
                return Err(Error::NotBijective(format!("id {id} placed twice")));
            }
        }
        Ok(Self { order, position })
    }

    pub fn identity(ids: &[VectorId]) -> Result<Self> {
        Self::from_order(ids.to_vec())
    }

    pub fn order(&self) -> &[VectorId] {
        &self.order
    }

    pub fn position(&self, id: VectorId) -> Option<usize> {
        self.position.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Position -> id, the inverse view.
    pub fn id_at(&self, pos: usize) -> Option<VectorId> {
        self.order.get(pos).copied()
    }

    /// Errors unless the permutation covers exactly `ids`.
    pub fn check_covers(&self, ids: &[VectorId]) -> Result<()> {
        if ids.len() != self.order.len() {
            return Err(Error::NotBijective(format!(
                "{} positions for {} live ids",
                self.order.len(),
                ids.len()
            )));
        }
        if let Some(id) = ids.iter().find(|id| !self.position.contains_key(id)) {
            return Err(Error::NotBijective(format!("live id {id} unplaced")));
        }
        Ok(())
    }
}

/// Symmetric traversal counts per node pair.
#[derive(Debug, Clone)]
pub struct HeatMap {
    counts: HashMap<(VectorId, VectorId), f64>,
    decay: f64,
}

impl Default for HeatMap {
    fn default() -> Self {
        Self::new(0.5)
    }
}

fn pair(u: VectorId, v: VectorId) -> (VectorId, VectorId) {
    (u.min(v), u.max(v))
}

impl HeatMap {
    pub fn new(decay: f64) -> Self {
        Self {
            counts: HashMap::new(),
            decay: decay.clamp(f64::MIN_POSITIVE, 1.0),
        }
    }

    pub fn record_traversal(&mut self, u: VectorId, v: VectorId) {
        if u != v {
            *self.counts.entry(pair(u, v)).or_default() += 1.0;
        }
    }

    pub fn merge(&mut self, other: &HeatMap) {
        for (&k, &c) in &other.counts {
            *self.counts.entry(k).or_default() += c;
        }
    }

    pub fn count(&self, u: VectorId, v: VectorId) -> f64 {
        self.counts.get(&pair(u, v)).copied().unwrap_or(0.0)
    }

    pub fn max_count(&self) -> f64 {
        self.counts.values().copied().fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn decay_factor(&self) -> f64 {
        self.decay
    }

    /// Multiplies every count by the decay factor.
    pub fn decay(&mut self) {
        let d = self.decay;
        self.counts.values_mut().for_each(|c| *c *= d);
        self.counts.retain(|_, c| *c > 1e-9);
    }

    /// Drops pairs touching an id (used when a node is deleted).
    pub fn forget(&mut self, id: VectorId) {
        self.counts.retain(|&(a, b), _| a != id && b != id);
    }

    /// `u,v,count` lines sorted by pair.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<_> = self.counts.iter().collect();
        rows.sort_by_key(|(k, _)| **k);
        let mut s = String::from("u,v,count\n");
        for ((u, v), c) in rows {
            let _ = writeln!(s, "{u},{v},{c}");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMode {
    /// Link term scaled by `1 + lambda * normalized heat`.
    #[default]
    Heat,
    /// Link term scaled by `(1 + lambda) * mean Hamming(query code, code(u))`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParams {
    pub lambda: f64,
    pub window: usize,
    pub mode: ScoreMode,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            window: 8,
            mode: ScoreMode::Heat,
        }
    }
}

impl ScoreParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::invalid("lambda must be nonnegative"));
        }
        if self.window == 0 {
            return Err(Error::invalid("window must be at least 1"));
        }
        Ok(())
    }
}

/// Directed out-adjacency of the graph being laid out. Every node to place
/// must be a key, possibly with an empty list.
pub type Graph = BTreeMap<VectorId, Vec<VectorId>>;

/// Pair scoring over a fixed graph snapshot.
pub struct LayoutScorer<'a> {
    out: &'a Graph,
    inn: HashMap<VectorId, Vec<VectorId>>,
    heat: &'a HeatMap,
    max_heat: f64,
    params: ScoreParams,
    mean_hamming: HashMap<VectorId, f64>,
}

impl<'a> LayoutScorer<'a> {
    pub fn new(out: &'a Graph, heat: &'a HeatMap, params: ScoreParams) -> Self {
        let mut inn: HashMap<VectorId, Vec<VectorId>> = HashMap::new();
        for (&a, list) in out {
            for &b in list {
                inn.entry(b).or_default().push(a);
            }
        }
        for list in inn.values_mut() {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            out,
            inn,
            heat,
            max_heat: heat.max_count(),
            params,
            mean_hamming: HashMap::new(),
        }
    }

    /// Supplies node codes and a sample of recent query codes for
    /// [`ScoreMode::Literal`].
    pub fn with_query_codes(
        mut self,
        codes: &HashMap<VectorId, HashCode>,
        queries: &[HashCode],
    ) -> Self {
        if !queries.is_empty() {
            for &u in self.out.keys() {
                if let Some(c) = codes.get(&u) {
                    let sum: u64 = queries.iter().map(|q| q.hamming(c) as u64).sum();
                    self.mean_hamming
                        .insert(u, sum as f64 / queries.len() as f64);
                }
            }
        }
        self
    }

    pub fn params(&self) -> &ScoreParams {
        &self.params
    }

    pub fn graph(&self) -> &Graph {
        self.out
    }

    fn in_of(&self, u: VectorId) -> &[VectorId] {
        self.inn.get(&u).map_or(&[], Vec::as_slice)
    }

    fn has_edge(&self, a: VectorId, b: VectorId) -> bool {
        self.out
            .get(&a)
            .is_some_and(|l| l.binary_search(&b).is_ok())
    }

    /// Shared in-neighbors of `u` and `v`.
    pub fn shared_in(&self, u: VectorId, v: VectorId) -> usize {
        sorted_intersection_len(self.in_of(u), self.in_of(v))
    }

    /// Directed edges between `u` and `v` (0, 1 or 2).
    pub fn direct_links(&self, u: VectorId, v: VectorId) -> usize {
        self.has_edge(u, v) as usize + self.has_edge(v, u) as usize
    }

    pub fn static_score(&self, u: VectorId, v: VectorId) -> f64 {
        if u == v {
            return 0.0;
        }
        (self.shared_in(u, v) + self.direct_links(u, v)) as f64
    }

    fn link_factor(&self, u: VectorId, v: VectorId) -> f64 {
        let lambda = self.params.lambda;
        match self.params.mode {
            ScoreMode::Heat => {
                let h = if self.max_heat > 0.0 {
                    self.heat.count(u, v) / self.max_heat
                } else {
                    0.0
                };
                1.0 + lambda * h
            }
            ScoreMode::Literal => {
                (1.0 + lambda) * self.mean_hamming.get(&u).copied().unwrap_or(0.0)
            }
        }
    }

    /// Score of placing `v` after `u`.
    pub fn score(&self, u: VectorId, v: VectorId) -> f64 {
        if u == v {
            return 0.0;
        }
        let links = self.direct_links(u, v);
        let mut s = self.shared_in(u, v) as f64;
        if links > 0 {
            s += links as f64 * self.link_factor(u, v);
        }
        s
    }

    /// Every `v != u` with a nonzero score against `u`, as
    /// `(v, score(u, v), score(v, u))`.
    fn related(&self, u: VectorId) -> Vec<(VectorId, f64, f64)> {
        let mut shared: HashMap<VectorId, usize> = HashMap::new();
        for &a in self.in_of(u) {
            for &v in self.out.get(&a).map_or(&[][..], Vec::as_slice) {
                if v != u {
                    *shared.entry(v).or_default() += 1;
                }
            }
        }
        let mut touched: HashSet<VectorId> = shared.keys().copied().collect();
        touched.extend(self.out.get(&u).into_iter().flatten().copied());
        touched.extend(self.in_of(u).iter().copied());
        touched.remove(&u);
        let mut out: Vec<(VectorId, f64, f64)> = touched
            .into_iter()
            .filter(|v| self.out.contains_key(v))
            .map(|v| {
                let links = self.direct_links(u, v) as f64;
                let shared = shared.get(&v).copied().unwrap_or(0) as f64;
                let (mut fwd, mut back) = (shared, shared);
                if links > 0.0 {
                    fwd += links * self.link_factor(u, v);
                    back += links * self.link_factor(v, u);
                }
                (v, fwd, back)
            })
            .filter(|&(_, f, b)| f > 0.0 || b > 0.0)
            .collect();
        out.sort_unstable_by_key(|&(v, _, _)| v);
        out
    }
}

fn sorted_intersection_len(a: &[VectorId], b: &[VectorId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Sum of `score(u, v)` over ordered pairs with `0 < pos(v) - pos(u) <= w`.
pub fn layout_objective(phi: &Permutation, scorer: &LayoutScorer<'_>) -> Result<f64> {
    let nodes: Vec<VectorId> = scorer.graph().keys().copied().collect();
    phi.check_covers(&nodes)?;
    let w = scorer.params().window;
    let order = phi.order();
    let mut total = 0.0;
    for i in 0..order.len() {
        for j in i + 1..order.len().min(i + w + 1) {
            total += scorer.score(order[i], order[j]);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Keyed {
    key: f64,
    id: VectorId,
    version: u64,
}

impl Eq for Keyed {}

impl Ord for Keyed {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Keyed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const KEY_EPS: f64 = 1e-9;

/// Greedy windowed placement, growing the sequence at either end. Each
/// step takes the unplaced node with the largest summed score against the
/// `w` nodes at the back (placed after them) or at the front (placed before
/// them); ties prefer the back and then the smaller id. Falls back to
/// `current` when the greedy layout scores lower, so the result never
/// regresses.
pub fn reorder(scorer: &LayoutScorer<'_>, current: &Permutation) -> Result<Permutation> {
    let nodes: Vec<VectorId> = scorer.graph().keys().copied().collect();
    current.check_covers(&nodes)?;
    if nodes.is_empty() {
        return Ok(current.clone());
    }
    let w = scorer.params().window;

    let related: HashMap<VectorId, Vec<(VectorId, f64, f64)>> =
        nodes.iter().map(|&u| (u, scorer.related(u))).collect();
    let mut by_degree: Vec<(f64, VectorId)> = nodes
        .iter()
        .map(|&u| (related[&u].iter().map(|&(_, f, b)| f + b).sum::<f64>(), u))
        .collect();
    by_degree.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut degree_cursor = 0;

    let mut placed: HashSet<VectorId> = HashSet::with_capacity(nodes.len());
    let mut back = EndKeys::default();
    let mut front = EndKeys::default();
    let mut order: VecDeque<VectorId> = VecDeque::with_capacity(nodes.len());

    let mut next = (by_degree[0].1, true);
    loop {
        let (x, at_back) = next;
        placed.insert(x);
        // Window membership changes: x enters the window at its end, and
        // enters the other end's window while the sequence is short.
        let len = order.len() + 1;
        if at_back {
            order.push_back(x);
            back.enter(x, &related, &placed, Side::Back);
            if len > w {
                back.leave(order[len - 1 - w], &related, &placed, Side::Back);
            } else {
                front.enter(x, &related, &placed, Side::Front);
            }
        } else {
            order.push_front(x);
            front.enter(x, &related, &placed, Side::Front);
            if len > w {
                front.leave(order[w], &related, &placed, Side::Front);
            } else {
                back.enter(x, &related, &placed, Side::Back);
            }
        }
        if order.len() == nodes.len() {
            break;
        }
        let b = back.best(&placed);
        let f = front.best(&placed);
        next = match (b, f) {
            (Some(b), Some(f)) if f.key > b.key => (f.id, false),
            (Some(b), _) => (b.id, true),
            (None, Some(f)) => (f.id, false),
            (None, None) => {
                while placed.contains(&by_degree[degree_cursor].1) {
                    degree_cursor += 1;
                }
                (by_degree[degree_cursor].1, true)
            }
        };
    }

    let greedy = Permutation::from_order(order.into_iter().collect())?;
    if layout_objective(&greedy, scorer)? >= layout_objective(current, scorer)? {
        Ok(greedy)
    } else {
        Ok(current.clone())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Back,
    Front,
}

/// Lazily updated max-heap of summed window scores for one end.
#[derive(Default)]
struct EndKeys {
    key: HashMap<VectorId, f64>,
    version: HashMap<VectorId, u64>,
    heap: BinaryHeap<Keyed>,
}

impl EndKeys {
    fn bump(&mut self, v: VectorId, delta: f64) {
        let k = self.key.entry(v).or_insert(0.0);
        *k += delta;
        let ver = self.version.entry(v).or_insert(0);
        *ver += 1;
        if *k > KEY_EPS {
            self.heap.push(Keyed {
                key: *k,
                id: v,
                version: *ver,
            });
        }
    }

    fn apply(
        &mut self,
        u: VectorId,
        sign: f64,
        related: &HashMap<VectorId, Vec<(VectorId, f64, f64)>>,
        placed: &HashSet<VectorId>,
        side: Side,
    ) {
        for &(v, fwd, bwd) in &related[&u] {
            if !placed.contains(&v) {
                // at the back v follows u: score(u, v); at the front v precedes u: score(v, u)
                let s = if side == Side::Back { fwd } else { bwd };
                if s != 0.0 {
                    self.bump(v, sign * s);
                }
            }
        }
    }

    fn enter(
        &mut self,
        u: VectorId,
        r: &HashMap<VectorId, Vec<(VectorId, f64, f64)>>,
        p: &HashSet<VectorId>,
        side: Side,
    ) {
        self.apply(u, 1.0, r, p, side);
    }

    fn leave(
        &mut self,
        u: VectorId,
        r: &HashMap<VectorId, Vec<(VectorId, f64, f64)>>,
        p: &HashSet<VectorId>,
        side: Side,
    ) {
        self.apply(u, -1.0, r, p, side);
    }

    /// Top valid entry, left in the heap.
    fn best(&mut self, placed: &HashSet<VectorId>) -> Option<Keyed> {
        while let Some(top) = self.heap.peek().copied() {
            if !placed.contains(&top.id) && self.version.get(&top.id) == Some(&top.version) {
                return Some(top);
            }
            self.heap.pop();
        }
        None
    }
}

/// Number of distinct `w`-sized storage windows touched by `path`.
pub fn distinct_windows<F>(path: &[VectorId], window: usize, slot_of: F) -> usize
where
    F: Fn(VectorId) -> Option<u64>,
{
    let w = window.max(1) as u64;
    path.iter()
        .filter_map(|&id| slot_of(id))
        .map(|s| s / w)
        .collect::<HashSet<_>>()
        .len()
}

/// Mean of [`distinct_windows`] over several paths (0 for none).
pub fn mean_distinct_windows<F>(paths: &[Vec<VectorId>], window: usize, slot_of: F) -> f64
where
    F: Fn(VectorId) -> Option<u64>,
{
    if paths.is_empty() {
        return 0.0;
    }
    let total: usize = paths
        .iter()
        .map(|p| distinct_windows(p, window, &slot_of))
        .sum();
    total as f64 / paths.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(n: u64, edges: &[(u64, u64)]) -> Graph {
        let mut g: Graph = (0..n).map(|i| (i, Vec::new())).collect();
        for &(a, b) in edges {
            g.get_mut(&a).unwrap().push(b);
        }
        for l in g.values_mut() {
            l.sort_unstable();
            l.dedup();
        }
        g
    }

    fn params(w: usize) -> ScoreParams {
        ScoreParams {
            lambda: 1.0,
            window: w,
            mode: ScoreMode::Heat,
        }
    }

    #[test]
    fn heat_symmetric_counts() {
        let mut h = HeatMap::default();
        h.record_traversal(1, 2);
        assert_eq!(h.count(1, 2), 1.0);
        h.record_traversal(2, 1);
        assert_eq!(h.count(1, 2), 2.0);
        h.record_traversal(3, 3);
        assert_eq!(h.len(), 1);
        h.decay();
        assert_eq!(h.count(2, 1), 1.0);
        assert_eq!(h.to_csv(), "u,v,count\n1,2,1\n");
    }

    #[test]
    fn static_scores_by_hand() {
        // 0 = a, 1 = u, 2 = v; a->u, a->v, u<->v
        let g = graph(4, &[(0, 1), (0, 2), (1, 2), (2, 1)]);
        let heat = HeatMap::default();
        let s = LayoutScorer::new(&g, &heat, params(1));
        assert_eq!(s.shared_in(1, 2), 1);
        assert_eq!(s.direct_links(1, 2), 2);
        assert_eq!(s.static_score(1, 2), 3.0);
        assert_eq!(s.static_score(0, 3), 0.0);

        let g2 = graph(2, &[(0, 1), (1, 0)]);
        let s2 = LayoutScorer::new(&g2, &heat, params(1));
        assert_eq!(s2.static_score(0, 1), 2.0);
    }

    #[test]
    fn heat_score_substitution() {
        let g = graph(2, &[(0, 1), (1, 0)]);
        let mut heat = HeatMap::default();
        heat.record_traversal(0, 1);
        let s = LayoutScorer::new(&g, &heat, params(1));
        // S_s = 0, S_n = 2, lambda = 1, h = 1
        assert_eq!(s.score(0, 1), 4.0);
        let manual = 0.0 + 2.0 * (1.0 + 1.0 * (heat.count(0, 1) / heat.max_count()));
        assert_eq!(s.score(1, 0), manual);

        let zero = LayoutScorer::new(
            &g,
            &heat,
            ScoreParams {
                lambda: 0.0,
                ..params(1)
            },
        );
        assert_eq!(zero.score(0, 1), zero.static_score(0, 1));
        let empty = HeatMap::default();
        let cold = LayoutScorer::new(&g, &empty, params(1));
        assert_eq!(cold.score(0, 1), cold.static_score(0, 1));
    }

    #[test]
    fn literal_mode_uses_mean_hamming_of_source() {
        let g = graph(2, &[(0, 1)]);
        let heat = HeatMap::default();
        let codes: HashMap<u64, HashCode> = [
            (0, HashCode::from_signs(&[1, 1, 1, 1])),
            (1, HashCode::from_signs(&[1, 1, 1, -1])),
        ]
        .into_iter()
        .collect();
        let queries = vec![
            HashCode::from_signs(&[-1, -1, 1, 1]),
            HashCode::from_signs(&[1, 1, 1, 1]),
        ];
        let p = ScoreParams {
            lambda: 0.5,
            window: 1,
            mode: ScoreMode::Literal,
        };
        let s = LayoutScorer::new(&g, &heat, p).with_query_codes(&codes, &queries);
        // mean Hamming for node 0 = (2 + 0) / 2 = 1
        assert_eq!(s.score(0, 1), 1.0 * 1.5 * 1.0);
        // node 1: (3 + 1) / 2 = 2
        assert_eq!(s.score(1, 0), 1.0 * 1.5 * 2.0);
    }

    fn naive_objective(phi: &Permutation, s: &LayoutScorer<'_>) -> f64 {
        let w = s.params().window as i64;
        let mut total = 0.0;
        for &u in phi.order() {
            for &v in phi.order() {
                let gap = phi.position(v).unwrap() as i64 - phi.position(u).unwrap() as i64;
                if gap > 0 && gap <= w {
                    total += s.score(u, v);
                }
            }
        }
        total
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: u64, p: f64) -> Graph {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a != b && rng.random_bool(p) {
                    edges.push((a, b));
                }
            }
        }
        graph(n, &edges)
    }

    #[test]
    fn objective_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let n = rng.random_range(2..100);
            let g = random_graph(&mut rng, n, 0.05);
            let mut heat = HeatMap::default();
            for _ in 0..50 {
                heat.record_traversal(rng.random_range(0..n), rng.random_range(0..n));
            }
            let mut order: Vec<u64> = (0..n).collect();
            order.shuffle(&mut rng);
            let phi = Permutation::from_order(order).unwrap();
            let s = LayoutScorer::new(&g, &heat, params(1 + trial % 7));
            let fast = layout_objective(&phi, &s).unwrap();
            let slow = naive_objective(&phi, &s);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn objective_saturated_window_and_two_nodes() {
        let g = graph(3, &[(0, 1), (1, 2), (2, 0), (0, 2)]);
        let heat = HeatMap::default();
        let s = LayoutScorer::new(&g, &heat, params(5));
        let phi = Permutation::from_order(vec![2, 0, 1]).unwrap();
        let all: f64 = [(2, 0), (2, 1), (0, 1)]
            .iter()
            .map(|&(u, v)| s.score(u, v))
            .sum();
        assert_eq!(layout_objective(&phi, &s).unwrap(), all);

        let g2 = graph(2, &[(1, 0)]);
        let s2 = LayoutScorer::new(&g2, &heat, params(1));
        let phi2 = Permutation::from_order(vec![1, 0]).unwrap();
        assert_eq!(layout_objective(&phi2, &s2).unwrap(), s2.score(1, 0));
        let bad = Permutation::from_order(vec![1]).unwrap();
        assert!(layout_objective(&bad, &s2).is_err());
    }

    #[test]
    fn empty_graph_reorders_to_identity() {
        let g = Graph::new();
        let heat = HeatMap::default();
        let s = LayoutScorer::new(&g, &heat, params(2));
        let id = Permutation::identity(&[]).unwrap();
        assert_eq!(reorder(&s, &id).unwrap(), id);
    }

    #[test]
    fn greedy_never_below_identity_and_bijective() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let n = rng.random_range(1..60);
            let g = random_graph(&mut rng, n, 0.08);
            let heat = HeatMap::default();
            let s = LayoutScorer::new(&g, &heat, params(rng.random_range(1..6)));
            let ids: Vec<u64> = (0..n).collect();
            let id = Permutation::identity(&ids).unwrap();
            let phi = reorder(&s, &id).unwrap();
            phi.check_covers(&ids).unwrap();
            let mut sorted = phi.order().to_vec();
            sorted.sort_unstable();
            assert_eq!(sorted, ids);
            assert!(layout_objective(&phi, &s).unwrap() >= layout_objective(&id, &s).unwrap());
        }
    }

    #[test]
    fn chain_layout_already_optimal() {
        let edges: Vec<(u64, u64)> = (0..9).flat_map(|i| [(i, i + 1), (i + 1, i)]).collect();
        let g = graph(10, &edges);
        let heat = HeatMap::default();
        let s = LayoutScorer::new(&g, &heat, params(1));
        let id = Permutation::identity(&(0..10).collect::<Vec<_>>()).unwrap();
        let phi = reorder(&s, &id).unwrap();
        assert_eq!(
            layout_objective(&phi, &s).unwrap(),
            layout_objective(&id, &s).unwrap()
        );
    }

    #[test]
    fn hot_path_collapses_into_fewer_windows() {
        // Eight nodes; only the hot path 1 - 6 - 2 - 7 is linked, and the
        // current layout spreads it over four 2-slot windows.
        let path = [1u64, 6, 2, 7];
        let mut edges = Vec::new();
        for w in path.windows(2) {
            edges.push((w[0], w[1]));
            edges.push((w[1], w[0]));
        }
        let g = graph(8, &edges);
        let mut heat = HeatMap::default();
        for _ in 0..10 {
            for w in path.windows(2) {
                heat.record_traversal(w[0], w[1]);
            }
        }
        // current layout puts ids 1, 6, 2, 7 at slots 0, 2, 4, 6
        let current = Permutation::from_order(vec![1, 0, 6, 3, 2, 4, 7, 5]).unwrap();
        let slot = |p: &Permutation| {
            let p = p.clone();
            move |id| p.position(id).map(|x| x as u64)
        };
        assert_eq!(distinct_windows(&path, 2, slot(&current)), 4);
        let s = LayoutScorer::new(
            &g,
            &heat,
            ScoreParams {
                lambda: 10.0,
                window: 2,
                mode: ScoreMode::Heat,
            },
        );
        let phi = reorder(&s, &current).unwrap();
        assert_eq!(
            distinct_windows(&path, 2, slot(&phi)),
            2,
            "{:?}",
            phi.order()
        );
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

    /// Smallest greedy / optimum ratio over every directed 4-node graph,
    /// with and without heat on one edge.
    pub(crate) fn worst_four_node_ratio() -> f64 {
        let pairs: Vec<(u64, u64)> = (0..4)
            .flat_map(|a| (0..4).map(move |b| (a, b)))
            .filter(|(a, b)| a != b)
            .collect();
        let perms = permutations(&[0, 1, 2, 3]);
        let mut worst = f64::INFINITY;
        for mask in 0u32..(1 << pairs.len()) {
            let edges: Vec<_> = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, e)| *e)
                .collect();
            let g = graph(4, &edges);
            let mut heats = vec![HeatMap::default()];
            if let Some(&(a, b)) = edges.first() {
                let mut h = HeatMap::default();
                h.record_traversal(a, b);
                heats.push(h);
            }
            for heat in &heats {
                let s = LayoutScorer::new(&g, heat, params(1));
                let best = perms
                    .iter()
                    .map(|p| {
                        layout_objective(&Permutation::from_order(p.clone()).unwrap(), &s).unwrap()
                    })
                    .fold(0.0, f64::max);
                let id = Permutation::identity(&[0, 1, 2, 3]).unwrap();
                let got = layout_objective(&reorder(&s, &id).unwrap(), &s).unwrap();
                if best > 0.0 {
                    worst = worst.min(got / best);
                }
            }
        }
        worst
    }

    #[test]
    fn four_node_window_one_near_optimal() {
        let r = worst_four_node_ratio();
        assert!(r >= 0.8, "worst ratio {r}");
    }

    #[test]
    fn greedy_beats_identity_and_shuffle_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut wins = 0;
        for trial in 0..100 {
            let w = [2, 4, 8][trial % 3];
            let g = random_graph(&mut rng, 50, 0.06);
            let heat = HeatMap::default();
            let s = LayoutScorer::new(&g, &heat, params(w));
            let ids: Vec<u64> = (0..50).collect();
            let id = Permutation::identity(&ids).unwrap();
            let mut sh = ids.clone();
            sh.shuffle(&mut rng);
            let shuffled = Permutation::from_order(sh).unwrap();
            let f = layout_objective(&reorder(&s, &id).unwrap(), &s).unwrap();
            assert!(f >= layout_objective(&id, &s).unwrap());
            if f >= layout_objective(&shuffled, &s).unwrap() {
                wins += 1;
            }
        }
        assert!(wins >= 95, "{wins}/100");
    }
}
