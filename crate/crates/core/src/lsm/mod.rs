//! Bottom-layer adjacency kept as one key-value record per directed edge in
//! a small leveled LSM-tree.
//!
//! Writes land in an in-memory memtable keyed by `(src, dst)`. A full
//! memtable is flushed to a level-0 run; levels grow by `size_ratio` and are
//! merged downward by [`LsmGraphStore::compact`]. A neighbor lookup merges
//! the memtable with every run that may hold `src` and keeps the record with
//! the highest sequence number per `(src, dst)`.
//!
//! Records are keyed by physical keys. Until the first layout permutation
//! the physical key of an id is the id itself; afterwards a key map
//! translates in both directions so that logical results never change.

mod bloom;
mod run;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use run::{EdgeEntry, Op, RunFile, ENTRY_BYTES, RUN_MAGIC, RUN_VERSION};

use crate::error::{Error, Result};
use crate::metrics::IoCounters;
use crate::reorder::Permutation;
use crate::VectorId;

const MANIFEST: &str = "MANIFEST";
const MANIFEST_TMP: &str = "MANIFEST.tmp";
const KEYMAP: &str = "keymap.bin";

#[derive(Debug, Clone)]
pub struct LsmOptions {
    /// Memtable flush threshold in bytes (entries are costed at 25 bytes).
    pub memtable_bytes: usize,
    pub size_ratio: usize,
    /// Level-0 run count that triggers a level-0 compaction.
    pub l0_run_limit: usize,
    /// Size target of level 1; level `l` targets `level1_bytes * size_ratio^(l-1)`.
    pub level1_bytes: usize,
    pub max_levels: usize,
    /// Output runs of a compaction are split at this many entries.
    pub run_max_entries: usize,
    pub bloom: bool,
    /// Flush and compact automatically as thresholds are crossed.
    pub auto_compact: bool,
}

impl Default for LsmOptions {
    fn default() -> Self {
        let memtable_bytes = 4 << 20;
        Self {
            memtable_bytes,
            size_ratio: 10,
            l0_run_limit: 4,
            level1_bytes: memtable_bytes * 10,
            max_levels: 7,
            run_max_entries: memtable_bytes / ENTRY_BYTES,
            bloom: true,
            auto_compact: true,
        }
    }
}

/// Summary of a live run, for inspection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunInfo {
    pub id: u64,
    pub level: usize,
    pub entries: usize,
    pub min_key: (u64, u64),
    pub max_key: (u64, u64),
}

/// Logical id <-> physical key translation installed by a permutation.
#[derive(Debug, Clone, Default)]
struct KeyMap {
    to_phys: HashMap<VectorId, u64>,
    to_logical: HashMap<u64, VectorId>,
    next_phys: u64,
}

impl KeyMap {
    fn phys_or_alloc(&mut self, id: VectorId) -> u64 {
        if let Some(&p) = self.to_phys.get(&id) {
            return p;
        }
        let p = self.next_phys;
        self.next_phys += 1;
        self.to_phys.insert(id, p);
        self.to_logical.insert(p, id);
        p
    }
}

pub struct LsmGraphStore {
    dir: PathBuf,
    opts: LsmOptions,
    memtable: BTreeMap<(u64, u64), (Op, u64)>,
    /// `levels[0]` oldest first; deeper levels sorted by key, disjoint.
    levels: Vec<Vec<Arc<RunFile>>>,
    next_seq: u64,
    next_run_id: u64,
    keymap: Option<KeyMap>,
    counters: Arc<IoCounters>,
    audit: Option<Vec<(VectorId, VectorId, Op)>>,
}

impl std::fmt::Debug for LsmGraphStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LsmGraphStore")
            .field("dir", &self.dir)
            .field("memtable_entries", &self.memtable.len())
            .field("runs", &self.run_infos())
            .finish()
    }
}

impl LsmGraphStore {
    /// Opens or creates a store. Unflushed memtable contents of a previous
    /// session are not recovered.
    pub fn open(
        dir: impl AsRef<Path>,
        opts: LsmOptions,
        counters: Arc<IoCounters>,
    ) -> Result<Self> {
        if opts.max_levels < 2 || opts.size_ratio < 2 || opts.run_max_entries == 0 {
            return Err(Error::invalid(
                "lsm options: need max_levels >= 2, size_ratio >= 2",
            ));
        }
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut store = LsmGraphStore {
            dir,
            levels: vec![Vec::new(); opts.max_levels],
            opts,
            memtable: BTreeMap::new(),
            next_seq: 1,
            next_run_id: 1,
            keymap: None,
            counters,
            audit: None,
        };
        store.load_manifest()?;
        store.load_keymap()?;
        Ok(store)
    }

    pub fn options(&self) -> &LsmOptions {
        &self.opts
    }

    fn run_path(&self, id: u64) -> PathBuf {
        self.dir.join(format!("{id:08}.run"))
    }

    fn phys_write(&mut self, id: VectorId) -> u64 {
        match &mut self.keymap {
            None => id,
            Some(m) => m.phys_or_alloc(id),
        }
    }

    fn phys_read(&self, id: VectorId) -> Option<u64> {
        match &self.keymap {
            None => Some(id),
            Some(m) => m.to_phys.get(&id).copied(),
        }
    }

    fn logical(&self, phys: u64) -> VectorId {
        match &self.keymap {
            None => phys,
            Some(m) => m.to_logical[&phys],
        }
    }

    fn write(&mut self, src: VectorId, dst: VectorId, op: Op) -> Result<()> {
        if let Some(log) = &mut self.audit {
            log.push((src, dst, op));
        }
        let (ps, pd) = (self.phys_write(src), self.phys_write(dst));
        let seq = self.next_seq;
        self.next_seq += 1;
        self.memtable.insert((ps, pd), (op, seq));
        if self.opts.auto_compact && self.memtable_bytes() >= self.opts.memtable_bytes {
            self.flush_memtable()?;
        }
        Ok(())
    }

    pub fn put_edge(&mut self, src: VectorId, dst: VectorId) -> Result<()> {
        if src == dst {
            return Err(Error::SelfLoop(src));
        }
        self.write(src, dst, Op::Put)
    }

    /// Records a tombstone; deleting an absent edge is a harmless write.
    pub fn delete_edge(&mut self, src: VectorId, dst: VectorId) -> Result<()> {
        self.write(src, dst, Op::Tombstone)
    }

    /// Merged view of `src`'s out-edges in ascending id order. Counts one
    /// neighbor-list fetch.
    pub fn neighbors(&self, src: VectorId) -> Result<Vec<VectorId>> {
        self.neighbors_with_bytes(src).map(|(n, _)| n)
    }

    /// [`Self::neighbors`] that also reports the run bytes read.
    pub fn neighbors_with_bytes(&self, src: VectorId) -> Result<(Vec<VectorId>, u64)> {
        let (out, bytes) = self.neighbors_quiet(src)?;
        self.counters.add_neighbor_fetch(bytes);
        Ok((out, bytes))
    }

    /// Uncounted neighbor read for maintenance and checks.
    pub(crate) fn neighbors_quiet(&self, src: VectorId) -> Result<(Vec<VectorId>, u64)> {
        let mut bytes = 0u64;
        let mut out = Vec::new();
        if let Some(ps) = self.phys_read(src) {
            let mut found: Vec<EdgeEntry> = Vec::new();
            for run in self.levels.iter().flatten() {
                bytes += run.scan_src(ps, &mut found)?;
            }
            for (&(s, d), &(op, seq)) in self.memtable.range((ps, 0)..=(ps, u64::MAX)) {
                found.push(EdgeEntry {
                    src: s,
                    dst: d,
                    seq,
                    op,
                });
            }
            let mut newest: HashMap<u64, (u64, Op)> = HashMap::with_capacity(found.len());
            for e in found {
                let slot = newest.entry(e.dst).or_insert((e.seq, e.op));
                if e.seq > slot.0 {
                    *slot = (e.seq, e.op);
                }
            }
            out = newest
                .into_iter()
                .filter(|(_, (_, op))| *op == Op::Put)
                .map(|(d, _)| self.logical(d))
                .collect();
            out.sort_unstable();
        }
        Ok((out, bytes))
    }

    pub fn memtable_len(&self) -> usize {
        self.memtable.len()
    }

    pub fn memtable_bytes(&self) -> usize {
        self.memtable.len() * ENTRY_BYTES
    }

    /// Writes the memtable as a new level-0 run. Returns `None` when the
    /// memtable is empty.
    pub fn flush_memtable(&mut self) -> Result<Option<RunInfo>> {
        if self.memtable.is_empty() {
            return Ok(None);
        }
        let entries: Vec<EdgeEntry> = self
            .memtable
            .iter()
            .map(|(&(src, dst), &(op, seq))| EdgeEntry { src, dst, seq, op })
            .collect();
        let id = self.next_run_id;
        self.next_run_id += 1;
        let run = Arc::new(RunFile::create(
            &self.run_path(id),
            id,
            &entries,
            self.opts.bloom,
        )?);
        self.levels[0].push(run.clone());
        if let Err(e) = self.write_manifest() {
            self.levels[0].pop();
            let _ = fs::remove_file(run.path());
            return Err(e);
        }
        self.memtable.clear();
        let info = info_of(0, &run);
        if self.opts.auto_compact {
            self.maybe_compact()?;
        }
        Ok(Some(info))
    }

    fn level_bytes(&self, level: usize) -> usize {
        self.levels[level].iter().map(|r| r.byte_size()).sum()
    }

    fn level_target(&self, level: usize) -> usize {
        self.opts.level1_bytes * self.opts.size_ratio.pow(level.saturating_sub(1) as u32)
    }

    /// Compacts levels that exceed their targets until none do.
    pub fn maybe_compact(&mut self) -> Result<()> {
        let deepest = self.opts.max_levels - 1;
        'outer: loop {
            if self.levels[0].len() > self.opts.l0_run_limit {
                self.compact(0)?;
                continue;
            }
            for level in 1..deepest {
                if self.level_bytes(level) > self.level_target(level) {
                    self.compact(level)?;
                    continue 'outer;
                }
            }
            return Ok(());
        }
    }

    /// Merges every run of `level` with the overlapping runs of `level + 1`
    /// into new runs at `level + 1`. Tombstones are dropped only when no
    /// deeper run could still hold an older record for the key.
    pub fn compact(&mut self, level: usize) -> Result<()> {
        if level + 1 >= self.opts.max_levels {
            return Err(Error::invalid(format!(
                "cannot compact the deepest level {level}"
            )));
        }
        if self.levels[level].is_empty() {
            return Ok(());
        }
        let upper = self.levels[level].clone();
        let lo = upper.iter().map(|r| r.key_range().0).min().unwrap();
        let hi = upper.iter().map(|r| r.key_range().1).max().unwrap();
        let (lower, keep): (Vec<_>, Vec<_>) = self.levels[level + 1]
            .iter()
            .cloned()
            .partition(|r| r.overlaps(lo, hi));

        let mut entries = Vec::new();
        for r in upper.iter().chain(lower.iter()) {
            entries.extend(r.read_all()?);
        }
        let merged = newest_per_key(entries);
        let deeper: Vec<((u64, u64), (u64, u64))> = self.levels[level + 2..]
            .iter()
            .flatten()
            .map(|r| r.key_range())
            .collect();
        let merged: Vec<EdgeEntry> = merged
            .into_iter()
            .filter(|e| {
                e.op == Op::Put || deeper.iter().any(|&(a, b)| a <= e.key() && e.key() <= b)
            })
            .collect();

        let outputs = self.write_runs(&merged)?;
        let old_levels = self.levels.clone();
        self.levels[level].clear();
        let mut next = keep;
        next.extend(outputs.iter().cloned());
        next.sort_by_key(|r| r.key_range().0);
        self.levels[level + 1] = next;
        if let Err(e) = self.write_manifest() {
            self.levels = old_levels;
            for r in &outputs {
                let _ = fs::remove_file(r.path());
            }
            return Err(e);
        }
        for r in upper.iter().chain(lower.iter()) {
            let _ = fs::remove_file(r.path());
        }
        Ok(())
    }

    fn write_runs(&mut self, entries: &[EdgeEntry]) -> Result<Vec<Arc<RunFile>>> {
        let mut out = Vec::new();
        for chunk in entries.chunks(self.opts.run_max_entries) {
            let id = self.next_run_id;
            self.next_run_id += 1;
            match RunFile::create(&self.run_path(id), id, chunk, self.opts.bloom) {
                Ok(r) => out.push(Arc::new(r)),
                Err(e) => {
                    for r in &out {
                        let _ = fs::remove_file(r.path());
                    }
                    return Err(e);
                }
            }
        }
        Ok(out)
    }

    fn deepest_nonempty(&self) -> Option<usize> {
        (0..self.levels.len())
            .rev()
            .find(|&l| !self.levels[l].is_empty())
    }

    /// Flushes the memtable and merges every run into a single sorted level,
    /// dropping all tombstones.
    pub fn compact_all(&mut self) -> Result<()> {
        self.rewrite_all(Some)
    }

    /// Full compaction that also re-keys every record so that physical keys
    /// follow `phi` (live id at position `i` gets physical key `i`). Ids not
    /// covered by `phi` get fresh keys past the permutation.
    pub fn apply_permutation(&mut self, phi: &Permutation) -> Result<()> {
        let mut map = KeyMap {
            next_phys: phi.len() as u64,
            ..KeyMap::default()
        };
        for (pos, &id) in phi.order().iter().enumerate() {
            map.to_phys.insert(id, pos as u64);
            map.to_logical.insert(pos as u64, id);
        }
        let old = self.keymap.clone();
        let to_logical = |p: u64| match &old {
            None => p,
            Some(m) => m.to_logical[&p],
        };
        self.rewrite_all(|e| {
            let src = map.phys_or_alloc(to_logical(e.src));
            let dst = map.phys_or_alloc(to_logical(e.dst));
            Some(EdgeEntry { src, dst, ..e })
        })?;
        self.keymap = Some(map);
        if let Err(e) = self.write_keymap() {
            self.keymap = old;
            return Err(e);
        }
        Ok(())
    }

    fn rewrite_all<F>(&mut self, mut f: F) -> Result<()>
    where
        F: FnMut(EdgeEntry) -> Option<EdgeEntry>,
    {
        self.flush_memtable_raw()?;
        let old_runs: Vec<Arc<RunFile>> = self.levels.iter().flatten().cloned().collect();
        if old_runs.is_empty() {
            return Ok(());
        }
        let target = self.deepest_nonempty().unwrap_or(1).max(1);
        let mut entries = Vec::new();
        for r in &old_runs {
            entries.extend(r.read_all()?);
        }
        let mut live: Vec<EdgeEntry> = newest_per_key(entries)
            .into_iter()
            .filter(|e| e.op == Op::Put)
            .filter_map(&mut f)
            .collect();
        live.sort_unstable_by_key(|e| e.key());
        let outputs = if live.is_empty() {
            Vec::new()
        } else {
            self.write_runs(&live)?
        };
        let old_levels =
            std::mem::replace(&mut self.levels, vec![Vec::new(); self.opts.max_levels]);
        self.levels[target] = outputs.clone();
        if let Err(e) = self.write_manifest() {
            self.levels = old_levels;
            for r in &outputs {
                let _ = fs::remove_file(r.path());
            }
            return Err(e);
        }
        for r in &old_runs {
            let _ = fs::remove_file(r.path());
        }
        Ok(())
    }

    fn flush_memtable_raw(&mut self) -> Result<()> {
        let auto = self.opts.auto_compact;
        self.opts.auto_compact = false;
        let r = self.flush_memtable();
        self.opts.auto_compact = auto;
        r.map(|_| ())
    }

    pub fn run_infos(&self) -> Vec<RunInfo> {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(l, runs)| runs.iter().map(move |r| info_of(l, r)))
            .collect()
    }

    /// Raw records of the run with the given id (physical keys).
    pub fn run_entries(&self, run_id: u64) -> Result<Vec<EdgeEntry>> {
        self.levels
            .iter()
            .flatten()
            .find(|r| r.id == run_id)
            .ok_or_else(|| Error::invalid(format!("no run {run_id}")))?
            .read_all()
    }

    /// Whole logical adjacency, uncounted. Used by invariant checks and
    /// by the reordering pass.
    pub fn scan_all(&self) -> Result<BTreeMap<VectorId, Vec<VectorId>>> {
        let mut entries = Vec::new();
        for r in self.levels.iter().flatten() {
            entries.extend(r.read_all()?);
        }
        for (&(src, dst), &(op, seq)) in &self.memtable {
            entries.push(EdgeEntry { src, dst, seq, op });
        }
        let mut adj: BTreeMap<VectorId, Vec<VectorId>> = BTreeMap::new();
        for e in newest_per_key(entries) {
            if e.op == Op::Put {
                adj.entry(self.logical(e.src))
                    .or_default()
                    .push(self.logical(e.dst));
            }
        }
        for list in adj.values_mut() {
            list.sort_unstable();
        }
        Ok(adj)
    }

    /// Physical key of an id, if it has one.
    pub fn physical_key(&self, id: VectorId) -> Option<u64> {
        self.phys_read(id)
    }

    /// Structural checks: runs sorted with unique keys, level > 0 ranges disjoint.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (level, runs) in self.levels.iter().enumerate() {
            for r in runs {
                let es = r.read_all().map_err(|e| e.to_string())?;
                if !es.windows(2).all(|w| w[0].key() < w[1].key()) {
                    return Err(format!("run {} at level {level} unsorted", r.id));
                }
            }
            if level > 0 {
                for w in runs.windows(2) {
                    if w[0].key_range().1 >= w[1].key_range().0 {
                        return Err(format!(
                            "runs {} and {} overlap at level {level}",
                            w[0].id, w[1].id
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Starts recording every logical write so the store can later be
    /// compared against a sequential replay seeded with the current contents.
    pub fn enable_audit(&mut self) -> Result<()> {
        let mut log = Vec::new();
        for (src, dsts) in self.scan_all()? {
            log.extend(dsts.into_iter().map(|d| (src, d, Op::Put)));
        }
        self.audit = Some(log);
        Ok(())
    }

    /// Replays the audit log into an adjacency map, or `None` when auditing
    /// is off.
    pub fn audit_replay(&self) -> Option<BTreeMap<VectorId, Vec<VectorId>>> {
        let log = self.audit.as_ref()?;
        let mut edges: BTreeMap<VectorId, std::collections::BTreeSet<VectorId>> = BTreeMap::new();
        for &(s, d, op) in log {
            match op {
                Op::Put => {
                    edges.entry(s).or_default().insert(d);
                }
                Op::Tombstone => {
                    if let Some(set) = edges.get_mut(&s) {
                        set.remove(&d);
                    }
                }
            }
        }
        Some(
            edges
                .into_iter()
                .filter(|(_, set)| !set.is_empty())
                .map(|(s, set)| (s, set.into_iter().collect()))
                .collect(),
        )
    }

    /// Compares the replayed audit log with both read paths (`scan_all` and
    /// per-source `neighbors`). No-op when auditing is off.
    pub fn check_audit(&self) -> std::result::Result<(), String> {
        let Some(replay) = self.audit_replay() else {
            return Ok(());
        };
        let scanned = self.scan_all().map_err(|e| e.to_string())?;
        if scanned != replay {
            let bad = replay
                .iter()
                .find(|(s, l)| scanned.get(s) != Some(l))
                .map(|(s, _)| *s)
                .or_else(|| scanned.keys().find(|s| !replay.contains_key(s)).copied());
            return Err(format!("scan disagrees with log replay at src {bad:?}"));
        }
        for (&src, want) in &replay {
            let (got, _) = self.neighbors_quiet(src).map_err(|e| e.to_string())?;
            if &got != want {
                return Err(format!("neighbors({src}) disagrees with log replay"));
            }
        }
        Ok(())
    }

    pub fn memory_bytes(&self) -> usize {
        self.memtable.len() * 48 + self.keymap.as_ref().map_or(0, |m| m.to_phys.len() * 48)
    }

    fn write_manifest(&self) -> Result<()> {
        let mut s = format!(
            "LVMF 1\nnext_run_id {}\nnext_seq {}\n",
            self.next_run_id, self.next_seq
        );
        for (level, runs) in self.levels.iter().enumerate() {
            for r in runs {
                s.push_str(&format!("run {level} {}\n", r.id));
            }
        }
        let tmp = self.dir.join(MANIFEST_TMP);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(s.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(tmp, self.dir.join(MANIFEST))?;
        Ok(())
    }

    fn load_manifest(&mut self) -> Result<()> {
        let path = self.dir.join(MANIFEST);
        if !path.exists() {
            return Ok(());
        }
        let text = fs::read_to_string(&path)?;
        let mut lines = text.lines();
        if lines.next() != Some("LVMF 1") {
            return Err(Error::corrupt(&path, "bad manifest header"));
        }
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| Error::corrupt(&path, format!("bad number in {line:?}")))
            };
            match parts.as_slice() {
                ["next_run_id", n] => self.next_run_id = num(n)?,
                ["next_seq", n] => self.next_seq = num(n)?,
                ["run", level, id] => {
                    let (level, id) = (num(level)? as usize, num(id)?);
                    if level >= self.levels.len() {
                        return Err(Error::corrupt(&path, format!("level {level} out of range")));
                    }
                    let run = RunFile::open(&self.run_path(id), id, self.opts.bloom)?;
                    self.levels[level].push(Arc::new(run));
                }
                [] => {}
                _ => return Err(Error::corrupt(&path, format!("unknown line {line:?}"))),
            }
        }
        let max_seq = self
            .levels
            .iter()
            .flatten()
            .filter_map(|r| r.read_all().ok())
            .flatten()
            .map(|e| e.seq)
            .max()
            .unwrap_or(0);
        self.next_seq = self.next_seq.max(max_seq + 1);
        Ok(())
    }

    fn write_keymap(&self) -> Result<()> {
        let Some(m) = &self.keymap else {
            return Ok(());
        };
        let mut pairs: Vec<(u64, u64)> = m.to_phys.iter().map(|(&a, &b)| (a, b)).collect();
        pairs.sort_unstable();
        let mut buf = Vec::with_capacity(16 + pairs.len() * 16);
        buf.extend_from_slice(&m.next_phys.to_le_bytes());
        buf.extend_from_slice(&(pairs.len() as u64).to_le_bytes());
        for (a, b) in pairs {
            buf.extend_from_slice(&a.to_le_bytes());
            buf.extend_from_slice(&b.to_le_bytes());
        }
        let tmp = self.dir.join("keymap.tmp");
        fs::write(&tmp, buf)?;
        fs::rename(tmp, self.dir.join(KEYMAP))?;
        Ok(())
    }

    fn load_keymap(&mut self) -> Result<()> {
        let path = self.dir.join(KEYMAP);
        if !path.exists() {
            return Ok(());
        }
        let buf = fs::read(&path)?;
        let u = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        if buf.len() < 16 || buf.len() != 16 + 16 * u(8) as usize {
            return Err(Error::corrupt(&path, "bad key map length"));
        }
        let mut m = KeyMap {
            next_phys: u(0),
            ..KeyMap::default()
        };
        for k in 0..u(8) as usize {
            let (a, b) = (u(16 + 16 * k), u(24 + 16 * k));
            m.to_phys.insert(a, b);
            m.to_logical.insert(b, a);
        }
        self.keymap = Some(m);
        Ok(())
    }
}

fn info_of(level: usize, r: &RunFile) -> RunInfo {
    let (min_key, max_key) = r.key_range();
    RunInfo {
        id: r.id,
        level,
        entries: r.len(),
        min_key,
        max_key,
    }
}

/// Sorts by key and keeps the highest-sequence record of every key.
fn newest_per_key(mut entries: Vec<EdgeEntry>) -> Vec<EdgeEntry> {
    entries.sort_unstable_by(|a, b| a.key().cmp(&b.key()).then(b.seq.cmp(&a.seq)));
    entries.dedup_by_key(|e| e.key());
    entries
}
