//! Raw vector storage: one contiguous file of fixed-width little-endian f32
//! slots, with an id -> slot table kept in memory and persisted as a sidecar.
//!
//! A record lives at byte offset `slot * 4 * dim`. Slots of deleted ids are
//! recycled last-in first-out; ids are never reused.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::error::{Error, Result};
use crate::metrics::IoCounters;
use crate::reorder::Permutation;
use crate::VectorId;

const VECTOR_FILE: &str = "vectors.bin";
const SLOT_FILE: &str = "slots.lvsl";
const SLOT_MAGIC: &[u8; 4] = b"LVSL";
const SLOT_VERSION: u32 = 1;
const SLOT_HEADER_LEN: usize = 4 + 4 + 4 + 8;

/// Euclidean distance. Panics in debug builds on length mismatch; use
/// [`distance`] for the checked variant.
#[inline]
pub fn l2(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    l2_squared(a, b).sqrt()
}

#[inline]
pub fn l2_squared(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            let d = (a[i * 4 + j] - b[i * 4 + j]) as f64;
            acc[j] += d * d;
        }
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        let d = (a[i] - b[i]) as f64;
        sum += d * d;
    }
    sum as f32
}

/// Checked Euclidean distance.
pub fn distance(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(l2(a, b))
}

pub(crate) fn validate_vector(x: &[f32], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    Ok(())
}

/// In-memory id <-> slot bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct SlotTable {
    id_to_slot: HashMap<VectorId, u64>,
    slot_to_id: Vec<Option<VectorId>>,
    free_slots: Vec<u64>,
    next_id: VectorId,
}

impl SlotTable {
    pub fn high_water(&self) -> u64 {
        self.slot_to_id.len() as u64
    }

    pub fn live(&self) -> usize {
        self.id_to_slot.len()
    }

    pub fn slot_of(&self, id: VectorId) -> Option<u64> {
        self.id_to_slot.get(&id).copied()
    }

    pub fn free_slots(&self) -> &[u64] {
        &self.free_slots
    }

    pub fn next_id(&self) -> VectorId {
        self.next_id
    }

    pub fn is_deleted(&self, slot: u64) -> bool {
        (slot as usize) < self.slot_to_id.len() && self.slot_to_id[slot as usize].is_none()
    }

    /// Full scan of the table invariants. Returns a description of the first violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        let mut seen = vec![false; self.slot_to_id.len()];
        for (&id, &slot) in &self.id_to_slot {
            let s = slot as usize;
            if s >= self.slot_to_id.len() {
                return Err(format!("id {id} maps past high-water slot {slot}"));
            }
            if seen[s] {
                return Err(format!("slot {slot} shared by two ids"));
            }
            seen[s] = true;
            if self.slot_to_id[s] != Some(id) {
                return Err(format!("reverse map disagrees at slot {slot}"));
            }
            if id >= self.next_id {
                return Err(format!("id {id} not below next id {}", self.next_id));
            }
        }
        let mut free_seen = vec![false; self.slot_to_id.len()];
        for &slot in &self.free_slots {
            let s = slot as usize;
            if s >= seen.len() || seen[s] || free_seen[s] {
                return Err(format!(
                    "free slot {slot} is live, duplicated or out of range"
                ));
            }
            free_seen[s] = true;
        }
        for (s, used) in seen.iter().enumerate() {
            if !used && !free_seen[s] {
                return Err(format!("slot {s} is neither live nor free"));
            }
        }
        Ok(())
    }
}

pub struct VectorStore {
    dir: PathBuf,
    dim: usize,
    file: File,
    table: RwLock<SlotTable>,
    writer: Mutex<()>,
    counters: Arc<IoCounters>,
}

impl std::fmt::Debug for VectorStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorStore")
            .field("dir", &self.dir)
            .field("dim", &self.dim)
            .field("live", &self.len())
            .finish()
    }
}

impl VectorStore {
    /// Opens the store in `dir`, creating empty files when none exist.
    pub fn open(dir: impl AsRef<Path>, dim: usize, counters: Arc<IoCounters>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(dir.join(VECTOR_FILE))?;
        let slot_path = dir.join(SLOT_FILE);
        let table = if slot_path.exists() {
            let table = read_slot_file(&slot_path, dim)?;
            let need = table.high_water() * record_bytes(dim);
            if file.metadata()?.len() < need {
                return Err(Error::corrupt(
                    dir.join(VECTOR_FILE),
                    format!("shorter than {need} bytes implied by the slot table"),
                ));
            }
            table
        } else {
            SlotTable::default()
        };
        Ok(Self {
            dir,
            dim,
            file,
            table: RwLock::new(table),
            writer: Mutex::new(()),
            counters,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.read().live()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counters(&self) -> &Arc<IoCounters> {
        &self.counters
    }

    pub fn slot_table(&self) -> SlotTable {
        self.table.read().clone()
    }

    pub fn slot_of(&self, id: VectorId) -> Option<u64> {
        self.table.read().slot_of(id)
    }

    pub fn contains(&self, id: VectorId) -> bool {
        self.table.read().id_to_slot.contains_key(&id)
    }

    /// Live ids in ascending order.
    pub fn live_ids(&self) -> Vec<VectorId> {
        let mut ids: Vec<_> = self.table.read().id_to_slot.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn next_id(&self) -> VectorId {
        self.table.read().next_id
    }

    /// Writes `x` into a recycled or fresh slot and returns its new id.
    pub fn append(&self, x: &[f32]) -> Result<VectorId> {
        validate_vector(x, self.dim)?;
        let _w = self.writer.lock();
        let (slot, id) = {
            let t = self.table.read();
            let slot = t.free_slots.last().copied().unwrap_or(t.high_water());
            (slot, t.next_id)
        };
        // The slot is unreferenced until the table is updated, so readers
        // never observe a partially written record.
        self.file
            .write_all_at(&encode(x), slot * record_bytes(self.dim))?;
        let mut t = self.table.write();
        if t.free_slots.last() == Some(&slot) {
            t.free_slots.pop();
        } else {
            t.slot_to_id.push(None);
        }
        t.slot_to_id[slot as usize] = Some(id);
        t.id_to_slot.insert(id, slot);
        t.next_id = id + 1;
        Ok(id)
    }

    /// Reads the vector for `id`, counting one vector fetch.
    pub fn get(&self, id: VectorId) -> Result<Vec<f32>> {
        let slot = self.slot_of(id).ok_or(Error::NotFound(id))?;
        let v = self.read_slot(slot)?;
        self.counters.add_vector_fetch(record_bytes(self.dim));
        Ok(v)
    }

    /// Uncounted read used by maintenance paths (open, reordering).
    pub(crate) fn read_uncounted(&self, id: VectorId) -> Result<Vec<f32>> {
        let slot = self.slot_of(id).ok_or(Error::NotFound(id))?;
        self.read_slot(slot)
    }

    fn read_slot(&self, slot: u64) -> Result<Vec<f32>> {
        let mut buf = vec![0u8; record_bytes(self.dim) as usize];
        self.file
            .read_exact_at(&mut buf, slot * record_bytes(self.dim))?;
        Ok(decode(&buf))
    }

    pub fn mark_deleted(&self, id: VectorId) -> Result<()> {
        let _w = self.writer.lock();
        let mut t = self.table.write();
        let slot = t.id_to_slot.remove(&id).ok_or(Error::NotFound(id))?;
        t.slot_to_id[slot as usize] = None;
        t.free_slots.push(slot);
        Ok(())
    }

    /// Rewrites the vector file so that live id `v` sits at slot
    /// `phi.position(v)`. The new file is built next to the old one and
    /// renamed into place; on error the old file stays authoritative.
    pub fn apply_permutation(&mut self, phi: &Permutation) -> Result<()> {
        let live = self.live_ids();
        phi.check_covers(&live)?;
        let tmp_path = self.dir.join(format!("{VECTOR_FILE}.tmp"));
        {
            let tmp = File::create(&tmp_path)?;
            let mut w = BufWriter::new(&tmp);
            for &id in phi.order() {
                w.write_all(&encode(&self.read_uncounted(id)?))?;
            }
            w.flush()?;
            drop(w);
            tmp.sync_all()?;
        }
        let final_path = self.dir.join(VECTOR_FILE);
        fs::rename(&tmp_path, &final_path)?;
        self.file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(&final_path)?;

        let mut t = self.table.write();
        let next_id = t.next_id;
        let mut table = SlotTable {
            next_id,
            ..SlotTable::default()
        };
        for (pos, &id) in phi.order().iter().enumerate() {
            table.id_to_slot.insert(id, pos as u64);
            table.slot_to_id.push(Some(id));
        }
        *t = table;
        drop(t);
        self.persist()
    }

    /// Flushes vector data and rewrites the slot sidecar.
    pub fn persist(&self) -> Result<()> {
        self.file.sync_data()?;
        let t = self.table.read();
        write_slot_file(&self.dir.join(SLOT_FILE), self.dim, &t)
    }

    pub fn vector_file_len(&self) -> Result<u64> {
        Ok(self.file.metadata()?.len())
    }

    /// Approximate resident bytes of the slot table.
    pub fn memory_bytes(&self) -> usize {
        let t = self.table.read();
        t.id_to_slot.len() * 32 + t.slot_to_id.len() * 16 + t.free_slots.len() * 8
    }
}

fn record_bytes(dim: usize) -> u64 {
    4 * dim as u64
}

fn encode(x: &[f32]) -> Vec<u8> {
    x.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode(buf: &[u8]) -> Vec<f32> {
    buf.chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn write_slot_file(path: &Path, dim: usize, t: &SlotTable) -> Result<()> {
    let tmp = path.with_extension("lvsl.tmp");
    {
        let f = File::create(&tmp)?;
        let mut w = BufWriter::new(&f);
        w.write_all(SLOT_MAGIC)?;
        w.write_all(&SLOT_VERSION.to_le_bytes())?;
        w.write_all(&(dim as u32).to_le_bytes())?;
        w.write_all(&t.high_water().to_le_bytes())?;
        let mut pairs: Vec<_> = t.id_to_slot.iter().map(|(&i, &s)| (i, s)).collect();
        pairs.sort_unstable();
        for (id, slot) in pairs {
            w.write_all(&id.to_le_bytes())?;
            w.write_all(&slot.to_le_bytes())?;
        }
        // Trailer: next id, so ids stay fresh across reopen even when the
        // largest id was deleted.
        w.write_all(&t.next_id.to_le_bytes())?;
        w.flush()?;
        drop(w);
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

fn read_slot_file(path: &Path, dim: usize) -> Result<SlotTable> {
    let buf = fs::read(path)?;
    if buf.len() < SLOT_HEADER_LEN + 8 || &buf[..4] != SLOT_MAGIC {
        return Err(Error::corrupt(path, "bad slot-table header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    if u32_at(4) != SLOT_VERSION {
        return Err(Error::corrupt(
            path,
            format!("unsupported version {}", u32_at(4)),
        ));
    }
    if u32_at(8) as usize != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: u32_at(8) as usize,
        });
    }
    let high_water = u64_at(12);
    let body = buf.len() - SLOT_HEADER_LEN - 8;
    if !body.is_multiple_of(16) {
        return Err(Error::corrupt(path, "truncated id/slot pair"));
    }
    let mut t = SlotTable {
        slot_to_id: vec![None; high_water as usize],
        next_id: u64_at(buf.len() - 8),
        ..SlotTable::default()
    };
    for k in 0..body / 16 {
        let o = SLOT_HEADER_LEN + k * 16;
        let (id, slot) = (u64_at(o), u64_at(o + 8));
        if slot >= high_water || t.slot_to_id[slot as usize].is_some() {
            return Err(Error::corrupt(
                path,
                format!("invalid slot {slot} for id {id}"),
            ));
        }
        t.slot_to_id[slot as usize] = Some(id);
        t.id_to_slot.insert(id, slot);
    }
    // Free slots are rebuilt by scanning; descending push keeps the lowest
    // slot on top of the LIFO stack.
    t.free_slots = (0..high_water)
        .rev()
        .filter(|&s| t.slot_to_id[s as usize].is_none())
        .collect();
    t.check().map_err(|e| Error::corrupt(path, e))?;
    Ok(t)
}
