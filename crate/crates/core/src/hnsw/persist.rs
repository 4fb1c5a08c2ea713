//! On-disk layout of an index directory:
//!
//! ```text
//! index.meta      key=value configuration
//! vectors/        vector slot file + slot table
//! lsm/            bottom-layer runs, manifest, key map
//! upper.lvhg      in-memory layers snapshot
//! codes.lvsh      SimHash codes
//! ```
//!
//! `upper.lvhg`: "LVHG" | version u32 | L_max u32 | has_entry u8 | entry u64,
//! then per level 2..=L_max: level u32 | node count u64 | per node
//! (id u64 | degree u32 | degree x u64). `codes.lvsh`: "LVSH" | version u32 |
//! bits u32 | count u64 | count x (id u64 | bits/8 code bytes).
//! All integers little-endian.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;

use super::index::{LsmVecIndex, Trace};
use super::{IndexConfig, LayerGraph};
use crate::config::{index_config_from_kv, index_config_to_kv, KvConfig};
use crate::error::{Error, Result};
use crate::lsm::LsmGraphStore;
use crate::metrics::IoCounters;
use crate::reorder::HeatMap;
use crate::simhash::{HashCode, ProjectionSet};
use crate::vector_store::VectorStore;
use crate::VectorId;

const META: &str = "index.meta";
const UPPER: &str = "upper.lvhg";
const CODES: &str = "codes.lvsh";
const UPPER_MAGIC: &[u8; 4] = b"LVHG";
const CODES_MAGIC: &[u8; 4] = b"LVSH";
const VERSION: u32 = 1;

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let f = File::create(&tmp)?;
        let mut w = BufWriter::new(&f);
        w.write_all(bytes)?;
        w.flush()?;
        drop(w);
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::corrupt(
                self.path,
                format!("truncated at byte {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::corrupt(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

pub(crate) fn encode_upper(upper: &[LayerGraph], entry: Option<VectorId>) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(UPPER_MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    let l_max = if entry.is_some() {
        upper.len() as u32 + 1
    } else {
        0
    };
    b.extend_from_slice(&l_max.to_le_bytes());
    b.push(entry.is_some() as u8);
    b.extend_from_slice(&entry.unwrap_or(0).to_le_bytes());
    for layer in upper {
        b.extend_from_slice(&(layer.level as u32).to_le_bytes());
        b.extend_from_slice(&(layer.adj.len() as u64).to_le_bytes());
        for (id, list) in &layer.adj {
            b.extend_from_slice(&id.to_le_bytes());
            b.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for v in list {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    b
}

pub(crate) fn decode_upper(path: &Path, buf: &[u8]) -> Result<(Vec<LayerGraph>, Option<VectorId>)> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(4)? != UPPER_MAGIC {
        return Err(Error::corrupt(path, "bad magic"));
    }
    if r.u32()? != VERSION {
        return Err(Error::corrupt(path, "unsupported version"));
    }
    let l_max = r.u32()? as usize;
    let has_entry = r.u8()? != 0;
    let entry = r.u64()?;
    let mut upper = Vec::new();
    for expected in 2..=l_max {
        let level = r.u32()? as usize;
        if level != expected {
            return Err(Error::corrupt(
                path,
                format!("expected level {expected}, found {level}"),
            ));
        }
        let mut layer = LayerGraph::new(level);
        for _ in 0..r.u64()? {
            let id = r.u64()?;
            let deg = r.u32()? as usize;
            let list = (0..deg).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            layer.adj.insert(id, list);
        }
        upper.push(layer);
    }
    r.done()?;
    Ok((upper, has_entry.then_some(entry)))
}

pub(crate) fn encode_codes(bits: usize, codes: &HashMap<VectorId, HashCode>) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(CODES_MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&(bits as u32).to_le_bytes());
    b.extend_from_slice(&(codes.len() as u64).to_le_bytes());
    let sorted: BTreeMap<_, _> = codes.iter().collect();
    for (id, code) in sorted {
        b.extend_from_slice(&id.to_le_bytes());
        b.extend_from_slice(&code.to_bytes());
    }
    b
}

pub(crate) fn decode_codes(
    path: &Path,
    buf: &[u8],
) -> Result<(usize, HashMap<VectorId, HashCode>)> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(4)? != CODES_MAGIC {
        return Err(Error::corrupt(path, "bad magic"));
    }
    if r.u32()? != VERSION {
        return Err(Error::corrupt(path, "unsupported version"));
    }
    let bits = r.u32()? as usize;
    let n = r.u64()?;
    let mut codes = HashMap::new();
    for _ in 0..n {
        let id = r.u64()?;
        let code = HashCode::from_bytes(bits, r.take(bits.div_ceil(8))?)?;
        codes.insert(id, code);
    }
    r.done()?;
    Ok((bits, codes))
}

impl LsmVecIndex {
    /// Creates a new, empty index in `dir`.
    pub fn create(dir: impl AsRef<Path>, config: IndexConfig) -> Result<Self> {
        config.validate()?;
        let dir = dir.as_ref().to_path_buf();
        if dir.join(META).exists() {
            return Err(Error::invalid(format!(
                "{} already holds an index",
                dir.display()
            )));
        }
        fs::create_dir_all(&dir)?;
        let counters = Arc::new(IoCounters::new());
        let index = Self {
            vectors: VectorStore::open(dir.join("vectors"), config.dim, counters.clone())?,
            graph: LsmGraphStore::open(dir.join("lsm"), config.lsm.clone(), counters.clone())?,
            projections: ProjectionSet::new(config.bits, config.dim, config.hash_seed)?,
            codes: HashMap::new(),
            levels: HashMap::new(),
            upper: Vec::new(),
            upper_vectors: HashMap::new(),
            entry: None,
            trace: Mutex::new(Trace {
                heat: HeatMap::new(config.heat_decay),
                ..Trace::default()
            }),
            updates_since_reorder: 0,
            counters,
            config,
            dir,
        };
        write_atomic(
            &index.dir.join(META),
            index_config_to_kv(&index.config).as_bytes(),
        )?;
        Ok(index)
    }

    /// Opens an index written by [`Self::persist`].
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let meta = KvConfig::load(dir.join(META))?;
        let config = index_config_from_kv(&meta)?;
        config.validate()?;
        let counters = Arc::new(IoCounters::new());
        let vectors = VectorStore::open(dir.join("vectors"), config.dim, counters.clone())?;
        let graph = LsmGraphStore::open(dir.join("lsm"), config.lsm.clone(), counters.clone())?;
        let projections = ProjectionSet::new(config.bits, config.dim, config.hash_seed)?;
        let live = vectors.live_ids();

        let upper_path = dir.join(UPPER);
        let (upper, entry) = if upper_path.exists() {
            decode_upper(&upper_path, &fs::read(&upper_path)?)?
        } else {
            (Vec::new(), None)
        };
        let mut levels: HashMap<VectorId, usize> = live.iter().map(|&id| (id, 1)).collect();
        for layer in &upper {
            for &id in layer.adj.keys() {
                let l = levels
                    .get_mut(&id)
                    .ok_or_else(|| Error::corrupt(&upper_path, format!("node {id} is not live")))?;
                *l = (*l).max(layer.level);
            }
        }
        let mut upper_vectors = HashMap::new();
        for (&id, &l) in &levels {
            if l >= 2 {
                upper_vectors.insert(id, vectors.read_uncounted(id)?);
            }
        }

        let codes_path = dir.join(CODES);
        let mut codes = if codes_path.exists() {
            let (bits, codes) = decode_codes(&codes_path, &fs::read(&codes_path)?)?;
            if bits != config.bits {
                return Err(Error::corrupt(
                    &codes_path,
                    "code length disagrees with metadata",
                ));
            }
            codes
        } else {
            HashMap::new()
        };
        codes.retain(|id, _| levels.contains_key(id));
        for &id in &live {
            if let Entry::Vacant(e) = codes.entry(id) {
                e.insert(projections.hash(&vectors.read_uncounted(id)?)?);
            }
        }

        Ok(Self {
            trace: Mutex::new(Trace {
                heat: HeatMap::new(config.heat_decay),
                ..Trace::default()
            }),
            dir,
            config,
            counters,
            vectors,
            graph,
            projections,
            codes,
            levels,
            upper,
            upper_vectors,
            entry,
            updates_since_reorder: 0,
        })
    }

    /// Flushes the memtable and writes every sidecar so that [`Self::open`]
    /// restores the current state.
    pub fn persist(&mut self) -> Result<()> {
        self.graph.flush_memtable()?;
        self.vectors.persist()?;
        write_atomic(
            &self.dir.join(UPPER),
            &encode_upper(&self.upper, self.entry),
        )?;
        write_atomic(
            &self.dir.join(CODES),
            &encode_codes(self.config.bits, &self.codes),
        )?;
        write_atomic(
            &self.dir.join(META),
            index_config_to_kv(&self.config).as_bytes(),
        )?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
