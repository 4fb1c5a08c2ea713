//! Immutable sorted run files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "LVRN" | version u32 | entry count u32
//! count x [src u64 | dst u64 | seq u64 | op u8]      (25 bytes each)
//! footer: min key (src u64, dst u64) | max key (src u64, dst u64)
//! ```
//!
//! Keys here are physical keys; translation to logical ids happens in the
//! store. A sparse block index (first key of every `BLOCK_ENTRIES` entries)
//! is rebuilt in memory on open so a prefix scan over one `src` reads only
//! the blocks that can hold it.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::bloom::Bloom;

pub const RUN_MAGIC: &[u8; 4] = b"LVRN";
pub const RUN_VERSION: u32 = 1;
pub const ENTRY_BYTES: usize = 25;
const HEADER_BYTES: usize = 12;
const FOOTER_BYTES: usize = 32;
const BLOCK_ENTRIES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Put,
    Tombstone,
}

impl Op {
    fn to_byte(self) -> u8 {
        match self {
            Op::Put => 0,
            Op::Tombstone => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Op::Put),
            1 => Some(Op::Tombstone),
            _ => None,
        }
    }
}

/// One directed edge record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EdgeEntry {
    pub src: u64,
    pub dst: u64,
    pub seq: u64,
    pub op: Op,
}

impl EdgeEntry {
    pub fn key(&self) -> (u64, u64) {
        (self.src, self.dst)
    }

    fn encode_into(&self, out: &mut [u8]) {
        out[0..8].copy_from_slice(&self.src.to_le_bytes());
        out[8..16].copy_from_slice(&self.dst.to_le_bytes());
        out[16..24].copy_from_slice(&self.seq.to_le_bytes());
        out[24] = self.op.to_byte();
    }

    fn decode(buf: &[u8]) -> Option<Self> {
        let u = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        Some(EdgeEntry {
            src: u(0),
            dst: u(8),
            seq: u(16),
            op: Op::from_byte(buf[24])?,
        })
    }
}

#[derive(Debug)]
pub struct RunFile {
    pub id: u64,
    path: PathBuf,
    file: File,
    count: usize,
    min_key: (u64, u64),
    max_key: (u64, u64),
    block_firsts: Vec<(u64, u64)>,
    bloom: Option<Bloom>,
}

impl RunFile {
    /// Writes a run from entries already sorted by key with unique keys.
    pub fn create(path: &Path, id: u64, entries: &[EdgeEntry], bloom: bool) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("run entries"));
        }
        debug_assert!(entries.windows(2).all(|w| w[0].key() < w[1].key()));
        let count =
            u32::try_from(entries.len()).map_err(|_| Error::invalid("run exceeds u32 entries"))?;
        {
            let f = File::create(path)?;
            let mut w = BufWriter::new(&f);
            w.write_all(RUN_MAGIC)?;
            w.write_all(&RUN_VERSION.to_le_bytes())?;
            w.write_all(&count.to_le_bytes())?;
            let mut buf = [0u8; ENTRY_BYTES];
            for e in entries {
                e.encode_into(&mut buf);
                w.write_all(&buf)?;
            }
            let (lo, hi) = (entries[0].key(), entries[entries.len() - 1].key());
            for k in [lo.0, lo.1, hi.0, hi.1] {
                w.write_all(&k.to_le_bytes())?;
            }
            w.flush()?;
            drop(w);
            f.sync_all()?;
        }
        Self::open(path, id, bloom)
    }

    pub fn open(path: &Path, id: u64, bloom: bool) -> Result<Self> {
        let file = OpenOptions::new().read(true).open(path)?;
        let len = file.metadata()?.len() as usize;
        if len < HEADER_BYTES + FOOTER_BYTES {
            return Err(Error::corrupt(path, "run file too short"));
        }
        let mut header = [0u8; HEADER_BYTES];
        file.read_exact_at(&mut header, 0)?;
        if &header[0..4] != RUN_MAGIC {
            return Err(Error::corrupt(path, "bad run magic"));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != RUN_VERSION {
            return Err(Error::corrupt(
                path,
                format!("unsupported version {version}"),
            ));
        }
        let count = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        if len != HEADER_BYTES + count * ENTRY_BYTES + FOOTER_BYTES {
            return Err(Error::corrupt(path, "length disagrees with entry count"));
        }
        let mut footer = [0u8; FOOTER_BYTES];
        file.read_exact_at(&mut footer, (len - FOOTER_BYTES) as u64)?;
        let u = |o: usize| u64::from_le_bytes(footer[o..o + 8].try_into().unwrap());
        let mut run = RunFile {
            id,
            path: path.to_path_buf(),
            file,
            count,
            min_key: (u(0), u(8)),
            max_key: (u(16), u(24)),
            block_firsts: Vec::new(),
            bloom: None,
        };
        let entries = run.read_all()?;
        if entries.first().map(|e| e.key()) != Some(run.min_key)
            || entries.last().map(|e| e.key()) != Some(run.max_key)
        {
            return Err(Error::corrupt(path, "footer keys disagree with entries"));
        }
        if !entries.windows(2).all(|w| w[0].key() < w[1].key()) {
            return Err(Error::corrupt(path, "entries not strictly sorted"));
        }
        run.block_firsts = entries
            .iter()
            .step_by(BLOCK_ENTRIES)
            .map(|e| e.key())
            .collect();
        if bloom {
            let mut b = Bloom::with_capacity(count);
            let mut last = None;
            for e in &entries {
                if last != Some(e.src) {
                    b.insert(e.src);
                    last = Some(e.src);
                }
            }
            run.bloom = Some(b);
        }
        Ok(run)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn key_range(&self) -> ((u64, u64), (u64, u64)) {
        (self.min_key, self.max_key)
    }

    pub fn byte_size(&self) -> usize {
        HEADER_BYTES + self.count * ENTRY_BYTES + FOOTER_BYTES
    }

    pub fn overlaps(&self, lo: (u64, u64), hi: (u64, u64)) -> bool {
        self.min_key <= hi && lo <= self.max_key
    }

    pub fn may_contain_src(&self, src: u64) -> bool {
        if src < self.min_key.0 || src > self.max_key.0 {
            return false;
        }
        self.bloom.as_ref().is_none_or(|b| b.contains(src))
    }

    pub fn read_all(&self) -> Result<Vec<EdgeEntry>> {
        let mut buf = vec![0u8; self.count * ENTRY_BYTES];
        self.file.read_exact_at(&mut buf, HEADER_BYTES as u64)?;
        buf.chunks_exact(ENTRY_BYTES)
            .map(|c| EdgeEntry::decode(c).ok_or_else(|| Error::corrupt(&self.path, "bad op byte")))
            .collect()
    }

    /// Appends every entry with the given `src` to `out`. Returns bytes read.
    pub fn scan_src(&self, src: u64, out: &mut Vec<EdgeEntry>) -> Result<u64> {
        if !self.may_contain_src(src) {
            return Ok(0);
        }
        let start = self
            .block_firsts
            .partition_point(|&k| k < (src, 0))
            .saturating_sub(1);
        let mut bytes = 0u64;
        let mut buf = vec![0u8; BLOCK_ENTRIES * ENTRY_BYTES];
        for block in start..self.block_firsts.len() {
            if self.block_firsts[block].0 > src {
                break;
            }
            let first = block * BLOCK_ENTRIES;
            let n = BLOCK_ENTRIES.min(self.count - first);
            let slice = &mut buf[..n * ENTRY_BYTES];
            self.file
                .read_exact_at(slice, (HEADER_BYTES + first * ENTRY_BYTES) as u64)?;
            bytes += slice.len() as u64;
            for c in slice.chunks_exact(ENTRY_BYTES) {
                let e = EdgeEntry::decode(c)
                    .ok_or_else(|| Error::corrupt(&self.path, "bad op byte"))?;
                if e.src == src {
                    out.push(e);
                } else if e.src > src {
                    return Ok(bytes);
                }
            }
        }
        Ok(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(src: u64, dst: u64, seq: u64, op: Op) -> EdgeEntry {
        EdgeEntry { src, dst, seq, op }
    }

    #[test]
    fn write_then_scan() {
        let tmp = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        let mut seq = 0;
        for src in 0..50u64 {
            for dst in 0..20u64 {
                if src != dst {
                    seq += 1;
                    let op = if dst % 7 == 0 { Op::Tombstone } else { Op::Put };
                    entries.push(e(src, dst, seq, op));
                }
            }
        }
        let path = tmp.path().join("r.run");
        let run = RunFile::create(&path, 1, &entries, true).unwrap();
        assert_eq!(run.len(), entries.len());
        assert_eq!(run.read_all().unwrap(), entries);
        for src in [0u64, 13, 49, 77] {
            let mut out = Vec::new();
            run.scan_src(src, &mut out).unwrap();
            let want: Vec<_> = entries.iter().filter(|x| x.src == src).copied().collect();
            assert_eq!(out, want, "src {src}");
        }
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len, 12 + entries.len() * 25 + 32);
    }

    #[test]
    fn header_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("r.run");
        RunFile::create(
            &path,
            0,
            &[e(1, 2, 9, Op::Put), e(3, 4, 10, Op::Tombstone)],
            false,
        )
        .unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"LVRN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &1u64.to_le_bytes());
        assert_eq!(&bytes[20..28], &2u64.to_le_bytes());
        assert_eq!(&bytes[28..36], &9u64.to_le_bytes());
        assert_eq!(bytes[36], 0);
        assert_eq!(bytes[61], 1);
        assert_eq!(&bytes[62..70], &1u64.to_le_bytes());
        assert_eq!(&bytes[86..94], &4u64.to_le_bytes());
    }

    #[test]
    fn corrupt_files_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("r.run");
        RunFile::create(&path, 0, &[e(1, 2, 1, Op::Put)], false).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 1);
        std::fs::write(&path, &bytes).unwrap();
        assert!(RunFile::open(&path, 0, false).is_err());
        std::fs::write(&path, b"XXXX").unwrap();
        assert!(RunFile::open(&path, 0, false).is_err());
    }
}
