//! fvecs / bvecs / ivecs readers and writers.
//!
//! Each record is a little-endian `i32` dimension followed by `d` elements:
//! 4-byte floats (fvecs), 4-byte ints (ivecs) or single bytes (bvecs).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Fvecs,
    Bvecs,
    Ivecs,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("fvecs") => Ok(Format::Fvecs),
            Some("bvecs") => Ok(Format::Bvecs),
            Some("ivecs") => Ok(Format::Ivecs),
            _ => Err(Error::invalid(format!(
                "cannot infer dataset format of {}",
                path.display()
            ))),
        }
    }

    fn elem_size(self) -> usize {
        match self {
            Format::Bvecs => 1,
            Format::Fvecs | Format::Ivecs => 4,
        }
    }
}

/// Splits `bytes` into at most `limit` records of equal dimension and hands
/// each payload to `decode`.
fn parse_records<T>(
    bytes: &[u8],
    format: Format,
    limit: Option<usize>,
    mut decode: impl FnMut(&[u8]) -> T,
) -> Result<Vec<T>> {
    let elem = format.elem_size();
    let mut out = Vec::new();
    let mut off = 0usize;
    let mut dim: Option<usize> = None;
    while off < bytes.len() && limit.is_none_or(|l| out.len() < l) {
        let record = out.len();
        let perr = |reason: String| Error::Parse {
            record,
            offset: off as u64,
            reason,
        };
        if off + 4 > bytes.len() {
            return Err(perr("truncated dimension header".into()));
        }
        let d = i32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if d <= 0 {
            return Err(perr(format!("nonpositive dimension {d}")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(perr(format!("dimension {d} differs from {expected}")));
            }
            _ => {}
        }
        let end = off + 4 + d * elem;
        if end > bytes.len() {
            return Err(perr(format!(
                "payload needs {} bytes, {} left",
                d * elem,
                bytes.len() - off - 4
            )));
        }
        out.push(decode(&bytes[off + 4..end]));
        off = end;
    }
    Ok(out)
}

fn le_f32(c: &[u8]) -> f32 {
    f32::from_le_bytes(c.try_into().unwrap())
}

fn le_i32(c: &[u8]) -> i32 {
    i32::from_le_bytes(c.try_into().unwrap())
}

/// Decodes float vectors from fvecs or bvecs bytes (bytes widen to f32).
pub fn parse_vectors(bytes: &[u8], format: Format, limit: Option<usize>) -> Result<Vec<Vec<f32>>> {
    match format {
        Format::Fvecs => parse_records(bytes, format, limit, |p| {
            p.chunks_exact(4).map(le_f32).collect()
        }),
        Format::Bvecs => parse_records(bytes, format, limit, |p| {
            p.iter().map(|&b| b as f32).collect()
        }),
        Format::Ivecs => Err(Error::invalid("ivecs holds integers; use read_ivecs")),
    }
}

pub fn parse_ivecs(bytes: &[u8], limit: Option<usize>) -> Result<Vec<Vec<i32>>> {
    parse_records(bytes, Format::Ivecs, limit, |p| {
        p.chunks_exact(4).map(le_i32).collect()
    })
}

/// Reads the first `limit` vectors of an fvecs or bvecs file.
pub fn read_vectors(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Vec<Vec<f32>>> {
    let path = path.as_ref();
    parse_vectors(&fs::read(path)?, Format::from_path(path)?, limit)
}

pub fn read_ivecs(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Vec<Vec<i32>>> {
    parse_ivecs(&fs::read(path)?, limit)
}

fn write_records<T>(
    path: &Path,
    rows: &[Vec<T>],
    mut put: impl FnMut(&mut Vec<u8>, &T),
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut buf = Vec::new();
    for row in rows {
        buf.clear();
        buf.extend_from_slice(&(row.len() as i32).to_le_bytes());
        for x in row {
            put(&mut buf, x);
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fvecs(path: impl AsRef<Path>, rows: &[Vec<f32>]) -> Result<()> {
    write_records(path.as_ref(), rows, |b, x| {
        b.extend_from_slice(&x.to_le_bytes())
    })
}

pub fn write_ivecs(path: impl AsRef<Path>, rows: &[Vec<i32>]) -> Result<()> {
    write_records(path.as_ref(), rows, |b, x| {
        b.extend_from_slice(&x.to_le_bytes())
    })
}

pub fn write_bvecs(path: impl AsRef<Path>, rows: &[Vec<u8>]) -> Result<()> {
    write_records(path.as_ref(), rows, |b, x| b.push(*x))
}
