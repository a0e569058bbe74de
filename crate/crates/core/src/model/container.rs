//! Flat binary container shared by checkpoints and on-disk datasets.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size      field
//! 0       4         magic "ICMX"
//! 4       4         u32 format version (1)
//! 8       4         u32 payload kind (1 = model checkpoint, 2 = dataset)
//! 12      4         u32 tensor count N
//! 16      16 * N    shape table: u64 rows, u64 cols per tensor
//! ...               payloads in table order, rows * cols f64 each, row-major
//! ```
//!
//! Nothing follows the last payload; trailing bytes are rejected.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{matrix_from_vec, Matrix};

pub const MAGIC: &[u8; 4] = b"ICMX";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Kind {
    Checkpoint = 1,
    Dataset = 2,
}

impl Kind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            1 => Ok(Kind::Checkpoint),
            2 => Ok(Kind::Dataset),
            other => Err(Error::Format(format!("unknown payload kind {other}"))),
        }
    }
}

pub fn encode(kind: Kind, tensors: &[Matrix]) -> Vec<u8> {
    let payload: usize = tensors.iter().map(|t| t.len() * 8).sum();
    let mut out = Vec::with_capacity(16 + 16 * tensors.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
    }
    for t in tensors {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Kind, Vec<Matrix>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = Kind::from_u32(r.u32()?)?;
    let count = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rows = usize::try_from(r.u64()?).map_err(|_| Error::Format("row count".into()))?;
        let cols = usize::try_from(r.u64()?).map_err(|_| Error::Format("col count".into()))?;
        shapes.push((rows, cols));
    }
    let mut tensors = Vec::with_capacity(count);
    for (rows, cols) in shapes {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("tensor too large".into()))?;
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(matrix_from_vec(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((kind, tensors))
}

pub fn write_file(path: &Path, kind: Kind, tensors: &[Matrix]) -> Result<()> {
    std::fs::write(path, encode(kind, tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<(Kind, Vec<Matrix>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
