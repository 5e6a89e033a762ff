//! `AMXW` weight files: a flat list of named little-endian tensors.
//!
//! ```text
//! "AMXW" | u32 version=1 | u32 count | count x record
//! record: u16 name_len | name (UTF-8) | u8 rank | rank x u32 dims | u8 dtype (0 = f32) | data
//! ```

use std::io::Write;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AMXW";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("not an AMXW file: magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported AMXW version {0}")]
    Version(u32),
    #[error("truncated header at byte offset {offset}")]
    TruncatedHeader { offset: usize },
    #[error("tensor record {index} ({name}): {reason} at byte offset {offset}")]
    BadRecord { index: usize, name: String, reason: String, offset: usize },
    #[error("trailing {0} bytes after the last tensor record")]
    Trailing(usize),
    #[error("missing tensor {0:?}")]
    Missing(String),
    #[error("tensor {name:?} has shape {found:?}, expected {expected}")]
    Shape { name: String, found: Vec<usize>, expected: String },
    #[error("unexpected tensor {0:?}")]
    Unexpected(String),
    #[error("tensor name {0:?} is longer than 65535 bytes")]
    NameTooLong(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type NamedTensors = Vec<(String, Tensor<f32>)>;

pub fn encode(tensors: &[(String, Tensor<f32>)]) -> Result<Vec<u8>, WeightError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| WeightError::NameTooLong(name.clone()))?;
        out.extend(len.to_le_bytes());
        out.extend(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        out.push(DTYPE_F32);
        for &v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write(w: &mut impl Write, tensors: &[(String, Tensor<f32>)]) -> Result<(), WeightError> {
    w.write_all(&encode(tensors)?)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<NamedTensors, WeightError> {
    let mut c = Cursor { bytes, pos: 0 };
    let header = |c: &Cursor<'_>| WeightError::TruncatedHeader { offset: c.pos };
    let magic: [u8; 4] = c.take(4).ok_or_else(|| header(&c))?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(WeightError::BadMagic(magic));
    }
    let version = c.u32().ok_or_else(|| header(&c))?;
    if version != VERSION {
        return Err(WeightError::Version(version));
    }
    let count = c.u32().ok_or_else(|| header(&c))? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for index in 0..count {
        let mut name = String::from("<unnamed>");
        let bad = |name: &str, reason: &str, offset: usize| WeightError::BadRecord {
            index,
            name: name.to_string(),
            reason: reason.to_string(),
            offset,
        };
        let len = c.take(2).ok_or_else(|| bad(&name, "truncated name length", c.pos))?;
        let len = u16::from_le_bytes([len[0], len[1]]) as usize;
        let raw = c.take(len).ok_or_else(|| bad(&name, "truncated name", c.pos))?;
        name = String::from_utf8(raw.to_vec()).map_err(|_| bad(&name, "name is not UTF-8", c.pos))?;
        let rank = *c.take(1).ok_or_else(|| bad(&name, "truncated rank", c.pos))?.first().unwrap() as usize;
        if rank == 0 {
            return Err(bad(&name, "rank 0", c.pos));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = c.u32().ok_or_else(|| bad(&name, "truncated dims", c.pos))? as usize;
            if d == 0 {
                return Err(bad(&name, "zero-sized dimension", c.pos));
            }
            dims.push(d);
        }
        let dtype = *c.take(1).ok_or_else(|| bad(&name, "truncated dtype", c.pos))?.first().unwrap();
        if dtype != DTYPE_F32 {
            return Err(bad(&name, &format!("unsupported dtype tag {dtype}"), c.pos - 1));
        }
        let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let nbytes = numel.and_then(|n| n.checked_mul(4)).ok_or_else(|| bad(&name, "dimension overflow", c.pos))?;
        let offset = c.pos;
        let raw = c.take(nbytes).ok_or_else(|| bad(&name, &format!("truncated data ({nbytes} bytes expected)"), offset))?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        out.push((name, Tensor::new(dims, data).expect("sized from dims")));
    }
    if c.pos != bytes.len() {
        return Err(WeightError::Trailing(bytes.len() - c.pos));
    }
    Ok(out)
}

/// Removes and returns the tensor called `name`, checking its rank.
pub(crate) fn take_named(tensors: &mut NamedTensors, name: &str, rank: usize) -> Result<Tensor<f32>, WeightError> {
    let pos = tensors.iter().position(|(n, _)| n == name).ok_or_else(|| WeightError::Missing(name.into()))?;
    let (_, t) = tensors.remove(pos);
    if t.rank() != rank {
        return Err(WeightError::Shape { name: name.into(), found: t.shape().to_vec(), expected: format!("rank {rank}") });
    }
    Ok(t)
}
