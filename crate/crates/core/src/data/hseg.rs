//! HSEG sample files, little-endian:
//!
//! ```text
//! "HSEG" | u16 version = 1 | u32 n | u32 dim
//! n*dim f32 features | n*dim u8 masks | n i32 labels
//! ```

use std::path::Path;

use super::sample::Dataset;
use crate::error::{HemlError, Result};
use crate::numerics::DenseMatrix;

pub const HSEG_MAGIC: &[u8; 4] = b"HSEG";
pub const HSEG_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;

pub fn encode_hseg(ds: &Dataset) -> Vec<u8> {
    let (n, dim) = ds.features.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + n * dim * 5 + n * 4);
    out.extend_from_slice(HSEG_MAGIC);
    out.extend_from_slice(&HSEG_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in ds.features.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(ds.masks.iter().map(|&m| m as u8));
    for l in &ds.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                HemlError::Format(format!(
                    "truncated HSEG data while reading {what} (need {len} bytes at offset {}, have {})",
                    self.pos,
                    self.bytes.len().saturating_sub(self.pos)
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_hseg(bytes: &[u8], segment_id: &str) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != HSEG_MAGIC {
        return Err(HemlError::Format("bad magic, not an HSEG file".into()));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != HSEG_VERSION {
        return Err(HemlError::Format(format!("unsupported HSEG version {version}")));
    }
    let n = r.u32("sample count")? as usize;
    let dim = r.u32("dimension")? as usize;
    let cells = n
        .checked_mul(dim)
        .ok_or_else(|| HemlError::Format("sample count overflows".into()))?;
    let expected = HEADER_LEN as u128 + cells as u128 * 5 + n as u128 * 4;
    if (bytes.len() as u128) < expected {
        return Err(HemlError::Format(format!(
            "truncated HSEG data: header promises {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let features: Vec<f32> = r
        .take(cells * 4, "features")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let masks = r
        .take(cells, "masks")?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(HemlError::Format(format!("mask byte {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    let labels = r
        .take(n * 4, "labels")?
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if r.pos != bytes.len() {
        return Err(HemlError::Format(format!(
            "{} trailing bytes after HSEG payload",
            bytes.len() - r.pos
        )));
    }
    Dataset::new(segment_id, DenseMatrix::new(n, dim, features)?, masks, labels)
}

pub fn write_hseg(path: &Path, ds: &Dataset) -> Result<()> {
    std::fs::write(path, encode_hseg(ds)).map_err(|e| HemlError::io(path, e))
}

pub fn read_hseg(path: &Path, segment_id: &str) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| HemlError::io(path, e))?;
    decode_hseg(&bytes, segment_id).map_err(|e| match e {
        HemlError::Format(m) => HemlError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
