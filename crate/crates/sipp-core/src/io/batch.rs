//! Tensor batch file.
//!
//! Layout (all integers little-endian):
//! - magic bytes `SIPT`
//! - u32 version (currently 1)
//! - u32 rank
//! - rank x u64 extents, the first being the batch size
//! - f64 data, row-major
//!
//! The byte length must match the extents exactly; trailing bytes are
//! rejected so write-then-read is bitwise lossless.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SIPT";
const VERSION: u32 = 1;

pub fn batch_to_bytes(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + tensor.rank() * 8 + tensor.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &e in tensor.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_batch(bytes: &[u8]) -> Result<Tensor> {
    let bad = |msg: &str| Error::BadBatchFile(msg.to_string());
    if bytes.len() < 12 {
        return Err(bad("truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic, expected SIPT"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::BadBatchFile(format!(
            "unsupported version {version}"
        )));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if rank == 0 {
        return Err(bad("rank must be at least 1"));
    }
    let header_len = rank
        .checked_mul(8)
        .and_then(|v| v.checked_add(12))
        .ok_or_else(|| bad("rank overflows"))?;
    if bytes.len() < header_len {
        return Err(bad("truncated extent list"));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel = 1usize;
    for r in 0..rank {
        let at = 12 + r * 8;
        let e = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let e = usize::try_from(e).map_err(|_| bad("extent too large"))?;
        if e == 0 {
            return Err(bad("zero extent"));
        }
        numel = numel.checked_mul(e).ok_or_else(|| bad("extent overflow"))?;
        shape.push(e);
    }
    let data_len = numel.checked_mul(8).ok_or_else(|| bad("extent overflow"))?;
    if bytes.len() - header_len != data_len {
        return Err(Error::BadBatchFile(format!(
            "expected {data_len} data bytes, found {}",
            bytes.len() - header_len
        )));
    }
    let data: Vec<f64> = bytes[header_len..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::BadBatchFile(e.to_string()))
}

pub fn write_batch(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    fs::write(path, batch_to_bytes(tensor))?;
    Ok(())
}

pub fn read_batch(path: impl AsRef<Path>) -> Result<Tensor> {
    parse_batch(&fs::read(path)?)
}
