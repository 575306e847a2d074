//! STT1 tensor files.
//!
//! Layout: ASCII magic `STT1`, one byte rank `r` in `1..=5`, `r` little-endian
//! `u64` dims, then `product(dims)` little-endian binary32 values in row-major
//! order. No padding and no footer.

use std::fs;
use std::path::Path;

use super::{Tensor, MAX_RANK};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"STT1";

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + 8 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(t.rank() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 5 {
        return Err(Error::Truncated(format!(
            "{} bytes is shorter than magic and rank",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let rank = bytes[4] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::BadRank(rank));
    }
    let header = 5 + 8 * rank;
    if bytes.len() < header {
        return Err(Error::Truncated(format!(
            "rank {rank} needs {header} header bytes, found {}",
            bytes.len()
        )));
    }
    let dims: Vec<u64> = bytes[5..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let found = (bytes.len() - header) as u64;
    let expected = dims
        .iter()
        .try_fold(4u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape(format!("dims {dims:?} overflow")))?;
    if expected != found {
        return Err(Error::LengthMismatch { expected, found });
    }
    let dims = dims
        .into_iter()
        .map(|d| usize::try_from(d).map_err(|_| Error::shape(format!("dim {d} too large"))))
        .collect::<Result<Vec<_>>>()?;
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(dims, data)
}

pub fn write(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
