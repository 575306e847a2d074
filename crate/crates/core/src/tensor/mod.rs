//! Dense `f32` tensors, the space-time grid shape, trilinear resampling and
//! the STT1 binary file format.

mod resample;
pub mod stt;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use resample::{l2_normalize_positions, trilinear_resample};

/// Maximum rank supported by the tensor type and the STT1 format.
pub const MAX_RANK: usize = 5;

/// Row-major dense tensor of 32-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let len = checked_len(&dims)?;
        if data.len() != len {
            return Err(Error::shape(format!(
                "dims {dims:?} require {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = checked_len(&dims)?;
        Ok(Self {
            dims,
            data: vec![0.0; len],
        })
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(usize) -> f32) -> Result<Self> {
        let len = checked_len(&dims)?;
        Ok(Self {
            dims,
            data: (0..len).map(&mut f).collect(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data viewed under new dims with equal element count.
    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Requires rank 4 and returns `(channels, grid)`.
    pub fn as_cthw(&self) -> Result<(usize, GridShape)> {
        match *self.dims.as_slice() {
            [c, t, h, w] => Ok((c, GridShape::new(t, h, w)?)),
            _ => Err(Error::shape(format!(
                "expected rank-4 [C,T,H,W] tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_RANK {
        return Err(Error::BadRank(dims.len()));
    }
    if dims.contains(&0) {
        return Err(Error::shape(format!("zero-size dimension in {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape(format!("dims {dims:?} overflow")))
}

/// Space-time grid `T x H x W`.
///
/// Cells are linearised as `t*H*W + h*W + w` everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl GridShape {
    pub fn new(t: usize, h: usize, w: usize) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {t}x{h}x{w}"
            )));
        }
        Ok(Self { t, h, w })
    }

    pub fn cells(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn index(&self, t: usize, h: usize, w: usize) -> usize {
        (t * self.h + h) * self.w + w
    }

    pub fn coord(&self, idx: usize) -> [usize; 3] {
        let hw = self.h * self.w;
        [idx / hw, (idx % hw) / self.w, idx % self.w]
    }

    pub fn extents(&self) -> [usize; 3] {
        [self.t, self.h, self.w]
    }

    pub fn is_valid(&self) -> bool {
        self.t > 0 && self.h > 0 && self.w > 0
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.t, self.h, self.w)
    }
}

impl FromStr for GridShape {
    type Err = Error;

    /// Parses `TxHxW`, e.g. `8x8x8`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(['x', 'X']).collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!("grid must be TxHxW, got {s:?}")));
        }
        let mut v = [0usize; 3];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad grid component {part:?} in {s:?}")))?;
        }
        GridShape::new(v[0], v[1], v[2])
    }
}
