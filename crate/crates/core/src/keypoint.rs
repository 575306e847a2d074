use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel-space extent of a video: frames, rows, columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VideoDims {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl VideoDims {
    pub fn new(t: usize, h: usize, w: usize) -> Result<Self> {
        let d = Self { t, h, w };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::invalid(format!(
                "video dims must be positive, got {}x{}x{}",
                self.t, self.h, self.w
            )));
        }
        Ok(())
    }

    /// Pixel coordinates run over `[0, w-1] x [0, h-1]`, frames over `[0, t-1]`.
    pub fn contains(&self, kp: &SpaceTimeKeypoint) -> bool {
        kp.x.is_finite()
            && kp.y.is_finite()
            && kp.x >= 0.0
            && kp.y >= 0.0
            && kp.x <= (self.w - 1) as f64
            && kp.y <= (self.h - 1) as f64
            && (kp.t as usize) < self.t
    }
}

/// A keypoint `(x, y, t)` with its semantic type and visibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeKeypoint {
    pub t: u32,
    pub type_id: u32,
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl SpaceTimeKeypoint {
    pub fn new(x: f64, y: f64, t: u32, type_id: u32) -> Self {
        Self {
            t,
            type_id,
            x,
            y,
            visible: true,
        }
    }
}

/// Bare `(x, y, t)` point, as used in correspondence files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointXyt {
    pub x: f64,
    pub y: f64,
    pub t: u32,
}

impl PointXyt {
    pub fn keypoint(&self, type_id: u32) -> SpaceTimeKeypoint {
        SpaceTimeKeypoint::new(self.x, self.y, self.t, type_id)
    }
}

impl From<&SpaceTimeKeypoint> for PointXyt {
    fn from(kp: &SpaceTimeKeypoint) -> Self {
        Self {
            x: kp.x,
            y: kp.y,
            t: kp.t,
        }
    }
}

/// Align-corners map from a pixel coordinate in `[0, pixels-1]` to the
/// normalised range `[0, 1]`.
pub(crate) fn pixel_to_unit(p: f64, pixels: usize) -> f64 {
    if pixels <= 1 {
        0.0
    } else {
        p / (pixels - 1) as f64
    }
}

pub(crate) fn unit_to_pixel(u: f64, pixels: usize) -> f64 {
    if pixels <= 1 {
        0.0
    } else {
        u * (pixels - 1) as f64
    }
}

pub(crate) fn unit_to_grid(u: f64, cells: usize) -> f64 {
    if cells <= 1 {
        0.0
    } else {
        u * (cells - 1) as f64
    }
}

/// Pixel position `(t, y, x)` of `kp` expressed in grid coordinates.
pub fn pixel_to_grid(
    kp: &SpaceTimeKeypoint,
    dims: VideoDims,
    grid: crate::tensor::GridShape,
) -> [f64; 3] {
    [
        unit_to_grid(pixel_to_unit(kp.t as f64, dims.t), grid.t),
        unit_to_grid(pixel_to_unit(kp.y, dims.h), grid.h),
        unit_to_grid(pixel_to_unit(kp.x, dims.w), grid.w),
    ]
}
