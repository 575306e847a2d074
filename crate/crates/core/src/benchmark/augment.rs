use rand::Rng;
use serde::{Deserialize, Serialize};

use super::VideoAnnotation;
use crate::error::{Error, Result};
use crate::keypoint::{SpaceTimeKeypoint, VideoDims};

pub const DEFAULT_CLIP_LEN: usize = 64;
pub const DEFAULT_CROP_PROB: f64 = 0.5;
/// `(height, width)` of augmented frames.
pub const DEFAULT_OUT_SIZE: (usize, usize) = (128, 128);

const MIN_CROP_AREA: f64 = 0.5;
const MIN_ASPECT: f64 = 3.0 / 4.0;
const MAX_ASPECT: f64 = 4.0 / 3.0;
const CROP_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: usize,
    pub len: usize,
}

impl TimeWindow {
    pub fn contains(&self, frame: usize) -> bool {
        frame >= self.start && frame < self.start + self.len
    }
}

/// A clip cut from a video. Keypoint and key-moment times are relative to
/// the window start.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub window: TimeWindow,
    pub keypoints: Vec<SpaceTimeKeypoint>,
    pub key_moments: Vec<u32>,
}

/// Uniformly random window of `clip_len` frames covering every key moment.
pub fn sample_clip<R: Rng + ?Sized>(video: &VideoAnnotation, clip_len: usize, rng: &mut R) -> Result<ClipSample> {
    let fail = |reason: String| Error::Validation {
        video_id: video.id.clone(),
        reason,
    };
    if clip_len == 0 {
        return Err(Error::invalid("clip length must be positive"));
    }
    if video.dims.t < clip_len {
        return Err(fail(format!("{} frames is shorter than a clip of {clip_len}", video.dims.t)));
    }
    let (Some(&first), Some(&last)) = (video.key_moments.first(), video.key_moments.last()) else {
        return Err(fail("no key moments".into()));
    };
    let (first, last) = (first as usize, last as usize);
    let span = last - first + 1;
    if span > clip_len {
        return Err(fail(format!(
            "key moments span {span} frames ({first}..={last}), more than a clip of {clip_len}"
        )));
    }
    let lo = (last + 1).saturating_sub(clip_len);
    let hi = first.min(video.dims.t - clip_len);
    let start = rng.random_range(lo..=hi);
    let shift = |t: u32| t - start as u32;
    Ok(ClipSample {
        window: TimeWindow { start, len: clip_len },
        keypoints: video
            .keypoints
            .iter()
            .map(|k| SpaceTimeKeypoint { t: shift(k.t), ..*k })
            .collect(),
        key_moments: video.key_moments.iter().map(|&t| shift(t)).collect(),
    })
}

/// Axis-aligned pixel rectangle `[x, x + width] x [y, y + height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl CropBox {
    pub fn full(dims: &VideoDims) -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            width: dims.w as f64,
            height: dims.h as f64,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x && x <= self.x + self.width && y >= self.y && y <= self.y + self.height
    }
}

/// One crop and rescale applied identically to every frame of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricTransform {
    pub crop: CropBox,
    pub out_size: (usize, usize),
    pub window: TimeWindow,
}

impl GeometricTransform {
    fn scale(&self) -> (f64, f64) {
        (
            self.out_size.1 as f64 / self.crop.width,
            self.out_size.0 as f64 / self.crop.height,
        )
    }

    /// Maps a window-relative keypoint into output coordinates; points
    /// outside the crop lose visibility.
    pub fn apply(&self, kp: &SpaceTimeKeypoint) -> SpaceTimeKeypoint {
        let (sx, sy) = self.scale();
        SpaceTimeKeypoint {
            x: (kp.x - self.crop.x) * sx,
            y: (kp.y - self.crop.y) * sy,
            visible: kp.visible && self.crop.contains(kp.x, kp.y),
            ..*kp
        }
    }

    /// Maps an output keypoint back to source pixels and absolute frames.
    pub fn invert(&self, kp: &SpaceTimeKeypoint) -> SpaceTimeKeypoint {
        let (sx, sy) = self.scale();
        SpaceTimeKeypoint {
            x: kp.x / sx + self.crop.x,
            y: kp.y / sy + self.crop.y,
            t: kp.t + self.window.start as u32,
            ..*kp
        }
    }
}

fn random_crop<R: Rng + ?Sized>(dims: &VideoDims, rng: &mut R) -> CropBox {
    let (w, h) = (dims.w as f64, dims.h as f64);
    for _ in 0..CROP_ATTEMPTS {
        let area = rng.random_range(MIN_CROP_AREA..=1.0) * w * h;
        let aspect = rng.random_range(MIN_ASPECT.ln()..=MAX_ASPECT.ln()).exp();
        let width = (area * aspect).sqrt();
        let height = (area / aspect).sqrt();
        if width <= w && height <= h {
            return CropBox {
                x: rng.random_range(0.0..=w - width),
                y: rng.random_range(0.0..=h - height),
                width,
                height,
            };
        }
    }
    CropBox::full(dims)
}

/// With probability `crop_prob` draws one crop box (area at least half the
/// frame, aspect in [3/4, 4/3]) for the whole clip, then rescales to
/// `out_size` (height, width).
pub fn geometric_augment<R: Rng + ?Sized>(
    window: TimeWindow,
    keypoints: &[SpaceTimeKeypoint],
    dims: &VideoDims,
    crop_prob: f64,
    out_size: (usize, usize),
    rng: &mut R,
) -> Result<(GeometricTransform, Vec<SpaceTimeKeypoint>)> {
    dims.validate()?;
    if !(0.0..=1.0).contains(&crop_prob) {
        return Err(Error::invalid(format!("crop probability {crop_prob} outside [0, 1]")));
    }
    if out_size.0 == 0 || out_size.1 == 0 {
        return Err(Error::invalid("output size must be positive"));
    }
    if window.len == 0 || window.start + window.len > dims.t {
        return Err(Error::invalid(format!(
            "window {}+{} does not fit {} frames",
            window.start, window.len, dims.t
        )));
    }
    let crop = if crop_prob > 0.0 && rng.random_bool(crop_prob) {
        random_crop(dims, rng)
    } else {
        CropBox::full(dims)
    };
    let transform = GeometricTransform { crop, out_size, window };
    let moved = keypoints.iter().map(|k| transform.apply(k)).collect();
    Ok((transform, moved))
}
