//! Keypoint annotations at key moments, pair construction, clip sampling,
//! geometric augmentation and a synthetic dataset with planted ground truth.

mod augment;
mod pairs;
pub mod synth;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoint::{SpaceTimeKeypoint, VideoDims};

pub use augment::{
    geometric_augment, sample_clip, ClipSample, CropBox, GeometricTransform, TimeWindow,
    DEFAULT_CLIP_LEN, DEFAULT_CROP_PROB, DEFAULT_OUT_SIZE,
};
pub use pairs::{
    build_pairs, ground_truth, GtFile, GtMatch, GtPair, KeypointClass, PairList, PairRef,
    SetupSpec, VideoPair, DEFAULT_MIN_SHARED,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One annotated video: key-moment frames and the keypoints visible at them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub id: String,
    pub action: String,
    pub split: Split,
    pub dims: VideoDims,
    pub key_moments: Vec<u32>,
    pub keypoints: Vec<SpaceTimeKeypoint>,
}

impl VideoAnnotation {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::Validation {
            video_id: self.id.clone(),
            reason,
        };
        self.dims
            .validate()
            .map_err(|e| fail(e.to_string()))?;
        if self.key_moments.is_empty() {
            return Err(fail("no key moments".into()));
        }
        if self.key_moments.windows(2).any(|w| w[0] >= w[1]) {
            return Err(fail(format!(
                "key moments {:?} are not strictly increasing",
                self.key_moments
            )));
        }
        if let Some(&last) = self.key_moments.last() {
            if last as usize >= self.dims.t {
                return Err(fail(format!(
                    "key moment {last} beyond {} frames",
                    self.dims.t
                )));
            }
        }
        let mut seen = HashSet::new();
        for kp in &self.keypoints {
            if self.key_moments.binary_search(&kp.t).is_err() {
                return Err(fail(format!(
                    "keypoint type {} at frame {} is not on a key moment",
                    kp.type_id, kp.t
                )));
            }
            if !kp.x.is_finite() || !kp.y.is_finite() {
                return Err(fail(format!("keypoint type {} has non-finite coordinates", kp.type_id)));
            }
            if kp.visible && !self.dims.contains(kp) {
                return Err(fail(format!(
                    "visible keypoint type {} at ({}, {}) lies outside {}x{}",
                    kp.type_id, kp.x, kp.y, self.dims.w, self.dims.h
                )));
            }
            if !seen.insert((kp.t, kp.type_id)) {
                return Err(fail(format!(
                    "duplicate keypoint type {} at frame {}",
                    kp.type_id, kp.t
                )));
            }
        }
        Ok(())
    }

    /// Keypoints annotated at `frame`.
    pub fn keypoints_at(&self, frame: u32) -> impl Iterator<Item = &SpaceTimeKeypoint> {
        self.keypoints.iter().filter(move |k| k.t == frame)
    }

    /// Visible keypoint of `type_id` at `frame`.
    pub fn visible(&self, frame: u32, type_id: u32) -> Option<&SpaceTimeKeypoint> {
        self.keypoints
            .iter()
            .find(|k| k.t == frame && k.type_id == type_id && k.visible)
    }

    pub fn visible_types_at(&self, frame: u32) -> BTreeSet<u32> {
        self.keypoints_at(frame)
            .filter(|k| k.visible)
            .map(|k| k.type_id)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub videos: Vec<VideoAnnotation>,
}

impl AnnotationFile {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for v in &self.videos {
            v.validate()?;
            if !ids.insert(v.id.as_str()) {
                return Err(Error::Validation {
                    video_id: v.id.clone(),
                    reason: "duplicate video id".into(),
                });
            }
        }
        Ok(())
    }

    pub fn find(&self, id: &str) -> Option<&VideoAnnotation> {
        self.videos.iter().find(|v| v.id == id)
    }
}

/// Parses and validates an annotation document.
pub fn parse_annotations(text: &str) -> Result<Vec<VideoAnnotation>> {
    let file: AnnotationFile = serde_json::from_str(text)?;
    file.validate()?;
    Ok(file.videos)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<VideoAnnotation>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

/// Writes any serialisable document as pretty JSON.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
