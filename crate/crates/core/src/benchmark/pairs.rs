use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::VideoAnnotation;
use crate::error::{Error, Result};
use crate::keypoint::PointXyt;

pub const DEFAULT_MIN_SHARED: usize = 3;

/// Penn Action joint order: head, shoulders, elbows, wrists, hips, knees,
/// ankles (left before right). Object keypoints follow at 13..16.
const HUMAN_ALL: [u32; 13] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12];
const HUMAN_HEAD_WRISTS: [u32; 3] = [0, 5, 6];
const OBJECTS: [u32; 3] = [13, 14, 15];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeypointClass {
    Human,
    Object,
}

impl KeypointClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            KeypointClass::Human => "human",
            KeypointClass::Object => "object",
        }
    }
}

/// A keypoint vocabulary split into human and object type ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetupSpec {
    pub name: String,
    pub human: BTreeSet<u32>,
    pub object: BTreeSet<u32>,
}

impl SetupSpec {
    pub fn new(name: impl Into<String>, human: BTreeSet<u32>, object: BTreeSet<u32>) -> Result<Self> {
        let setup = Self {
            name: name.into(),
            human,
            object,
        };
        setup.validate()?;
        Ok(setup)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(id) = self.human.intersection(&self.object).next() {
            return Err(Error::invalid(format!(
                "setup {}: type {id} is both human and object",
                self.name
            )));
        }
        Ok(())
    }

    /// Named presets: `13+3`, `3+3` and `r10` (the ten human types outside
    /// `3+3`).
    pub fn preset(name: &str) -> Result<Self> {
        let set = |ids: &[u32]| ids.iter().copied().collect::<BTreeSet<_>>();
        match name {
            "13+3" => Self::new(name, set(&HUMAN_ALL), set(&OBJECTS)),
            "3+3" => Self::new(name, set(&HUMAN_HEAD_WRISTS), set(&OBJECTS)),
            "r10" => {
                let rest: BTreeSet<u32> = HUMAN_ALL
                    .iter()
                    .filter(|id| !HUMAN_HEAD_WRISTS.contains(id))
                    .copied()
                    .collect();
                Self::new(name, rest, BTreeSet::new())
            }
            other => Err(Error::invalid(format!("unknown setup {other:?}"))),
        }
    }

    pub fn allows(&self, type_id: u32) -> bool {
        self.human.contains(&type_id) || self.object.contains(&type_id)
    }

    pub fn class_of(&self, type_id: u32) -> Option<KeypointClass> {
        if self.human.contains(&type_id) {
            Some(KeypointClass::Human)
        } else if self.object.contains(&type_id) {
            Some(KeypointClass::Object)
        } else {
            None
        }
    }
}

/// Ordered `(source, target)` pair with the keypoint types both share, per
/// key moment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoPair {
    pub src: String,
    pub tgt: String,
    pub shared: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRef {
    pub src: String,
    pub tgt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairList {
    pub pairs: Vec<PairRef>,
    pub setup: String,
    pub min_shared: usize,
}

impl PairList {
    pub fn new(pairs: &[VideoPair], setup: &SetupSpec, min_shared: usize) -> Self {
        Self {
            pairs: pairs
                .iter()
                .map(|p| PairRef {
                    src: p.src.clone(),
                    tgt: p.tgt.clone(),
                })
                .collect(),
            setup: setup.name.clone(),
            min_shared,
        }
    }
}

fn shared_types(
    a: &VideoAnnotation,
    b: &VideoAnnotation,
    setup: &SetupSpec,
    min_shared: usize,
) -> Option<Vec<Vec<u32>>> {
    if a.key_moments.len() != b.key_moments.len() {
        return None;
    }
    a.key_moments
        .iter()
        .zip(&b.key_moments)
        .map(|(&fa, &fb)| {
            let ta = a.visible_types_at(fa);
            let tb = b.visible_types_at(fb);
            let shared: Vec<u32> = ta
                .intersection(&tb)
                .copied()
                .filter(|&id| setup.allows(id))
                .collect();
            (shared.len() >= min_shared).then_some(shared)
        })
        .collect()
}

/// Every ordered pair of distinct videos with the same action and split
/// whose key moments (matched by order) each share at least `min_shared`
/// visible keypoint types of the setup. Both directions are emitted.
pub fn build_pairs(
    annotations: &[VideoAnnotation],
    setup: &SetupSpec,
    min_shared: usize,
) -> Result<Vec<VideoPair>> {
    if min_shared == 0 {
        return Err(Error::invalid("min_shared must be at least 1"));
    }
    let mut pairs = Vec::new();
    for (i, a) in annotations.iter().enumerate() {
        for (j, b) in annotations.iter().enumerate() {
            if i == j || a.action != b.action || a.split != b.split || a.id == b.id {
                continue;
            }
            if let Some(shared) = shared_types(a, b, setup, min_shared) {
                pairs.push(VideoPair {
                    src: a.id.clone(),
                    tgt: b.id.clone(),
                    shared,
                });
            }
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtMatch {
    pub type_id: u32,
    pub src: PointXyt,
    pub tgt: PointXyt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtPair {
    pub src: String,
    pub tgt: String,
    pub matches: Vec<GtMatch>,
}

/// Ground-truth correspondences. Free-form pairs (no shared type vocabulary)
/// use per-pair local type ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtFile {
    pub pairs: Vec<GtPair>,
}

impl GtFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn find(&self, src: &str, tgt: &str) -> Option<&GtPair> {
        self.pairs.iter().find(|p| p.src == src && p.tgt == tgt)
    }
}

/// Correspondences of every pair: shared keypoint types, key moment by key
/// moment.
pub fn ground_truth(annotations: &[VideoAnnotation], pairs: &[VideoPair]) -> Result<GtFile> {
    let find = |id: &str| {
        annotations
            .iter()
            .find(|v| v.id == id)
            .ok_or_else(|| Error::Validation {
                video_id: id.to_string(),
                reason: "pair references an unannotated video".into(),
            })
    };
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let (a, b) = (find(&pair.src)?, find(&pair.tgt)?);
        let mut matches = Vec::new();
        for ((&fa, &fb), types) in a.key_moments.iter().zip(&b.key_moments).zip(&pair.shared) {
            for &type_id in types {
                let (Some(ka), Some(kb)) = (a.visible(fa, type_id), b.visible(fb, type_id)) else {
                    continue;
                };
                matches.push(GtMatch {
                    type_id,
                    src: ka.into(),
                    tgt: kb.into(),
                });
            }
        }
        out.push(GtPair {
            src: pair.src.clone(),
            tgt: pair.tgt.clone(),
            matches,
        });
    }
    Ok(GtFile { pairs: out })
}
