//! Synthetic videos with planted space-time correspondences.
//!
//! Each action owns one canonical feature volume of unit vectors on the grid
//! and canonical keypoint cells at its key moments. A video is the canonical
//! volume seen through a private warp: a frame permutation that keeps the
//! key moments in order, followed by an independent spatial permutation of
//! every frame. Two videos of one action therefore correspond exactly through
//! their warps, and with zero noise the best-scoring target cell of every
//! source cell is its planted match.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::pairs::{build_pairs, ground_truth, GtFile, PairList, SetupSpec, VideoPair};
use super::{write_json, AnnotationFile, Split, VideoAnnotation};
use crate::error::{Error, Result};
use crate::features::{assemble_hyperpixel, FeatureManifest, FeaturePyramid, ManifestVideo};
use crate::keypoint::{SpaceTimeKeypoint, VideoDims};
use crate::tensor::{stt, GridShape, Tensor};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const PAIRS_FILE: &str = "pairs.json";
pub const GT_FILE: &str = "gt.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WARPS_FILE: &str = "warps.json";
pub const FEATURES_DIR: &str = "features";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub actions: Vec<String>,
    /// Key moments per action, parallel to `actions`.
    pub key_moments: Vec<usize>,
    pub grid: GridShape,
    pub video_dims: VideoDims,
    pub layer_channels: Vec<usize>,
    pub layer_ids: Vec<u32>,
    pub type_ids: Vec<u32>,
    /// Standard deviation of Gaussian noise added to every feature value.
    pub noise: f32,
    /// Every `val_every`-th video of an action goes to the validation split;
    /// 0 keeps all videos in training.
    pub val_every: usize,
    pub invisible_prob: f64,
    pub setup: String,
    pub min_shared: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_videos: 4,
            actions: vec!["bowling".into(), "golf_swing".into()],
            key_moments: vec![2, 2],
            grid: GridShape { t: 4, h: 4, w: 4 },
            video_dims: VideoDims { t: 64, h: 64, w: 64 },
            layer_channels: vec![8, 16],
            layer_ids: vec![0, 1],
            type_ids: vec![0, 5, 6, 13, 14, 15],
            noise: 0.0,
            val_every: 0,
            invisible_prob: 0.0,
            setup: "3+3".into(),
            min_shared: super::DEFAULT_MIN_SHARED,
        }
    }
}

/// Pixel coordinate of grid node `g` along an axis, exact when the node
/// spacing divides evenly.
fn node_pixel(g: usize, cells: usize, pixels: usize) -> f64 {
    if cells <= 1 {
        0.0
    } else {
        (g * (pixels - 1)) as f64 / (cells - 1) as f64
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(format!("synth config: {msg}")));
        self.video_dims.validate()?;
        if !self.grid.is_valid() {
            return bad(format!("invalid grid {}", self.grid));
        }
        if self.actions.is_empty() || self.actions.len() != self.key_moments.len() {
            return bad("one key-moment count per action is required".into());
        }
        if let Some(&k) = self.key_moments.iter().find(|&&k| k == 0 || k > self.grid.t) {
            return bad(format!("{k} key moments do not fit {} grid frames", self.grid.t));
        }
        if self.layer_channels.is_empty()
            || self.layer_channels.len() != self.layer_ids.len()
            || self.layer_channels.contains(&0)
        {
            return bad("layer channels and ids must be parallel and positive".into());
        }
        if self.type_ids.len() > self.grid.h * self.grid.w {
            return bad(format!(
                "{} keypoint types exceed {} cells per frame",
                self.type_ids.len(),
                self.grid.h * self.grid.w
            ));
        }
        let mut types = self.type_ids.clone();
        types.sort_unstable();
        types.dedup();
        if types.len() != self.type_ids.len() {
            return bad("duplicate type ids".into());
        }
        if self.grid.t > 1 && !(self.video_dims.t - 1).is_multiple_of(self.grid.t - 1) {
            return bad(format!(
                "grid frames {} do not land on whole video frames of {}",
                self.grid.t, self.video_dims.t
            ));
        }
        if self.video_dims.t < self.grid.t || self.video_dims.h < self.grid.h || self.video_dims.w < self.grid.w {
            return bad("video must be at least as large as the grid".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be finite and non-negative", self.noise));
        }
        if !(0.0..=1.0).contains(&self.invisible_prob) {
            return bad(format!("invisible probability {} outside [0, 1]", self.invisible_prob));
        }
        if self.min_shared == 0 {
            return bad("min_shared must be at least 1".into());
        }
        SetupSpec::preset(&self.setup)?;
        Ok(())
    }

    fn split_of(&self, rank_in_action: usize) -> Split {
        if self.val_every > 0 && (rank_in_action + 1).is_multiple_of(self.val_every) {
            Split::Val
        } else {
            Split::Train
        }
    }
}

struct ActionCanon {
    /// Per layer, `[C, T, H, W]` unit vectors.
    features: Vec<Vec<f32>>,
    /// Canonical frame of each key moment, increasing.
    key_frames: Vec<usize>,
    /// Per key moment, the canonical `(h, w)` of each type.
    type_cells: Vec<Vec<(usize, usize)>>,
}

fn unit_vectors(rng: &mut ChaCha8Rng, channels: usize, cells: usize) -> Vec<f32> {
    let mut data = vec![0.0f32; channels * cells];
    for cell in 0..cells {
        let v: Vec<f64> = (0..channels).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        for (c, x) in v.iter().enumerate() {
            data[c * cells + cell] = (x / norm) as f32;
        }
    }
    data
}

fn canon_for_action(cfg: &SynthConfig, n_key: usize, rng: &mut ChaCha8Rng) -> ActionCanon {
    let g = cfg.grid;
    let features = cfg
        .layer_channels
        .iter()
        .map(|&c| unit_vectors(rng, c, g.cells()))
        .collect();
    let mut frames: Vec<usize> = (0..g.t).collect();
    frames.shuffle(rng);
    let mut key_frames = frames[..n_key].to_vec();
    key_frames.sort_unstable();
    let spatial: Vec<(usize, usize)> = (0..g.h).flat_map(|h| (0..g.w).map(move |w| (h, w))).collect();
    let type_cells = key_frames
        .iter()
        .map(|_| {
            let mut cells = spatial.clone();
            cells.shuffle(rng);
            cells.truncate(cfg.type_ids.len());
            cells
        })
        .collect();
    ActionCanon {
        features,
        key_frames,
        type_cells,
    }
}

/// Video cell -> canonical cell: frame permutation keeping key frames in
/// order, then a spatial permutation per video frame.
fn draw_warp(grid: GridShape, key_frames: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut frame_to_canon: Vec<usize> = (0..grid.t).collect();
    frame_to_canon.shuffle(rng);
    let mut key_slots: Vec<usize> = (0..grid.t)
        .filter(|&f| key_frames.contains(&frame_to_canon[f]))
        .collect();
    key_slots.sort_unstable();
    for (&slot, &k) in key_slots.iter().zip(key_frames) {
        frame_to_canon[slot] = k;
    }
    let plane = grid.h * grid.w;
    let mut warp = vec![0; grid.cells()];
    for (f, &cf) in frame_to_canon.iter().enumerate() {
        let mut perm: Vec<usize> = (0..plane).collect();
        perm.shuffle(rng);
        for (p, &q) in perm.iter().enumerate() {
            warp[f * plane + p] = cf * plane + q;
        }
    }
    warp
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedWarp {
    pub id: String,
    /// Video cell index -> canonical cell index of its action.
    pub map: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpFile {
    pub grid: GridShape,
    pub videos: Vec<PlantedWarp>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub seed: u64,
    pub setup: SetupSpec,
    pub annotations: Vec<VideoAnnotation>,
    /// Per video, one `[C, T, H, W]` tensor per layer on the config grid.
    pub features: Vec<Vec<Tensor>>,
    pub warps: Vec<Vec<usize>>,
    pub pairs: Vec<VideoPair>,
    pub gt: GtFile,
}

pub fn synth_dataset(config: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    config.validate()?;
    let g = config.grid;
    let dims = config.video_dims;
    let plane = g.h * g.w;
    let mut canon_rng = ChaCha8Rng::seed_from_u64(seed);
    let canons: Vec<ActionCanon> = config
        .key_moments
        .iter()
        .map(|&k| canon_for_action(config, k, &mut canon_rng))
        .collect();

    let mut annotations = Vec::with_capacity(config.n_videos);
    let mut features = Vec::with_capacity(config.n_videos);
    let mut warps = Vec::with_capacity(config.n_videos);
    for i in 0..config.n_videos {
        let a = i % config.actions.len();
        let rank = i / config.actions.len();
        let canon = &canons[a];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let warp = draw_warp(g, &canon.key_frames, &mut rng);
        let inv = invert(&warp);

        let layers = canon
            .features
            .iter()
            .zip(&config.layer_channels)
            .map(|(canon_layer, &c)| {
                let n = g.cells();
                let mut data = vec![0.0f32; c * n];
                for ch in 0..c {
                    for cell in 0..n {
                        data[ch * n + cell] = canon_layer[ch * n + warp[cell]];
                    }
                }
                if config.noise > 0.0 {
                    for x in &mut data {
                        let z: f32 = StandardNormal.sample(&mut rng);
                        *x += config.noise * z;
                    }
                }
                Tensor::new(vec![c, g.t, g.h, g.w], data)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut key_moments = Vec::with_capacity(canon.key_frames.len());
        let mut keypoints = Vec::new();
        for (j, &kf) in canon.key_frames.iter().enumerate() {
            let frame = inv[kf * plane] / plane;
            let t = node_pixel(frame, g.t, dims.t).round() as u32;
            key_moments.push(t);
            for (&type_id, &(ch, cw)) in config.type_ids.iter().zip(&canon.type_cells[j]) {
                let cell = inv[kf * plane + ch * g.w + cw];
                let [_, h, w] = g.coord(cell);
                keypoints.push(SpaceTimeKeypoint {
                    t,
                    type_id,
                    x: node_pixel(w, g.w, dims.w),
                    y: node_pixel(h, g.h, dims.h),
                    visible: config.invisible_prob == 0.0 || !rng.random_bool(config.invisible_prob),
                });
            }
        }
        annotations.push(VideoAnnotation {
            id: format!("{}_{rank:03}", config.actions[a]),
            action: config.actions[a].clone(),
            split: config.split_of(rank),
            dims,
            key_moments,
            keypoints,
        });
        features.push(layers);
        warps.push(warp);
    }
    AnnotationFile {
        videos: annotations.clone(),
    }
    .validate()?;

    let setup = SetupSpec::preset(&config.setup)?;
    let pairs = build_pairs(&annotations, &setup, config.min_shared)?;
    let gt = ground_truth(&annotations, &pairs)?;
    Ok(SynthDataset {
        config: config.clone(),
        seed,
        setup,
        annotations,
        features,
        warps,
        pairs,
        gt,
    })
}

impl SynthDataset {
    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.annotations
            .iter()
            .position(|v| v.id == id)
            .ok_or_else(|| Error::Validation {
                video_id: id.to_string(),
                reason: "not in synthetic dataset".into(),
            })
    }

    /// Normalised feature pyramid of a video on the config grid.
    pub fn pyramid(&self, id: &str) -> Result<FeaturePyramid> {
        let i = self.index_of(id)?;
        assemble_hyperpixel(&self.features[i], &self.config.layer_ids, self.config.grid, true)
    }

    /// Source cell -> planted target cell, or `None` across actions.
    pub fn planted_map(&self, src: &str, tgt: &str) -> Result<Option<Vec<usize>>> {
        let (a, b) = (self.index_of(src)?, self.index_of(tgt)?);
        if self.annotations[a].action != self.annotations[b].action {
            return Ok(None);
        }
        let inv_b = invert(&self.warps[b]);
        Ok(Some(self.warps[a].iter().map(|&c| inv_b[c]).collect()))
    }

    pub fn manifest(&self) -> FeatureManifest {
        FeatureManifest {
            layer_ids: self.config.layer_ids.clone(),
            grid: Some(self.config.grid),
            videos: self
                .annotations
                .iter()
                .map(|v| ManifestVideo {
                    id: v.id.clone(),
                    files: self
                        .config
                        .layer_ids
                        .iter()
                        .map(|&l| PathBuf::from(FEATURES_DIR).join(FeatureManifest::layer_file_name(&v.id, l)))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn pair_list(&self) -> PairList {
        PairList::new(&self.pairs, &self.setup, self.config.min_shared)
    }

    pub fn warp_file(&self) -> WarpFile {
        WarpFile {
            grid: self.config.grid,
            videos: self
                .annotations
                .iter()
                .zip(&self.warps)
                .map(|(v, w)| PlantedWarp {
                    id: v.id.clone(),
                    map: w.clone(),
                })
                .collect(),
        }
    }

    /// Writes annotations, pairs, ground truth, planted warps, the feature
    /// manifest and every layer file under `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let feat_dir = dir.join(FEATURES_DIR);
        std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        write_json(
            dir.join(ANNOTATIONS_FILE),
            &AnnotationFile {
                videos: self.annotations.clone(),
            },
        )?;
        write_json(dir.join(PAIRS_FILE), &self.pair_list())?;
        write_json(dir.join(GT_FILE), &self.gt)?;
        write_json(dir.join(WARPS_FILE), &self.warp_file())?;
        let manifest = self.manifest();
        write_json(dir.join(MANIFEST_FILE), &manifest)?;
        for (video, layers) in manifest.videos.iter().zip(&self.features) {
            for (file, layer) in video.files.iter().zip(layers) {
                stt::write(dir.join(file), layer)?;
            }
        }
        Ok(())
    }
}
