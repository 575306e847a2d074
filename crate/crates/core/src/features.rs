//! Hyperpixel feature pyramids and stacked correlation volumes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{l2_normalize_positions, stt, trilinear_resample, GridShape, Tensor};

/// Grid used by the learned matchers when nothing else is configured.
pub const DEFAULT_LEARNED_GRID: GridShape = GridShape { t: 8, h: 8, w: 8 };
/// Larger grid affordable by the parameter-free st-MATCH matcher.
pub const DEFAULT_STMATCH_GRID: GridShape = GridShape { t: 32, h: 16, w: 16 };
/// Epsilon guarding zero vectors during per-position normalisation.
pub const NORMALIZE_EPSILON: f32 = 1e-8;

/// `M` feature layers resampled onto one shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    grid: GridShape,
    layers: Vec<Tensor>,
    layer_ids: Vec<u32>,
}

impl FeaturePyramid {
    pub fn new(grid: GridShape, layers: Vec<Tensor>, layer_ids: Vec<u32>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("feature pyramid needs at least one layer"));
        }
        if layers.len() != layer_ids.len() {
            return Err(Error::invalid(format!(
                "{} layers but {} layer ids",
                layers.len(),
                layer_ids.len()
            )));
        }
        check_increasing(&layer_ids)?;
        for (i, layer) in layers.iter().enumerate() {
            let (_, g) = layer.as_cthw()?;
            if g != grid {
                return Err(Error::shape(format!(
                    "layer {i} is on grid {g}, pyramid grid is {grid}"
                )));
            }
        }
        Ok(Self {
            grid,
            layers,
            layer_ids,
        })
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub fn layer_ids(&self) -> &[u32] {
        &self.layer_ids
    }

    pub fn m(&self) -> usize {
        self.layers.len()
    }

    pub fn channels(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.dims()[0]).collect()
    }

    /// Pyramid restricted to one time slice, on a `1 x H x W` grid.
    pub fn frame(&self, t: usize) -> Result<FeaturePyramid> {
        if t >= self.grid.t {
            return Err(Error::invalid(format!(
                "frame {t} out of range for grid {}",
                self.grid
            )));
        }
        let hw = self.grid.h * self.grid.w;
        let n = self.grid.cells();
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let c = layer.dims()[0];
                let mut data = Vec::with_capacity(c * hw);
                for ch in 0..c {
                    let base = ch * n + t * hw;
                    data.extend_from_slice(&layer.data()[base..base + hw]);
                }
                Tensor::new(vec![c, 1, self.grid.h, self.grid.w], data)
            })
            .collect::<Result<Vec<_>>>()?;
        FeaturePyramid::new(
            GridShape::new(1, self.grid.h, self.grid.w)?,
            layers,
            self.layer_ids.clone(),
        )
    }
}

fn check_increasing(ids: &[u32]) -> Result<()> {
    if ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "layer ids must be strictly increasing, got {ids:?}"
        )));
    }
    Ok(())
}

/// Resamples every raw layer onto `grid` and optionally L2-normalises each
/// position.
pub fn assemble_hyperpixel(
    raw_layers: &[Tensor],
    layer_ids: &[u32],
    grid: GridShape,
    normalize: bool,
) -> Result<FeaturePyramid> {
    if raw_layers.is_empty() {
        return Err(Error::invalid("no raw layers given"));
    }
    if raw_layers.len() != layer_ids.len() {
        return Err(Error::invalid(format!(
            "{} raw layers but {} layer ids",
            raw_layers.len(),
            layer_ids.len()
        )));
    }
    check_increasing(layer_ids)?;
    let layers = raw_layers
        .iter()
        .map(|raw| {
            let resampled = trilinear_resample(raw, grid)?;
            if normalize {
                l2_normalize_positions(&resampled, NORMALIZE_EPSILON)
            } else {
                Ok(resampled)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    FeaturePyramid::new(grid, layers, layer_ids.to_vec())
}

/// `M x THW x THW` correlations, rows indexing source cells and columns target
/// cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrVolume {
    grid: GridShape,
    scores: Tensor,
}

impl CorrVolume {
    pub fn new(grid: GridShape, scores: Tensor) -> Result<Self> {
        let n = grid.cells();
        match *scores.dims() {
            [_, r, c] if r == n && c == n => Ok(Self { grid, scores }),
            _ => Err(Error::shape(format!(
                "correlation volume dims {:?} inconsistent with grid {grid}",
                scores.dims()
            ))),
        }
    }

    pub fn m(&self) -> usize {
        self.scores.dims()[0]
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn scores(&self) -> &Tensor {
        &self.scores
    }

    /// The `THW x THW` slice of layer `i`.
    pub fn slice(&self, i: usize) -> &[f32] {
        let nn = self.grid.cells() * self.grid.cells();
        &self.scores.data()[i * nn..(i + 1) * nn]
    }
}

/// Transposes `[C, N]` into cell-major `[N, C]`.
fn cell_major(t: &Tensor, c: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; c * n];
    for ch in 0..c {
        for cell in 0..n {
            out[cell * c + ch] = t.data()[ch * n + cell];
        }
    }
    out
}

/// Dot products between every source cell and every target cell.
pub fn correlation_layer(src: &Tensor, tgt: &Tensor) -> Result<Tensor> {
    if src.dims() != tgt.dims() {
        return Err(Error::shape(format!(
            "source dims {:?} differ from target dims {:?}",
            src.dims(),
            tgt.dims()
        )));
    }
    let (c, grid) = src.as_cthw()?;
    let n = grid.cells();
    let a = cell_major(src, c, n);
    let b = cell_major(tgt, c, n);
    let mut out = vec![0.0f32; n * n];
    for s in 0..n {
        let va = &a[s * c..(s + 1) * c];
        let row = &mut out[s * n..(s + 1) * n];
        for (q, slot) in row.iter_mut().enumerate() {
            let vb = &b[q * c..(q + 1) * c];
            // Accumulated in channel order so that swapping source and target
            // yields the exact transpose.
            let mut acc = 0.0f64;
            for (x, y) in va.iter().zip(vb) {
                acc += *x as f64 * *y as f64;
            }
            *slot = acc as f32;
        }
    }
    Tensor::new(vec![n, n], out)
}

pub fn stack_correlations(pyr_s: &FeaturePyramid, pyr_t: &FeaturePyramid) -> Result<CorrVolume> {
    if pyr_s.grid != pyr_t.grid || pyr_s.m() != pyr_t.m() {
        return Err(Error::shape(format!(
            "pyramid mismatch: source {} layers on {}, target {} layers on {}",
            pyr_s.m(),
            pyr_s.grid,
            pyr_t.m(),
            pyr_t.grid
        )));
    }
    let n = pyr_s.grid.cells();
    let mut data = Vec::with_capacity(pyr_s.m() * n * n);
    for (a, b) in pyr_s.layers.iter().zip(&pyr_t.layers) {
        data.extend_from_slice(correlation_layer(a, b)?.data());
    }
    CorrVolume::new(pyr_s.grid, Tensor::new(vec![pyr_s.m(), n, n], data)?)
}

/// Lists per-video layer files, e.g. `features/<video_id>.layer<k>.stt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub layer_ids: Vec<u32>,
    /// Native grid of the stored layers, when they share one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridShape>,
    pub videos: Vec<ManifestVideo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVideo {
    pub id: String,
    /// One path per layer id, relative to the manifest's directory.
    pub files: Vec<PathBuf>,
}

impl FeatureManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let manifest: FeatureManifest = serde_json::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        check_increasing(&self.layer_ids)?;
        if self.layer_ids.is_empty() {
            return Err(Error::invalid("manifest lists no layer ids"));
        }
        for v in &self.videos {
            if v.files.len() != self.layer_ids.len() {
                return Err(Error::Validation {
                    video_id: v.id.clone(),
                    reason: format!(
                        "{} files for {} layer ids",
                        v.files.len(),
                        self.layer_ids.len()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn layer_file_name(video_id: &str, layer_id: u32) -> String {
        format!("{video_id}.layer{layer_id}.stt")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn video(&self, id: &str) -> Option<&ManifestVideo> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Reads the raw layers of `video_id`, resolving paths against `base_dir`.
    pub fn read_layers(&self, base_dir: &Path, video_id: &str) -> Result<Vec<Tensor>> {
        let video = self.video(video_id).ok_or_else(|| Error::Validation {
            video_id: video_id.to_string(),
            reason: "not present in feature manifest".into(),
        })?;
        video
            .files
            .iter()
            .map(|f| stt::read(base_dir.join(f)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t: usize, h: usize, w: usize) -> GridShape {
        GridShape::new(t, h, w).unwrap()
    }

    #[test]
    fn identity_assembly() {
        let layer = Tensor::from_fn(vec![3, 2, 2, 2], |i| i as f32).unwrap();
        let pyr = assemble_hyperpixel(std::slice::from_ref(&layer), &[4], grid(2, 2, 2), false).unwrap();
        assert_eq!(pyr.layers()[0], layer);
        assert_eq!(pyr.layer_ids(), &[4]);
    }

    #[test]
    fn assembly_shapes() {
        let a = Tensor::zeros(vec![4, 2, 4, 4]).unwrap();
        let b = Tensor::zeros(vec![8, 4, 8, 8]).unwrap();
        let pyr = assemble_hyperpixel(&[a, b], &[0, 1], grid(2, 4, 4), true).unwrap();
        assert_eq!(pyr.layers()[0].dims(), &[4, 2, 4, 4]);
        assert_eq!(pyr.layers()[1].dims(), &[8, 2, 4, 4]);
        assert_eq!(pyr.channels(), vec![4, 8]);
    }

    #[test]
    fn hyperpixel_layer_set_accepted() {
        let raw: Vec<_> = (0..5)
            .map(|i| Tensor::from_fn(vec![2, 1, 2, 2], |j| (i * 7 + j) as f32).unwrap())
            .collect();
        let pyr = assemble_hyperpixel(&raw, &[0, 3, 7, 13, 16], grid(1, 2, 2), true).unwrap();
        assert_eq!(pyr.layer_ids(), &[0, 3, 7, 13, 16]);
        assert_eq!(pyr.m(), 5);
    }

    #[test]
    fn assembly_errors() {
        let a = Tensor::zeros(vec![1, 1, 1, 1]).unwrap();
        assert!(assemble_hyperpixel(std::slice::from_ref(&a), &[0, 1], grid(1, 1, 1), false).is_err());
        assert!(assemble_hyperpixel(&[a.clone(), a.clone()], &[3, 3], grid(1, 1, 1), false).is_err());
        assert!(assemble_hyperpixel(&[a.clone(), a], &[3, 1], grid(1, 1, 1), false).is_err());
        assert!(assemble_hyperpixel(&[], &[], grid(1, 1, 1), false).is_err());
    }

    #[test]
    fn correlation_examples() {
        // one-hot orthonormal features on 3 cells
        let eye = Tensor::new(
            vec![3, 1, 1, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let c = correlation_layer(&eye, &eye).unwrap();
        assert_eq!(c.data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

        let s = Tensor::new(vec![2, 1, 1, 1], vec![1.0, 0.0]).unwrap();
        let t = Tensor::new(vec![2, 1, 1, 1], vec![0.0, 1.0]).unwrap();
        assert_eq!(correlation_layer(&s, &t).unwrap().data(), &[0.0]);

        // Two cells: src (1,2), (3,-1); tgt (0.5,1), (2,2).
        // Stored channel-first: channel 0 = [1,3], channel 1 = [2,-1].
        let s = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 3.0, 2.0, -1.0]).unwrap();
        let t = Tensor::new(vec![2, 1, 1, 2], vec![0.5, 2.0, 1.0, 2.0]).unwrap();
        let c = correlation_layer(&s, &t).unwrap();
        assert_eq!(c.dims(), &[2, 2]);
        assert_eq!(c.data(), &[2.5, 6.0, 0.5, 4.0]);

        let bad = Tensor::zeros(vec![2, 1, 2, 1]).unwrap();
        assert!(correlation_layer(&s, &bad).is_err());
    }

    #[test]
    fn stack_single_layer_and_symmetry() {
        let a = Tensor::from_fn(vec![2, 1, 2, 2], |i| (i as f32).cos()).unwrap();
        let b = Tensor::from_fn(vec![2, 1, 2, 2], |i| (i as f32 * 0.5).sin()).unwrap();
        let pa = FeaturePyramid::new(grid(1, 2, 2), vec![a.clone()], vec![0]).unwrap();
        let pb = FeaturePyramid::new(grid(1, 2, 2), vec![b.clone()], vec![0]).unwrap();
        let v = stack_correlations(&pa, &pb).unwrap();
        assert_eq!(v.m(), 1);
        assert_eq!(v.slice(0), correlation_layer(&a, &b).unwrap().data());

        let p2 = FeaturePyramid::new(grid(1, 2, 2), vec![a.clone(), a.clone()], vec![0, 1]).unwrap();
        let v2 = stack_correlations(&p2, &p2).unwrap();
        assert_eq!(v2.slice(0), v2.slice(1));

        let swapped = stack_correlations(&pb, &pa).unwrap();
        let n = 4;
        for s in 0..n {
            for q in 0..n {
                assert_eq!(v.slice(0)[s * n + q], swapped.slice(0)[q * n + s]);
            }
        }
        assert!(stack_correlations(&pa, &p2).is_err());
    }

    #[test]
    fn scaling_scales_slice() {
        let a = Tensor::from_fn(vec![3, 2, 1, 2], |i| (i as f32 * 0.3).sin()).unwrap();
        let b = Tensor::from_fn(vec![3, 2, 1, 2], |i| (i as f32 * 0.7).cos()).unwrap();
        let base = correlation_layer(&a, &b).unwrap();
        let scaled = correlation_layer(&a.scale(2.5), &b).unwrap();
        for (x, y) in base.data().iter().zip(scaled.data()) {
            assert!((x * 2.5 - y).abs() <= 1e-5);
        }
    }

    #[test]
    fn frame_slice() {
        let a = Tensor::from_fn(vec![2, 3, 1, 2], |i| i as f32).unwrap();
        let p = FeaturePyramid::new(grid(3, 1, 2), vec![a], vec![0]).unwrap();
        let f = p.frame(1).unwrap();
        assert_eq!(f.grid(), grid(1, 1, 2));
        assert_eq!(f.layers()[0].data(), &[2.0, 3.0, 8.0, 9.0]);
        assert!(p.frame(3).is_err());
    }

    #[test]
    fn manifest_parse_and_validate() {
        let text = r#"{"layer_ids":[0,2],"grid":{"t":2,"h":2,"w":2},
            "videos":[{"id":"a","files":["a.layer0.stt","a.layer2.stt"]}]}"#;
        let m = FeatureManifest::from_json(text).unwrap();
        assert_eq!(m.videos[0].files.len(), 2);
        let bad = r#"{"layer_ids":[0,2],"videos":[{"id":"a","files":["x"]}]}"#;
        assert!(matches!(
            FeatureManifest::from_json(bad),
            Err(Error::Validation { video_id, .. }) if video_id == "a"
        ));
        assert_eq!(FeatureManifest::layer_file_name("v3", 7), "v3.layer7.stt");
    }
}
