//! The parameter-free st-MATCH matcher and the decoding of `(THW)^2` match
//! volumes into displacement flows and pixel keypoints.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::CorrVolume;
use crate::keypoint::{
    pixel_to_unit, unit_to_grid, unit_to_pixel, SpaceTimeKeypoint, VideoDims,
};
use crate::tensor::{GridShape, Tensor};

pub const DEFAULT_TEMPERATURE: f32 = 0.05;

/// `THW x THW` matching scores between source and target cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchVolume {
    grid: GridShape,
    scores: Tensor,
}

impl MatchVolume {
    pub fn new(grid: GridShape, scores: Tensor) -> Result<Self> {
        let n = grid.cells();
        if scores.dims() != [n, n] {
            return Err(Error::shape(format!(
                "match volume dims {:?} inconsistent with grid {grid}",
                scores.dims()
            )));
        }
        Ok(Self { grid, scores })
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn scores(&self) -> &Tensor {
        &self.scores
    }

    pub fn row(&self, s: usize) -> &[f32] {
        let n = self.grid.cells();
        &self.scores.data()[s * n..(s + 1) * n]
    }
}

/// Per source cell displacement `(dt, dh, dw)` in grid units, stored as
/// `[3, T, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementFlow {
    grid: GridShape,
    flow: Tensor,
}

impl DisplacementFlow {
    pub fn new(grid: GridShape, flow: Tensor) -> Result<Self> {
        if flow.dims() != [3, grid.t, grid.h, grid.w] {
            return Err(Error::shape(format!(
                "flow dims {:?} inconsistent with grid {grid}",
                flow.dims()
            )));
        }
        Ok(Self { grid, flow })
    }

    pub fn constant(grid: GridShape, d: [f32; 3]) -> Self {
        let n = grid.cells();
        let flow = Tensor::from_fn(vec![3, grid.t, grid.h, grid.w], |i| d[i / n])
            .expect("valid grid");
        Self { grid, flow }
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn tensor(&self) -> &Tensor {
        &self.flow
    }

    pub fn at_cell(&self, cell: usize) -> [f32; 3] {
        let n = self.grid.cells();
        let d = self.flow.data();
        [d[cell], d[n + cell], d[2 * n + cell]]
    }

    /// Displacement at a real-valued grid position.
    pub fn sample(&self, pos: [f64; 3], mode: FlowSampling) -> [f64; 3] {
        let n = self.grid.cells();
        let d = self.flow.data();
        let mut out = [0.0f64; 3];
        match mode {
            FlowSampling::Trilinear => {
                for (cell, w) in interp_weights(pos, self.grid) {
                    for (axis, o) in out.iter_mut().enumerate() {
                        *o += w * d[axis * n + cell] as f64;
                    }
                }
            }
            FlowSampling::Nearest => {
                let cell = nearest_cell(pos, self.grid);
                for (axis, o) in out.iter_mut().enumerate() {
                    *o = d[axis * n + cell] as f64;
                }
            }
        }
        out
    }
}

/// How keypoint transfer reads the flow field between grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowSampling {
    #[default]
    Trilinear,
    Nearest,
}

fn axis_taps(p: f64, len: usize) -> [(usize, f64); 2] {
    if len <= 1 {
        return [(0, 1.0), (0, 0.0)];
    }
    let p = p.clamp(0.0, (len - 1) as f64);
    let lo = (p.floor() as usize).min(len - 1);
    let hi = (lo + 1).min(len - 1);
    let f = p - lo as f64;
    [(lo, 1.0 - f), (hi, f)]
}

/// Trilinear weights of the (up to) eight cells surrounding `pos`
/// (`[t, h, w]` in grid units, clamped to the grid).
pub(crate) fn interp_weights(pos: [f64; 3], grid: GridShape) -> Vec<(usize, f64)> {
    let tt = axis_taps(pos[0], grid.t);
    let hh = axis_taps(pos[1], grid.h);
    let ww = axis_taps(pos[2], grid.w);
    let mut out = Vec::with_capacity(8);
    for &(t, wt) in &tt {
        for &(h, wh) in &hh {
            for &(w, wwt) in &ww {
                let weight = wt * wh * wwt;
                if weight != 0.0 {
                    out.push((grid.index(t, h, w), weight));
                }
            }
        }
    }
    out
}

fn nearest_cell(pos: [f64; 3], grid: GridShape) -> usize {
    let r = |p: f64, len: usize| (p.round().max(0.0) as usize).min(len - 1);
    grid.index(r(pos[0], grid.t), r(pos[1], grid.h), r(pos[2], grid.w))
}

/// Mean over the `M` correlation slices.
pub fn stmatch_volume(corr: &CorrVolume) -> MatchVolume {
    let grid = corr.grid();
    let n = grid.cells();
    let m = corr.m();
    let mut acc = vec![0.0f64; n * n];
    for i in 0..m {
        for (a, &v) in acc.iter_mut().zip(corr.slice(i)) {
            *a += v as f64;
        }
    }
    let scores = acc.into_iter().map(|v| (v / m as f64) as f32).collect();
    MatchVolume::new(grid, Tensor::new(vec![n, n], scores).expect("n*n scores"))
        .expect("square volume")
}

/// Hard decoding: each source cell moves to its best-scoring target cell
/// (ties resolved towards the lowest linear index).
pub fn argmax_flow(mv: &MatchVolume) -> DisplacementFlow {
    let grid = mv.grid;
    let n = grid.cells();
    let mut flow = vec![0.0f32; 3 * n];
    for s in 0..n {
        let row = mv.row(s);
        let mut best = 0;
        for (q, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = q;
            }
        }
        let from = grid.coord(s);
        let to = grid.coord(best);
        for axis in 0..3 {
            flow[axis * n + s] = to[axis] as f32 - from[axis] as f32;
        }
    }
    DisplacementFlow::new(
        grid,
        Tensor::new(vec![3, grid.t, grid.h, grid.w], flow).expect("flow dims"),
    )
    .expect("flow grid")
}

/// Row-wise softmax expectation of target coordinates minus the source
/// coordinate. Returns the flow as `[3, N]` and the softmax weights `[N, N]`.
pub(crate) fn soft_argmax_rows<F: Float>(
    scores: &[F],
    grid: GridShape,
    temperature: F,
) -> (Vec<F>, Vec<F>) {
    let n = grid.cells();
    let coords: Vec<[F; 3]> = (0..n)
        .map(|q| grid.coord(q).map(|c| F::from(c).expect("coordinate")))
        .collect();
    let mut flow = vec![F::zero(); 3 * n];
    let mut probs = vec![F::zero(); n * n];
    for s in 0..n {
        let row = &scores[s * n..(s + 1) * n];
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let p = &mut probs[s * n..(s + 1) * n];
        let mut total = F::zero();
        for (pq, &v) in p.iter_mut().zip(row) {
            *pq = ((v - max) / temperature).exp();
            total = total + *pq;
        }
        let mut expect = [F::zero(); 3];
        for (pq, c) in p.iter_mut().zip(&coords) {
            *pq = *pq / total;
            for axis in 0..3 {
                expect[axis] = expect[axis] + *pq * c[axis];
            }
        }
        for axis in 0..3 {
            flow[axis * n + s] = expect[axis] - coords[s][axis];
        }
    }
    (flow, probs)
}

/// Differentiable decoding: softmax-weighted expected target coordinate.
pub fn soft_argmax_flow(mv: &MatchVolume, temperature: f32) -> Result<DisplacementFlow> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let grid = mv.grid;
    let scores: Vec<f64> = mv.scores.data().iter().map(|&v| v as f64).collect();
    let (flow, _) = soft_argmax_rows(&scores, grid, temperature as f64);
    DisplacementFlow::new(
        grid,
        Tensor::new(
            vec![3, grid.t, grid.h, grid.w],
            flow.into_iter().map(|v| v as f32).collect(),
        )?,
    )
}

/// Moves source keypoints into the target video along `flow`.
///
/// Pixels map to grid units with the align-corners convention; the
/// displacement is sampled at the keypoint's grid position and the result is
/// mapped back into target pixels. Time is rounded to the nearest frame and
/// clamped to the target video.
pub fn transfer_keypoints(
    flow: &DisplacementFlow,
    kps: &[SpaceTimeKeypoint],
    src_dims: VideoDims,
    tgt_dims: VideoDims,
    mode: FlowSampling,
) -> Result<Vec<SpaceTimeKeypoint>> {
    src_dims.validate()?;
    tgt_dims.validate()?;
    let grid = flow.grid;
    kps.iter()
        .map(|kp| {
            if !src_dims.contains(kp) {
                return Err(Error::invalid(format!(
                    "keypoint ({}, {}, {}) outside source video {}x{}x{}",
                    kp.x, kp.y, kp.t, src_dims.t, src_dims.h, src_dims.w
                )));
            }
            let unit = [
                pixel_to_unit(kp.t as f64, src_dims.t),
                pixel_to_unit(kp.y, src_dims.h),
                pixel_to_unit(kp.x, src_dims.w),
            ];
            let extents = grid.extents();
            let pos = [0, 1, 2].map(|a| unit_to_grid(unit[a], extents[a]));
            let d = flow.sample(pos, mode);
            let moved = [0, 1, 2].map(|a| {
                if extents[a] > 1 {
                    (pos[a] + d[a]) / (extents[a] - 1) as f64
                } else {
                    unit[a]
                }
            });
            let t = unit_to_pixel(moved[0], tgt_dims.t)
                .round()
                .clamp(0.0, (tgt_dims.t - 1) as f64);
            Ok(SpaceTimeKeypoint {
                t: t as u32,
                type_id: kp.type_id,
                x: unit_to_pixel(moved[2], tgt_dims.w),
                y: unit_to_pixel(moved[1], tgt_dims.h),
                visible: kp.visible,
            })
        })
        .collect()
}
