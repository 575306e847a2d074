//! Sequential baselines: align frames first (nearest neighbour or DTW), then
//! match space within each aligned frame pair.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{stack_correlations, FeaturePyramid};
use crate::keypoint::{pixel_to_unit, unit_to_grid, unit_to_pixel, SpaceTimeKeypoint, VideoDims};
use crate::stmatch::{argmax_flow, stmatch_volume, transfer_keypoints, DisplacementFlow, FlowSampling};
use crate::tensor::Tensor;

/// One embedding vector per frame, stored `[frames, dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    values: Tensor,
}

impl EmbeddingSequence {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::shape(format!(
                "embedding sequence must be [frames, dim], got {:?}",
                values.dims()
            )));
        }
        if !values.is_finite() {
            return Err(Error::invalid("embedding sequence has non-finite values"));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape("embedding rows have different lengths"));
        }
        Self::new(Tensor::new(vec![rows.len(), dim], rows.concat())?)
    }

    pub fn frames(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.values.data()[i * d..(i + 1) * d]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }
}

/// For each source frame, the target frame it is aligned to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub map: Vec<usize>,
    pub monotone: bool,
}

impl Alignment {
    pub fn identity(frames: usize) -> Self {
        Self {
            map: (0..frames).collect(),
            monotone: true,
        }
    }
}

/// `--align-out` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub map: Vec<usize>,
    pub total_cost: f64,
}

/// Mean over `H x W` of one pyramid layer per frame, then L2-normalised.
pub fn frame_embeddings(pyr: &FeaturePyramid, layer_pick: usize) -> Result<EmbeddingSequence> {
    let layer = pyr.layers().get(layer_pick).ok_or_else(|| {
        Error::invalid(format!(
            "layer index {layer_pick} out of range for {} layers",
            pyr.m()
        ))
    })?;
    let grid = pyr.grid();
    let c = layer.dims()[0];
    let hw = grid.h * grid.w;
    let n = grid.cells();
    let mut out = vec![0.0f32; grid.t * c];
    for t in 0..grid.t {
        let row = &mut out[t * c..(t + 1) * c];
        for (ch, slot) in row.iter_mut().enumerate() {
            let start = ch * n + t * hw;
            let sum: f64 = layer.data()[start..start + hw].iter().map(|&v| v as f64).sum();
            *slot = (sum / hw as f64) as f32;
        }
        let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
        }
    }
    EmbeddingSequence::new(Tensor::new(vec![grid.t, c], out)?)
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn check_dims(es: &EmbeddingSequence, et: &EmbeddingSequence) -> Result<()> {
    if es.dim() != et.dim() {
        return Err(Error::shape(format!(
            "embedding dims differ: {} vs {}",
            es.dim(),
            et.dim()
        )));
    }
    Ok(())
}

/// Independent nearest target frame for every source frame.
pub fn nn_align(es: &EmbeddingSequence, et: &EmbeddingSequence) -> Result<Alignment> {
    check_dims(es, et)?;
    let map = (0..es.frames())
        .map(|i| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..et.frames() {
                let d = sq_dist(es.frame(i), et.frame(j));
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    Ok(Alignment {
        map,
        monotone: false,
    })
}

/// Dynamic time warping with steps `(1,0)`, `(0,1)`, `(1,1)` and squared
/// Euclidean frame cost.
///
/// The optimal path is collapsed to one target per source frame by keeping,
/// among the path cells of that source frame, the one of least local cost
/// (lowest target index on ties). Backtracking prefers the diagonal, then
/// the source step, then the target step when predecessors tie.
pub fn dtw_align(es: &EmbeddingSequence, et: &EmbeddingSequence) -> Result<(Alignment, f64)> {
    check_dims(es, et)?;
    let (ns, nt) = (es.frames(), et.frames());
    if ns == 0 || nt == 0 {
        return Err(Error::invalid("DTW needs non-empty sequences"));
    }
    let cost: Vec<f64> = (0..ns)
        .flat_map(|i| (0..nt).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(es.frame(i), et.frame(j)))
        .collect();
    let c = |i: usize, j: usize| cost[i * nt + j];
    let mut acc = vec![f64::INFINITY; ns * nt];
    for i in 0..ns {
        for j in 0..nt {
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut m = f64::INFINITY;
                if i > 0 && j > 0 {
                    m = m.min(acc[(i - 1) * nt + j - 1]);
                }
                if i > 0 {
                    m = m.min(acc[(i - 1) * nt + j]);
                }
                if j > 0 {
                    m = m.min(acc[i * nt + j - 1]);
                }
                m
            };
            acc[i * nt + j] = c(i, j) + prev;
        }
    }
    let total = acc[ns * nt - 1];

    let mut path = vec![(ns - 1, nt - 1)];
    let (mut i, mut j) = (ns - 1, nt - 1);
    while i > 0 || j > 0 {
        let mut best: Option<((usize, usize), f64)> = None;
        let candidates = [
            (i > 0 && j > 0).then(|| (i - 1, j - 1)),
            (i > 0).then(|| (i - 1, j)),
            (j > 0).then(|| (i, j - 1)),
        ];
        for (pi, pj) in candidates.into_iter().flatten() {
            let v = acc[pi * nt + pj];
            if best.is_none_or(|(_, b)| v < b) {
                best = Some(((pi, pj), v));
            }
        }
        (i, j) = best.expect("a predecessor exists").0;
        path.push((i, j));
    }
    path.reverse();

    let mut map = vec![usize::MAX; ns];
    for &(i, j) in &path {
        if map[i] == usize::MAX || c(i, j) < c(i, map[i]) {
            map[i] = j;
        }
    }
    Ok((
        Alignment {
            map,
            monotone: true,
        },
        total,
    ))
}

/// Maps each keypoint's frame through `alignment`, then matches space with
/// st-MATCH on the aligned `1 x H x W` frame pair.
pub fn sequential_transfer(
    alignment: &Alignment,
    pyr_s: &FeaturePyramid,
    pyr_t: &FeaturePyramid,
    kps: &[SpaceTimeKeypoint],
    src_dims: VideoDims,
    tgt_dims: VideoDims,
    mode: FlowSampling,
) -> Result<Vec<SpaceTimeKeypoint>> {
    let (ts, tt) = (pyr_s.grid().t, pyr_t.grid().t);
    if alignment.map.len() != ts {
        return Err(Error::shape(format!(
            "alignment covers {} frames, source grid has {ts}",
            alignment.map.len()
        )));
    }
    if let Some(&bad) = alignment.map.iter().find(|&&j| j >= tt) {
        return Err(Error::invalid(format!(
            "alignment targets frame {bad}, target grid has {tt}"
        )));
    }
    let mut flows: HashMap<(usize, usize), DisplacementFlow> = HashMap::new();
    let plane = |d: VideoDims| VideoDims { t: 1, ..d };
    kps.iter()
        .map(|kp| {
            if kp.t as usize >= src_dims.t {
                return Err(Error::invalid(format!(
                    "keypoint frame {} out of range for {} source frames",
                    kp.t, src_dims.t
                )));
            }
            let gs = unit_to_grid(pixel_to_unit(kp.t as f64, src_dims.t), ts).round() as usize;
            let gt = alignment.map[gs.min(ts - 1)];
            let flow = match flows.get(&(gs, gt)) {
                Some(f) => f,
                None => {
                    let corr = stack_correlations(&pyr_s.frame(gs)?, &pyr_t.frame(gt)?)?;
                    let f = argmax_flow(&stmatch_volume(&corr));
                    flows.entry((gs, gt)).or_insert(f)
                }
            };
            let flat = SpaceTimeKeypoint { t: 0, ..*kp };
            let moved = transfer_keypoints(flow, &[flat], plane(src_dims), plane(tgt_dims), mode)?[0];
            let unit = if tt > 1 { gt as f64 / (tt - 1) as f64 } else { 0.0 };
            let t = unit_to_pixel(unit, tgt_dims.t)
                .round()
                .clamp(0.0, (tgt_dims.t - 1) as f64);
            Ok(SpaceTimeKeypoint { t: t as u32, ..moved })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::GridShape;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(rows: &[&[f32]]) -> EmbeddingSequence {
        EmbeddingSequence::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_seq(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> EmbeddingSequence {
        let rows: Vec<Vec<f32>> = (0..frames)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        EmbeddingSequence::from_rows(&rows).unwrap()
    }

    /// Minimum cost over every monotone path, by exhaustive recursion.
    fn brute_force(es: &EmbeddingSequence, et: &EmbeddingSequence) -> f64 {
        fn go(es: &EmbeddingSequence, et: &EmbeddingSequence, i: usize, j: usize) -> f64 {
            let here = sq_dist(es.frame(i), et.frame(j));
            if i + 1 == es.frames() && j + 1 == et.frames() {
                return here;
            }
            let mut best = f64::INFINITY;
            if i + 1 < es.frames() {
                best = best.min(go(es, et, i + 1, j));
            }
            if j + 1 < et.frames() {
                best = best.min(go(es, et, i, j + 1));
            }
            if i + 1 < es.frames() && j + 1 < et.frames() {
                best = best.min(go(es, et, i + 1, j + 1));
            }
            here + best
        }
        go(es, et, 0, 0)
    }

    #[test]
    fn embeddings_pool_and_normalize() {
        let g = GridShape::new(2, 1, 2).unwrap();
        // channel 0: frame0 [1,3] frame1 [0,0]; channel 1: frame0 [0,0] frame1 [2,4]
        let layer = Tensor::new(vec![2, 2, 1, 2], vec![1.0, 3.0, 0.0, 0.0, 0.0, 0.0, 2.0, 4.0]).unwrap();
        let pyr = FeaturePyramid::new(g, vec![layer], vec![0]).unwrap();
        let e = frame_embeddings(&pyr, 0).unwrap();
        assert_eq!(e.values().dims(), &[2, 2]);
        assert_eq!(e.frame(0), &[1.0, 0.0]);
        assert_eq!(e.frame(1), &[0.0, 1.0]);
        assert!(frame_embeddings(&pyr, 1).is_err());

        let constant = Tensor::from_fn(vec![3, 2, 1, 2], |_| 0.7).unwrap();
        let pyr = FeaturePyramid::new(g, vec![constant], vec![0]).unwrap();
        let e = frame_embeddings(&pyr, 0).unwrap();
        assert_eq!(e.frame(0), e.frame(1));
    }

    #[test]
    fn nn_examples() {
        let a = seq(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]]);
        assert_eq!(nn_align(&a, &a).unwrap().map, vec![0, 1, 2]);
        let rev = seq(&[&[0.6, 0.8], &[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(nn_align(&a, &rev).unwrap().map, vec![2, 1, 0]);
        let dup = seq(&[&[0.0, 1.0], &[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(nn_align(&a, &dup).unwrap().map[0], 1);
        assert!(!nn_align(&a, &a).unwrap().monotone);
        assert!(nn_align(&a, &seq(&[&[1.0]])).is_err());
    }

    #[test]
    fn dtw_identity_is_diagonal() {
        let a = seq(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]]);
        let (al, cost) = dtw_align(&a, &a).unwrap();
        assert_eq!(cost, 0.0);
        assert_eq!(al, Alignment::identity(3));
    }

    #[test]
    fn dtw_hand_table() {
        // costs: row0 [0,1,4], row1 [4,1,0] -> D row0 [0,1,5], row1 [4,1,1]
        let s = seq(&[&[0.0], &[2.0]]);
        let t = seq(&[&[0.0], &[1.0], &[2.0]]);
        let (al, cost) = dtw_align(&s, &t).unwrap();
        assert_eq!(cost, 1.0);
        assert_eq!(al.map, vec![0, 2]);
        assert!(al.monotone);
    }

    #[test]
    fn dtw_errors() {
        let a = seq(&[&[1.0, 0.0]]);
        assert!(dtw_align(&a, &seq(&[&[1.0]])).is_err());
        assert!(EmbeddingSequence::from_rows(&[]).is_err());
    }

    #[test]
    fn dtw_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let (ls, lt, d) = (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..4));
            let a = random_seq(&mut rng, ls, d);
            let b = random_seq(&mut rng, lt, d);
            let (al, cost) = dtw_align(&a, &b).unwrap();
            let oracle = brute_force(&a, &b);
            assert!((cost - oracle).abs() <= 1e-9 * oracle.abs().max(1.0));
            assert!(al.map.windows(2).all(|w| w[0] <= w[1]));
            assert!(al.map.iter().all(|&j| j < lt));
        }
    }

    #[test]
    fn dtw_cost_symmetric_and_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (la, lb) = (rng.random_range(1..8), rng.random_range(1..8));
            let a = random_seq(&mut rng, la, 2);
            let b = random_seq(&mut rng, lb, 2);
            let (_, ab) = dtw_align(&a, &b).unwrap();
            let (_, ba) = dtw_align(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-6);
            let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let (c, s) = (theta.cos(), theta.sin());
            let rot = |e: &EmbeddingSequence| {
                let rows: Vec<Vec<f32>> = (0..e.frames())
                    .map(|i| {
                        let v = e.frame(i);
                        vec![c * v[0] - s * v[1], s * v[0] + c * v[1]]
                    })
                    .collect();
                EmbeddingSequence::from_rows(&rows).unwrap()
            };
            let (_, rotated) = dtw_align(&rot(&a), &rot(&b)).unwrap();
            assert!((ab - rotated).abs() < 1e-5);
        }
    }

    fn one_hot_pyramid(g: GridShape, cell_of: impl Fn(usize) -> usize) -> FeaturePyramid {
        let n = g.cells();
        let layer = Tensor::from_fn(vec![n, g.t, g.h, g.w], |i| {
            let (ch, cell) = (i / n, i % n);
            if cell_of(cell) == ch {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        FeaturePyramid::new(g, vec![layer], vec![0]).unwrap()
    }

    #[test]
    fn transfer_identity_pipeline() {
        let g = GridShape::new(3, 2, 2).unwrap();
        let pyr = one_hot_pyramid(g, |c| c);
        let dims = VideoDims::new(3, 5, 5).unwrap();
        let kps = vec![
            SpaceTimeKeypoint::new(0.0, 4.0, 1, 0),
            SpaceTimeKeypoint::new(4.0, 4.0, 2, 1),
        ];
        let out = sequential_transfer(&Alignment::identity(3), &pyr, &pyr, &kps, dims, dims, FlowSampling::Trilinear).unwrap();
        for (a, b) in out.iter().zip(&kps) {
            assert_eq!(a.t, b.t);
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
        let late = [SpaceTimeKeypoint::new(0.0, 0.0, 3, 0)];
        assert!(sequential_transfer(&Alignment::identity(3), &pyr, &pyr, &late, dims, dims, FlowSampling::Trilinear).is_err());
    }

    #[test]
    fn transfer_planted_shift_and_permutation() {
        // Frames shift by +2; within each frame the target is a spatial
        // permutation of the source.
        let g = GridShape::new(6, 3, 3).unwrap();
        let hw = 9;
        let mut perm: Vec<usize> = (0..hw).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
        // Source cell (t, p) carries feature id t*9 + p; target cell
        // (t+2, perm[p]) carries the same id.
        let src = one_hot_pyramid(g, |c| c);
        let mut inv = vec![0; hw];
        for (p, &q) in perm.iter().enumerate() {
            inv[q] = p;
        }
        let tgt = one_hot_pyramid(g, |c| {
            let (t, q) = (c / hw, c % hw);
            if t >= 2 {
                (t - 2) * hw + inv[q]
            } else {
                // frames 0 and 1 carry ids no source frame uses
                4 * hw + t * hw + q
            }
        });
        let alignment = Alignment {
            map: (0..6).map(|t| (t + 2).min(5)).collect(),
            monotone: true,
        };
        let dims = VideoDims::new(6, 5, 5).unwrap();
        let kps: Vec<_> = (0..4u32)
            .flat_map(|t| (0..hw).map(move |p| (t, p)))
            .map(|(t, p)| SpaceTimeKeypoint::new(2.0 * (p % 3) as f64, 2.0 * (p / 3) as f64, t, p as u32))
            .collect();
        let out = sequential_transfer(&alignment, &src, &tgt, &kps, dims, dims, FlowSampling::Trilinear).unwrap();
        for (kp, moved) in kps.iter().zip(&out) {
            let q = perm[kp.type_id as usize];
            assert_eq!(moved.t, kp.t + 2);
            assert!((moved.x - 2.0 * (q % 3) as f64).abs() < 1e-9);
            assert!((moved.y - 2.0 * (q / 3) as f64).abs() < 1e-9);
        }
    }
}
