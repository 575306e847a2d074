//! ANTs: a small aggregation network of 3D convolutions that maps a stacked
//! correlation volume plus source and target features to a `(THW)^2` match
//! prediction, trained with an L2 loss on sparse ground-truth flow.
//!
//! All numerics are generic over [`num_traits::Float`]; production runs use
//! `f32`, gradient verification runs the same code in `f64`.

pub mod conv;
pub mod gradcheck;
mod io;
mod train;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{CorrVolume, FeaturePyramid};
use crate::stmatch::{interp_weights, soft_argmax_rows, MatchVolume};
use crate::tensor::{GridShape, Tensor};

pub use io::{load_params, save_params, ParamsDescriptor};
pub use train::{pair_correspondences, train, AntsSample, TrainOptions, TrainOutcome, DEFAULT_LEARNING_RATE};

pub const DEFAULT_LAYERS: usize = 2;
pub const DEFAULT_HIDDEN: usize = 16;

/// Network shape. The input channel count is derived from the correlation
/// layer count, the grid and the per-layer feature channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AntsConfig {
    pub n_layers: usize,
    pub hidden_channels: usize,
    pub grid: GridShape,
    pub m: usize,
    pub source_channels: Vec<usize>,
    pub target_channels: Vec<usize>,
}

impl AntsConfig {
    pub fn for_inputs(
        corr: &CorrVolume,
        pyr_s: &FeaturePyramid,
        pyr_t: &FeaturePyramid,
        n_layers: usize,
        hidden_channels: usize,
    ) -> Result<Self> {
        let cfg = Self {
            n_layers,
            hidden_channels,
            grid: corr.grid(),
            m: corr.m(),
            source_channels: pyr_s.channels(),
            target_channels: pyr_t.channels(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.hidden_channels == 0 || self.m == 0 {
            return Err(Error::invalid(format!(
                "ANTs needs n_layers, hidden_channels and m >= 1, got {}, {}, {}",
                self.n_layers, self.hidden_channels, self.m
            )));
        }
        if !self.grid.is_valid() {
            return Err(Error::invalid("ANTs grid must be positive"));
        }
        if self.source_channels.contains(&0) || self.target_channels.contains(&0) {
            return Err(Error::invalid("feature layers must have channels"));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.m * self.grid.cells()
            + self.source_channels.iter().sum::<usize>()
            + self.target_channels.iter().sum::<usize>()
    }

    /// `(c_out, c_in)` of every layer; the last one emits `THW` channels.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let n = self.grid.cells();
        (0..self.n_layers)
            .map(|l| {
                let c_in = if l == 0 {
                    self.in_channels()
                } else {
                    self.hidden_channels
                };
                let c_out = if l + 1 == self.n_layers {
                    n
                } else {
                    self.hidden_channels
                };
                (c_out, c_in)
            })
            .collect()
    }
}

/// One convolution: kernel `[c_out, c_in, 3, 3, 3]`, bias `[c_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<F> {
    pub c_out: usize,
    pub c_in: usize,
    pub kernel: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Float> ConvLayer<F> {
    fn zeros(c_out: usize, c_in: usize) -> Self {
        Self {
            c_out,
            c_in,
            kernel: vec![F::zero(); c_out * c_in * conv::TAPS],
            bias: vec![F::zero(); c_out],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AntsParams<F> {
    pub layers: Vec<ConvLayer<F>>,
}

impl<F: Float> AntsParams<F> {
    pub fn zeros(config: &AntsConfig) -> Self {
        Self {
            layers: config
                .layer_shapes()
                .into_iter()
                .map(|(o, i)| ConvLayer::zeros(o, i))
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernel.len() + l.bias.len())
            .sum()
    }

    /// All values, layer by layer, kernel before bias.
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.kernel);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[F]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut rest = values;
        for l in &mut self.layers {
            let (k, r) = rest.split_at(l.kernel.len());
            l.kernel.copy_from_slice(k);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    pub fn cast<G: Float>(&self) -> AntsParams<G> {
        let c = |v: &[F]| v.iter().map(|&x| G::from(x).expect("finite cast")).collect();
        AntsParams {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    c_out: l.c_out,
                    c_in: l.c_in,
                    kernel: c(&l.kernel),
                    bias: c(&l.bias),
                })
                .collect(),
        }
    }

    /// `self -= lr * grads`.
    pub fn sgd_step(&mut self, grads: &AntsParams<F>, lr: F) {
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, d) in p.kernel.iter_mut().zip(&g.kernel) {
                *w = *w - lr * *d;
            }
            for (b, d) in p.bias.iter_mut().zip(&g.bias) {
                *b = *b - lr * *d;
            }
        }
    }

    pub fn norm(&self) -> F {
        self.flatten()
            .into_iter()
            .fold(F::zero(), |a, v| a + v * v)
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    pub fn check_config(&self, config: &AntsConfig) -> Result<()> {
        let shapes = config.layer_shapes();
        let ok = shapes.len() == self.layers.len()
            && shapes
                .iter()
                .zip(&self.layers)
                .all(|(&(o, i), l)| {
                    l.c_out == o
                        && l.c_in == i
                        && l.kernel.len() == o * i * conv::TAPS
                        && l.bias.len() == o
                });
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "parameters do not match ANTs config with layer shapes {shapes:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// Kernels from `U(-a, a)` with `a = sqrt(1 / (c_in * 27))`, zero biases.
    #[default]
    FanIn,
    /// Every parameter zero.
    Zero,
}

pub fn ants_init(config: &AntsConfig, seed: u64) -> AntsParams<f32> {
    ants_init_with(config, seed, InitMode::FanIn)
}

pub fn ants_init_with(config: &AntsConfig, seed: u64, mode: InitMode) -> AntsParams<f32> {
    let mut params = AntsParams::zeros(config);
    if mode == InitMode::Zero {
        return params;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut params.layers {
        let a = (1.0 / (layer.c_in * conv::TAPS) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        for w in &mut layer.kernel {
            *w = dist.sample(&mut rng) as f32;
        }
    }
    params
}

/// Network input `[C_in, T, H, W]`: the correlation volume reshaped over the
/// source grid (channel `m*THW + q` at source cell `s` holds `corr[m, s, q]`),
/// then every source feature layer, then every target feature layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AntsInput<F> {
    pub grid: GridShape,
    pub channels: usize,
    pub data: Vec<F>,
}

impl<F: Float> AntsInput<F> {
    pub fn assemble(
        corr: &CorrVolume,
        pyr_s: &FeaturePyramid,
        pyr_t: &FeaturePyramid,
    ) -> Result<Self> {
        let grid = corr.grid();
        if pyr_s.grid() != grid || pyr_t.grid() != grid {
            return Err(Error::shape(format!(
                "correlation grid {grid} differs from pyramid grids {} / {}",
                pyr_s.grid(),
                pyr_t.grid()
            )));
        }
        let n = grid.cells();
        let cast = |v: f32| F::from(v).expect("finite cast");
        let feature_channels: usize =
            pyr_s.channels().iter().sum::<usize>() + pyr_t.channels().iter().sum::<usize>();
        let channels = corr.m() * n + feature_channels;
        let mut data = vec![F::zero(); channels * n];
        for m in 0..corr.m() {
            let slice = corr.slice(m);
            for s in 0..n {
                for q in 0..n {
                    data[(m * n + q) * n + s] = cast(slice[s * n + q]);
                }
            }
        }
        let mut offset = corr.m() * n * n;
        for layer in pyr_s.layers().iter().chain(pyr_t.layers()) {
            for (d, &v) in data[offset..offset + layer.len()]
                .iter_mut()
                .zip(layer.data())
            {
                *d = cast(v);
            }
            offset += layer.len();
        }
        Ok(Self {
            grid,
            channels,
            data,
        })
    }

    pub fn cast<G: Float>(&self) -> AntsInput<G> {
        AntsInput {
            grid: self.grid,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|&v| G::from(v).expect("finite cast"))
                .collect(),
        }
    }
}

/// Supervision for one keypoint: its real-valued source grid position and
/// the ground-truth displacement, both `(t, h, w)` in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtCorrespondence {
    pub position: [f64; 3],
    pub displacement: [f64; 3],
}

impl GtCorrespondence {
    fn validate(&self, grid: GridShape) -> Result<()> {
        let inside = self
            .position
            .iter()
            .zip(grid.extents())
            .all(|(&p, e)| p.is_finite() && p >= 0.0 && p <= (e - 1) as f64);
        if !inside || !self.displacement.iter().all(|d| d.is_finite()) {
            return Err(Error::invalid(format!(
                "GT correspondence {:?} outside grid {grid}",
                self.position
            )));
        }
        Ok(())
    }
}

struct Activations<F> {
    /// Input to each layer (`inputs[0]` is the network input).
    inputs: Vec<Vec<F>>,
    /// Pre-activation output of each layer.
    outputs: Vec<Vec<F>>,
}

fn run_forward<F: Float>(input: &AntsInput<F>, params: &AntsParams<F>) -> Result<Activations<F>> {
    if params.layers.is_empty() || params.layers[0].c_in != input.channels {
        return Err(Error::shape(format!(
            "network expects {} input channels, input has {}",
            params.layers.first().map_or(0, |l| l.c_in),
            input.channels
        )));
    }
    let n = input.grid.cells();
    if params.layers.last().map(|l| l.c_out) != Some(n) {
        return Err(Error::shape(format!(
            "final layer must emit THW = {n} channels"
        )));
    }
    let mut inputs = vec![input.data.clone()];
    let mut outputs = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let x = &inputs[l];
        if x.len() != layer.c_in * n {
            return Err(Error::shape(format!(
                "layer {l} expects {} channels",
                layer.c_in
            )));
        }
        let y = conv::forward(x, layer.c_in, input.grid, &layer.kernel, &layer.bias, layer.c_out);
        if l + 1 < params.layers.len() {
            inputs.push(y.iter().map(|&v| v.max(F::zero())).collect());
        }
        outputs.push(y);
    }
    Ok(Activations { inputs, outputs })
}

/// Final `[THW channels, THW cells]` output transposed into `[source, target]`
/// score rows.
fn output_to_scores<F: Float>(y: &[F], n: usize) -> Vec<F> {
    let mut scores = vec![F::zero(); n * n];
    for q in 0..n {
        for s in 0..n {
            scores[s * n + q] = y[q * n + s];
        }
    }
    scores
}

/// Match scores `[THW, THW]` computed in precision `F`.
pub fn forward_scores<F: Float>(input: &AntsInput<F>, params: &AntsParams<F>) -> Result<Vec<F>> {
    let acts = run_forward(input, params)?;
    let y = acts.outputs.last().expect("at least one layer");
    Ok(output_to_scores(y, input.grid.cells()))
}

pub fn ants_forward(
    corr: &CorrVolume,
    pyr_s: &FeaturePyramid,
    pyr_t: &FeaturePyramid,
    params: &AntsParams<f32>,
) -> Result<MatchVolume> {
    let input = AntsInput::<f32>::assemble(corr, pyr_s, pyr_t)?;
    let scores = forward_scores(&input, params)?;
    let n = input.grid.cells();
    MatchVolume::new(input.grid, Tensor::new(vec![n, n], scores)?)
}

fn check_loss_args<F: Float>(
    grid: GridShape,
    gts: &[GtCorrespondence],
    temperature: F,
) -> Result<()> {
    if gts.is_empty() {
        return Err(Error::invalid("sparse flow loss needs at least one GT correspondence"));
    }
    if !(temperature > F::zero() && temperature.is_finite()) {
        return Err(Error::invalid("temperature must be positive"));
    }
    gts.iter().try_for_each(|g| g.validate(grid))
}

/// Sparse-flow L2 loss on `scores` and its gradient w.r.t. every score.
pub(crate) fn flow_loss_and_grad<F: Float>(
    scores: &[F],
    grid: GridShape,
    gts: &[GtCorrespondence],
    temperature: F,
) -> (F, Vec<F>) {
    let n = grid.cells();
    let f = |v: f64| F::from(v).expect("finite cast");
    let (flow, probs) = soft_argmax_rows(scores, grid, temperature);
    let count = f(gts.len() as f64);
    let mut loss = F::zero();
    let mut dflow = vec![F::zero(); 3 * n];
    for gt in gts {
        let weights = interp_weights(gt.position, grid);
        let mut residual = [F::zero(); 3];
        for (axis, r) in residual.iter_mut().enumerate() {
            let pred = weights
                .iter()
                .fold(F::zero(), |a, &(cell, w)| a + f(w) * flow[axis * n + cell]);
            *r = pred - f(gt.displacement[axis]);
            loss = loss + *r * *r;
        }
        for &(cell, w) in &weights {
            for axis in 0..3 {
                dflow[axis * n + cell] =
                    dflow[axis * n + cell] + f(2.0) * f(w) * residual[axis] / count;
            }
        }
    }
    loss = loss / count;

    // flow_s = sum_q p_sq c_q - c_s;  d flow_s / d z_sq = p_sq (c_q - mu_s)
    let mut dscores = vec![F::zero(); n * n];
    for s in 0..n {
        let g = [dflow[s], dflow[n + s], dflow[2 * n + s]];
        if g.iter().all(|v| *v == F::zero()) {
            continue;
        }
        let cs = grid.coord(s);
        let mu_dot_g = (0..3).fold(F::zero(), |a, axis| {
            a + (flow[axis * n + s] + f(cs[axis] as f64)) * g[axis]
        });
        for q in 0..n {
            let cq = grid.coord(q);
            let c_dot_g = (0..3).fold(F::zero(), |a, axis| a + f(cq[axis] as f64) * g[axis]);
            dscores[s * n + q] = probs[s * n + q] * (c_dot_g - mu_dot_g) / temperature;
        }
    }
    (loss, dscores)
}

/// Mean squared distance between soft-argmax displacements, sampled at each
/// GT source position, and the GT displacements.
pub fn sparse_flow_loss(
    mv: &MatchVolume,
    gts: &[GtCorrespondence],
    temperature: f64,
) -> Result<f64> {
    check_loss_args(mv.grid(), gts, temperature)?;
    let scores: Vec<f64> = mv.scores().data().iter().map(|&v| v as f64).collect();
    Ok(flow_loss_and_grad(&scores, mv.grid(), gts, temperature).0)
}

/// Loss at `params` in precision `F` for a prepared input.
pub fn loss_at<F: Float>(
    input: &AntsInput<F>,
    params: &AntsParams<F>,
    gts: &[GtCorrespondence],
    temperature: F,
) -> Result<F> {
    check_loss_args(input.grid, gts, temperature)?;
    let scores = forward_scores(input, params)?;
    Ok(flow_loss_and_grad(&scores, input.grid, gts, temperature).0)
}

/// Loss and its reverse-mode gradient w.r.t. every parameter.
pub fn loss_and_gradient<F: Float>(
    input: &AntsInput<F>,
    params: &AntsParams<F>,
    gts: &[GtCorrespondence],
    temperature: F,
) -> Result<(F, AntsParams<F>)> {
    check_loss_args(input.grid, gts, temperature)?;
    let grid = input.grid;
    let n = grid.cells();
    let acts = run_forward(input, params)?;
    let scores = output_to_scores(acts.outputs.last().expect("layer"), n);
    let (loss, dscores) = flow_loss_and_grad(&scores, grid, gts, temperature);

    // Scores are the transposed final output.
    let mut dy = output_to_scores(&dscores, n);
    let mut grads = AntsParams::zeros_like(params);
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let g = conv::backward(
            &acts.inputs[l],
            layer.c_in,
            grid,
            &layer.kernel,
            layer.c_out,
            &dy,
            l > 0,
        );
        grads.layers[l].kernel = g.kernel;
        grads.layers[l].bias = g.bias;
        if let Some(mut dx) = g.input {
            // ReLU between layers.
            for (d, &z) in dx.iter_mut().zip(&acts.outputs[l - 1]) {
                if z <= F::zero() {
                    *d = F::zero();
                }
            }
            dy = dx;
        }
    }
    Ok((loss, grads))
}

impl<F: Float> AntsParams<F> {
    fn zeros_like(other: &AntsParams<F>) -> Self {
        Self {
            layers: other
                .layers
                .iter()
                .map(|l| ConvLayer::zeros(l.c_out, l.c_in))
                .collect(),
        }
    }
}

/// Loss and gradient for one pair, assembled from its correlation volume and
/// pyramids.
pub fn ants_gradient<F: Float>(
    corr: &CorrVolume,
    pyr_s: &FeaturePyramid,
    pyr_t: &FeaturePyramid,
    params: &AntsParams<F>,
    gts: &[GtCorrespondence],
    temperature: F,
) -> Result<(F, AntsParams<F>)> {
    let input = AntsInput::<F>::assemble(corr, pyr_s, pyr_t)?;
    loss_and_gradient(&input, params, gts, temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::stack_correlations;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn grid(t: usize, h: usize, w: usize) -> GridShape {
        GridShape::new(t, h, w).unwrap()
    }

    fn random_pyramid(rng: &mut ChaCha8Rng, g: GridShape, channels: &[usize]) -> FeaturePyramid {
        let layers = channels
            .iter()
            .map(|&c| {
                Tensor::from_fn(vec![c, g.t, g.h, g.w], |_| rng.random_range(-1.0..1.0)).unwrap()
            })
            .collect();
        FeaturePyramid::new(g, layers, (0..channels.len() as u32).collect()).unwrap()
    }

    struct Instance {
        corr: CorrVolume,
        ps: FeaturePyramid,
        pt: FeaturePyramid,
        config: AntsConfig,
    }

    fn instance(seed: u64, g: GridShape, n_layers: usize, hidden: usize) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = random_pyramid(&mut rng, g, &[2, 3]);
        let pt = random_pyramid(&mut rng, g, &[2, 3]);
        let corr = stack_correlations(&ps, &pt).unwrap();
        let config = AntsConfig::for_inputs(&corr, &ps, &pt, n_layers, hidden).unwrap();
        Instance { corr, ps, pt, config }
    }

    #[test]
    fn init_is_deterministic_with_expected_shapes() {
        let inst = instance(0, grid(2, 2, 2), 2, 8);
        let a = ants_init(&inst.config, 7);
        assert_eq!(a, ants_init(&inst.config, 7));
        assert_ne!(a, ants_init(&inst.config, 8));
        let c_in = 2 * 8 + 5 + 5;
        assert_eq!(inst.config.in_channels(), c_in);
        assert_eq!(inst.config.layer_shapes(), vec![(8, c_in), (8, 8)]);
        assert_eq!(a.layers[0].kernel.len(), 8 * c_in * 27);
        assert_eq!(a.layers[1].kernel.len(), 8 * 8 * 27);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let bound = (1.0 / (c_in as f32 * 27.0)).sqrt();
        assert!(a.layers[0].kernel.iter().all(|w| w.abs() <= bound));
        let z = ants_init_with(&inst.config, 7, InitMode::Zero);
        assert!(z.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_network_gives_zero_volume() {
        let inst = instance(1, grid(2, 2, 2), 2, 4);
        let z = ants_init_with(&inst.config, 0, InitMode::Zero);
        let mv = ants_forward(&inst.corr, &inst.ps, &inst.pt, &z).unwrap();
        assert_eq!(mv.scores().dims(), &[8, 8]);
        assert!(mv.scores().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_cell_single_layer_matches_direct_convolution() {
        let g = grid(1, 1, 1);
        let ps = FeaturePyramid::new(g, vec![Tensor::new(vec![2, 1, 1, 1], vec![0.5, -1.0]).unwrap()], vec![0]).unwrap();
        let pt = FeaturePyramid::new(g, vec![Tensor::new(vec![2, 1, 1, 1], vec![2.0, 0.25]).unwrap()], vec![0]).unwrap();
        let corr = stack_correlations(&ps, &pt).unwrap();
        assert_eq!(corr.slice(0), &[0.75]);
        let config = AntsConfig::for_inputs(&corr, &ps, &pt, 1, 3).unwrap();
        assert_eq!(config.layer_shapes(), vec![(1, 5)]);
        let mut params = ants_init(&config, 3);
        params.layers[0].bias[0] = 0.125;
        let input = [0.75f32, 0.5, -1.0, 2.0, 0.25];
        // Only the centre tap (index 13) touches a 1x1x1 grid.
        let expected: f32 = 0.125
            + input
                .iter()
                .enumerate()
                .map(|(i, v)| params.layers[0].kernel[i * 27 + 13] * v)
                .sum::<f32>();
        let mv = ants_forward(&corr, &ps, &pt, &params).unwrap();
        assert!((mv.scores().data()[0] - expected).abs() < 1e-6);
    }

    #[test]
    fn input_layout() {
        let inst = instance(2, grid(1, 2, 2), 1, 1);
        let x = AntsInput::<f32>::assemble(&inst.corr, &inst.ps, &inst.pt).unwrap();
        let n = 4;
        assert_eq!(x.channels, 2 * n + 10);
        // channel (m=1, q=3) at source cell 2
        assert_eq!(x.data[(n + 3) * n + 2], inst.corr.slice(1)[2 * n + 3]);
        // first source feature channel follows the correlation block
        assert_eq!(&x.data[2 * n * n..2 * n * n + n], &inst.ps.layers()[0].data()[..n]);
        let tgt_start = (2 * n + 5) * n;
        assert_eq!(&x.data[tgt_start..tgt_start + n], &inst.pt.layers()[0].data()[..n]);
    }

    #[test]
    fn forward_rejects_mismatched_params() {
        let inst = instance(3, grid(2, 2, 2), 2, 4);
        let other = instance(3, grid(2, 2, 1), 2, 4);
        let p = ants_init(&other.config, 0);
        assert!(ants_forward(&inst.corr, &inst.ps, &inst.pt, &p).is_err());
        assert!(p.check_config(&inst.config).is_err());
    }

    #[test]
    fn hidden_channel_permutation_leaves_output_unchanged() {
        let inst = instance(4, grid(2, 2, 2), 3, 5);
        let mut p = ants_init(&inst.config, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for b in &mut p.layers[0].bias {
            *b = rng.random_range(-0.1..0.1);
        }
        let base = ants_forward(&inst.corr, &inst.ps, &inst.pt, &p).unwrap();
        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut rng);
        let mut q = p.clone();
        let c_in0 = p.layers[0].c_in;
        for (new, &old) in perm.iter().enumerate() {
            q.layers[0].kernel[new * c_in0 * 27..(new + 1) * c_in0 * 27]
                .copy_from_slice(&p.layers[0].kernel[old * c_in0 * 27..(old + 1) * c_in0 * 27]);
            q.layers[0].bias[new] = p.layers[0].bias[old];
        }
        let next = &p.layers[1];
        for o in 0..next.c_out {
            for (new, &old) in perm.iter().enumerate() {
                let dst = (o * next.c_in + new) * 27;
                let src = (o * next.c_in + old) * 27;
                q.layers[1].kernel[dst..dst + 27].copy_from_slice(&next.kernel[src..src + 27]);
            }
        }
        let permuted = ants_forward(&inst.corr, &inst.ps, &inst.pt, &q).unwrap();
        for (a, b) in base.scores().data().iter().zip(permuted.scores().data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    fn mv_from(g: GridShape, scores: Vec<f32>) -> MatchVolume {
        let n = g.cells();
        MatchVolume::new(g, Tensor::new(vec![n, n], scores).unwrap()).unwrap()
    }

    #[test]
    fn loss_examples() {
        let g = grid(2, 2, 2);
        let n = g.cells();
        // One-hot identity rows with a large gap: soft flow is ~0 everywhere.
        let mv = mv_from(g, (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect());
        let at = |p: [f64; 3], d: [f64; 3]| GtCorrespondence { position: p, displacement: d };
        let exact = sparse_flow_loss(&mv, &[at([0.0, 1.0, 0.5], [0.0; 3])], 1e-3).unwrap();
        assert!(exact < 1e-12);
        let unit = sparse_flow_loss(&mv, &[at([1.0, 0.0, 0.0], [1.0, 0.0, 0.0])], 1e-3).unwrap();
        assert!((unit - 1.0).abs() < 1e-9);
        let two = sparse_flow_loss(
            &mv,
            &[at([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), at([1.0, 1.0, 1.0], [0.0, 2.0, 0.0])],
            1e-3,
        )
        .unwrap();
        assert!((two - 2.5).abs() < 1e-9);
        assert!(sparse_flow_loss(&mv, &[], 0.05).is_err());
        assert!(sparse_flow_loss(&mv, &[at([0.0, 0.0, 2.0], [0.0; 3])], 0.05).is_err());
        assert!(sparse_flow_loss(&mv, &[at([0.0; 3], [0.0; 3])], 0.0).is_err());
    }

    #[test]
    fn loss_is_nonnegative() {
        let g = grid(2, 1, 2);
        let n = g.cells();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let mv = mv_from(g, (0..n * n).map(|_| rng.random_range(-2.0..2.0)).collect());
            let gts: Vec<_> = (0..3)
                .map(|_| GtCorrespondence {
                    position: [rng.random_range(0.0..1.0), 0.0, rng.random_range(0.0..1.0)],
                    displacement: [rng.random_range(-1.0..1.0), 0.0, rng.random_range(-1.0..1.0)],
                })
                .collect();
            assert!(sparse_flow_loss(&mv, &gts, 0.3).unwrap() >= 0.0);
        }
    }

    #[test]
    fn zero_loss_point_is_stationary() {
        let inst = instance(5, grid(2, 2, 2), 2, 3);
        let p = ants_init_with(&inst.config, 0, InitMode::Zero).cast::<f64>();
        // Zero network: uniform rows, flow = centroid - source coordinate.
        let gts: Vec<_> = [[0.0, 0.0, 0.0], [1.0, 0.5, 0.25]]
            .into_iter()
            .map(|pos: [f64; 3]| GtCorrespondence {
                position: pos,
                displacement: pos.map(|c| 0.5 - c),
            })
            .collect();
        let (loss, grads) = ants_gradient(&inst.corr, &inst.ps, &inst.pt, &p, &gts, 0.1).unwrap();
        assert!(loss < 1e-20);
        assert!(grads.norm() < 1e-8);
    }

    #[test]
    fn duplicate_gt_gives_identical_gradients() {
        let inst = instance(6, grid(2, 2, 2), 2, 3);
        let p = ants_init(&inst.config, 2).cast::<f64>();
        let gt = GtCorrespondence { position: [0.5, 1.0, 0.2], displacement: [1.0, -1.0, 0.5] };
        let (l1, g1) = ants_gradient(&inst.corr, &inst.ps, &inst.pt, &p, &[gt], 0.05).unwrap();
        let (l2, g2) = ants_gradient(&inst.corr, &inst.ps, &inst.pt, &p, &[gt, gt], 0.05).unwrap();
        assert_eq!(l1, l2);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn flat_round_trip_and_sgd() {
        let inst = instance(7, grid(1, 2, 2), 2, 2);
        let p = ants_init(&inst.config, 1);
        let mut q = AntsParams::zeros(&inst.config);
        q.set_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(q.set_flat(&[0.0]).is_err());
        let g = p.clone();
        q.sgd_step(&g, 0.5);
        for (a, b) in q.flatten().iter().zip(p.flatten()) {
            assert_eq!(*a, b - 0.5 * b);
        }
    }
}
