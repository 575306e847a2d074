//! Central finite-difference verification of the analytic ANTs gradient,
//! run in 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ants_init, loss_and_gradient, loss_at, AntsConfig, AntsInput, AntsParams, GtCorrespondence};
use crate::error::Result;
use crate::features::{stack_correlations, FeaturePyramid};
use crate::tensor::{GridShape, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so components that are zero
/// analytically are compared on an absolute scale.
pub const ABS_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub seed: u64,
    pub n_params: usize,
    pub loss: f64,
    pub max_rel_error: f64,
    /// Flat index (see [`AntsParams::flatten`]) of the worst component.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_TOLERANCE
    }
}

/// Compares every analytic gradient component against
/// `(L(p + h e_i) - L(p - h e_i)) / 2h`.
pub fn check_gradient(
    input: &AntsInput<f64>,
    params: &AntsParams<f64>,
    gts: &[GtCorrespondence],
    temperature: f64,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (loss, grads) = loss_and_gradient(input, params, gts, temperature)?;
    let analytic = grads.flatten();
    let base = params.flatten();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        seed,
        n_params: base.len(),
        loss,
        max_rel_error: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    let mut values = base.clone();
    for i in 0..base.len() {
        values[i] = base[i] + step;
        probe.set_flat(&values)?;
        let plus = loss_at(input, &probe, gts, temperature)?;
        values[i] = base[i] - step;
        probe.set_flat(&values)?;
        let minus = loss_at(input, &probe, gts, temperature)?;
        values[i] = base[i];
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}

/// A random tiny problem: grid 2x2x2, one feature layer per video, one hidden
/// layer, three GT correspondences at sub-cell positions.
pub struct TinyInstance {
    pub config: AntsConfig,
    pub input: AntsInput<f64>,
    pub params: AntsParams<f64>,
    pub gts: Vec<GtCorrespondence>,
    pub temperature: f64,
}

pub fn tiny_instance(seed: u64) -> Result<TinyInstance> {
    let grid = GridShape::new(2, 2, 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pyramid = |rng: &mut ChaCha8Rng| -> Result<FeaturePyramid> {
        let layer = Tensor::from_fn(vec![2, 2, 2, 2], |_| rng.random_range(-1.0..1.0))?;
        FeaturePyramid::new(grid, vec![layer], vec![0])
    };
    let ps = pyramid(&mut rng)?;
    let pt = pyramid(&mut rng)?;
    let corr = stack_correlations(&ps, &pt)?;
    let config = AntsConfig::for_inputs(&corr, &ps, &pt, 2, 4)?;
    let mut params = ants_init(&config, seed).cast::<f64>();
    for b in params.layers.iter_mut().flat_map(|l| l.bias.iter_mut()) {
        *b = rng.random_range(-0.1..0.1);
    }
    let gts = (0..3)
        .map(|_| GtCorrespondence {
            position: [0; 3].map(|_| rng.random_range(0.0..1.0)),
            displacement: [0; 3].map(|_| rng.random_range(-1.0..1.0)),
        })
        .collect();
    Ok(TinyInstance {
        input: AntsInput::<f64>::assemble(&corr, &ps, &pt)?,
        config,
        params,
        gts,
        temperature: 0.1,
    })
}

pub fn check_random_instance(seed: u64) -> Result<GradCheckReport> {
    let inst = tiny_instance(seed)?;
    check_gradient(&inst.input, &inst.params, &inst.gts, inst.temperature, FD_STEP, seed)
}
