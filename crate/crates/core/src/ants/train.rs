use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ants_init, loss_and_gradient, loss_at, AntsConfig, AntsInput, AntsParams, GtCorrespondence};
use crate::benchmark::GtPair;
use crate::error::{Error, Result};
use crate::keypoint::{pixel_to_grid, VideoDims};
use crate::tensor::GridShape;

/// Initial learning rate of the reference training schedule.
pub const DEFAULT_LEARNING_RATE: f32 = 1.2e-4;

/// One training pair: prepared network input plus its sparse GT flow.
#[derive(Debug, Clone)]
pub struct AntsSample {
    pub input: AntsInput<f32>,
    pub gts: Vec<GtCorrespondence>,
}

/// Grid-unit supervision from the pixel matches of a ground-truth pair.
pub fn pair_correspondences(
    pair: &GtPair,
    src_dims: VideoDims,
    tgt_dims: VideoDims,
    grid: GridShape,
) -> Vec<GtCorrespondence> {
    pair.matches
        .iter()
        .map(|m| {
            let position = pixel_to_grid(&m.src.keypoint(m.type_id), src_dims, grid);
            let target = pixel_to_grid(&m.tgt.keypoint(m.type_id), tgt_dims, grid);
            GtCorrespondence {
                position,
                displacement: [0, 1, 2].map(|a| target[a] - position[a]),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub lr: f32,
    pub steps: usize,
    pub temperature: f32,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LEARNING_RATE,
            steps: 100,
            temperature: crate::stmatch::DEFAULT_TEMPERATURE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: AntsParams<f32>,
    /// Loss of the sample used at each step, before that step's update.
    pub losses: Vec<f32>,
    /// Mean loss over the whole dataset after the last update.
    pub final_loss: f32,
}

/// Plain SGD from a seeded initialisation; each step draws one sample with
/// a generator derived from the same seed.
pub fn train(samples: &[AntsSample], config: &AntsConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::invalid("training needs at least one sample"));
    }
    config.validate()?;
    let mut params = ants_init(config, opts.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_0f5a_3b1e);
    let mut losses = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let sample = &samples[rng.random_range(0..samples.len())];
        let (loss, grads) = loss_and_gradient(&sample.input, &params, &sample.gts, opts.temperature)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite {
                step,
                loss: loss as f64,
            });
        }
        log::debug!("step {step}: loss {loss:.6}");
        losses.push(loss);
        params.sgd_step(&grads, opts.lr);
    }
    let mut total = 0.0f32;
    for s in samples {
        total += loss_at(&s.input, &params, &s.gts, opts.temperature)?;
    }
    let final_loss = total / samples.len() as f32;
    if !final_loss.is_finite() {
        return Err(Error::NonFinite {
            step: opts.steps,
            loss: final_loss as f64,
        });
    }
    Ok(TrainOutcome {
        params,
        losses,
        final_loss,
    })
}
