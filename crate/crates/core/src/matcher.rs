//! Name-keyed registry of matchers turning a pair of feature pyramids into
//! transferred keypoints.

use crate::ants::{ants_forward, AntsParams};
use crate::benchmark::GtPair;
use crate::error::{Error, Result};
use crate::eval::PairPrediction;
use crate::features::{stack_correlations, FeaturePyramid};
use crate::keypoint::{SpaceTimeKeypoint, VideoDims};
use crate::sequential::{dtw_align, frame_embeddings, nn_align, sequential_transfer, AlignmentRecord};
use crate::stmatch::{argmax_flow, stmatch_volume, transfer_keypoints, DisplacementFlow, FlowSampling};

pub const ST_MATCH: &str = "st-match";
pub const SEQUENTIAL_NN: &str = "sequential-nn";
pub const SEQUENTIAL_DTW: &str = "sequential-dtw";
pub const ANTS: &str = "ants";
/// Reserved for the transformer matcher; resolving it always fails.
pub const ST_CATS: &str = "st-cats";

pub const REGISTERED: [&str; 4] = [ST_MATCH, SEQUENTIAL_NN, SEQUENTIAL_DTW, ANTS];

/// One source/target video pair and the source keypoints to transfer.
pub struct PairInput<'a> {
    pub pyr_s: &'a FeaturePyramid,
    pub pyr_t: &'a FeaturePyramid,
    pub keypoints: &'a [SpaceTimeKeypoint],
    pub src_dims: VideoDims,
    pub tgt_dims: VideoDims,
    pub sampling: FlowSampling,
}

#[derive(Debug, Clone)]
pub struct MatchOutput {
    pub keypoints: Vec<SpaceTimeKeypoint>,
    /// Dense space-time flow, for matchers that produce one.
    pub flow: Option<DisplacementFlow>,
    /// Frame alignment, for sequential matchers.
    pub alignment: Option<AlignmentRecord>,
}

pub trait Matcher: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, pair: &PairInput<'_>) -> Result<MatchOutput>;
}

fn flow_output(flow: DisplacementFlow, pair: &PairInput<'_>) -> Result<MatchOutput> {
    let keypoints = transfer_keypoints(&flow, pair.keypoints, pair.src_dims, pair.tgt_dims, pair.sampling)?;
    Ok(MatchOutput {
        keypoints,
        flow: Some(flow),
        alignment: None,
    })
}

pub struct StMatch;

impl Matcher for StMatch {
    fn name(&self) -> &'static str {
        ST_MATCH
    }

    fn run(&self, pair: &PairInput<'_>) -> Result<MatchOutput> {
        let corr = stack_correlations(pair.pyr_s, pair.pyr_t)?;
        flow_output(argmax_flow(&stmatch_volume(&corr)), pair)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameAligner {
    NearestNeighbour,
    TimeWarping,
}

/// Frame alignment on pooled embeddings of the deepest layer, then
/// per-frame spatial matching.
pub struct Sequential(pub FrameAligner);

impl Matcher for Sequential {
    fn name(&self) -> &'static str {
        match self.0 {
            FrameAligner::NearestNeighbour => SEQUENTIAL_NN,
            FrameAligner::TimeWarping => SEQUENTIAL_DTW,
        }
    }

    fn run(&self, pair: &PairInput<'_>) -> Result<MatchOutput> {
        let deepest = pair.pyr_s.m() - 1;
        let es = frame_embeddings(pair.pyr_s, deepest)?;
        let et = frame_embeddings(pair.pyr_t, deepest)?;
        let (alignment, total_cost) = match self.0 {
            FrameAligner::NearestNeighbour => {
                let a = nn_align(&es, &et)?;
                let cost = a
                    .map
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| {
                        es.frame(i)
                            .iter()
                            .zip(et.frame(j))
                            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                            .sum::<f64>()
                    })
                    .sum();
                (a, cost)
            }
            FrameAligner::TimeWarping => dtw_align(&es, &et)?,
        };
        let keypoints = sequential_transfer(
            &alignment,
            pair.pyr_s,
            pair.pyr_t,
            pair.keypoints,
            pair.src_dims,
            pair.tgt_dims,
            pair.sampling,
        )?;
        Ok(MatchOutput {
            keypoints,
            flow: None,
            alignment: Some(AlignmentRecord {
                map: alignment.map,
                total_cost,
            }),
        })
    }
}

/// Trained aggregation network, decoded by argmax like st-MATCH.
pub struct Ants {
    pub params: AntsParams<f32>,
}

impl Matcher for Ants {
    fn name(&self) -> &'static str {
        ANTS
    }

    fn run(&self, pair: &PairInput<'_>) -> Result<MatchOutput> {
        let corr = stack_correlations(pair.pyr_s, pair.pyr_t)?;
        let mv = ants_forward(&corr, pair.pyr_s, pair.pyr_t, &self.params)?;
        flow_output(argmax_flow(&mv), pair)
    }
}

/// Transfers the source side of every ground-truth match of `pair`, in
/// order.
pub fn predict_pair(
    matcher: &dyn Matcher,
    pair: &GtPair,
    pyr_s: &FeaturePyramid,
    pyr_t: &FeaturePyramid,
    src_dims: VideoDims,
    tgt_dims: VideoDims,
    sampling: FlowSampling,
) -> Result<(PairPrediction, MatchOutput)> {
    let keypoints: Vec<_> = pair.matches.iter().map(|m| m.src.keypoint(m.type_id)).collect();
    let out = matcher.run(&PairInput {
        pyr_s,
        pyr_t,
        keypoints: &keypoints,
        src_dims,
        tgt_dims,
        sampling,
    })?;
    let pred = PairPrediction {
        src: pair.src.clone(),
        tgt: pair.tgt.clone(),
        keypoints: out.keypoints.clone(),
    };
    Ok((pred, out))
}

/// Resolves a registered name. `ants` needs trained parameters.
pub fn build_matcher(name: &str, ants_params: Option<AntsParams<f32>>) -> Result<Box<dyn Matcher>> {
    match name {
        ST_MATCH => Ok(Box::new(StMatch)),
        SEQUENTIAL_NN => Ok(Box::new(Sequential(FrameAligner::NearestNeighbour))),
        SEQUENTIAL_DTW => Ok(Box::new(Sequential(FrameAligner::TimeWarping))),
        ANTS => {
            let params = ants_params.ok_or_else(|| Error::invalid("the ants matcher needs trained parameters"))?;
            Ok(Box::new(Ants { params }))
        }
        ST_CATS => Err(Error::UnimplementedMatcher(name.to_string())),
        other => Err(Error::UnknownMatcher(format!(
            "{other} (registered: {})",
            REGISTERED.join(", ")
        ))),
    }
}

/// Checks a name without building the matcher.
pub fn check_matcher_name(name: &str) -> Result<()> {
    match name {
        n if REGISTERED.contains(&n) => Ok(()),
        ST_CATS => Err(Error::UnimplementedMatcher(name.to_string())),
        other => Err(Error::UnknownMatcher(other.to_string())),
    }
}
