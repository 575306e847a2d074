//! Space-time semantic correspondence between pairs of videos.
//!
//! Features from several backbone layers are resampled onto a shared
//! `T x H x W` grid ([`features`]), correlated cell-to-cell into an
//! `M x (THW)^2` volume, and turned into a `(THW)^2` match prediction either
//! by mean pooling ([`stmatch`]) or by a small 3D convolutional aggregation
//! network ([`ants`]). Sequential baselines first align frames with nearest
//! neighbour search or dynamic time warping ([`sequential`]).
//! Predictions are scored with the T@k-PCK@alpha metric ([`eval`]) on pairs
//! built from keypoint annotations at key moments ([`benchmark`]).

pub mod ants;
pub mod benchmark;
pub mod error;
pub mod eval;
pub mod features;
pub mod keypoint;
pub mod matcher;
pub mod sequential;
pub mod stmatch;
pub mod tensor;

pub use error::{Error, Result};
pub use features::{assemble_hyperpixel, correlation_layer, stack_correlations, CorrVolume, FeaturePyramid};
pub use keypoint::{SpaceTimeKeypoint, VideoDims};
pub use stmatch::{argmax_flow, soft_argmax_flow, stmatch_volume, transfer_keypoints, DisplacementFlow, FlowSampling, MatchVolume};
pub use tensor::{GridShape, Tensor};
