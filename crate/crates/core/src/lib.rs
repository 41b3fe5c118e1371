//! Toy-scale long-video animation core: a lossless chunked latent codec,
//! flow matching with an Euler/CFG sampler, position-shift window
//! scheduling with three baselines, guidance signals, pose alignment and an
//! experiment harness.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

pub mod error;
pub mod flow_match;
pub mod guidance;
pub mod harness;
pub mod io;
pub mod latent_codec;
pub mod linalg;
pub mod pose_align;
pub mod scalar;
pub mod shift_sampler;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FrameF64 = latent_codec::Frame<f64>;
pub type FrameSeqF64 = latent_codec::FrameSeq<f64>;
pub type FrameSeqF32 = latent_codec::FrameSeq<f32>;
pub type LatentSeqF64 = latent_codec::LatentSeq<f64>;
pub type LatentSeqF32 = latent_codec::LatentSeq<f32>;
pub type MatrixF64 = linalg::Matrix<f64>;
pub type GuidanceBundleF64 = guidance::GuidanceBundle<f64>;
pub type ConditioningF64 = flow_match::Conditioning<f64>;
pub type AffineFieldF64 = flow_match::AffineField<f64>;
pub type PoseSequenceF64 = pose_align::PoseSequence<f64>;
pub type SkeletonF64 = pose_align::Skeleton<f64>;
pub type AugParamsF64 = pose_align::AugParams<f64>;
