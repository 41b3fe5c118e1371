//! Synthetic scenes, seam/drift metrics and the strategy comparison.

mod animator;
mod metrics;
mod runner;
mod scene;

pub use animator::{WindowedAnimator, DEFAULT_BLOCK, DEFAULT_CONSENSUS_GAIN, DEFAULT_COUPLING};
pub use metrics::{drift_metric, frame_distance, seam_metric, DriftReport, SeamReport};
pub use runner::{
    run_comparison, ComparisonReport, Experiment, RunManifest, StrategyOutcome, SummaryRow, ALL_STRATEGIES,
};
pub use scene::{gen_synthetic_scene, Scene, SceneConfig};
