//! Run manifests and the four-strategy comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::animator::{WindowedAnimator, DEFAULT_BLOCK, DEFAULT_CONSENSUS_GAIN, DEFAULT_COUPLING};
use super::metrics::{drift_metric, seam_metric, DriftReport, SeamReport};
use super::scene::{gen_synthetic_scene, Scene, SceneConfig};
use crate::error::{Error, Result};
use crate::flow_match::standard_normal_latents;
use crate::guidance::GuidanceBundle;
use crate::io;
use crate::latent_codec::{decode_uniform, encode_uniform, FrameSeq, LatentSeq, Layout, CHUNK};
use crate::shift_sampler::{
    baseline_final_frame, baseline_final_latent, baseline_sliding, denoise_long, final_frame_boundaries,
    final_frame_geometry, sliding_clip_starts, LongRunConfig, Strategy, WindowSchedule,
};

/// Everything that determines a run. All randomness derives from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub seed: u64,
    /// Latent tokens `l`; the video has `4 l` frames.
    pub latent_len: usize,
    pub height: usize,
    pub width: usize,
    /// Window length `f` in tokens.
    pub window: usize,
    /// Per-timestep shift `alpha`.
    pub shift: usize,
    pub steps: usize,
    pub cfg_scale: f64,
    /// Sliding-window overlap in tokens.
    pub overlap: usize,
    pub scene_period: usize,
    pub block: usize,
    pub coupling: f64,
    pub consensus_gain: f64,
    /// Strategy for single-strategy runs: `shift`, `sliding`, `final-frame` or `final-latent`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            seed: 0,
            latent_len: 24,
            height: 32,
            width: 32,
            window: 8,
            shift: 3,
            steps: 8,
            cfg_scale: 1.0,
            overlap: 4,
            scene_period: 16,
            block: DEFAULT_BLOCK,
            coupling: DEFAULT_COUPLING,
            consensus_gain: DEFAULT_CONSENSUS_GAIN,
            strategy: None,
        }
    }
}

pub const ALL_STRATEGIES: [&str; 4] = ["shift", "sliding", "final-frame", "final-latent"];

impl RunManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn frames(&self) -> usize {
        CHUNK * self.latent_len
    }

    pub fn scene_config(&self, frames: usize) -> SceneConfig {
        SceneConfig { seed: self.seed, frames, height: self.height, width: self.width, period: self.scene_period }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene_config(self.frames()).validate()?;
        if self.block == 0 {
            return Err(Error::Config("block must be positive".into()));
        }
        self.long_run_config(Strategy::PositionShift).validate(self.latent_len)?;
        if !self.latent_len.is_multiple_of(self.window) {
            return Err(Error::Tiling { l: self.latent_len, f: self.window });
        }
        sliding_clip_starts(self.latent_len, self.window, self.overlap)?;
        if self.frames() < 2 * self.scene_period {
            return Err(Error::Config("video must span at least two scene periods".into()));
        }
        if let Some(s) = &self.strategy {
            self.parse_strategy(s)?;
        }
        Ok(())
    }

    pub fn parse_strategy(&self, name: &str) -> Result<Strategy> {
        Ok(match name.parse::<Strategy>()? {
            Strategy::SlidingWindow { .. } => Strategy::SlidingWindow { overlap: self.overlap },
            s => s,
        })
    }

    pub fn long_run_config(&self, strategy: Strategy) -> LongRunConfig<f64> {
        LongRunConfig {
            f: self.window,
            alpha: self.shift,
            steps: self.steps,
            cfg_scale: self.cfg_scale,
            strategy,
            single_window: false,
        }
    }

    pub fn animator(&self) -> WindowedAnimator<f64> {
        let mut a = WindowedAnimator::new(crate::latent_codec::FrameShape::new(self.height, self.width, 1));
        a.block = self.block;
        a.coupling = self.coupling;
        a.consensus_gain = self.consensus_gain;
        a
    }
}

/// Shared inputs for every strategy of one manifest.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub manifest: RunManifest,
    pub scene: Scene<f64>,
    pub pose_latents: LatentSeq<f64>,
    pub guidance: GuidanceBundle<f64>,
    pub noise: LatentSeq<f64>,
}

const EXTRA_NOISE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

impl Experiment {
    pub fn new(manifest: &RunManifest) -> Result<Self> {
        manifest.validate()?;
        let scene = gen_synthetic_scene::<f64>(&manifest.scene_config(manifest.frames()))?;
        let pose_latents = encode_uniform(&scene.pose_frames)?;
        let guidance = scene.guidance()?;
        let noise = standard_normal_latents(manifest.latent_len, pose_latents.dim(), Layout::Uniform, manifest.seed)?
            .with_frame_shape(scene.shape())?;
        Ok(Self { manifest: manifest.clone(), scene, pose_latents, guidance, noise })
    }

    /// Runs one strategy and scores it.
    pub fn run(&self, strategy: Strategy) -> Result<StrategyOutcome> {
        let m = &self.manifest;
        let field = m.animator();
        let cfg = m.long_run_config(strategy);
        let frames = m.frames();
        let (video, boundaries, schedules) = match strategy {
            Strategy::PositionShift => {
                let run = denoise_long(&field, &self.pose_latents, &self.guidance, &cfg, &self.noise)?;
                let last = run.schedules.last().expect("at least one timestep");
                let b: Vec<usize> = last.boundaries().into_iter().filter(|&s| s > 0).map(|s| CHUNK * s).collect();
                (decode_uniform(&run.latents)?, b, Some(run.schedules))
            }
            Strategy::SlidingWindow { overlap } => {
                let z = baseline_sliding(&field, &self.pose_latents, &self.guidance, &cfg, &self.noise)?;
                let starts = sliding_clip_starts(m.latent_len, m.window, overlap)?;
                let mut b: Vec<usize> = starts[1..].iter().map(|&s| CHUNK * s).collect();
                b.extend(starts[..starts.len() - 1].iter().map(|&s| CHUNK * (s + m.window)));
                b.sort_unstable();
                b.dedup();
                (decode_uniform(&z)?, b, None)
            }
            Strategy::FinalLatent => {
                let z = baseline_final_latent(&field, &self.pose_latents, &self.guidance, &cfg, &self.noise)?;
                let b = (1..m.latent_len / m.window).map(|k| CHUNK * m.window * k).collect();
                (decode_uniform(&z)?, b, None)
            }
            Strategy::FinalFrame => {
                let (_, stride) = final_frame_geometry(m.window);
                let segments = (frames - 1).div_ceil(stride);
                let needed = 1 + segments * stride;
                let long = gen_synthetic_scene::<f64>(&m.scene_config(needed.next_multiple_of(CHUNK)))?;
                let pose_frames = long.pose_frames.slice(0..needed)?;
                let extra = segments * m.window - m.latent_len;
                let mut tokens = self.noise.tokens().to_vec();
                if extra > 0 {
                    let more = standard_normal_latents::<f64>(
                        extra,
                        self.noise.dim(),
                        Layout::Uniform,
                        m.seed ^ EXTRA_NOISE_STREAM,
                    )?;
                    tokens.extend(more.into_tokens());
                }
                let noise = self.noise.with_tokens(tokens)?;
                let video = baseline_final_frame(&field, &pose_frames, &self.guidance, &cfg, &noise)?;
                let video = video.slice(0..frames)?;
                let b = final_frame_boundaries(segments, m.window).into_iter().filter(|&b| b < frames).collect();
                (video, b, None)
            }
        };
        let seam = seam_metric(&video, &boundaries)?;
        let drift = drift_metric(&video, m.scene_period)?;
        Ok(StrategyOutcome { strategy, video, boundaries, seam, drift, schedules })
    }
}

#[derive(Clone, Debug)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub video: FrameSeq<f64>,
    /// Frame indices where separately denoised pieces meet.
    pub boundaries: Vec<usize>,
    pub seam: SeamReport<f64>,
    pub drift: DriftReport<f64>,
    pub schedules: Option<Vec<WindowSchedule>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    pub boundary_disc: f64,
    pub interior_disc: f64,
    pub seam_ratio: Option<f64>,
    pub drift_slope: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<SummaryRow>,
}

impl ComparisonReport {
    fn row(&self, name: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.strategy == name)
    }

    /// Strategy with the lowest seam ratio; rows without a ratio rank last.
    pub fn lowest_seam(&self) -> Option<&str> {
        self.rows
            .iter()
            .min_by(|a, b| {
                let key = |r: &SummaryRow| r.seam_ratio.unwrap_or(f64::INFINITY);
                key(a).total_cmp(&key(b))
            })
            .map(|r| r.strategy.as_str())
    }

    pub fn largest_drift(&self) -> Option<&str> {
        self.rows.iter().max_by(|a, b| a.drift_slope.total_cmp(&b.drift_slope)).map(|r| r.strategy.as_str())
    }

    pub fn shift_has_lowest_seam(&self) -> bool {
        self.lowest_seam() == Some("shift") && self.row("shift").is_some_and(|r| r.seam_ratio.is_some())
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".to_owned(), |v| v.to_string())
}

fn write_outcome(dir: &Path, o: &StrategyOutcome) -> Result<()> {
    let name = o.strategy.name();
    let seam_rows: Vec<Vec<String>> =
        o.seam.per_boundary.iter().map(|(b, d)| vec![b.to_string(), d.to_string()]).collect();
    io::write_table(dir.join(format!("seam_{name}.csv")), &["boundary", "disc"], &seam_rows)?;
    let drift_rows: Vec<Vec<String>> =
        o.drift.distances.iter().enumerate().map(|(k, d)| vec![k.to_string(), d.to_string()]).collect();
    io::write_table(dir.join(format!("drift_{name}.csv")), &["cycle", "distance"], &drift_rows)?;
    io::write_pgm(dir.join(format!("strip_{name}.pgm")), &io::frame_strip(&o.video, 12))?;
    if let Some(s) = &o.schedules {
        io::write_window_log(dir.join("window_log.csv"), s)?;
    }
    Ok(())
}

/// Runs all four strategies on one scene and writes `summary.csv`, per-strategy
/// seam/drift CSVs, frame strips and the shift window log into `out_dir`.
pub fn run_comparison(manifest: &RunManifest, out_dir: impl AsRef<Path>) -> Result<ComparisonReport> {
    let out_dir = out_dir.as_ref();
    let exp = Experiment::new(manifest)?;
    let strategies: Vec<Strategy> = ALL_STRATEGIES.iter().map(|s| manifest.parse_strategy(s)).collect::<Result<_>>()?;
    let outcomes: Vec<Result<StrategyOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = strategies
            .iter()
            .map(|&s| {
                scope.spawn({
                    let exp = &exp;
                    move || exp.run(s)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("strategy thread panicked")).collect()
    });
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for (s, outcome) in strategies.iter().zip(outcomes) {
        let o = outcome.map_err(|e| Error::Config(format!("strategy {s} failed: {e}")))?;
        write_outcome(out_dir, &o)?;
        rows.push(SummaryRow {
            strategy: s.name().to_owned(),
            boundary_disc: o.seam.boundary_disc,
            interior_disc: o.seam.interior_disc,
            seam_ratio: o.seam.ratio,
            drift_slope: o.drift.slope,
        });
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.strategy.clone(),
                r.boundary_disc.to_string(),
                r.interior_disc.to_string(),
                fmt_opt(r.seam_ratio),
                r.drift_slope.to_string(),
            ]
        })
        .collect();
    io::write_table(
        out_dir.join("summary.csv"),
        &["strategy", "boundary_disc", "interior_disc", "seam_ratio", "drift_slope"],
        &table,
    )?;
    Ok(ComparisonReport { rows })
}
