use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use longanim::flow_match::{train_affine, GaussianData, TrainOptions};
use longanim::guidance::{laplacian_sharpness, normalized_sharpness};
use longanim::harness::{drift_metric, gen_synthetic_scene, run_comparison, seam_metric, Experiment, RunManifest};
use longanim::io;
use longanim::latent_codec::{decode_standard, decode_uniform, encode_standard, encode_uniform, FrameSeq, Layout};
use longanim::pose_align::{apply_aug, retarget_bones, sample_aug_pair, AugParams};

#[derive(Parser)]
#[command(name = "longanim", version, about = "Toy-scale long-video sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ManifestArgs {
    /// JSON run manifest; defaults apply to missing fields.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ManifestArgs {
    fn load(&self) -> Result<RunManifest> {
        let mut m = match &self.manifest {
            Some(p) => RunManifest::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunManifest::default(),
        };
        if let Some(s) = self.seed {
            m.seed = s;
        }
        m.validate()?;
        Ok(m)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Latent codec utilities.
    Codec {
        #[command(subcommand)]
        action: CodecAction,
    },
    /// Render the synthetic scene to CSV and PGM.
    Scene {
        #[command(flatten)]
        manifest: ManifestArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a 1-D or multi-dimensional affine velocity field on Gaussian data.
    Train {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Target mean, one value per dimension.
        #[arg(long, value_delimiter = ',', default_value = "3")]
        mean: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        std: f64,
        #[arg(long, default_value_t = 3000)]
        steps: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate one long video with a single strategy.
    Sample {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// shift, sliding, final-frame or final-latent; falls back to the manifest.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run all four strategies; exits 0 only if the shift strategy has the lowest seam ratio.
    Compare {
        #[command(flatten)]
        manifest: ManifestArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seam (and optionally drift) statistics of a frames CSV.
    SeamReport {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        boundaries: Vec<usize>,
        /// Motion period for the drift report.
        #[arg(long)]
        period: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retarget driving poses to the bone lengths of a reference frame.
    Align {
        #[arg(long)]
        driving: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Frame of the reference file to take bone lengths from.
        #[arg(long, default_value_t = 0)]
        reference_frame: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Variance-of-Laplacian sharpness per frame.
    Sharpness {
        #[arg(long)]
        frames: PathBuf,
        /// Divide by the checkerboard reference value.
        #[arg(long)]
        normalized: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a seeded crop-and-scale pair to frames and their poses.
    Augment {
        #[command(flatten)]
        manifest: ManifestArgs,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CodecAction {
    /// Encode and decode the synthetic scene, checking the result is bit-exact.
    Roundtrip {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// `uniform` or `standard`.
        #[arg(long, default_value = "uniform")]
        layout: String,
        /// Frames CSV to use instead of the synthetic scene.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Where to write the latent CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn aug_json(p: &AugParams<f64>) -> serde_json::Value {
    serde_json::json!({
        "crop": { "x": p.crop.x, "y": p.crop.y, "w": p.crop.w, "h": p.crop.h },
        "scale": p.scale,
    })
}

fn codec_roundtrip(
    manifest: &ManifestArgs,
    layout: &str,
    frames: Option<&Path>,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let layout: Layout = layout.parse()?;
    let video: FrameSeq<f64> = match frames {
        Some(p) => io::read_frames_csv(p)?,
        None => {
            let m = manifest.load()?;
            let frames = match layout {
                Layout::Standard => m.frames() + 1,
                Layout::Uniform => m.frames(),
            };
            // The scene needs a multiple of 4 frames; the standard layout takes one more.
            let scene = gen_synthetic_scene::<f64>(&m.scene_config(frames.next_multiple_of(4)))?;
            scene.video.slice(0..frames)?
        }
    };
    let (latents, decoded) = match layout {
        Layout::Standard => {
            let z = encode_standard(&video)?;
            let d = decode_standard(&z)?;
            (z, d)
        }
        Layout::Uniform => {
            let z = encode_uniform(&video)?;
            let d = decode_uniform(&z)?;
            (z, d)
        }
    };
    if let Some(p) = out {
        io::write_latents_csv(p, &latents)?;
    }
    let exact = decoded == video;
    println!(
        "{} frames -> {} {} tokens of width {}: {}",
        video.len(),
        latents.len(),
        layout.name(),
        latents.dim(),
        if exact { "bit-exact" } else { "MISMATCH" }
    );
    Ok(if exact { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Codec { action: CodecAction::Roundtrip { manifest, layout, frames, out } } => {
            codec_roundtrip(&manifest, &layout, frames.as_deref(), out.as_deref())
        }
        Command::Scene { manifest, out } => {
            let m = manifest.load()?;
            let scene = gen_synthetic_scene::<f64>(&m.scene_config(m.frames()))?;
            std::fs::create_dir_all(&out)?;
            io::write_frames_csv(out.join("video.csv"), &scene.video)?;
            io::write_frames_csv(out.join("pose_frames.csv"), &scene.pose_frames)?;
            io::write_pose_csv(out.join("poses.csv"), &scene.poses)?;
            io::write_pgm(out.join("strip.pgm"), &io::frame_strip(&scene.video, 12))?;
            write_json(&out.join("manifest.json"), &serde_json::from_str(&m.to_json())?)?;
            println!("wrote {} frames of {} to {}", scene.video.len(), scene.shape(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { manifest, mean, std, steps, batch, lr, out } => {
            let m = manifest.load()?;
            ensure!(!mean.is_empty(), "--mean needs at least one value");
            let data = GaussianData { mean, std };
            let report = train_affine(&data, &TrainOptions { steps, batch, lr, seed: m.seed })?;
            std::fs::create_dir_all(&out)?;
            io::write_affine_csv(out.join("model.csv"), &report.model)?;
            io::write_loss_csv(out.join("loss.csv"), &report.losses)?;
            let first = report.losses.first().copied().unwrap_or(f64::NAN);
            let last = report.losses.last().copied().unwrap_or(f64::NAN);
            println!("trained {steps} steps: loss {first:.4} -> {last:.4}; c = {:?}", report.model.c);
            Ok(ExitCode::SUCCESS)
        }
        Command::Sample { manifest, strategy, out } => {
            let m = manifest.load()?;
            let Some(name) = strategy.or_else(|| m.strategy.clone()) else {
                bail!("no strategy given: pass --strategy or set `strategy` in the manifest");
            };
            let strategy = m.parse_strategy(&name)?;
            let outcome = Experiment::new(&m)?.run(strategy).with_context(|| format!("strategy {name} failed"))?;
            std::fs::create_dir_all(&out)?;
            io::write_frames_csv(out.join("video.csv"), &outcome.video)?;
            io::write_pgm(out.join("strip.pgm"), &io::frame_strip(&outcome.video, 12))?;
            let rows: Vec<Vec<String>> = outcome.boundaries.iter().map(|b| vec![b.to_string()]).collect();
            io::write_table(out.join("boundaries.csv"), &["frame"], &rows)?;
            if let Some(s) = &outcome.schedules {
                io::write_window_log(out.join("window_log.csv"), s)?;
            }
            let ratio = outcome.seam.ratio.map_or("nan".to_owned(), |r| format!("{r:.4}"));
            println!("{}: seam ratio {ratio}, drift slope {:.6}", strategy.name(), outcome.drift.slope);
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { manifest, out } => {
            let m = manifest.load()?;
            let report = run_comparison(&m, &out)?;
            println!("{:<14}{:>12}{:>12}{:>12}{:>14}", "strategy", "boundary", "interior", "ratio", "drift slope");
            for r in &report.rows {
                let ratio = r.seam_ratio.map_or("nan".to_owned(), |v| format!("{v:.4}"));
                println!(
                    "{:<14}{:>12.5}{:>12.5}{:>12}{:>14.6}",
                    r.strategy, r.boundary_disc, r.interior_disc, ratio, r.drift_slope
                );
            }
            let best = report.lowest_seam().unwrap_or("none");
            println!("lowest seam ratio: {best}; largest drift: {}", report.largest_drift().unwrap_or("none"));
            Ok(if report.shift_has_lowest_seam() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::SeamReport { frames, boundaries, period, out } => {
            let video: FrameSeq<f64> = io::read_frames_csv(&frames)?;
            let seam = seam_metric(&video, &boundaries)?;
            let mut rows: Vec<Vec<String>> = vec![
                vec!["boundary_disc".into(), seam.boundary_disc.to_string()],
                vec!["interior_disc".into(), seam.interior_disc.to_string()],
                vec!["seam_ratio".into(), seam.ratio.map_or("nan".to_owned(), |r| r.to_string())],
            ];
            rows.extend(seam.per_boundary.iter().map(|(b, d)| vec![format!("boundary_{b}"), d.to_string()]));
            if let Some(p) = period {
                let drift = drift_metric(&video, p)?;
                rows.push(vec!["drift_slope".into(), drift.slope.to_string()]);
                rows.extend(drift.distances.iter().enumerate().map(|(k, d)| vec![format!("cycle_{k}"), d.to_string()]));
            }
            io::write_table(&out, &["metric", "value"], &rows)?;
            println!("seam ratio {}", seam.ratio.map_or("nan".to_owned(), |r| format!("{r:.4}")));
            Ok(ExitCode::SUCCESS)
        }
        Command::Align { driving, reference, reference_frame, out } => {
            let driving = io::read_pose_csv::<f64>(&driving)?;
            let reference = io::read_pose_csv::<f64>(&reference)?;
            ensure!(
                reference_frame < reference.len(),
                "reference frame {reference_frame} out of range for {} frames",
                reference.len()
            );
            let aligned = retarget_bones(&reference.skeleton(reference_frame), &driving)?;
            io::write_pose_csv(&out, &aligned)?;
            println!("aligned {} frames to reference frame {reference_frame}", aligned.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sharpness { frames, normalized, out } => {
            let video: FrameSeq<f64> = io::read_frames_csv(&frames)?;
            let values = video
                .iter()
                .map(|f| {
                    let lum = f.luminance();
                    if normalized {
                        normalized_sharpness(&lum)
                    } else {
                        laplacian_sharpness(&lum)
                    }
                })
                .collect::<longanim::Result<Vec<f64>>>()?;
            io::write_sharpness_csv(&out, &values)?;
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            println!("{} frames, mean sharpness {mean:.6}", values.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Augment { manifest, frames, poses, out } => {
            let m = manifest.load()?;
            let video: FrameSeq<f64> = io::read_frames_csv(&frames)?;
            let (first, second) = sample_aug_pair::<f64>(m.seed);
            let shape = video.shape();
            let canvas = (shape.width, shape.height);
            std::fs::create_dir_all(&out)?;
            io::write_frames_csv(out.join("frames.csv"), &apply_aug(&video, &first, canvas)?)?;
            if let Some(p) = poses {
                let seq = io::read_pose_csv::<f64>(&p)?;
                io::write_pose_csv(out.join("poses.csv"), &apply_aug(&seq, &first, canvas)?)?;
            }
            write_json(
                &out.join("params.json"),
                &serde_json::json!({ "applied": aug_json(&first), "paired": aug_json(&second) }),
            )?;
            let c = &first.crop;
            println!("crop x {:.3} y {:.3} w {:.3} h {:.3}, scale {:.3}", c.x, c.y, c.w, c.h, first.scale);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
