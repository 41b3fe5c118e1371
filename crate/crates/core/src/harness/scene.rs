//! Synthetic periodic "dancer": a 13-joint skeleton swinging its limbs in
//! front of a smooth random backdrop.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::guidance::{box_blur, GuidanceBundle, DEFAULT_CODE_WIDTH};
use crate::latent_codec::{Frame, FrameSeq, FrameShape, LatentSeq, Layout, CHUNK};
use crate::linalg::Matrix;
use crate::pose_align::{PoseSequence, SkeletonTree};
use crate::scalar::Scalar;

/// Rest pose in normalised `(x, y)` image coordinates, y pointing down.
const REST_POSE: [[f64; 2]; 13] = [
    [0.50, 0.58],
    [0.50, 0.32],
    [0.50, 0.18],
    [0.38, 0.34],
    [0.30, 0.46],
    [0.26, 0.58],
    [0.62, 0.34],
    [0.70, 0.46],
    [0.74, 0.58],
    [0.44, 0.74],
    [0.42, 0.90],
    [0.56, 0.74],
    [0.58, 0.90],
];

const BACKDROP_LOW: f64 = 0.3;
const BACKDROP_SPAN: f64 = 0.3;
const BLOB_PEAK: f64 = 0.3;
const BLOB_CAP: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneConfig {
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Frames per motion cycle.
    pub period: usize,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || !self.frames.is_multiple_of(CHUNK) {
            return Err(Error::Config(format!(
                "scene length must be a positive multiple of {CHUNK}, got {}",
                self.frames
            )));
        }
        if self.height < 3 || self.width < 3 {
            return Err(Error::Config(format!("scene must be at least 3x3, got {}x{}", self.height, self.width)));
        }
        if self.period == 0 {
            return Err(Error::Config("period must be positive".into()));
        }
        Ok(())
    }
}

/// Everything the harness needs from one synthetic clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene<T> {
    pub config: SceneConfig,
    /// Backdrop plus rendered body.
    pub video: FrameSeq<T>,
    /// Body rendering alone on black: the pose-conditioning frames.
    pub pose_frames: FrameSeq<T>,
    pub poses: PoseSequence<T>,
    pub backdrop: Frame<T>,
}

/// Per-seed motion style.
#[derive(Clone, Copy, Debug)]
struct Choreography {
    sway: f64,
    bob: f64,
    arm_swing: f64,
    leg_swing: f64,
}

impl Choreography {
    fn from_rng(rng: &mut ChaCha8Rng) -> Self {
        let mut jitter = |base: f64| base * rng.random_range(0.85..1.15);
        Self { sway: jitter(0.08), bob: jitter(0.02), arm_swing: jitter(0.9), leg_swing: jitter(0.35) }
    }

    /// Joint positions in pixels at phase angle `phi`.
    fn pose(&self, phi: f64, width: usize, height: usize) -> Vec<[f64; 2]> {
        let mut p: Vec<[f64; 2]> = REST_POSE.to_vec();
        let rotate = |p: &mut [[f64; 2]], pivot: usize, joints: &[usize], angle: f64| {
            let c = p[pivot];
            let (s, co) = angle.sin_cos();
            for &j in joints {
                let d = [p[j][0] - c[0], p[j][1] - c[1]];
                p[j] = [c[0] + co * d[0] - s * d[1], c[1] + s * d[0] + co * d[1]];
            }
        };
        rotate(&mut p, 3, &[4, 5], self.arm_swing * phi.sin());
        rotate(&mut p, 4, &[5], 0.5 * self.arm_swing * (phi + 1.0).sin());
        rotate(&mut p, 6, &[7, 8], -self.arm_swing * phi.sin());
        rotate(&mut p, 7, &[8], -0.5 * self.arm_swing * (phi + 1.0).sin());
        rotate(&mut p, 0, &[9, 10], self.leg_swing * phi.sin());
        rotate(&mut p, 9, &[10], 0.5 * self.leg_swing * (phi + 0.5).sin());
        rotate(&mut p, 0, &[11, 12], -self.leg_swing * phi.sin());
        rotate(&mut p, 11, &[12], -0.5 * self.leg_swing * (phi + 0.5).sin());
        let dx = self.sway * phi.sin();
        let dy = self.bob * (2.0 * phi).sin();
        p.iter().map(|q| [(q[0] + dx) * width as f64, (q[1] + dy) * height as f64]).collect()
    }
}

/// Gaussian blob per joint, summed and capped.
fn render_pose<T: Scalar>(joints: &[[f64; 2]], shape: FrameShape) -> Frame<T> {
    let scale = shape.width.min(shape.height) as f64 / 32.0;
    let two_sigma2 = 3.0 * scale * scale;
    let mut out = Frame::filled(shape, T::zero());
    for y in 0..shape.height {
        for x in 0..shape.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let v: f64 = joints
                .iter()
                .map(|j| BLOB_PEAK * (-((px - j[0]).powi(2) + (py - j[1]).powi(2)) / two_sigma2).exp())
                .sum();
            for c in 0..shape.channels {
                out.set(y, x, c, T::lit(v.min(BLOB_CAP)));
            }
        }
    }
    out
}

/// Renders the scene. Frame `k` depends only on `k mod period` and the
/// seed, so scenes of different lengths agree on their common prefix.
pub fn gen_synthetic_scene<T: Scalar>(cfg: &SceneConfig) -> Result<Scene<T>> {
    cfg.validate()?;
    let shape = FrameShape::new(cfg.height, cfg.width, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise =
        Matrix::from_fn(cfg.height, cfg.width, |_, _| T::lit(BACKDROP_LOW + BACKDROP_SPAN * rng.random::<f64>()));
    let backdrop = Frame::from_plane(&box_blur(&noise, 2))?;
    let dance = Choreography::from_rng(&mut rng);

    let mut joints = Vec::with_capacity(cfg.frames);
    let mut pose_frames = Vec::with_capacity(cfg.frames);
    let mut video = Vec::with_capacity(cfg.frames);
    for k in 0..cfg.frames {
        let phi = TAU * (k % cfg.period) as f64 / cfg.period as f64;
        let j = dance.pose(phi, cfg.width, cfg.height);
        let body = render_pose::<T>(&j, shape);
        let frame = Frame::new(shape, backdrop.as_slice().iter().zip(body.as_slice()).map(|(&b, &p)| b + p).collect())?;
        joints.push(j.into_iter().map(|q| [T::lit(q[0]), T::lit(q[1])]).collect());
        pose_frames.push(body);
        video.push(frame);
    }
    Ok(Scene {
        config: *cfg,
        video: FrameSeq::new(video)?,
        pose_frames: FrameSeq::new(pose_frames)?,
        poses: PoseSequence::new(SkeletonTree::body(), joints)?,
        backdrop,
    })
}

impl<T: Scalar> Scene<T> {
    pub fn shape(&self) -> FrameShape {
        self.video.shape()
    }

    /// The reference image: the first video frame.
    pub fn reference(&self) -> &Frame<T> {
        self.video.frame(0)
    }

    /// Guidance carrying the reference image and its pose, with no per-frame codes.
    pub fn guidance(&self) -> Result<GuidanceBundle<T>> {
        let shape = self.shape();
        let one = |f: &Frame<T>| {
            LatentSeq::new(vec![LatentSeq::lone_frame_token(f)], Layout::Standard)
                .and_then(|s| s.with_frame_shape(shape))
        };
        let mut g = GuidanceBundle::reference_only(one(self.reference())?, DEFAULT_CODE_WIDTH)?;
        g.ref_pose = Some(one(self.pose_frames.frame(0))?);
        Ok(g)
    }
}
