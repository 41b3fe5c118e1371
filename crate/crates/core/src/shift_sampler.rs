//! Long-sequence denoising with windows shorter than the sequence.
//!
//! [`denoise_long`] shifts non-overlapping circular windows by `alpha` tokens
//! every timestep so no window boundary stays put. The baselines process
//! fixed clips: overlapping with cross-fade, or chained segment by segment.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flow_match::{euler_update, guided_velocity, Conditioning, SamplerConfig, VelocityField};
use crate::guidance::GuidanceBundle;
use crate::latent_codec::{decode_uniform, encode_uniform, Frame, FrameSeq, LatentSeq, Layout, CHUNK};
use crate::scalar::Scalar;

/// Circular run of `length` token indices starting at `start` in a sequence of `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub length: usize,
    pub l: usize,
}

impl Window {
    pub fn wraps(&self) -> bool {
        self.start + self.length > self.l
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.length).map(|i| (self.start + i) % self.l).collect()
    }
}

/// The windows used at one timestep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSchedule {
    pub windows: Vec<Window>,
    pub l: usize,
    pub f: usize,
    pub alpha_sum: usize,
}

impl WindowSchedule {
    pub fn starts(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.start).collect()
    }

    /// Token positions `i` where tokens `i - 1` and `i` (circularly) fall in different windows.
    pub fn boundaries(&self) -> Vec<usize> {
        if self.windows.len() < 2 {
            return Vec::new();
        }
        let mut b = self.starts();
        b.sort_unstable();
        b
    }
}

/// Non-overlapping windows of length `f` starting at `alpha_sum mod l`.
pub fn plan_windows(l: usize, f: usize, alpha_sum: usize) -> Result<WindowSchedule> {
    if f == 0 || f >= l {
        return Err(Error::Config(format!("window length {f} must satisfy 0 < f < l = {l}")));
    }
    if !l.is_multiple_of(f) {
        return Err(Error::Tiling { l, f });
    }
    Ok(schedule_unchecked(l, f, alpha_sum))
}

fn schedule_unchecked(l: usize, f: usize, alpha_sum: usize) -> WindowSchedule {
    let s = alpha_sum % l;
    let windows = (0..l / f).map(|w| Window { start: (s + w * f) % l, length: f, l }).collect();
    WindowSchedule { windows, l, f, alpha_sum }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    PositionShift,
    SlidingWindow { overlap: usize },
    FinalFrame,
    FinalLatent,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::PositionShift => "shift",
            Strategy::SlidingWindow { .. } => "sliding",
            Strategy::FinalFrame => "final-frame",
            Strategy::FinalLatent => "final-latent",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Parses a strategy name; sliding windows get an overlap of 0 to be filled in by the caller.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shift" | "position-shift" | "position_shift" => Ok(Strategy::PositionShift),
            "sliding" | "sliding-window" | "sliding_window" => Ok(Strategy::SlidingWindow { overlap: 0 }),
            "final-frame" | "final_frame" => Ok(Strategy::FinalFrame),
            "final-latent" | "final_latent" => Ok(Strategy::FinalLatent),
            other => Err(Error::Parse(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LongRunConfig<T> {
    /// Window (model sequence) length in tokens.
    pub f: usize,
    /// Shift added to the window start after every timestep.
    pub alpha: usize,
    pub steps: usize,
    pub cfg_scale: T,
    pub strategy: Strategy,
    /// Allow `f = l`: one window spanning the whole sequence.
    pub single_window: bool,
}

impl<T: Scalar> LongRunConfig<T> {
    pub fn new(f: usize, alpha: usize, steps: usize, strategy: Strategy) -> Self {
        Self { f, alpha, steps, cfg_scale: T::one(), strategy, single_window: false }
    }

    fn sampler(&self) -> SamplerConfig<T> {
        SamplerConfig { steps: self.steps, cfg_scale: self.cfg_scale, seed: 0 }
    }

    /// Checks the configuration against a latent length `l`.
    pub fn validate(&self, l: usize) -> Result<()> {
        self.sampler().validate()?;
        if self.f == 0 {
            return Err(Error::Config("window length must be positive".into()));
        }
        if self.single_window {
            if self.f != l {
                return Err(Error::Config(format!("single-window mode needs f = l, got f = {} and l = {l}", self.f)));
            }
            return Ok(());
        }
        if self.f >= l {
            return Err(Error::Config(format!("window length {} must be below latent length {l}", self.f)));
        }
        if self.strategy == Strategy::PositionShift && (self.alpha == 0 || self.alpha >= self.f) {
            return Err(Error::Config(format!("shift {} must satisfy 0 < alpha < f = {}", self.alpha, self.f)));
        }
        Ok(())
    }
}

/// Output of [`denoise_long`] with the schedule used at each timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftRun<T> {
    pub latents: LatentSeq<T>,
    pub schedules: Vec<WindowSchedule>,
}

fn check_inputs<T: Scalar>(pose: &LatentSeq<T>, noise: &LatentSeq<T>) -> Result<()> {
    if pose.layout() != Layout::Uniform {
        return Err(Error::LayoutMismatch { expected: Layout::Uniform.name(), actual: pose.layout().name() });
    }
    pose.check_same_shape(noise)
}

fn window_conditioning<T: Scalar>(
    guidance: &GuidanceBundle<T>,
    pose: &LatentSeq<T>,
    idx: &[usize],
) -> Result<Conditioning<T>> {
    Conditioning::new(guidance.clone(), Some(pose.clone())).slice_tokens(idx)
}

/// Position-shift denoising over the whole uniform-layout sequence.
///
/// At each timestep `k` the sequence is cut into windows from
/// [`plan_windows`]`(l, f, k * alpha)`; each window gets one Euler step with
/// its own slice of latents, pose tokens and frame codes.
pub fn denoise_long<T, F>(
    field: &F,
    pose_latents: &LatentSeq<T>,
    guidance: &GuidanceBundle<T>,
    cfg: &LongRunConfig<T>,
    noise: &LatentSeq<T>,
) -> Result<ShiftRun<T>>
where
    T: Scalar,
    F: VelocityField<T> + ?Sized,
{
    if cfg.strategy != Strategy::PositionShift {
        return Err(Error::Config(format!("denoise_long runs the shift strategy, got {}", cfg.strategy)));
    }
    check_inputs(pose_latents, noise)?;
    let l = noise.len();
    cfg.validate(l)?;
    let sampler = cfg.sampler();
    let h = sampler.step_size();
    let mut z = noise.clone();
    let mut schedules = Vec::with_capacity(cfg.steps);
    let mut alpha_sum = 0usize;
    for k in 0..cfg.steps {
        let schedule =
            if cfg.single_window { schedule_unchecked(l, l, alpha_sum) } else { plan_windows(l, cfg.f, alpha_sum)? };
        let t = sampler.time(k);
        for (w, window) in schedule.windows.iter().enumerate() {
            let idx = window.indices();
            let mut zw = z.gather(&idx)?;
            let cond = window_conditioning(guidance, pose_latents, &idx)?;
            let u = guided_velocity(field, field, &zw, &cond, t, cfg.cfg_scale)?;
            euler_update(&mut zw, &u, h);
            if !zw.is_finite() {
                return Err(Error::NumericOverflow { timestep: k, window: Some(w) });
            }
            z.scatter(&idx, &zw)?;
        }
        schedules.push(schedule);
        alpha_sum += cfg.alpha;
    }
    Ok(ShiftRun { latents: z, schedules })
}

/// The whole sequence denoised as one block; the reference for window-partition tests.
pub fn windowless_sweep<T, F>(
    field: &F,
    pose_latents: &LatentSeq<T>,
    guidance: &GuidanceBundle<T>,
    steps: usize,
    cfg_scale: T,
    noise: &LatentSeq<T>,
) -> Result<LatentSeq<T>>
where
    T: Scalar,
    F: VelocityField<T> + ?Sized,
{
    check_inputs(pose_latents, noise)?;
    let sampler = SamplerConfig { steps, cfg_scale, seed: 0 };
    let all: Vec<usize> = (0..noise.len()).collect();
    denoise_clip(field, &window_conditioning(guidance, pose_latents, &all)?, &sampler, noise)
}

fn denoise_clip<T, F>(
    field: &F,
    cond: &Conditioning<T>,
    sampler: &SamplerConfig<T>,
    z0: &LatentSeq<T>,
) -> Result<LatentSeq<T>>
where
    T: Scalar,
    F: VelocityField<T> + ?Sized,
{
    sampler.validate()?;
    let h = sampler.step_size();
    let mut z = z0.clone();
    for k in 0..sampler.steps {
        let u = guided_velocity(field, field, &z, cond, sampler.time(k), sampler.cfg_scale)?;
        euler_update(&mut z, &u, h);
        if !z.is_finite() {
            return Err(Error::NumericOverflow { timestep: k, window: None });
        }
    }
    Ok(z)
}

/// Fade-in weights of the incoming clip across an overlap: `(j + 1) / (overlap + 1)`.
pub fn crossfade_weights<T: Scalar>(overlap: usize) -> Vec<T> {
    let den = T::from_usize_lossy(overlap + 1);
    (0..overlap).map(|j| T::from_usize_lossy(j + 1) / den).collect()
}

/// Start tokens of the overlapping clips used by [`baseline_sliding`].
pub fn sliding_clip_starts(l: usize, f: usize, overlap: usize) -> Result<Vec<usize>> {
    if overlap == 0 || overlap >= f {
        return Err(Error::Config(format!("overlap {overlap} must satisfy 0 < overlap < f = {f}")));
    }
    if f > l {
        return Err(Error::Config(format!("clip length {f} exceeds latent length {l}")));
    }
    let stride = f - overlap;
    if !(l - f).is_multiple_of(stride) {
        return Err(Error::Config(format!("clips of {f} with stride {stride} do not end exactly at {l}")));
    }
    Ok((0..=(l - f) / stride).map(|k| k * stride).collect())
}

/// Overlapping clips, each denoised to completion, merged by linear cross-fade.
pub fn baseline_sliding<T, F>(
    field: &F,
    pose_latents: &LatentSeq<T>,
    guidance: &GuidanceBundle<T>,
    cfg: &LongRunConfig<T>,
    noise: &LatentSeq<T>,
) -> Result<LatentSeq<T>>
where
    T: Scalar,
    F: VelocityField<T> + ?Sized,
{
    let Strategy::SlidingWindow { overlap } = cfg.strategy else {
        return Err(Error::Config(format!("baseline_sliding runs the sliding strategy, got {}", cfg.strategy)));
    };
    check_inputs(pose_latents, noise)?;
    let l = noise.len();
    let starts = sliding_clip_starts(l, cfg.f, overlap)?;
    let sampler = cfg.sampler();
    let weights = crossfade_weights::<T>(overlap);
    let mut out = noise.clone();
    for (k, &s) in starts.iter().enumerate() {
        let idx: Vec<usize> = (s..s + cfg.f).collect();
        let clip =
            denoise_clip(field, &window_conditioning(guidance, pose_latents, &idx)?, &sampler, &noise.gather(&idx)?)?;
        for (j, &i) in idx.iter().enumerate() {
            let dst = out.token_mut(i);
            if k > 0 && j < overlap {
                let w = weights[j];
                for (x, &y) in dst.iter_mut().zip(clip.token(j)) {
                    *x = (T::one() - w) * *x + w * y;
                }
            } else {
                dst.copy_from_slice(clip.token(j));
            }
        }
    }
    Ok(out)
}

/// Segments of `f` tokens denoised one after another; segment `k > 0`
/// starts from noise whose first token is replaced by the final state of
/// the previous segment's last token.
pub fn baseline_final_latent<T, F>(
    field: &F,
    pose_latents: &LatentSeq<T>,
    guidance: &GuidanceBundle<T>,
    cfg: &LongRunConfig<T>,
    noise: &LatentSeq<T>,
) -> Result<LatentSeq<T>>
where
    T: Scalar,
    F: VelocityField<T> + ?Sized,
{
    check_inputs(pose_latents, noise)?;
    let l = noise.len();
    if cfg.f == 0 || !l.is_multiple_of(cfg.f) {
        return Err(Error::Config(format!("segment length {} must divide latent length {l}", cfg.f)));
    }
    let sampler = cfg.sampler();
    let mut out = noise.clone();
    let mut carry: Option<Vec<T>> = None;
    for seg in 0..l / cfg.f {
        let idx: Vec<usize> = (seg * cfg.f..(seg + 1) * cfg.f).collect();
        let mut z0 = noise.gather(&idx)?;
        if let Some(prev) = &carry {
            z0.token_mut(0).copy_from_slice(prev);
        }
        let z = denoise_clip(field, &window_conditioning(guidance, pose_latents, &idx)?, &sampler, &z0)?;
        carry = Some(z.token(cfg.f - 1).to_vec());
        out.scatter(&idx, &z)?;
    }
    Ok(out)
}

/// Frames per final-frame segment (`4 f`) and the stride between segment starts (`4 f - 1`).
pub fn final_frame_geometry(f: usize) -> (usize, usize) {
    (CHUNK * f, CHUNK * f - 1)
}

/// Number of segments for a pose sequence of `frames` frames, which must equal `1 + n (4 f - 1)`.
pub fn final_frame_segments(frames: usize, f: usize) -> Result<usize> {
    let (_, stride) = final_frame_geometry(f);
    if f == 0 || frames < 1 + stride || !(frames - 1).is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "final-frame chaining needs 1 + n*{stride} pose frames (n >= 1), got {frames}"
        )));
    }
    Ok((frames - 1) / stride)
}

/// Segments of `4 f` frames; segment `k + 1` is conditioned on the decoded
/// final frame of segment `k` (and the pose at that frame) in place of the
/// reference, and its first frame, a duplicate of that seed frame, is dropped.
///
/// `noise` supplies `f` tokens per segment.
pub fn baseline_final_frame<T, F>(
    field: &F,
    pose_frames: &FrameSeq<T>,
    guidance: &GuidanceBundle<T>,
    cfg: &LongRunConfig<T>,
    noise: &LatentSeq<T>,
) -> Result<FrameSeq<T>>
where
    T: Scalar,
    F: VelocityField<T> + ?Sized,
{
    let n = final_frame_segments(pose_frames.len(), cfg.f)?;
    let (seg_len, stride) = final_frame_geometry(cfg.f);
    if noise.len() != n * cfg.f {
        return Err(Error::shape(format!("{} noise tokens", n * cfg.f), noise.len()));
    }
    let sampler = cfg.sampler();
    let mut bundle = guidance.clone();
    let mut frames: Vec<Frame<T>> = Vec::with_capacity(pose_frames.len());
    for seg in 0..n {
        let first = seg * stride;
        let range = first..first + seg_len;
        let pose = encode_uniform(&pose_frames.slice(range.clone())?)?;
        let seg_bundle = bundle.select_frames(&range.clone().collect::<Vec<_>>())?;
        let tok_idx: Vec<usize> = (seg * cfg.f..(seg + 1) * cfg.f).collect();
        let z0 = noise.gather(&tok_idx)?.relabel(Layout::Uniform);
        pose.check_same_shape(&z0)?;
        let z0 = match pose.frame_shape() {
            Some(shape) => z0.with_frame_shape(shape)?,
            None => z0,
        };
        let z = denoise_clip(field, &Conditioning::new(seg_bundle, Some(pose)), &sampler, &z0)?;
        let decoded = decode_uniform(&z)?;
        let last = decoded.frame(seg_len - 1).clamp_unit();
        let skip = usize::from(seg > 0);
        frames.extend(decoded.into_frames().into_iter().skip(skip));

        let ref_latent = bundle.ref_latent.with_tokens(vec![LatentSeq::lone_frame_token(&last)])?;
        let ref_pose =
            bundle.ref_latent.with_tokens(vec![LatentSeq::lone_frame_token(pose_frames.frame(range.end - 1))])?;
        bundle = bundle.with_reference(ref_latent, Some(ref_pose))?;
    }
    FrameSeq::new(frames)
}

/// Frame indices where final-frame segments meet in the concatenated output.
pub fn final_frame_boundaries(n_segments: usize, f: usize) -> Vec<usize> {
    let (seg_len, stride) = final_frame_geometry(f);
    (1..n_segments).map(|k| seg_len + (k - 1) * stride).collect()
}
