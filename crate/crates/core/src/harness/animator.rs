//! A hand-built velocity field that behaves like a windowed video model:
//! it paints the reference appearance under the pose, but only agrees on
//! low-frequency content with the other frames it can see.

use crate::error::{Error, Result};
use crate::flow_match::{Conditioning, VelocityField};
use crate::latent_codec::{FrameShape, LatentSeq, CHUNK};
use crate::scalar::Scalar;

/// Toy animation model over uniform-layout tokens of a fixed frame shape.
///
/// For every frame `i` the clean target is `c_i = (ref - ref_pose) + pose_i`.
/// With `d_i = z_i - t c_i` and `D_i` its mean over `block x block` tiles,
///
/// `u_i = (c_i + D_i - z_i) / (1 - t) + coupling * (consensus_gain * M - D_i)`
///
/// where `M` is the mean of `D` over all frames in the call. The first term
/// transports the pixel noise onto the target while keeping a blocky
/// residual `D`; the second pulls that residual toward what the frames in
/// the same call agree on. Frames denoised in different calls therefore
/// settle on different residuals, which is what shows up as seams.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedAnimator<T> {
    pub shape: FrameShape,
    pub block: usize,
    pub coupling: T,
    pub consensus_gain: T,
}

pub const DEFAULT_BLOCK: usize = 8;
pub const DEFAULT_COUPLING: f64 = 6.0;
pub const DEFAULT_CONSENSUS_GAIN: f64 = 1.3;

impl<T: Scalar> WindowedAnimator<T> {
    pub fn new(shape: FrameShape) -> Self {
        Self {
            shape,
            block: DEFAULT_BLOCK,
            coupling: T::lit(DEFAULT_COUPLING),
            consensus_gain: T::lit(DEFAULT_CONSENSUS_GAIN),
        }
    }

    fn block_means(&self, plane: &[T], out: &mut [T]) {
        let FrameShape { height, width, channels } = self.shape;
        let b = self.block.max(1);
        for c in 0..channels {
            for by in (0..height).step_by(b) {
                for bx in (0..width).step_by(b) {
                    let (y1, x1) = ((by + b).min(height), (bx + b).min(width));
                    let mut sum = T::zero();
                    for y in by..y1 {
                        for x in bx..x1 {
                            sum += plane[(y * width + x) * channels + c];
                        }
                    }
                    let mean = sum / T::from_usize_lossy((y1 - by) * (x1 - bx));
                    for y in by..y1 {
                        for x in bx..x1 {
                            out[(y * width + x) * channels + c] = mean;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> VelocityField<T> for WindowedAnimator<T> {
    fn velocity(&self, z: &LatentSeq<T>, cond: &Conditioning<T>, t: T) -> Result<LatentSeq<T>> {
        let fl = self.shape.len();
        if z.dim() != CHUNK * fl {
            return Err(Error::shape(format!("tokens of width {} for frames {}", CHUNK * fl, self.shape), z.dim()));
        }
        if t >= T::one() {
            return Err(Error::Domain(format!("animator velocity undefined at t = {t}")));
        }
        let g = &cond.guidance;
        if g.ref_latent.dim() != z.dim() {
            return Err(Error::shape(format!("reference token of width {}", z.dim()), g.ref_latent.dim()));
        }
        if let Some(p) = &cond.pose {
            if p.len() != z.len() || p.dim() != z.dim() {
                return Err(Error::shape(
                    format!("{} pose tokens of width {}", z.len(), z.dim()),
                    format!("{} of width {}", p.len(), p.dim()),
                ));
            }
        }
        let reference = g.ref_latent.token(0);
        let ref_pose = g.ref_pose.as_ref().map(|p| p.token(0));

        let n = z.len() * CHUNK;
        let mut targets = vec![T::zero(); n * fl];
        let mut resid = vec![T::zero(); n * fl];
        for i in 0..z.len() {
            let zi = z.token(i);
            let pose = cond.pose.as_ref().map(|p| p.token(i));
            for e in 0..CHUNK * fl {
                let mut c = reference[e];
                if let Some(rp) = ref_pose {
                    c -= rp[e];
                }
                if let Some(p) = pose {
                    c += p[e];
                }
                targets[i * CHUNK * fl + e] = c;
                resid[i * CHUNK * fl + e] = zi[e] - t * c;
            }
        }
        let mut blocky = vec![T::zero(); n * fl];
        for f in 0..n {
            self.block_means(&resid[f * fl..(f + 1) * fl], &mut blocky[f * fl..(f + 1) * fl]);
        }
        let mut consensus = vec![T::zero(); fl];
        for f in 0..n {
            for (m, &d) in consensus.iter_mut().zip(&blocky[f * fl..(f + 1) * fl]) {
                *m += d;
            }
        }
        let nf = T::from_usize_lossy(n);
        for m in &mut consensus {
            *m /= nf;
        }

        let inv = T::one() / (T::one() - t);
        let tokens = (0..z.len())
            .map(|i| {
                let zi = z.token(i);
                (0..CHUNK * fl)
                    .map(|e| {
                        let k = i * CHUNK * fl + e;
                        let d = blocky[k];
                        (targets[k] + d - zi[e]) * inv + self.coupling * (self.consensus_gain * consensus[e % fl] - d)
                    })
                    .collect()
            })
            .collect();
        z.with_tokens(tokens)
    }

    fn token_local(&self) -> bool {
        false
    }
}
