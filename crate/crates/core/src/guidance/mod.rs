//! Hybrid guidance signals: per-frame face and hand codes, the hand
//! sharpness factor, cross-attention injection and the reference latent.

mod attention;
mod encoders;
mod sharpness;

pub use attention::{cross_attention, cross_attention_backward, AttentionOutput, CrossAttnGrads, CrossAttnParams};
pub use encoders::{encode_face_seq, encode_hand_seq, StubEncoder, CROP_SIZE, FACE_SEED, HAND_SEED, PATCH_SIZE};
pub use sharpness::{
    box_blur, checkerboard, laplacian_response, laplacian_sharpness, normalized_sharpness, SHARPNESS_REFERENCE,
};

use crate::error::{Error, Result};
use crate::latent_codec::{Frame, FrameSeq, LatentSeq, CHUNK};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Code width used when none is given.
pub const DEFAULT_CODE_WIDTH: usize = 16;
/// Token width used by the desk-scale attention blocks.
pub const DEFAULT_MODEL_WIDTH: usize = 32;
/// Sharpness factor requested at inference time.
pub const INFERENCE_SHARPNESS: f64 = 1.0;

/// Everything a velocity field receives besides the noisy latents and the pose.
///
/// `face_codes` and `hand_codes` carry one row per frame. A bundle may carry
/// zero rows when no per-frame codes are in use.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceBundle<T> {
    pub face_codes: Matrix<T>,
    pub hand_codes: Matrix<T>,
    pub sharpness: T,
    /// Single-token latent of the reference image.
    pub ref_latent: LatentSeq<T>,
    /// Single-token pose latent of the reference image, when known.
    pub ref_pose: Option<LatentSeq<T>>,
}

impl<T: Scalar> GuidanceBundle<T> {
    pub fn new(
        face_codes: Matrix<T>,
        hand_codes: Matrix<T>,
        sharpness: T,
        ref_latent: LatentSeq<T>,
        ref_pose: Option<LatentSeq<T>>,
    ) -> Result<Self> {
        if face_codes.rows() != hand_codes.rows() {
            return Err(Error::shape(
                format!("{} hand-code rows", face_codes.rows()),
                format!("{} hand-code rows", hand_codes.rows()),
            ));
        }
        if face_codes.cols() == 0 || hand_codes.cols() == 0 {
            return Err(Error::shape("code width > 0", 0));
        }
        if !sharpness.is_finite() || sharpness < T::zero() {
            return Err(Error::Domain(format!("sharpness must be finite and >= 0, got {sharpness}")));
        }
        if ref_latent.len() != 1 {
            return Err(Error::shape("single-token reference latent", ref_latent.len()));
        }
        if let Some(p) = &ref_pose {
            if p.len() != 1 || p.dim() != ref_latent.dim() {
                return Err(Error::shape(
                    format!("single reference-pose token of width {}", ref_latent.dim()),
                    format!("{} tokens of width {}", p.len(), p.dim()),
                ));
            }
        }
        Ok(Self { face_codes, hand_codes, sharpness, ref_latent, ref_pose })
    }

    /// Bundle with no per-frame codes and the inference sharpness factor.
    pub fn reference_only(ref_latent: LatentSeq<T>, code_width: usize) -> Result<Self> {
        Self::new(
            Matrix::zeros(0, code_width),
            Matrix::zeros(0, code_width),
            T::lit(INFERENCE_SHARPNESS),
            ref_latent,
            None,
        )
    }

    /// Number of frame rows in the code matrices.
    pub fn frame_rows(&self) -> usize {
        self.face_codes.rows()
    }

    /// The all-zero bundle used for the unconditional branch of CFG.
    pub fn zeroed(&self) -> Self {
        Self {
            face_codes: self.face_codes.map(|_| T::zero()),
            hand_codes: self.hand_codes.map(|_| T::zero()),
            sharpness: T::zero(),
            ref_latent: self.ref_latent.map(|_| T::zero()),
            ref_pose: self.ref_pose.as_ref().map(|p| p.map(|_| T::zero())),
        }
    }

    /// Code rows for the listed frames; bundles without codes pass through.
    pub fn select_frames(&self, frames: &[usize]) -> Result<Self> {
        if self.frame_rows() == 0 {
            return Ok(self.clone());
        }
        if let Some(&bad) = frames.iter().find(|&&f| f >= self.frame_rows()) {
            return Err(Error::shape(format!("frame index below {}", self.frame_rows()), bad));
        }
        Ok(Self {
            face_codes: self.face_codes.select_rows(frames.iter().copied()),
            hand_codes: self.hand_codes.select_rows(frames.iter().copied()),
            ..self.clone()
        })
    }

    /// Code rows for the frames decoded from the listed latent tokens
    /// (four frames per token, in token order).
    pub fn select_tokens(&self, tokens: &[usize]) -> Result<Self> {
        let frames: Vec<usize> = tokens.iter().flat_map(|&t| CHUNK * t..CHUNK * (t + 1)).collect();
        self.select_frames(&frames)
    }

    pub fn with_reference(&self, ref_latent: LatentSeq<T>, ref_pose: Option<LatentSeq<T>>) -> Result<Self> {
        Self::new(self.face_codes.clone(), self.hand_codes.clone(), self.sharpness, ref_latent, ref_pose)
    }
}

/// Scales hand codes by the sharpness factor.
pub fn modulate<T: Scalar>(codes: &Matrix<T>, factor: T) -> Result<Matrix<T>> {
    if !factor.is_finite() || factor < T::zero() {
        return Err(Error::Domain(format!("modulation factor must be finite and >= 0, got {factor}")));
    }
    Ok(codes.map(|x| x * factor))
}

/// Placeholder face re-animation: appearance from the reference, motion from
/// the driving frames, mixed half and half.
pub fn reanimate_face_stub<T: Scalar>(reference: &Frame<T>, driving: &FrameSeq<T>) -> Result<FrameSeq<T>> {
    if reference.shape() != driving.shape() {
        return Err(Error::shape(format!("driving frames of shape {}", reference.shape()), driving.shape()));
    }
    let half = T::lit(0.5);
    let frames = driving
        .iter()
        .map(|d| {
            let data = reference.as_slice().iter().zip(d.as_slice()).map(|(&r, &m)| half * r + half * m).collect();
            Frame::new(reference.shape(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSeq::new(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_codec::{FrameShape, Layout};
    use proptest::prelude::*;

    fn ref_token(dim: usize) -> LatentSeq<f64> {
        LatentSeq::zeros(1, dim, Layout::Uniform).unwrap()
    }

    #[test]
    fn bundle_validation() {
        let good = GuidanceBundle::new(Matrix::zeros(8, 4), Matrix::zeros(8, 4), 1.0, ref_token(4), None);
        assert!(good.is_ok());
        let rows = GuidanceBundle::new(Matrix::zeros(8, 4), Matrix::zeros(7, 4), 1.0, ref_token(4), None);
        assert!(matches!(rows, Err(Error::InvalidShape { .. })));
        let sharp = GuidanceBundle::new(Matrix::zeros(8, 4), Matrix::zeros(8, 4), f64::NAN, ref_token(4), None);
        assert!(matches!(sharp, Err(Error::Domain(_))));
        let two = LatentSeq::zeros(2, 4, Layout::Uniform).unwrap();
        assert!(GuidanceBundle::new(Matrix::zeros(8, 4), Matrix::zeros(8, 4), 1.0, two, None).is_err());
    }

    #[test]
    fn token_selection_covers_four_frames_per_token() {
        let codes = Matrix::from_fn(12, 2, |r, c| (r * 2 + c) as f64);
        let g = GuidanceBundle::new(codes.clone(), codes, 1.0, ref_token(4), None).unwrap();
        let s = g.select_tokens(&[2, 0]).unwrap();
        let firsts: Vec<f64> = (0..s.frame_rows()).map(|r| s.face_codes.get(r, 0) / 2.0).collect();
        assert_eq!(firsts, vec![8.0, 9.0, 10.0, 11.0, 0.0, 1.0, 2.0, 3.0]);
        assert!(g.select_tokens(&[3]).is_err());
    }

    #[test]
    fn modulate_examples() {
        let x = Matrix::new(2, 2, vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        assert_eq!(modulate(&x, INFERENCE_SHARPNESS).unwrap(), x);
        assert!(modulate(&x, 0.0).unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(modulate(&x, 0.5).unwrap().as_slice(), &[0.5, -1.0, 0.25, 2.0]);
        assert!(matches!(modulate(&x, -0.1), Err(Error::Domain(_))));
        assert!(matches!(modulate(&x, f64::INFINITY), Err(Error::Domain(_))));
    }

    proptest! {
        // Dyadic entries and factors keep every product exactly representable,
        // so associativity of the scaling holds bit for bit.
        #[test]
        fn modulation_composes(
            vals in proptest::collection::vec(-512i32..512, 6),
            a in 0u32..64, b in 0u32..64,
        ) {
            let x = Matrix::new(2, 3, vals.iter().map(|&v| v as f64 / 8.0).collect()).unwrap();
            let (a, b) = (a as f64 / 16.0, b as f64 / 16.0);
            let once = modulate(&x, a * b).unwrap();
            let twice = modulate(&modulate(&x, a).unwrap(), b).unwrap();
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn reanimation_stub() {
        let shape = FrameShape::new(2, 2, 3);
        let reference = Frame::filled(shape, 0.3);
        let same = FrameSeq::new(vec![reference.clone(); 3]).unwrap();
        assert_eq!(reanimate_face_stub(&reference, &same).unwrap(), same);

        let seven = FrameSeq::new(vec![Frame::filled(shape, 1.0); 7]).unwrap();
        let out = reanimate_face_stub(&Frame::filled(shape, 0.0), &seven).unwrap();
        assert_eq!(out.len(), 7);
        assert!(out.iter().all(|f| f.as_slice().iter().all(|&v| v == 0.5)));

        let other = FrameSeq::new(vec![Frame::filled(FrameShape::new(1, 2, 3), 1.0)]).unwrap();
        assert!(reanimate_face_stub(&reference, &other).is_err());
    }
}
