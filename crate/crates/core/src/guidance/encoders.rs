use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::latent_codec::{Frame, FrameSeq, FrameShape};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const CROP_SIZE: usize = 256;
pub const PATCH_SIZE: usize = 16;
pub const FACE_SEED: u64 = 0xFACE;
pub const HAND_SEED: u64 = 0x4A4D;

const CROP_CHANNELS: usize = 3;
const PATCHES_PER_SIDE: usize = CROP_SIZE / PATCH_SIZE;
const FEATURES: usize = PATCHES_PER_SIDE * PATCHES_PER_SIDE * CROP_CHANNELS;

/// Frozen crop encoder: 16x16 patch means followed by a fixed random projection.
#[derive(Clone, Debug)]
pub struct StubEncoder<T> {
    projection: Matrix<T>,
}

impl<T: Scalar> StubEncoder<T> {
    pub fn with_seed(code_width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = T::one() / T::lit(FEATURES as f64).sqrt();
        Self { projection: Matrix::random_normal(code_width, FEATURES, scale, &mut rng) }
    }

    pub fn face(code_width: usize) -> Self {
        Self::with_seed(code_width, FACE_SEED)
    }

    pub fn hand(code_width: usize) -> Self {
        Self::with_seed(code_width, HAND_SEED)
    }

    /// `code_width x 768` projection matrix.
    pub fn projection(&self) -> &Matrix<T> {
        &self.projection
    }

    pub fn code_width(&self) -> usize {
        self.projection.rows()
    }

    pub fn crop_shape() -> FrameShape {
        FrameShape::new(CROP_SIZE, CROP_SIZE, CROP_CHANNELS)
    }

    /// Per-patch channel means, ordered patch-row, patch-column, channel.
    pub fn patch_means(crop: &Frame<T>) -> Result<Vec<T>> {
        if crop.shape() != Self::crop_shape() {
            return Err(Error::shape(format!("crop of shape {}", Self::crop_shape()), crop.shape()));
        }
        let mut sums = vec![T::zero(); FEATURES];
        for y in 0..CROP_SIZE {
            for x in 0..CROP_SIZE {
                let base = ((y / PATCH_SIZE) * PATCHES_PER_SIDE + x / PATCH_SIZE) * CROP_CHANNELS;
                for c in 0..CROP_CHANNELS {
                    sums[base + c] += crop.get(y, x, c);
                }
            }
        }
        let area = T::lit((PATCH_SIZE * PATCH_SIZE) as f64);
        Ok(sums.into_iter().map(|s| s / area).collect())
    }

    pub fn encode_frame(&self, crop: &Frame<T>) -> Result<Vec<T>> {
        if !crop.in_unit_range() {
            return Err(Error::Domain("crop values must lie in [0, 1]".into()));
        }
        self.projection.matvec(&Self::patch_means(crop)?)
    }

    /// One code row per crop.
    pub fn encode(&self, crops: &FrameSeq<T>) -> Result<Matrix<T>> {
        let rows = crops.iter().map(|c| self.encode_frame(c)).collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }
}

/// Face codes with the default code width.
pub fn encode_face_seq<T: Scalar>(crops: &FrameSeq<T>) -> Result<Matrix<T>> {
    StubEncoder::face(super::DEFAULT_CODE_WIDTH).encode(crops)
}

/// Hand codes with the default code width.
pub fn encode_hand_seq<T: Scalar>(crops: &FrameSeq<T>) -> Result<Matrix<T>> {
    StubEncoder::hand(super::DEFAULT_CODE_WIDTH).encode(crops)
}
