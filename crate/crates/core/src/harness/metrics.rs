//! Seam and drift statistics on decoded videos.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::latent_codec::{Frame, FrameSeq};
use crate::scalar::{ls_slope, Scalar};

/// Mean absolute pixel difference.
pub fn frame_distance<T: Scalar>(a: &Frame<T>, b: &Frame<T>) -> T {
    let n = T::from_usize_lossy(a.as_slice().len());
    a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| (x - y).abs()).sum::<T>() / n
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeamReport<T> {
    pub boundary_disc: T,
    pub interior_disc: T,
    /// `boundary_disc / interior_disc`, absent when `interior_disc` is zero.
    pub ratio: Option<T>,
    /// `(b, |frame_b - frame_{b-1}|)` for each boundary, ascending.
    pub per_boundary: Vec<(usize, T)>,
}

/// Compares the jump across each listed boundary `b` (between frames
/// `b - 1` and `b`) with the jumps between all other adjacent frames.
pub fn seam_metric<T: Scalar>(video: &FrameSeq<T>, boundaries: &[usize]) -> Result<SeamReport<T>> {
    if boundaries.is_empty() {
        return Err(Error::Config("seam metric needs at least one boundary".into()));
    }
    let n = video.len();
    if let Some(&b) = boundaries.iter().find(|&&b| b == 0 || b >= n) {
        return Err(Error::Config(format!("boundary {b} outside (0, {n})")));
    }
    let set: BTreeSet<usize> = boundaries.iter().copied().collect();
    let jump = |b: usize| frame_distance(video.frame(b), video.frame(b - 1));
    let per_boundary: Vec<(usize, T)> = set.iter().map(|&b| (b, jump(b))).collect();
    let boundary_disc = per_boundary.iter().map(|&(_, d)| d).sum::<T>() / T::from_usize_lossy(per_boundary.len());
    let interior: Vec<T> = (1..n).filter(|b| !set.contains(b)).map(jump).collect();
    let interior_disc = if interior.is_empty() {
        T::zero()
    } else {
        interior.iter().copied().sum::<T>() / T::from_usize_lossy(interior.len())
    };
    let ratio = (interior_disc > T::zero()).then(|| boundary_disc / interior_disc);
    Ok(SeamReport { boundary_disc, interior_disc, ratio, per_boundary })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftReport<T> {
    /// Mean frame distance of cycle `k` to cycle 0, for `k = 0..cycles`.
    pub distances: Vec<T>,
    /// Least-squares slope of `distances` against the cycle index.
    pub slope: T,
}

/// Distance of each whole motion cycle to the first; trailing partial cycles are ignored.
pub fn drift_metric<T: Scalar>(video: &FrameSeq<T>, period: usize) -> Result<DriftReport<T>> {
    if period == 0 {
        return Err(Error::Config("period must be positive".into()));
    }
    let cycles = video.len() / period;
    if cycles < 2 {
        return Err(Error::Config(format!("need two cycles of {period} frames, have {} frames", video.len())));
    }
    let p = T::from_usize_lossy(period);
    let distances: Vec<T> = (0..cycles)
        .map(|k| (0..period).map(|i| frame_distance(video.frame(k * period + i), video.frame(i))).sum::<T>() / p)
        .collect();
    let slope = ls_slope(&distances);
    Ok(DriftReport { distances, slope })
}
