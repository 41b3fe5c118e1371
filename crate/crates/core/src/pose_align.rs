//! 2D skeletons: mismatched crop/scale augmentation, anisotropic body
//! stretching and closed-form bone-length retargeting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::latent_codec::{Frame, FrameSeq};
use crate::scalar::Scalar;

pub const JOINT_COUNT: usize = 13;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_knee",
    "left_ankle",
    "right_knee",
    "right_ankle",
];

const BODY_PARENTS: [usize; JOINT_COUNT] = [0, 0, 1, 1, 3, 4, 1, 6, 7, 0, 9, 0, 11];

/// Parent table of a joint tree rooted at joint 0 (`parent[0] = 0`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkeletonTree {
    parents: Vec<usize>,
    /// Non-root joints, every parent before its children.
    order: Vec<usize>,
}

impl SkeletonTree {
    pub fn new(parents: Vec<usize>) -> Result<Self> {
        let n = parents.len();
        if n == 0 || parents[0] != 0 {
            return Err(Error::Domain("joint 0 must be the root and its own parent".into()));
        }
        for (j, &p) in parents.iter().enumerate().skip(1) {
            if p >= n || p == j {
                return Err(Error::Domain(format!("joint {j} has invalid parent {p}")));
            }
        }
        let mut order = Vec::with_capacity(n - 1);
        let mut placed = vec![false; n];
        placed[0] = true;
        let mut frontier = vec![0usize];
        while let Some(p) = frontier.pop() {
            for j in 1..n {
                if parents[j] == p && !placed[j] {
                    placed[j] = true;
                    order.push(j);
                    frontier.push(j);
                }
            }
        }
        if let Some(j) = placed.iter().position(|&ok| !ok) {
            return Err(Error::Domain(format!("joint {j} is not connected to the root (cycle)")));
        }
        Ok(Self { parents, order })
    }

    /// The 13-joint toy body: pelvis, neck, head, arms (shoulder, elbow, wrist) and legs (knee, ankle).
    pub fn body() -> Self {
        Self::new(BODY_PARENTS.to_vec()).expect("body tree is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn parent(&self, j: usize) -> usize {
        self.parents[j]
    }

    /// Non-root joints in parent-before-child order.
    pub fn traversal(&self) -> &[usize] {
        &self.order
    }
}

/// One frame of joint positions in pixel coordinates `(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton<T> {
    pub tree: SkeletonTree,
    pub joints: Vec<[T; 2]>,
}

impl<T: Scalar> Skeleton<T> {
    pub fn new(tree: SkeletonTree, joints: Vec<[T; 2]>) -> Result<Self> {
        if joints.len() != tree.joint_count() {
            return Err(Error::shape(format!("{} joints", tree.joint_count()), joints.len()));
        }
        if joints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("joint coordinates must be finite".into()));
        }
        Ok(Self { tree, joints })
    }

    pub fn root(&self) -> [T; 2] {
        self.joints[0]
    }

    /// Length of the bone ending at joint `j` (zero for the root).
    pub fn bone_length(&self, j: usize) -> T {
        let p = self.tree.parent(j);
        dist(self.joints[j], self.joints[p])
    }

    pub fn bone_lengths(&self) -> Vec<T> {
        (0..self.joints.len()).map(|j| self.bone_length(j)).collect()
    }
}

fn dist<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Per-frame skeletons sharing one tree.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence<T> {
    tree: SkeletonTree,
    frames: Vec<Vec<[T; 2]>>,
}

impl<T: Scalar> PoseSequence<T> {
    pub fn new(tree: SkeletonTree, frames: Vec<Vec<[T; 2]>>) -> Result<Self> {
        for joints in &frames {
            Skeleton::new(tree.clone(), joints.clone())?;
        }
        Ok(Self { tree, frames })
    }

    pub fn from_skeletons(skeletons: &[Skeleton<T>]) -> Result<Self> {
        let tree = skeletons.first().ok_or_else(|| Error::shape("at least one skeleton", 0))?.tree.clone();
        if skeletons.iter().any(|s| s.tree != tree) {
            return Err(Error::Domain("skeletons do not share one tree".into()));
        }
        Ok(Self { tree, frames: skeletons.iter().map(|s| s.joints.clone()).collect() })
    }

    pub fn tree(&self) -> &SkeletonTree {
        &self.tree
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joints(&self, k: usize) -> &[[T; 2]] {
        &self.frames[k]
    }

    pub fn frames(&self) -> &[Vec<[T; 2]>] {
        &self.frames
    }

    pub fn skeleton(&self, k: usize) -> Skeleton<T> {
        Skeleton { tree: self.tree.clone(), joints: self.frames[k].clone() }
    }

    pub fn map_joints(&self, f: impl Fn([T; 2]) -> [T; 2]) -> Self {
        Self {
            tree: self.tree.clone(),
            frames: self.frames.iter().map(|j| j.iter().map(|&p| f(p)).collect()).collect(),
        }
    }
}

/// Crop rectangle in normalised image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropRect<T> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

/// Crop `crop`, resize it to the full canvas, then zoom by `scale` about the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugParams<T> {
    pub crop: CropRect<T>,
    pub scale: T,
}

pub const MIN_SCALE: f64 = 0.5;
pub const MAX_SCALE: f64 = 2.0;
/// Smallest crop side drawn by [`sample_aug_pair`].
pub const MIN_CROP: f64 = 0.6;

impl<T: Scalar> AugParams<T> {
    pub fn identity() -> Self {
        Self { crop: CropRect { x: T::zero(), y: T::zero(), w: T::one(), h: T::one() }, scale: T::one() }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.crop;
        if !(c.w > T::zero() && c.h > T::zero()) {
            return Err(Error::Domain(format!("degenerate crop {} x {}", c.w, c.h)));
        }
        let inside = c.x >= T::zero() && c.y >= T::zero() && c.x + c.w <= T::one() && c.y + c.h <= T::one();
        if !inside {
            return Err(Error::Domain("crop must lie inside the unit square".into()));
        }
        if !(self.scale >= T::lit(MIN_SCALE) && self.scale <= T::lit(MAX_SCALE)) {
            return Err(Error::Domain(format!("scale {} outside [{MIN_SCALE}, {MAX_SCALE}]", self.scale)));
        }
        Ok(())
    }

    /// Maps a pixel coordinate on a `width x height` canvas; points outside the crop are clamped to its edge.
    pub fn map_point(&self, p: [T; 2], width: usize, height: usize) -> [T; 2] {
        let axis = |v: T, origin: T, extent: T, size: usize| {
            let size = T::from_usize_lossy(size);
            let lo = origin * size;
            let hi = (origin + extent) * size;
            (v.max(lo).min(hi) - lo) * (self.scale / extent)
        };
        [axis(p[0], self.crop.x, self.crop.w, width), axis(p[1], self.crop.y, self.crop.h, height)]
    }

    /// Inverse of [`AugParams::map_point`] inside the crop.
    fn source_coord(&self, out: T, origin: T, extent: T, size: usize) -> T {
        origin * T::from_usize_lossy(size) + out * (extent / self.scale)
    }
}

/// Two independent augmentation parameter sets, one per stream of `seed`.
pub fn sample_aug_pair<T: Scalar>(seed: u64) -> (AugParams<T>, AugParams<T>) {
    let draw = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let w = rng.random_range(MIN_CROP..=1.0);
        let h = rng.random_range(MIN_CROP..=1.0);
        let x = rng.random_range(0.0..=1.0 - w);
        let y = rng.random_range(0.0..=1.0 - h);
        let scale = rng.random_range(MIN_SCALE..=MAX_SCALE);
        AugParams { crop: CropRect { x: T::lit(x), y: T::lit(y), w: T::lit(w), h: T::lit(h) }, scale: T::lit(scale) }
    };
    (draw(1), draw(2))
}

/// Bilinear sample at continuous pixel coordinates (pixel `i` has its centre
/// at `i + 0.5`); zero outside `[lo, hi)` per axis.
fn sample_bilinear<T: Scalar>(frame: &Frame<T>, x: T, y: T, c: usize, bounds: [T; 4]) -> T {
    let [x_lo, x_hi, y_lo, y_hi] = bounds;
    if x < x_lo || x >= x_hi || y < y_lo || y >= y_hi {
        return T::zero();
    }
    let shape = frame.shape();
    let half = T::lit(0.5);
    let fx = (x - half).max(T::zero()).min(T::from_usize_lossy(shape.width - 1));
    let fy = (y - half).max(T::zero()).min(T::from_usize_lossy(shape.height - 1));
    let x0 = fx.floor().to_usize().unwrap_or(0);
    let y0 = fy.floor().to_usize().unwrap_or(0);
    let x1 = (x0 + 1).min(shape.width - 1);
    let y1 = (y0 + 1).min(shape.height - 1);
    let ax = fx - T::from_usize_lossy(x0);
    let ay = fy - T::from_usize_lossy(y0);
    let top = frame.get(y0, x0, c) * (T::one() - ax) + frame.get(y0, x1, c) * ax;
    let bottom = frame.get(y1, x0, c) * (T::one() - ax) + frame.get(y1, x1, c) * ax;
    if ay == T::zero() {
        top
    } else {
        top * (T::one() - ay) + bottom * ay
    }
}

/// Targets [`apply_aug`] can transform.
pub trait Augment: Sized {
    type Scalar: Scalar;
    fn augment(&self, params: &AugParams<Self::Scalar>, canvas: (usize, usize)) -> Result<Self>;
}

impl<T: Scalar> Augment for FrameSeq<T> {
    type Scalar = T;

    fn augment(&self, p: &AugParams<T>, _canvas: (usize, usize)) -> Result<Self> {
        let shape = self.shape();
        let (w, h) = (shape.width, shape.height);
        let bounds = [
            p.crop.x * T::from_usize_lossy(w),
            (p.crop.x + p.crop.w) * T::from_usize_lossy(w),
            p.crop.y * T::from_usize_lossy(h),
            (p.crop.y + p.crop.h) * T::from_usize_lossy(h),
        ];
        let half = T::lit(0.5);
        let frames = self
            .iter()
            .map(|frame| {
                let mut out = Frame::filled(shape, T::zero());
                for yy in 0..h {
                    let sy = p.source_coord(T::from_usize_lossy(yy) + half, p.crop.y, p.crop.h, h);
                    for xx in 0..w {
                        let sx = p.source_coord(T::from_usize_lossy(xx) + half, p.crop.x, p.crop.w, w);
                        for c in 0..shape.channels {
                            out.set(yy, xx, c, sample_bilinear(frame, sx, sy, c, bounds));
                        }
                    }
                }
                out
            })
            .collect();
        FrameSeq::new(frames)
    }
}

impl<T: Scalar> Augment for PoseSequence<T> {
    type Scalar = T;

    fn augment(&self, p: &AugParams<T>, canvas: (usize, usize)) -> Result<Self> {
        let (w, h) = canvas;
        Ok(self.map_joints(|q| p.map_point(q, w, h)))
    }
}

/// Crops and rescales frames or poses. `canvas` is `(width, height)` in
/// pixels, used by poses; frames take it from their own shape.
pub fn apply_aug<A: Augment>(target: &A, params: &AugParams<A::Scalar>, canvas: (usize, usize)) -> Result<A> {
    params.validate()?;
    target.augment(params, canvas)
}

/// Scales every joint about the root: `j' = root + diag(sx, sy) (j - root)`.
pub fn stretch_skeleton<T: Scalar>(seq: &PoseSequence<T>, sx: T, sy: T) -> Result<PoseSequence<T>> {
    let ok = |s: T| s >= T::lit(MIN_SCALE) && s <= T::lit(MAX_SCALE);
    if !ok(sx) || !ok(sy) {
        return Err(Error::Domain(format!("stretch ({sx}, {sy}) outside [{MIN_SCALE}, {MAX_SCALE}]")));
    }
    let frames = seq
        .frames
        .iter()
        .map(|joints| {
            let r = joints[0];
            joints.iter().map(|&q| [r[0] + sx * (q[0] - r[0]), r[1] + sy * (q[1] - r[1])]).collect()
        })
        .collect();
    Ok(PoseSequence { tree: seq.tree.clone(), frames })
}

/// Rescales every bone of every frame to the reference bone length, keeping
/// its direction; the root stays where the driving frame has it.
///
/// A bone whose length already matches the reference to within a few ulps
/// of the coordinate magnitude and whose parent has not moved is copied verbatim, which makes the
/// operation exactly idempotent.
pub fn retarget_bones<T: Scalar>(reference: &Skeleton<T>, seq: &PoseSequence<T>) -> Result<PoseSequence<T>> {
    if reference.tree != seq.tree {
        return Err(Error::Domain("reference and sequence use different trees".into()));
    }
    let tree = &seq.tree;
    let ref_len = reference.bone_lengths();
    let tol = T::epsilon() * T::lit(16.0);
    let mut frames = Vec::with_capacity(seq.len());
    for joints in &seq.frames {
        let mut out = joints.clone();
        let mut moved = vec![false; joints.len()];
        for &j in tree.traversal() {
            let p = tree.parent(j);
            let v = [joints[j][0] - joints[p][0], joints[j][1] - joints[p][1]];
            let len = v[0].hypot(v[1]);
            let target = ref_len[j];
            let magnitude = [joints[j][0], joints[j][1], joints[p][0], joints[p][1]]
                .into_iter()
                .fold(target, |m, v| m.max(v.abs()));
            if !moved[p] && (len - target).abs() <= tol * magnitude.max(T::min_positive_value()) {
                continue;
            }
            if len == T::zero() {
                if target == T::zero() {
                    out[j] = out[p];
                    moved[j] = out[j] != joints[j];
                    continue;
                }
                return Err(Error::DegenerateBone { joint: j });
            }
            let k = target / len;
            out[j] = [out[p][0] + v[0] * k, out[p][1] + v[1] * k];
            moved[j] = out[j] != joints[j];
        }
        frames.push(out);
    }
    Ok(PoseSequence { tree: tree.clone(), frames })
}

/// One training example for a learned aligner: a randomly stretched copy of
/// `seq` as the driving input, a random frame of `seq` as the reference, and
/// `seq` itself as the target.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentSample<T> {
    pub driving: PoseSequence<T>,
    pub reference: Skeleton<T>,
    pub target: PoseSequence<T>,
    pub stretch: (T, T),
}

pub fn alignment_sample<T: Scalar>(seq: &PoseSequence<T>, seed: u64) -> Result<AlignmentSample<T>> {
    if seq.is_empty() {
        return Err(Error::shape("non-empty pose sequence", 0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sx = T::lit(rng.random_range(MIN_SCALE..=MAX_SCALE));
    let sy = T::lit(rng.random_range(MIN_SCALE..=MAX_SCALE));
    let k = rng.random_range(0..seq.len());
    Ok(AlignmentSample {
        driving: stretch_skeleton(seq, sx, sy)?,
        reference: seq.skeleton(k),
        target: seq.clone(),
        stretch: (sx, sy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_tree_shape() {
        let t = SkeletonTree::body();
        assert_eq!(t.joint_count(), JOINT_COUNT);
        assert_eq!(t.traversal().len(), JOINT_COUNT - 1);
        let pos = |j: usize| t.traversal().iter().position(|&x| x == j);
        for &j in t.traversal() {
            let p = t.parent(j);
            if p != 0 {
                assert!(pos(p) < pos(j));
            }
        }
    }

    #[test]
    fn bad_trees() {
        assert!(SkeletonTree::new(vec![]).is_err());
        assert!(SkeletonTree::new(vec![1, 0]).is_err());
        assert!(SkeletonTree::new(vec![0, 2, 1]).is_err());
        assert!(SkeletonTree::new(vec![0, 5]).is_err());
    }

    #[test]
    fn scale_two_doubles_crop_relative_coordinates() {
        let p = AugParams { crop: CropRect { x: 0.25, y: 0.25, w: 0.5, h: 0.5 }, scale: 2.0 };
        // Crop-relative (0.25, 0.25) on a 100 px canvas sits at pixel 37.5.
        let q = p.map_point([37.5, 37.5], 100, 100);
        assert_eq!([q[0] / 100.0, q[1] / 100.0], [0.5, 0.5]);
    }

    #[test]
    fn out_of_crop_joints_clamp() {
        let p = AugParams { crop: CropRect { x: 0.5, y: 0.0, w: 0.5, h: 1.0 }, scale: 1.0 };
        assert_eq!(p.map_point([10.0, 5.0], 40, 40), [0.0, 5.0]);
        assert_eq!(p.map_point([45.0, 5.0], 40, 40), [40.0, 5.0]);
    }

    #[test]
    fn degenerate_crop_rejected() {
        let seq = PoseSequence::new(SkeletonTree::new(vec![0]).unwrap(), vec![vec![[1.0, 1.0]]]).unwrap();
        let p = AugParams { crop: CropRect { x: 0.0, y: 0.0, w: 0.0, h: 1.0 }, scale: 1.0 };
        assert!(matches!(apply_aug(&seq, &p, (8, 8)), Err(Error::Domain(_))));
    }

    #[test]
    fn degenerate_bone_names_joint() {
        let tree = SkeletonTree::new(vec![0, 0, 1]).unwrap();
        let reference = Skeleton::new(tree.clone(), vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        let seq = PoseSequence::new(tree, vec![vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]]]).unwrap();
        assert!(matches!(retarget_bones(&reference, &seq), Err(Error::DegenerateBone { joint: 2 })));
    }

    #[test]
    fn stretch_out_of_range() {
        let seq = PoseSequence::new(SkeletonTree::new(vec![0]).unwrap(), vec![vec![[1.0, 1.0]]]).unwrap();
        assert!(stretch_skeleton(&seq, 0.4, 1.0).is_err());
        assert!(stretch_skeleton(&seq, 1.0, 2.5).is_err());
    }
}
