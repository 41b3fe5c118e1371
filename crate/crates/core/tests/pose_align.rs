use longanim::latent_codec::{Frame, FrameSeq, FrameShape};
use longanim::pose_align::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Forward kinematics: random bone lengths shared by all frames, random
/// bone directions per frame.
fn rigid_sequence(seed: u64, frames: usize) -> PoseSequence<f64> {
    let tree = SkeletonTree::body();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lengths: Vec<f64> = (0..JOINT_COUNT).map(|_| rng.random_range(2.0..20.0)).collect();
    let poses = (0..frames)
        .map(|_| {
            let mut joints = vec![[rng.random_range(20.0..80.0), rng.random_range(20.0..80.0)]; JOINT_COUNT];
            for &j in tree.traversal() {
                let p = joints[tree.parent(j)];
                let (s, c) = rng.random_range(0.0..std::f64::consts::TAU).sin_cos();
                joints[j] = [p[0] + lengths[j] * c, p[1] + lengths[j] * s];
            }
            joints
        })
        .collect();
    PoseSequence::new(tree, poses).unwrap()
}

fn max_joint_error(a: &PoseSequence<f64>, b: &PoseSequence<f64>) -> f64 {
    a.frames()
        .iter()
        .flatten()
        .zip(b.frames().iter().flatten())
        .map(|(p, q)| (p[0] - q[0]).abs().max((p[1] - q[1]).abs()))
        .fold(0.0, f64::max)
}

fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn isotropic_stretch_is_undone_by_retargeting() {
    for seed in 0..50 {
        let seq = rigid_sequence(seed, 6);
        let s = 0.5 + 1.5 * (seed as f64 / 49.0);
        let stretched = stretch_skeleton(&seq, s, s).unwrap();
        let back = retarget_bones(&seq.skeleton(0), &stretched).unwrap();
        let err = max_joint_error(&back, &seq);
        assert!(err < 1e-9, "seed {seed}, s {s}: error {err}");
    }
}

#[test]
fn reference_frame_is_a_fixed_point() {
    let seq = rigid_sequence(3, 8);
    for k in 0..seq.len() {
        let one = PoseSequence::from_skeletons(&[seq.skeleton(k)]).unwrap();
        assert_eq!(retarget_bones(&seq.skeleton(k), &one).unwrap(), one);
    }
}

#[test]
fn retargeting_is_idempotent() {
    let seq = rigid_sequence(4, 5);
    let driving = stretch_skeleton(&seq, 1.7, 0.6).unwrap();
    let once = retarget_bones(&seq.skeleton(2), &driving).unwrap();
    let twice = retarget_bones(&seq.skeleton(2), &once).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn horizontal_stretch_example() {
    let tree = SkeletonTree::new(vec![0, 0, 0]).unwrap();
    let seq = PoseSequence::new(tree, vec![vec![[10.0, 10.0], [13.0, 10.0], [10.0, 14.0]]]).unwrap();
    let out = stretch_skeleton(&seq, 2.0, 1.0).unwrap();
    assert_eq!(out.joints(0), &[[10.0, 10.0], [16.0, 10.0], [10.0, 14.0]]);
    let s = out.skeleton(0);
    assert_eq!(s.root(), [10.0, 10.0]);
    assert_eq!(s.bone_lengths(), vec![0.0, 6.0, 4.0]);
}

#[test]
fn augmentation_streams_are_uncorrelated() {
    let draws: Vec<(AugParams<f64>, AugParams<f64>)> = (0..1000).map(sample_aug_pair).collect();
    let fields: [fn(&AugParams<f64>) -> f64; 5] = [|p| p.scale, |p| p.crop.x, |p| p.crop.y, |p| p.crop.w, |p| p.crop.h];
    for f in fields {
        let xs: Vec<f64> = draws.iter().map(|(a, _)| f(a)).collect();
        let ys: Vec<f64> = draws.iter().map(|(_, b)| f(b)).collect();
        let rho = correlation(&xs, &ys);
        assert!(rho.abs() < 0.1, "rho {rho}");
    }
    for (a, b) in &draws {
        a.validate().unwrap();
        b.validate().unwrap();
        assert!(a.crop.w >= MIN_CROP && a.crop.h >= MIN_CROP);
    }
    assert_eq!(sample_aug_pair::<f64>(7), sample_aug_pair::<f64>(7));
}

#[test]
fn identity_augmentation_is_exact() {
    let shape = FrameShape::new(6, 5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let frames = FrameSeq::new(
        (0..3).map(|_| Frame::new(shape, (0..shape.len()).map(|_| rng.random()).collect()).unwrap()).collect(),
    )
    .unwrap();
    let id = AugParams::<f64>::identity();
    assert_eq!(apply_aug(&frames, &id, (5, 6)).unwrap(), frames);
    let seq = rigid_sequence(1, 3).map_joints(|q| [q[0].clamp(0.0, 100.0), q[1].clamp(0.0, 100.0)]);
    assert_eq!(apply_aug(&seq, &id, (100, 100)).unwrap(), seq);
}

#[test]
fn frames_and_poses_stay_registered() {
    // A single bright pixel follows its joint through crop and zoom.
    let (w, h) = (40, 40);
    let p = AugParams { crop: CropRect { x: 0.25, y: 0.25, w: 0.5, h: 0.5 }, scale: 1.0 };
    let mut frame = Frame::filled(FrameShape::new(h, w, 1), 0.0);
    frame.set(15, 20, 0, 1.0);
    let video = FrameSeq::new(vec![frame]).unwrap();
    let tree = SkeletonTree::new(vec![0]).unwrap();
    let pose = PoseSequence::new(tree, vec![vec![[20.5, 15.5]]]).unwrap();

    let out = apply_aug(&video, &p, (w, h)).unwrap();
    let q = apply_aug(&pose, &p, (w, h)).unwrap().joints(0)[0];
    assert_eq!(q, [21.0, 11.0]);
    // Pixel centres at x in {20.5, 21.5} and y in {10.5, 11.5} surround the joint.
    let (mut best, mut at) = (0.0, (0, 0));
    for y in 0..h {
        for x in 0..w {
            if out.frame(0).get(y, x, 0) > best {
                best = out.frame(0).get(y, x, 0);
                at = (x, y);
            }
        }
    }
    assert!((at.0 as f64 + 0.5 - q[0]).abs() <= 1.0 && (at.1 as f64 + 0.5 - q[1]).abs() <= 1.0, "{at:?} vs {q:?}");
}

#[test]
fn alignment_sample_is_consistent() {
    let seq = rigid_sequence(12, 4);
    let s = alignment_sample(&seq, 5).unwrap();
    assert_eq!(s.target, seq);
    assert_eq!(s.driving, stretch_skeleton(&seq, s.stretch.0, s.stretch.1).unwrap());
    assert!(seq.frames().contains(&s.reference.joints));
}

proptest! {
    #[test]
    fn retargeted_bones_match_reference(seed in any::<u64>(), sx in 0.5f64..2.0, sy in 0.5f64..2.0, k in 0usize..4) {
        let seq = rigid_sequence(seed, 4);
        let other = rigid_sequence(seed.wrapping_add(1), 1);
        let driving = stretch_skeleton(&seq, sx, sy).unwrap();
        let out = retarget_bones(&other.skeleton(0), &driving).unwrap();
        let want = other.skeleton(0).bone_lengths();
        for f in 0..out.len() {
            for (got, exp) in out.skeleton(f).bone_lengths().iter().zip(&want) {
                prop_assert!((got - exp).abs() < 1e-9);
            }
            prop_assert_eq!(out.joints(f)[0], driving.joints(f)[0]);
        }
        let again = retarget_bones(&seq.skeleton(k), &out).unwrap();
        prop_assert_eq!(retarget_bones(&seq.skeleton(k), &again).unwrap(), again);
    }

    #[test]
    fn sampled_augmentations_are_valid(seed in any::<u64>()) {
        let (a, b) = sample_aug_pair::<f64>(seed);
        prop_assert!(a.validate().is_ok() && b.validate().is_ok());
        prop_assert!((MIN_SCALE..=MAX_SCALE).contains(&a.scale));
    }
}
