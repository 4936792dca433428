use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ucm_core::geometry::{CameraPose, DepthMap, Intrinsics, Trajectory};
use ucm_core::image::Image;
use ucm_core::memory::{assign_viewpoints, retrieve_top_m, FrustumParams, FrustumSampler, MemoryBank};

const NEAR: f64 = 0.1;
const FAR: f64 = 8.0;

fn cam() -> Intrinsics {
    Intrinsics::from_fov(64, 64, 90.0).unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng, max_angle: f64, max_t: f64) -> CameraPose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vector3::y() } else { axis.normalize() };
    let t = Vector3::from_fn(|_, _| rng.random_range(-max_t..max_t));
    CameraPose::from_axis_angle(axis, rng.random_range(0.0..max_angle), t)
}

fn in_frustum(p: &Vector3<f64>, pose: &CameraPose, k: &Intrinsics) -> bool {
    let c = pose.rotation().transpose() * (p - pose.translation());
    if c.z < NEAR || c.z > FAR {
        return false;
    }
    let u = k.fx * c.x / c.z + k.cx;
    let v = k.fy * c.y / c.z + k.cy;
    (-0.5..=k.width as f64 - 0.5).contains(&u) && (-0.5..=k.height as f64 - 0.5).contains(&v)
}

/// IoU by counting cell centres of a 64³ grid over the union bounding box.
fn grid_iou(a: &CameraPose, b: &CameraPose, k: &Intrinsics) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for pose in [a, b] {
        for z in [NEAR, FAR] {
            for (u, v) in [(-0.5, -0.5), (63.5, -0.5), (-0.5, 63.5), (63.5, 63.5)] {
                let c = Vector3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
                let w = pose.rotation() * c + pose.translation();
                lo = lo.inf(&w);
                hi = hi.sup(&w);
            }
        }
    }
    let n = 64;
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                let f = Vector3::new(i as f64 + 0.5, j as f64 + 0.5, l as f64 + 0.5) / n as f64;
                let p = lo + (hi - lo).component_mul(&f);
                let (ia, ib) = (in_frustum(&p, a, k), in_frustum(&p, b, k));
                inter += (ia && ib) as usize;
                union += (ia || ib) as usize;
            }
        }
    }
    inter as f64 / union.max(1) as f64
}

fn sampler() -> FrustumSampler {
    FrustumSampler::new(FrustumParams { near: NEAR, far: FAR, ..Default::default() }).unwrap()
}

#[test]
fn monte_carlo_iou_tracks_dense_grid() {
    let s = sampler();
    let k = cam();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..12 {
        let a = random_pose(&mut rng, 3.0, 4.0);
        let rel = random_pose(&mut rng, 0.8, 2.0);
        let b = ucm_core::geometry::compose(&a, &rel);
        let d = (s.iou(&a, &b, &k) - grid_iou(&a, &b, &k)).abs();
        worst = worst.max(d);
    }
    assert!(worst <= 0.05, "max deviation {worst}");
}

fn bank_from(poses: &[CameraPose]) -> MemoryBank {
    let mut bank = MemoryBank::new();
    for p in poses {
        bank.append(Image::new(64, 64), DepthMap::constant(64, 64, 1.0), *p).unwrap();
    }
    bank
}

fn subsets(n: usize, m: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|b| b.count_ones() as usize == m)
        .map(|b| (0..n).filter(|i| b >> i & 1 == 1).collect())
        .collect()
}

#[test]
fn top_m_matches_exhaustive_subset_search() {
    let s = FrustumSampler::new(FrustumParams { near: NEAR, far: FAR, samples: 1000, seed: 3 }).unwrap();
    let k = cam();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let size = rng.random_range(3..=9);
        let m = rng.random_range(1..=size);
        let poses: Vec<CameraPose> = (0..size).map(|_| random_pose(&mut rng, 1.5, 3.0)).collect();
        let targets = Trajectory::new((0..3).map(|_| random_pose(&mut rng, 1.5, 3.0)).collect()).unwrap();
        let bank = bank_from(&poses);
        let r = retrieve_top_m(&bank, &targets, &k, m, &s).unwrap();
        let score = |i: usize| targets.poses().iter().map(|t| s.iou(&poses[i], t, &k)).fold(0.0, f64::max);
        let all: Vec<f64> = (0..size).map(score).collect();
        let best = subsets(size, m)
            .iter()
            .map(|sub| sub.iter().map(|&i| all[i]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let got: f64 = r.indices.iter().map(|&i| all[i]).sum();
        assert!((got - best).abs() < 1e-12, "trial {trial}: {got} vs {best}");
        assert_eq!(r.indices.len(), m);
        for w in r.scores.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for (j, &i) in r.indices.iter().enumerate() {
            assert_eq!(r.scores[j], all[i]);
        }
        assert_eq!(r.assignments, assign_viewpoints(&r.iou).unwrap());
    }
}

#[test]
fn ties_prefer_recent_frames() {
    let s = sampler();
    let p = CameraPose::from_translation(Vector3::new(0.3, 0.0, 0.0));
    let bank = bank_from(&[p, p, p]);
    let targets = Trajectory::new(vec![CameraPose::identity(), p]).unwrap();
    let r = retrieve_top_m(&bank, &targets, &cam(), 2, &s).unwrap();
    assert_eq!(r.indices, [2, 1]);
    assert_eq!(r.assignments, [2, 2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn iou_is_symmetric_and_bounded(seed in any::<u64>()) {
        let s = FrustumSampler::new(FrustumParams { samples: 512, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_pose(&mut rng, 3.0, 5.0);
        let b = random_pose(&mut rng, 3.0, 5.0);
        let k = cam();
        let (ab, ba) = (s.iou(&a, &b, &k), s.iou(&b, &a, &k));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(s.iou(&a, &a, &k), 1.0);
    }
}
