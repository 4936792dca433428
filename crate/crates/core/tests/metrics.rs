use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ucm_core::eval::{camera_errors, check_palindrome, cycle_trajectory, mse, psnr, rot_err, ssim, trans_err};
use ucm_core::geometry::{compose, CameraPose, Trajectory};
use ucm_core::image::Image;

fn quat_strategy() -> impl Strategy<Value = UnitQuaternion<f64>> {
    prop::array::uniform4(-1.0f64..1.0).prop_filter_map("zero quaternion", |q| {
        let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        (q.norm() > 1e-2).then(|| UnitQuaternion::from_quaternion(q))
    })
}

fn pose(q: &UnitQuaternion<f64>, t: [f64; 3]) -> CameraPose {
    CameraPose::new(q.to_rotation_matrix().into_inner(), Vector3::from(t)).unwrap()
}

proptest! {
    #[test]
    fn rotation_error_matches_quaternion_angle(
        qs in prop::collection::vec((quat_strategy(), quat_strategy()), 1..6)
    ) {
        let a = Trajectory::new(qs.iter().map(|(p, _)| pose(p, [0.0; 3])).collect()).unwrap();
        let b = Trajectory::new(qs.iter().map(|(_, q)| pose(q, [0.0; 3])).collect()).unwrap();
        let expected = qs
            .iter()
            .map(|(p, q)| 2.0 * (p.inverse() * q).w.abs().min(1.0).acos())
            .sum::<f64>()
            / qs.len() as f64;
        prop_assert!((rot_err(&a, &b).unwrap() - expected.to_degrees()).abs() < 1e-6);
    }

    #[test]
    fn translation_error_is_mean_distance(ts in prop::collection::vec((prop::array::uniform3(-9.0f64..9.0), prop::array::uniform3(-9.0f64..9.0)), 1..8)) {
        let id = UnitQuaternion::identity();
        let a = Trajectory::new(ts.iter().map(|(p, _)| pose(&id, *p)).collect()).unwrap();
        let b = Trajectory::new(ts.iter().map(|(_, q)| pose(&id, *q)).collect()).unwrap();
        let mut sum = 0.0;
        for (p, q) in &ts {
            sum += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        }
        prop_assert!((trans_err(&a, &b).unwrap() - sum / ts.len() as f64).abs() < 1e-9);
    }

    // A rigid change of world frame applied to both trajectories does not
    // change the normalized errors.
    #[test]
    fn normalized_errors_ignore_world_frame(
        qs in prop::collection::vec((quat_strategy(), prop::array::uniform3(-3.0f64..3.0)), 2..6),
        g in quat_strategy(),
        gt in prop::array::uniform3(-5.0f64..5.0),
        noise in 0.0f64..0.3,
    ) {
        let a: Vec<CameraPose> = qs.iter().map(|(q, t)| pose(q, *t)).collect();
        let b: Vec<CameraPose> = a
            .iter()
            .map(|p| compose(p, &CameraPose::from_axis_angle(Vector3::z(), noise, Vector3::new(noise, 0.0, 0.0))))
            .collect();
        let w = pose(&g, gt);
        let wa: Vec<CameraPose> = a.iter().map(|p| compose(&w, p)).collect();
        let wb: Vec<CameraPose> = b.iter().map(|p| compose(&w, p)).collect();
        let (r1, t1) = camera_errors(&Trajectory::new(a).unwrap(), &Trajectory::new(b).unwrap()).unwrap();
        let (r2, t2) = camera_errors(&Trajectory::new(wa).unwrap(), &Trajectory::new(wb).unwrap()).unwrap();
        prop_assert!((r1 - r2).abs() < 1e-6);
        prop_assert!((t1 - t2).abs() < 1e-6);
    }

    #[test]
    fn psnr_decreases_with_noise(seed in any::<u64>(), s1 in 0.01f32..0.2, extra in 0.01f32..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Image::from_data(16, 16, (0..768).map(|_| rng.random::<f32>()).collect());
        let dir: Vec<f32> = (0..768).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let at = |s: f32| Image::from_data(16, 16, base.data.iter().zip(&dir).map(|(b, d)| b + s * d).collect());
        prop_assert!(psnr(&base, &at(s1)).unwrap() > psnr(&base, &at(s1 + extra)).unwrap());
    }
}

/// Direct (non-separable) SSIM over every 11x11 window.
fn ssim_direct(a: &Image, b: &Image) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    let mut n = 0;
    for ch in 0..3 {
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wt = g[dy] * g[dx] / (gs * gs);
                        let i = 3 * ((y0 + dy) * w + x0 + dx) + ch;
                        let (x, y) = (a.data[i] as f64, b.data[i] as f64);
                        mx += wt * x;
                        my += wt * y;
                        sxx += wt * x * x;
                        syy += wt * y * y;
                        sxy += wt * x * y;
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                n += 1;
            }
        }
    }
    total / n as f64
}

#[test]
fn ssim_matches_direct_window_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let a = Image::from_data(20, 17, (0..20 * 17 * 3).map(|_| rng.random::<f32>()).collect());
        let b = Image::from_data(20, 17, a.data.iter().map(|x| (x + rng.random_range(-0.2f32..0.2)).clamp(0.0, 1.0)).collect());
        assert!((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs() < 1e-9);
    }
}

#[test]
fn ssim_of_constant_images_is_luminance_term() {
    let a = Image::filled(16, 16, [0.25; 3]);
    let b = Image::filled(16, 16, [0.5; 3]);
    let c1 = 0.01f64.powi(2);
    let expected = (2.0 * 0.25 * 0.5 + c1) / (0.0625 + 0.25 + c1);
    assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
}

#[test]
fn uniform_offset_mse() {
    let a = Image::filled(8, 8, [0.3; 3]);
    let b = Image::filled(8, 8, [0.8; 3]);
    assert!((mse(&a, &b).unwrap() - 0.25).abs() < 1e-12);
    assert!(mse(&a, &Image::filled(8, 9, [0.0; 3])).is_err());
}

#[test]
fn cycle_trajectories_are_palindromes() {
    let poses: Vec<CameraPose> = (0..5).map(|i| CameraPose::from_axis_angle(Vector3::y(), 0.1 * i as f64, Vector3::new(i as f64, 0.0, 0.0))).collect();
    let c = cycle_trajectory(&Trajectory::new(poses).unwrap());
    assert_eq!(c.len(), 9);
    check_palindrome(&c).unwrap();
}
