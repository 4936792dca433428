use nalgebra::Vector3;
use proptest::prelude::*;
use ucm_core::geometry::{CameraPose, DepthMap, Intrinsics};
use ucm_core::pe_warp::{assemble_condition_set, compute_warp_maps, MultiLevelPeConfig, TimeAwarePe, WarpMaps};

fn cam() -> Intrinsics {
    Intrinsics::from_fov(64, 64, 90.0).unwrap()
}

fn pose_strategy() -> impl Strategy<Value = CameraPose> {
    (prop::array::uniform3(-1.0f64..1.0), 0.0f64..3.0, prop::array::uniform3(-3.0f64..3.0)).prop_filter_map(
        "degenerate axis",
        |(a, angle, t)| {
            let axis = Vector3::from(a);
            (axis.norm() > 1e-3).then(|| CameraPose::from_axis_angle(axis.normalize(), angle, Vector3::from(t)))
        },
    )
}

fn max_pe_diff(a: &TimeAwarePe, b: &TimeAwarePe) -> f64 {
    let mut m: f64 = 0.0;
    for (la, lb) in a.levels.iter().zip(&b.levels) {
        assert_eq!(la.valid, lb.valid);
        for j in 0..la.u.len() {
            m = m.max((la.u[j] - lb.u[j]).abs()).max((la.v[j] - lb.v[j]).abs());
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Covers the exact-equality shortcut and the full lift/project path with
    // a pose that differs only in rounding.
    #[test]
    fn same_pose_reproduces_native_grid(pose in pose_strategy(), z in 0.5f64..20.0, tau in 1usize..6) {
        let k = cam();
        let cfg = MultiLevelPeConfig::two_level(8).unwrap();
        let native = TimeAwarePe::native(64, 64, tau, 8, &cfg).unwrap();
        let d = DepthMap::constant(64, 64, z);
        let nudged = CameraPose::from_rows(&{
            let mut r = pose.to_rows();
            r[0][3] += r[0][3].abs() * f64::EPSILON;
            r
        }).unwrap();
        for dst in [pose, nudged] {
            let maps = compute_warp_maps(&d, &pose, &dst, &k).unwrap();
            let pe = TimeAwarePe::from_maps(&maps, tau, 8, &cfg).unwrap();
            prop_assert_eq!(pe.tau, native.tau);
            prop_assert!(max_pe_diff(&pe, &native) <= 1e-5);
        }
    }

    #[test]
    fn lateral_baseline_gives_uniform_disparity(b in -1.0f64..1.0, z in 1.0f64..30.0) {
        let k = cam();
        let d = DepthMap::constant(64, 64, z);
        let dst = CameraPose::from_translation(Vector3::new(b, 0.0, 0.0));
        let maps = compute_warp_maps(&d, &CameraPose::identity(), &dst, &k).unwrap();
        let expected = -k.fx * b / z;
        for y in 0..64 {
            for x in 0..64 {
                let i = y * 64 + x;
                prop_assert!(maps.valid[i]);
                prop_assert!((maps.u[i] - x as f64 - expected).abs() <= 1e-9);
                prop_assert!((maps.v[i] - y as f64).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn condition_set_orders_reference_then_memories(frames in 1usize..6, assign in prop::collection::vec(1usize..6, 0..6)) {
        let assign: Vec<usize> = assign.into_iter().map(|a| (a - 1) % frames + 1).collect();
        let cfg = MultiLevelPeConfig::single_level(4);
        let id = WarpMaps::identity(16, 16);
        let set = assemble_condition_set(frames, &vec![id.clone(); frames], &vec![id; assign.len()], &assign, 4, &cfg).unwrap();
        prop_assert_eq!(set.memories(), assign.len());
        prop_assert_eq!(set.memory_assignments(), assign.clone());
        let expected: Vec<usize> = (1..=frames).chain(assign.iter().copied()).collect();
        prop_assert_eq!(set.frame_assignments(), expected.clone());
        for (e, f) in set.entries.iter().zip(&expected) {
            prop_assert_eq!(e.pe.tau, *f);
        }
        prop_assert_eq!(set.token_count(), (frames + assign.len()) * 16);
    }
}

#[test]
fn out_of_range_assignment_rejected() {
    let cfg = MultiLevelPeConfig::single_level(4);
    let id = WarpMaps::identity(16, 16);
    for bad in [0, 4] {
        assert!(assemble_condition_set(3, &vec![id.clone(); 3], &[id.clone()], &[bad], 4, &cfg).is_err());
    }
}
