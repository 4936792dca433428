use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use ucm_core::geometry::{
    compose, invert_pose, lift_depth, normalize_relative, pool_trajectory, project_point, CameraPose, DepthMap,
    Intrinsics, Trajectory,
};

fn pose_strategy() -> impl Strategy<Value = CameraPose> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        0.0f64..3.1,
        prop::array::uniform3(-5.0f64..5.0),
    )
        .prop_filter_map("degenerate axis", |(a, angle, t)| {
            let axis = Vector3::from(a);
            (axis.norm() > 1e-3).then(|| CameraPose::from_axis_angle(axis.normalize(), angle, Vector3::from(t)))
        })
}

fn cam() -> Intrinsics {
    Intrinsics::from_fov(64, 64, 90.0).unwrap()
}

proptest! {
    #[test]
    fn lift_then_project_returns_pixel(pose in pose_strategy(), x in 0usize..64, y in 0usize..64, z in 0.05f64..50.0) {
        let k = cam();
        let mut depth = vec![1.0; 64 * 64];
        depth[y * 64 + x] = z;
        let d = DepthMap::from_values(64, 64, depth);
        let pc = lift_depth(&d, &pose, &k).unwrap();
        let i = pc.pixels.iter().position(|&p| p == y * 64 + x).unwrap();
        let pr = project_point(&pc.points[i], &pose, &k);
        prop_assert!(pr.valid);
        prop_assert!((pr.u - x as f64).abs() < 1e-6);
        prop_assert!((pr.v - y as f64).abs() < 1e-6);
        prop_assert!((pr.z - z).abs() < 1e-9 * z.max(1.0));
    }

    #[test]
    fn inverse_composes_to_identity(p in pose_strategy()) {
        let e = compose(&p, &invert_pose(&p)).to_matrix4() - CameraPose::identity().to_matrix4();
        prop_assert!(e.amax() < 1e-12);
    }

    #[test]
    fn matrix_rows_round_trip(p in pose_strategy()) {
        let q = CameraPose::from_rows(&p.to_rows()).unwrap();
        prop_assert_eq!(q, p);
    }

    #[test]
    fn normalized_first_pose_is_identity(ps in prop::collection::vec(pose_strategy(), 2..6)) {
        let n = normalize_relative(&Trajectory::new(ps).unwrap());
        prop_assert_eq!(*n.first(), CameraPose::identity());
        let max = n.poses().iter().map(|p| p.translation().norm()).fold(0.0, f64::max);
        prop_assert!(max <= 1.0 + 1e-12);
    }

    #[test]
    fn pooling_keeps_rotations_orthonormal(ps in prop::collection::vec(pose_strategy(), 1..10), r in 1usize..5) {
        let pooled = pool_trajectory(&Trajectory::new(ps.clone()).unwrap(), r).unwrap();
        prop_assert_eq!(pooled.len(), ps.len().div_ceil(r));
        for p in pooled.poses() {
            let rot = p.rotation();
            prop_assert!((rot.transpose() * rot - Matrix3::identity()).amax() < 1e-9);
            prop_assert!((rot.determinant() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn non_rotation_rejected() {
    let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0);
    assert!(CameraPose::new(m, Vector3::zeros()).is_err());
}
