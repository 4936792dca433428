//! Camera pose algebra, pinhole projection and depth lifting.
//!
//! Poses are camera-to-world rigid transforms. Pixel `(0, 0)` is the center of
//! the top-left pixel; image coordinates are continuous reals.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

/// Projection validity threshold on camera-space depth.
pub const Z_MIN: f64 = 1e-4;

const ORTHO_TOL: f64 = 1e-6;
const DRIFT_TOL: f64 = 1e-9;
const NORMALIZE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    Intrinsics(&'static str),
    #[error("rotation is not orthonormal with unit determinant (residual {residual:e}, det {det})")]
    NotRotation { residual: f64, det: f64 },
    #[error("non-finite pose entry")]
    NonFinite,
    #[error("trajectory must contain at least one pose")]
    EmptyTrajectory,
    #[error("temporal stride must be at least 1")]
    ZeroStride,
    #[error("depth map is {got_w}x{got_h} but intrinsics expect {want_w}x{want_h}")]
    DepthShape {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

/// Pinhole intrinsics for a `width x height` image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels with the principal point at the image center and the given
    /// horizontal field of view.
    pub fn from_fov(width: u32, height: u32, hfov_deg: f64) -> Result<Self, GeometryError> {
        let fx = 0.5 * width as f64 / libm::tan(0.5 * hfov_deg.to_radians());
        Self::new(
            fx,
            fx,
            (width as f64 - 1.0) * 0.5,
            (height as f64 - 1.0) * 0.5,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::Intrinsics("image dimensions must be positive"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(GeometryError::Intrinsics("focal lengths must be positive and finite"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) || !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::Intrinsics("principal point outside the image"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn project(&self, p_cam: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }

    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let residual = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if residual > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(GeometryError::NotRotation { residual, det });
        }
        Ok(Self { rotation, translation })
    }

    /// Projects `rotation` onto SO(3) before constructing the pose.
    pub fn from_approx(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::new(nearest_rotation(rotation), translation)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = match nalgebra::Unit::try_new(axis, 1e-12) {
            Some(axis) => *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix(),
            None => Matrix3::identity(),
        };
        Self { rotation, translation }
    }

    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self, GeometryError> {
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(rotation, translation)
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4x4 rows, as used by the pose file format.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix4();
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x = m[(r, c)];
            }
        }
        rows
    }

    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Result<Self, GeometryError> {
        Self::from_matrix4(&Matrix4::from_fn(|r, c| rows[r][c]))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera-frame point to world frame.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World-frame point to camera frame.
    pub fn apply_inverse(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn with_translation(&self, t: Vector3<f64>) -> Self {
        Self {
            rotation: self.rotation,
            translation: t,
        }
    }

    /// Geodesic angle to `other` in radians.
    pub fn angle_to(&self, other: &CameraPose) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }
}

/// Geodesic rotation angle of `r` in radians, from the trace with a clamped domain.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    libm::acos(c)
}

/// Closest rotation in Frobenius norm.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Matrix3::identity(),
    };
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

pub fn invert_pose(p: &CameraPose) -> CameraPose {
    let rt = p.rotation.transpose();
    CameraPose {
        rotation: rt,
        translation: -(rt * p.translation),
    }
}

/// `a ∘ b`: applies `b` first, then `a`.
pub fn compose(a: &CameraPose, b: &CameraPose) -> CameraPose {
    let mut rotation = a.rotation * b.rotation;
    let drift = (rotation.transpose() * rotation - Matrix3::identity()).amax();
    if drift > DRIFT_TOL {
        rotation = nearest_rotation(&rotation);
    }
    CameraPose {
        rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// Ordered, non-empty sequence of camera poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory(Vec<CameraPose>);

impl Trajectory {
    pub fn new(poses: Vec<CameraPose>) -> Result<Self, GeometryError> {
        if poses.is_empty() {
            return Err(GeometryError::EmptyTrajectory);
        }
        Ok(Self(poses))
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> &CameraPose {
        &self.0[0]
    }

    pub fn last(&self) -> &CameraPose {
        &self.0[self.0.len() - 1]
    }

    pub fn into_poses(self) -> Vec<CameraPose> {
        self.0
    }

    /// Sub-trajectory `[start, end)`; panics on an empty or out-of-range slice.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        assert!(start < end && end <= self.0.len(), "bad trajectory slice {start}..{end}");
        Trajectory(self.0[start..end].to_vec())
    }
}

impl core::ops::Index<usize> for Trajectory {
    type Output = CameraPose;
    fn index(&self, i: usize) -> &CameraPose {
        &self.0[i]
    }
}

/// Depth along the camera z axis with per-pixel validity, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// All-valid map. Non-finite or non-positive entries are marked invalid.
    pub fn from_values(width: usize, height: usize, depth: Vec<f64>) -> Self {
        assert_eq!(depth.len(), width * height);
        let valid = depth.iter().map(|&z| z.is_finite() && z > 0.0).collect();
        Self { width, height, depth, valid }
    }

    pub fn constant(width: usize, height: usize, z: f64) -> Self {
        Self::from_values(width, height, alloc::vec![z; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.depth[i])
    }

    pub fn check_against(&self, k: &Intrinsics) -> Result<(), GeometryError> {
        if self.width != k.width as usize || self.height != k.height as usize {
            return Err(GeometryError::DepthShape {
                got_w: self.width,
                got_h: self.height,
                want_w: k.width as usize,
                want_h: k.height as usize,
            });
        }
        Ok(())
    }
}

/// World-frame points lifted from a depth map, one per valid source pixel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Row-major source pixel index of each point.
    pub pixels: Vec<usize>,
    pub colors: Vec<[f32; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Inverse perspective projection of every valid pixel into the world frame.
/// Points carry black colors; see [`lift_rgbd`] for colored clouds.
pub fn lift_depth(d: &DepthMap, pose: &CameraPose, k: &Intrinsics) -> Result<PointCloud, GeometryError> {
    d.check_against(k)?;
    let mut pc = PointCloud::default();
    for y in 0..d.height {
        for x in 0..d.width {
            let i = y * d.width + x;
            if !d.valid[i] {
                continue;
            }
            let p_cam = k.unproject(x as f64, y as f64, d.depth[i]);
            pc.points.push(pose.apply(&p_cam));
            pc.pixels.push(i);
            pc.colors.push([0.0; 3]);
        }
    }
    Ok(pc)
}

/// [`lift_depth`] with per-point colors taken from an interleaved RGB buffer.
pub fn lift_rgbd(d: &DepthMap, rgb: &[f32], pose: &CameraPose, k: &Intrinsics) -> Result<PointCloud, GeometryError> {
    assert_eq!(rgb.len(), 3 * d.width * d.height, "color buffer does not match depth map");
    let mut pc = lift_depth(d, pose, k)?;
    for (c, &i) in pc.colors.iter_mut().zip(&pc.pixels) {
        *c = [rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]];
    }
    Ok(pc)
}

/// Image-plane location of a projected point. `u`, `v` are unclamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub valid: bool,
}

pub fn project_point(p: &Vector3<f64>, pose: &CameraPose, k: &Intrinsics) -> Projection {
    let c = pose.apply_inverse(p);
    let (u, v) = k.project(&c);
    Projection {
        u,
        v,
        z: c.z,
        valid: c.z > Z_MIN,
    }
}

pub fn project_points(pc: &PointCloud, pose: &CameraPose, k: &Intrinsics) -> Vec<Projection> {
    pc.points.iter().map(|p| project_point(p, pose, k)).collect()
}

/// Number of latent frames for `t` video frames at temporal stride `r`.
pub fn latent_frame_count(t: usize, r: usize) -> usize {
    (t + r - 1) / r
}

/// Frame-index groups pooled into each latent frame: the first frame alone,
/// then runs of `r`, with the final group absorbing any remainder so that
/// exactly `latent_frame_count(t, r)` groups are produced.
pub fn latent_groups(t: usize, r: usize) -> Vec<core::ops::Range<usize>> {
    let n = latent_frame_count(t, r);
    if n <= 1 {
        return alloc::vec![0..t];
    }
    let mut groups = Vec::with_capacity(n);
    groups.push(0..1);
    let mut start = 1;
    for g in 1..n {
        let end = if g == n - 1 { t } else { start + r };
        groups.push(start..end);
        start = end;
    }
    groups
}

/// Average pooling of a frame-rate trajectory to latent rate. Translations
/// are averaged arithmetically; rotations by chordal mean projected to SO(3).
pub fn pool_trajectory(traj: &Trajectory, r: usize) -> Result<Trajectory, GeometryError> {
    if r == 0 {
        return Err(GeometryError::ZeroStride);
    }
    if r == 1 {
        return Ok(traj.clone());
    }
    let poses = latent_groups(traj.len(), r)
        .into_iter()
        .map(|g| {
            let n = g.len() as f64;
            let mut rot = Matrix3::zeros();
            let mut t = Vector3::zeros();
            for p in &traj.poses()[g] {
                rot += p.rotation;
                t += p.translation;
            }
            CameraPose {
                rotation: nearest_rotation(&(rot / n)),
                translation: t / n,
            }
        })
        .collect();
    Trajectory::new(poses)
}

/// Poses relative to the first frame, translations scaled by the largest
/// translation norm.
pub fn normalize_relative(traj: &Trajectory) -> Trajectory {
    let inv0 = invert_pose(traj.first());
    let mut poses: Vec<CameraPose> = traj.poses().iter().map(|p| compose(&inv0, p)).collect();
    poses[0] = CameraPose::identity();
    let max_norm = poses.iter().map(|p| p.translation.norm()).fold(0.0, f64::max);
    if max_norm > NORMALIZE_EPS {
        for p in &mut poses {
            p.translation /= max_norm;
        }
    }
    Trajectory(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn cam() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap()
    }

    fn zrot(deg: f64) -> CameraPose {
        CameraPose::from_axis_angle(Vector3::z(), deg.to_radians(), Vector3::zeros())
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 4).is_err());
    }

    #[test]
    fn rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraPose::new(m, Vector3::zeros()).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraPose::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn invert_identity_and_translation() {
        assert_eq!(invert_pose(&CameraPose::identity()), CameraPose::identity());
        let t = CameraPose::from_translation(Vector3::new(1.0, -2.0, 3.0));
        assert_eq!(*invert_pose(&t).translation(), Vector3::new(-1.0, 2.0, -3.0));
    }

    #[test]
    fn planar_rotations_add() {
        let c = compose(&zrot(30.0), &zrot(60.0));
        assert!((c.rotation() - zrot(90.0).rotation()).amax() < 1e-12);
        assert_eq!(compose(&CameraPose::identity(), &zrot(17.0)), zrot(17.0));
    }

    #[test]
    fn principal_ray_lifts_to_axis() {
        let k = cam();
        let mut d = DepthMap::constant(101, 101, 1.0);
        d.depth[50 * 101 + 50] = 3.5;
        let pc = lift_depth(&d, &CameraPose::identity(), &k).unwrap();
        let i = pc.pixels.iter().position(|&p| p == 50 * 101 + 50).unwrap();
        assert_eq!(pc.points[i], Vector3::new(0.0, 0.0, 3.5));
    }

    #[test]
    fn invalid_pixels_produce_no_points() {
        let k = cam();
        let mut d = DepthMap::constant(101, 101, 2.0);
        d.valid[0] = false;
        d.valid[17] = false;
        let pc = lift_depth(&d, &CameraPose::identity(), &k).unwrap();
        assert_eq!(pc.len(), 101 * 101 - 2);
    }

    #[test]
    fn lift_rejects_shape_mismatch() {
        let d = DepthMap::constant(10, 10, 1.0);
        assert!(matches!(
            lift_depth(&d, &CameraPose::identity(), &cam()),
            Err(GeometryError::DepthShape { .. })
        ));
    }

    #[test]
    fn constant_depth_is_planar() {
        let pc = lift_depth(&DepthMap::constant(101, 101, 2.5), &CameraPose::identity(), &cam()).unwrap();
        assert!(pc.points.iter().all(|p| (p.z - 2.5).abs() < 1e-6));
    }

    #[test]
    fn pinhole_hand_arithmetic() {
        let k = cam();
        let id = CameraPose::identity();
        let p = project_point(&Vector3::new(0.0, 0.0, 2.0), &id, &k);
        assert_eq!((p.u, p.v, p.z, p.valid), (50.0, 50.0, 2.0, true));
        let p = project_point(&Vector3::new(1.0, 0.0, 2.0), &id, &k);
        assert_eq!(p.u, 100.0);
        assert!(!project_point(&Vector3::new(0.0, 0.0, -1.0), &id, &k).valid);
    }

    #[test]
    fn pool_counts_and_identity() {
        assert_eq!(latent_frame_count(81, 4), 21);
        let poses: Vec<_> = (0..81).map(|i| zrot(i as f64)).collect();
        let traj = Trajectory::new(poses).unwrap();
        assert_eq!(pool_trajectory(&traj, 4).unwrap().len(), 21);
        assert_eq!(pool_trajectory(&traj, 1).unwrap(), traj);
        let constant = Trajectory::new(alloc::vec![zrot(20.0); 9]).unwrap();
        let pooled = pool_trajectory(&constant, 4).unwrap();
        for p in pooled.poses() {
            assert!((p.rotation() - zrot(20.0).rotation()).amax() < 1e-12);
        }
        assert_eq!(pool_trajectory(&traj, 0), Err(GeometryError::ZeroStride));
        assert_eq!(Trajectory::new(Vec::new()), Err(GeometryError::EmptyTrajectory));
    }

    #[test]
    fn groups_partition_frames() {
        for t in 1..60 {
            for r in 1..=t {
                let g = latent_groups(t, r);
                assert_eq!(g.len(), latent_frame_count(t, r));
                assert_eq!(g[0].start, 0);
                assert_eq!(g.last().unwrap().end, t);
                for w in g.windows(2) {
                    assert_eq!(w[0].end, w[1].start);
                    assert!(!w[1].is_empty());
                }
            }
        }
    }

    #[test]
    fn normalize_first_is_identity_and_halves() {
        let traj = Trajectory::new(alloc::vec![
            CameraPose::identity(),
            CameraPose::from_translation(Vector3::new(2.0, 0.0, 0.0)),
            CameraPose::from_translation(Vector3::new(0.0, 1.0, 0.0)),
        ])
        .unwrap();
        let n = normalize_relative(&traj);
        assert_eq!(n[0], CameraPose::identity());
        assert_eq!(*n[1].translation(), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(*n[2].translation(), Vector3::new(0.0, 0.5, 0.0));
        let moved = Trajectory::new(alloc::vec![zrot(40.0), zrot(70.0)]).unwrap();
        assert_eq!(normalize_relative(&moved)[0], CameraPose::identity());
    }

    #[test]
    fn rotation_angle_of_axis_rotation() {
        let a = zrot(0.0);
        let b = zrot(123.0);
        assert!((a.angle_to(&b) - 123.0_f64.to_radians()).abs() < 1e-12);
        assert!((rotation_angle(zrot(180.0).rotation()) - PI).abs() < 1e-7);
    }
}
