//! Revisit simulation by point-cloud splatting, and the procedural scenes
//! used as training and evaluation data.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{
    compose, lift_rgbd, project_point, CameraPose, DepthMap, GeometryError, Intrinsics, PointCloud, Trajectory,
};
use crate::image::{quantize_channel, Image};
use crate::rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CurationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("frame {index} + shift {shift} is outside 0..{frames}")]
    Shift { index: usize, shift: i64, frames: usize },
    #[error("invalid offset distribution")]
    Offset,
    #[error("clip fields disagree in length")]
    ClipShape,
    #[error("sizes must be at least 1")]
    Size,
}

/// A clip of frames with poses, depth and a scene class.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Image>,
    pub trajectory: Trajectory,
    pub depths: Vec<DepthMap>,
    pub intrinsics: Intrinsics,
    pub class: usize,
}

impl VideoClip {
    pub fn new(
        frames: Vec<Image>,
        trajectory: Trajectory,
        depths: Vec<DepthMap>,
        intrinsics: Intrinsics,
        class: usize,
    ) -> Result<Self, CurationError> {
        if frames.len() != trajectory.len() || frames.len() != depths.len() || frames.is_empty() {
            return Err(CurationError::ClipShape);
        }
        for (f, d) in frames.iter().zip(&depths) {
            if f.width != intrinsics.width as usize || f.height != intrinsics.height as usize {
                return Err(CurationError::ClipShape);
            }
            d.check_against(&intrinsics)?;
        }
        Ok(Self {
            frames,
            trajectory,
            depths,
            intrinsics,
            class,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatRender {
    pub image: Image,
    pub mask: Vec<bool>,
    /// Camera depth of the surviving splat; invalid where the mask is false.
    pub depth: DepthMap,
}

/// Nearest-pixel forward splatting with a z-buffer. On equal depth the
/// earlier point wins.
pub fn splat_render(pc: &PointCloud, pose: &CameraPose, k: &Intrinsics) -> Result<SplatRender, CurationError> {
    if pc.is_empty() {
        return Err(CurationError::EmptyCloud);
    }
    let (w, h) = (k.width as usize, k.height as usize);
    let mut zbuf = alloc::vec![f64::INFINITY; w * h];
    let mut owner = alloc::vec![usize::MAX; w * h];
    for (idx, p) in pc.points.iter().enumerate() {
        let pr = project_point(p, pose, k);
        if !pr.valid {
            continue;
        }
        let (x, y) = (libm::round(pr.u), libm::round(pr.v));
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            continue;
        }
        let i = y as usize * w + x as usize;
        if pr.z < zbuf[i] {
            zbuf[i] = pr.z;
            owner[i] = idx;
        }
    }
    let mut image = Image::new(w, h);
    let mut depth = alloc::vec![0.0; w * h];
    let mask: Vec<bool> = owner.iter().map(|&o| o != usize::MAX).collect();
    for i in 0..w * h {
        if mask[i] {
            image.data[3 * i..3 * i + 3].copy_from_slice(&pc.colors[owner[i]]);
            depth[i] = zbuf[i];
        }
    }
    Ok(SplatRender {
        image,
        mask,
        depth: DepthMap::from_values(w, h, depth),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OffsetDist {
    pub rot_max_deg: f64,
    pub trans_max: f64,
    pub max_shift: usize,
}

impl Default for OffsetDist {
    fn default() -> Self {
        Self {
            rot_max_deg: 15.0,
            trans_max: 0.3,
            max_shift: 8,
        }
    }
}

/// Random camera offset: angle uniform in `[0, rot_max]` about a uniform
/// axis, translation uniform in a cube of half-width `trans_max`.
pub fn sample_offset<R: Rng>(rng: &mut R, dist: &OffsetDist) -> Result<CameraPose, CurationError> {
    if !(dist.rot_max_deg >= 0.0 && dist.rot_max_deg <= 180.0 && dist.trans_max >= 0.0) {
        return Err(CurationError::Offset);
    }
    let axis = loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-9 {
            break v / n;
        }
    };
    let angle = rng.random::<f64>() * dist.rot_max_deg.to_radians();
    let t = Vector3::from_fn(|_, _| (2.0 * rng.random::<f64>() - 1.0) * dist.trans_max);
    Ok(CameraPose::from_axis_angle(axis, angle, t))
}

/// Samples a temporal shift keeping `i + shift` inside `0..frames`.
pub fn sample_shift<R: Rng>(rng: &mut R, i: usize, frames: usize, max_shift: usize) -> i64 {
    let lo = -(i.min(max_shift) as i64);
    let hi = (frames - 1 - i).min(max_shift) as i64;
    rng.random_range(lo..=hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurationSample {
    pub source: usize,
    pub offset: CameraPose,
    pub shift: i64,
    /// Pose the cloud was rendered from: `compose(c[source + shift], offset)`.
    pub pose: CameraPose,
    pub image: Image,
    pub mask: Vec<bool>,
    pub depth: DepthMap,
}

impl CurationSample {
    pub fn target(&self) -> usize {
        (self.source as i64 + self.shift) as usize
    }
}

/// Lifts frame `i` and renders it from the offset pose of frame `i + shift`.
pub fn make_revisit_sample(clip: &VideoClip, i: usize, offset: &CameraPose, shift: i64) -> Result<CurationSample, CurationError> {
    let n = clip.len();
    let j = i as i64 + shift;
    if i >= n || j < 0 || j >= n as i64 {
        return Err(CurationError::Shift {
            index: i,
            shift,
            frames: n,
        });
    }
    let pc = lift_rgbd(&clip.depths[i], &clip.frames[i].data, &clip.trajectory[i], &clip.intrinsics)?;
    let pose = compose(&clip.trajectory[j as usize], offset);
    let r = splat_render(&pc, &pose, &clip.intrinsics)?;
    Ok(CurationSample {
        source: i,
        offset: *offset,
        shift,
        pose,
        image: r.image,
        mask: r.mask,
        depth: r.depth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    Solid,
    Checker,
    Stripes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub base: [f32; 3],
    pub alt: [f32; 3],
    pub scale: f64,
    pub pattern: Pattern,
}

impl Material {
    fn color(&self, a: f64, b: f64) -> [f32; 3] {
        let cell = |x: f64| libm::floor(x / self.scale) as i64;
        let pick = match self.pattern {
            Pattern::Solid => false,
            Pattern::Checker => (cell(a) + cell(b)).rem_euclid(2) == 1,
            Pattern::Stripes => cell(a).rem_euclid(2) == 1,
        };
        if pick {
            self.alt
        } else {
            self.base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub material: Material,
}

/// Axis-aligned rectangle on the plane `x[axis] = offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub axis: usize,
    pub offset: f64,
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub material: Material,
}

/// A closed room (viewed from inside) with boxes and panels. World `y`
/// points down, matching the camera's image `v` axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    /// Faces in order `-x, +x, -y, +y, -z, +z`.
    pub walls: [Material; 6],
    pub boxes: Vec<SceneBox>,
    pub panels: Vec<Panel>,
}

const FACE_SHADE: [f32; 6] = [0.85, 0.75, 1.0, 0.6, 0.9, 0.7];
const HIT_EPS: f64 = 1e-9;

fn random_color<R: Rng>(rng: &mut R) -> [f32; 3] {
    core::array::from_fn(|_| quantize_channel(0.15 + 0.8 * rng.random::<f32>()))
}

fn random_material<R: Rng>(rng: &mut R) -> Material {
    let pattern = match rng.random_range(0..3) {
        0 => Pattern::Solid,
        1 => Pattern::Checker,
        _ => Pattern::Stripes,
    };
    Material {
        base: random_color(rng),
        alt: random_color(rng),
        scale: 0.35 + 0.5 * rng.random::<f64>(),
        pattern,
    }
}

/// Texel coordinates on a face with normal `axis`.
fn face_coords(p: &Vector3<f64>, axis: usize) -> (f64, f64) {
    (p[(axis + 1) % 3], p[(axis + 2) % 3])
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    t: f64,
    color: [f32; 3],
}

impl SceneSpec {
    /// Deterministic random room from a seed.
    pub fn generate(seed: u64) -> Self {
        let mut rng = rng::indexed_substream(seed, "scene", 0);
        let hx = 2.8 + 0.7 * rng.random::<f64>();
        let hz = 2.8 + 0.7 * rng.random::<f64>();
        let room_min = [-hx, -1.6, -hz];
        let room_max = [hx, 1.0, hz];
        let walls = core::array::from_fn(|_| {
            let mut m = random_material(&mut rng);
            if m.pattern == Pattern::Solid {
                m.pattern = Pattern::Checker;
            }
            m
        });
        let mut boxes = Vec::new();
        let n_boxes = rng.random_range(4..=6);
        for b in 0..n_boxes {
            let ang = 2.0 * PI * (b as f64 + 0.6 * rng.random::<f64>()) / n_boxes as f64;
            let rad = 1.8 + 0.6 * rng.random::<f64>();
            let (cx, cz) = (rad * libm::cos(ang), rad * libm::sin(ang));
            let sx = 0.25 + 0.3 * rng.random::<f64>();
            let sz = 0.25 + 0.3 * rng.random::<f64>();
            let height = 0.5 + 1.2 * rng.random::<f64>();
            boxes.push(SceneBox {
                min: [cx - sx, room_max[1] - height, cz - sz],
                max: [cx + sx, room_max[1], cz + sz],
                material: random_material(&mut rng),
            });
        }
        let mut panels = Vec::new();
        for p in 0..2 {
            let axis = if p == 0 { 0 } else { 2 };
            let side = if rng.random::<bool>() { 0 } else { 1 };
            let offset = if side == 0 { room_min[axis] + 0.02 } else { room_max[axis] - 0.02 };
            let c = -0.8 + 1.6 * rng.random::<f64>();
            panels.push(Panel {
                axis,
                offset,
                // (axis+1, axis+2) coordinates: y then z for x-panels; x then y for z-panels.
                min: if axis == 0 { [-1.2, c - 0.6] } else { [c - 0.6, -1.2] },
                max: if axis == 0 { [-0.2, c + 0.6] } else { [c + 0.6, -0.2] },
                material: random_material(&mut rng),
            });
        }
        Self {
            seed,
            room_min,
            room_max,
            walls,
            boxes,
            panels,
        }
    }

    fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        // Room interior: exit face.
        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, color: [f32; 3]| {
            if t > HIT_EPS && best.is_none_or(|b| t < b.t) {
                best = Some(Hit { t, color });
            }
        };
        let mut exit = f64::INFINITY;
        let mut face = 0;
        for a in 0..3 {
            let (t, f) = if d[a] > 0.0 {
                ((self.room_max[a] - o[a]) / d[a], 2 * a + 1)
            } else if d[a] < 0.0 {
                ((self.room_min[a] - o[a]) / d[a], 2 * a)
            } else {
                continue;
            };
            if t < exit {
                exit = t;
                face = f;
            }
        }
        if exit.is_finite() {
            let p = o + d * exit;
            let (u, v) = face_coords(&p, face / 2);
            consider(exit, shade(self.walls[face].color(u, v), FACE_SHADE[face]));
        }
        for b in &self.boxes {
            let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
            let mut enter_face = 0;
            let mut miss = false;
            for a in 0..3 {
                if d[a] == 0.0 {
                    if o[a] < b.min[a] || o[a] > b.max[a] {
                        miss = true;
                    }
                    continue;
                }
                let (mut ta, mut tb) = ((b.min[a] - o[a]) / d[a], (b.max[a] - o[a]) / d[a]);
                let mut f = 2 * a;
                if ta > tb {
                    core::mem::swap(&mut ta, &mut tb);
                    f = 2 * a + 1;
                }
                if ta > t0 {
                    t0 = ta;
                    axis = a;
                    enter_face = f;
                }
                t1 = t1.min(tb);
            }
            if !miss && t0 <= t1 && t0 > HIT_EPS {
                let p = o + d * t0;
                let (u, v) = face_coords(&p, axis);
                consider(t0, shade(b.material.color(u, v), FACE_SHADE[enter_face]));
            }
        }
        for pl in &self.panels {
            let a = pl.axis;
            if d[a] == 0.0 {
                continue;
            }
            let t = (pl.offset - o[a]) / d[a];
            let p = o + d * t;
            let (u, v) = face_coords(&p, a);
            if u >= pl.min[0] && u <= pl.max[0] && v >= pl.min[1] && v <= pl.max[1] {
                consider(t, pl.material.color(u, v));
            }
        }
        best
    }

    /// Ray-cast oracle: color and camera depth of every pixel center.
    pub fn render(&self, pose: &CameraPose, k: &Intrinsics) -> (Image, DepthMap) {
        let (w, h) = (k.width as usize, k.height as usize);
        let mut img = Image::new(w, h);
        let mut depth = alloc::vec![0.0; w * h];
        let o = *pose.translation();
        for y in 0..h {
            for x in 0..w {
                let dc = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
                let dw = pose.rotation() * dc;
                if let Some(hit) = self.cast(&o, &dw) {
                    img.set_pixel(x, y, hit.color);
                    depth[y * w + x] = hit.t;
                }
            }
        }
        (img, DepthMap::from_values(w, h, depth))
    }

    /// Color the oracle assigns to the surface point seen along the ray from
    /// `pose` through pixel `(u, v)`.
    pub fn color_along(&self, pose: &CameraPose, k: &Intrinsics, u: f64, v: f64) -> Option<([f32; 3], f64)> {
        let dc = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        self.cast(pose.translation(), &(pose.rotation() * dc)).map(|h| (h.color, h.t))
    }
}

fn shade(c: [f32; 3], s: f32) -> [f32; 3] {
    c.map(|x| quantize_channel(x * s))
}

/// Camera orientation from yaw (about world `y`) and pitch (about camera `x`).
pub fn yaw_pitch(yaw: f64, pitch: f64) -> Matrix3<f64> {
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
    let rx = Rotation3::from_axis_angle(&Unit::new_unchecked(Vector3::x()), pitch);
    (ry * rx).into_inner()
}

/// Closed camera path: periodic Catmull-Rom positions with oscillating yaw
/// and pitch. Parameter `0` and `1` give the same pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSpline {
    pub points: Vec<[f64; 3]>,
    pub yaw0: f64,
    pub yaw_amp: f64,
    pub yaw_phase: f64,
    pub pitch_amp: f64,
}

impl LoopSpline {
    pub fn random<R: Rng>(rng: &mut R, scene: &SceneSpec) -> Self {
        let n = 6;
        let rx = 0.5 + 0.5 * rng.random::<f64>();
        let rz = 0.5 + 0.5 * rng.random::<f64>();
        let (cx, cz) = (
            0.5 * (scene.room_min[0] + scene.room_max[0]) + 0.3 * (2.0 * rng.random::<f64>() - 1.0),
            0.5 * (scene.room_min[2] + scene.room_max[2]) + 0.3 * (2.0 * rng.random::<f64>() - 1.0),
        );
        let phase0 = 2.0 * PI * rng.random::<f64>();
        let points = (0..n)
            .map(|i| {
                let a = phase0 + 2.0 * PI * i as f64 / n as f64;
                let jitter = 0.85 + 0.3 * rng.random::<f64>();
                [
                    cx + rx * jitter * libm::cos(a),
                    -0.1 * rng.random::<f64>(),
                    cz + rz * jitter * libm::sin(a),
                ]
            })
            .collect();
        Self {
            points,
            yaw0: 2.0 * PI * rng.random::<f64>(),
            yaw_amp: (30.0 + 20.0 * rng.random::<f64>()).to_radians(),
            yaw_phase: 2.0 * PI * rng.random::<f64>(),
            pitch_amp: 6f64.to_radians(),
        }
    }

    pub fn position(&self, theta: f64) -> Vector3<f64> {
        let n = self.points.len();
        let s = (theta - libm::floor(theta)) * n as f64;
        let seg = libm::floor(s) as usize % n;
        let u = s - libm::floor(s);
        let p = |i: usize| Vector3::from(self.points[i % n]);
        let (p0, p1, p2, p3) = (p(seg + n - 1), p(seg), p(seg + 1), p(seg + 2));
        let (u2, u3) = (u * u, u * u * u);
        (p1 * 2.0 + (p2 - p0) * u + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * u2 + (-p0 + p1 * 3.0 - p2 * 3.0 + p3) * u3) * 0.5
    }

    pub fn pose(&self, theta: f64) -> CameraPose {
        let w = 2.0 * PI * theta;
        let yaw = self.yaw0 + self.yaw_amp * libm::sin(w + self.yaw_phase);
        let pitch = self.pitch_amp * libm::sin(2.0 * w);
        CameraPose::from_approx(&yaw_pitch(yaw, pitch), self.position(theta)).expect("yaw-pitch rotation is orthonormal")
    }

    /// `t` poses at `theta_k = k / (t - 1)`.
    pub fn trajectory(&self, t: usize) -> Trajectory {
        let poses = (0..t)
            .map(|k| self.pose(if t > 1 { k as f64 / (t - 1) as f64 } else { 0.0 }))
            .collect();
        Trajectory::new(poses).expect("non-empty")
    }

    /// `t` poses evenly covering the first `fraction` of the loop.
    pub fn arc(&self, t: usize, fraction: f64) -> Trajectory {
        let poses = (0..t)
            .map(|k| self.pose(if t > 1 { fraction * k as f64 / (t - 1) as f64 } else { 0.0 }))
            .collect();
        Trajectory::new(poses).expect("non-empty")
    }
}

/// Renders a clip of `scene` along `traj`.
pub fn render_clip(scene: &SceneSpec, traj: &Trajectory, k: &Intrinsics, class: usize) -> Result<VideoClip, CurationError> {
    let (frames, depths) = traj.poses().iter().map(|p| scene.render(p, k)).unzip();
    VideoClip::new(frames, traj.clone(), depths, *k, class)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub scenes: usize,
    pub clips_per_scene: usize,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    /// Revisit samples rendered per clip.
    pub samples_per_clip: usize,
    pub offset: OffsetDist,
    /// Scene classes; scene `s` gets class `s % classes`.
    pub classes: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scenes: 4,
            clips_per_scene: 4,
            frames: 9,
            width: 64,
            height: 64,
            hfov_deg: 90.0,
            samples_per_clip: 16,
            offset: OffsetDist::default(),
            classes: 4,
        }
    }
}

impl DatasetConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics, GeometryError> {
        Intrinsics::from_fov(self.width, self.height, self.hfov_deg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipData {
    pub clip: VideoClip,
    pub spline: LoopSpline,
    pub samples: Vec<CurationSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub spec: SceneSpec,
    pub clips: Vec<ClipData>,
}

/// Scene seed of scene `s` under a root seed.
pub fn scene_seed(root: u64, s: usize) -> u64 {
    rng::indexed_substream(root, rng::CURATION, s as u64).random()
}

/// Builds one clip and its revisit samples.
pub fn generate_clip(root: u64, scene_index: usize, clip_index: usize, spec: &SceneSpec, cfg: &DatasetConfig) -> Result<ClipData, CurationError> {
    let k = cfg.intrinsics()?;
    let stream = (scene_index as u64) << 32 | clip_index as u64;
    let mut r = rng::indexed_substream(root, "curation.clip", stream);
    let spline = LoopSpline::random(&mut r, spec);
    let traj = spline.trajectory(cfg.frames);
    let clip = render_clip(spec, &traj, &k, scene_index % cfg.classes.max(1))?;
    let mut samples = Vec::with_capacity(cfg.samples_per_clip);
    for _ in 0..cfg.samples_per_clip {
        let i = r.random_range(0..cfg.frames);
        let shift = sample_shift(&mut r, i, cfg.frames, cfg.offset.max_shift);
        let offset = sample_offset(&mut r, &cfg.offset)?;
        samples.push(make_revisit_sample(&clip, i, &offset, shift)?);
    }
    Ok(ClipData { clip, spline, samples })
}

/// Procedural dataset: rooms, looping camera paths, clips and revisit samples.
pub fn generate_synthetic_dataset(root: u64, cfg: &DatasetConfig) -> Result<Vec<SceneData>, CurationError> {
    if cfg.scenes == 0 || cfg.clips_per_scene == 0 || cfg.frames == 0 {
        return Err(CurationError::Size);
    }
    (0..cfg.scenes)
        .map(|s| {
            let spec = SceneSpec::generate(scene_seed(root, s));
            let clips = (0..cfg.clips_per_scene)
                .map(|c| generate_clip(root, s, c, &spec, cfg))
                .collect::<Result<_, _>>()?;
            Ok(SceneData { spec, clips })
        })
        .collect()
}
