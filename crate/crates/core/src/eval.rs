//! Camera and image metrics, and the memory-initialization and cycle
//! protocols.
//!
//! At toy scale the achieved trajectory of a generated clip is the requested
//! one, so camera metrics of the protocols exercise the plumbing only.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::curation::{SceneSpec, VideoClip};
use crate::diffusion::codec::Codec;
use crate::diffusion::model::Dit;
use crate::diffusion::sample::{rollout, DepthProvider, SampleConfig, SampleError};
use crate::geometry::{normalize_relative, rotation_angle, CameraPose, DepthMap, Intrinsics, Trajectory};
use crate::image::Image;
use crate::linalg::Real;
use crate::memory::{FrustumSampler, MemoryBank, MemoryError};
use crate::rng;

pub const PSNR_CAP_DB: f64 = 99.0;
pub const PALINDROME_TOL: f64 = 1e-9;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("trajectory lengths differ: {0} vs {1}")]
    Length(usize, usize),
    #[error("image sizes differ or are smaller than the metric window")]
    Dims,
    #[error("trajectory is not palindromic at pose {0}")]
    NotPalindrome(usize),
    #[error("sequence of {0} frames is too short for the protocol")]
    TooShort(usize),
    #[error("generator returned {got} frames, expected {expected}")]
    FrameCount { expected: usize, got: usize },
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Mean geodesic rotation distance in degrees.
pub fn rot_err(a: &Trajectory, b: &Trajectory) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Length(a.len(), b.len()));
    }
    let sum: f64 = a
        .poses()
        .iter()
        .zip(b.poses())
        .map(|(p, q)| rotation_angle(&(p.rotation().transpose() * q.rotation())))
        .sum();
    Ok((sum / a.len() as f64).to_degrees())
}

/// Mean Euclidean distance between translations.
pub fn trans_err(a: &Trajectory, b: &Trajectory) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Length(a.len(), b.len()));
    }
    let sum: f64 = a
        .poses()
        .iter()
        .zip(b.poses())
        .map(|(p, q)| (p.translation() - q.translation()).norm())
        .sum();
    Ok(sum / a.len() as f64)
}

/// `(rot_err, trans_err)` after normalizing both trajectories relative to
/// their first pose.
pub fn camera_errors(requested: &Trajectory, achieved: &Trajectory) -> Result<(f64, f64), EvalError> {
    let a = normalize_relative(requested);
    let b = normalize_relative(achieved);
    Ok((rot_err(&a, &b)?, trans_err(&a, &b)?))
}

fn check_dims(a: &Image, b: &Image) -> Result<(), EvalError> {
    if !a.same_dims(b) || a.data.is_empty() {
        return Err(EvalError::Dims);
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, EvalError> {
    check_dims(a, b)?;
    let s: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / a.data.len() as f64)
}

/// Peak signal-to-noise ratio for unit-range images, capped.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, EvalError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * libm::log10(1.0 / mse)).min(PSNR_CAP_DB)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filtering over all fully contained windows.
fn filter_valid(x: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = alloc::vec![0.0; ow * h];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..SSIM_WINDOW).map(|k| g[k] * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = alloc::vec![0.0; ow * oh];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y0 + k) * ow + x0]).sum();
        }
    }
    out
}

/// Structural similarity for unit-range images: Gaussian window, mean over
/// valid windows and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, EvalError> {
    check_dims(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(EvalError::Dims);
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let x: Vec<f64> = (0..w * h).map(|i| a.data[3 * i + ch] as f64).collect();
        let y: Vec<f64> = (0..w * h).map(|i| b.data[3 * i + ch] as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, w, h, &g);
        let my = filter_valid(&y, w, h, &g);
        let sxx = filter_valid(&xx, w, h, &g);
        let syy = filter_valid(&yy, w, h, &g);
        let sxy = filter_valid(&xy, w, h, &g);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    /// Generated frame index.
    pub index: usize,
    /// Index of the frame it is compared against.
    pub compared_to: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: String,
    pub rot_err_deg: f64,
    pub trans_err: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub frames: Vec<FrameMetrics>,
    pub history_frames: usize,
    pub generated_frames: usize,
    pub notes: String,
}

const CAMERA_NOTE: &str = "camera metrics compare the requested trajectory with itself: generated frames are not re-posed";

fn frame_series(pairs: impl Iterator<Item = (usize, usize)>, gen: &[Image], gt: impl Fn(usize) -> Image) -> Result<Vec<FrameMetrics>, EvalError> {
    pairs
        .map(|(i, j)| {
            let other = gt(j);
            Ok(FrameMetrics {
                index: i,
                compared_to: j,
                psnr_db: psnr(&gen[i], &other)?,
                ssim: ssim(&gen[i], &other)?,
            })
        })
        .collect()
}

fn summarize(protocol: &str, traj: &Trajectory, frames: Vec<FrameMetrics>, history: usize, generated: usize) -> Result<MetricReport, EvalError> {
    let (rot, trans) = camera_errors(traj, traj)?;
    let n = frames.len().max(1) as f64;
    Ok(MetricReport {
        protocol: protocol.to_string(),
        rot_err_deg: rot,
        trans_err: trans,
        psnr_db: frames.iter().map(|f| f.psnr_db).sum::<f64>() / n,
        ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / n,
        frames,
        history_frames: history,
        generated_frames: generated,
        notes: CAMERA_NOTE.to_string(),
    })
}

/// Produces one frame per pose of `traj`, starting from `reference`, reading
/// and extending `bank`.
pub trait Generator {
    fn generate(&mut self, reference: &Image, traj: &Trajectory, bank: &mut MemoryBank) -> Result<Vec<Image>, EvalError>;
}

/// Depth from the scene's ray-cast oracle.
#[derive(Debug, Clone, Copy)]
pub struct SceneDepth<'a> {
    pub scene: &'a SceneSpec,
}

impl DepthProvider for SceneDepth<'_> {
    fn depth(&mut self, _image: &Image, pose: &CameraPose, k: &Intrinsics) -> Result<DepthMap, SampleError> {
        Ok(self.scene.render(pose, k).1)
    }
}

/// Perfect generator: renders the scene at every requested pose.
#[derive(Debug, Clone, Copy)]
pub struct OracleGenerator<'a> {
    pub scene: &'a SceneSpec,
    pub intrinsics: Intrinsics,
}

impl Generator for OracleGenerator<'_> {
    fn generate(&mut self, reference: &Image, traj: &Trajectory, bank: &mut MemoryBank) -> Result<Vec<Image>, EvalError> {
        let mut frames = alloc::vec![reference.clone()];
        for (i, pose) in traj.poses().iter().enumerate() {
            let (img, depth) = self.scene.render(pose, &self.intrinsics);
            if i > 0 {
                frames.push(img.clone());
            }
            bank.append(img, depth, *pose)?;
        }
        Ok(frames)
    }
}

/// Clip-by-clip model rollout. Trajectories that are not a whole number of
/// clips are padded with their last pose and the output truncated.
pub struct ModelGenerator<'a, F> {
    pub model: &'a Dit<F>,
    pub codec: &'a Codec,
    pub intrinsics: Intrinsics,
    pub class: usize,
    pub depth: &'a mut dyn DepthProvider,
    pub sampler: &'a FrustumSampler,
    pub config: SampleConfig,
    pub seed: u64,
}

impl<F: Real> Generator for ModelGenerator<'_, F> {
    fn generate(&mut self, reference: &Image, traj: &Trajectory, bank: &mut MemoryBank) -> Result<Vec<Image>, EvalError> {
        let t = self.model.config.frames;
        let len = traj.len();
        let clips = (len.saturating_sub(1)).div_ceil(t - 1).max(1);
        let mut poses = traj.poses().to_vec();
        let last = *traj.last();
        poses.resize(clips * (t - 1) + 1, last);
        let padded = Trajectory::new(poses).map_err(|e| SampleError::Geometry(e))?;
        let mut rng = rng::substream(self.seed, rng::SAMPLING);
        let out = rollout(
            self.model,
            self.codec,
            reference,
            &padded,
            &self.intrinsics,
            self.class,
            clips,
            bank,
            self.depth,
            self.sampler,
            &self.config,
            &mut rng,
        )?;
        let mut frames = out.frames;
        frames.truncate(len);
        Ok(frames)
    }
}

/// History length of the memory-initialization split: 60% of the frames.
pub fn history_split(len: usize) -> usize {
    len * 3 / 5
}

/// The first 60% of `clip` fills the bank; the rest is generated along the
/// ground-truth trajectory from the last history frame and compared to the
/// oracle frames.
pub fn memory_init_protocol<G: Generator + ?Sized>(gen: &mut G, clip: &VideoClip) -> Result<MetricReport, EvalError> {
    let len = clip.len();
    let h = history_split(len);
    if h == 0 || h >= len {
        return Err(EvalError::TooShort(len));
    }
    let mut bank = MemoryBank::new();
    for i in 0..h {
        bank.append(clip.frames[i].clone(), clip.depths[i].clone(), clip.trajectory[i])?;
    }
    let traj = clip.trajectory.slice(h - 1, len);
    let frames = gen.generate(&clip.frames[h - 1], &traj, &mut bank)?;
    if frames.len() != traj.len() {
        return Err(EvalError::FrameCount {
            expected: traj.len(),
            got: frames.len(),
        });
    }
    let series = frame_series((1..frames.len()).map(|i| (i, h - 1 + i)), &frames, |j| clip.frames[j].clone())?;
    summarize("memory_init", &traj, series, h, len - h)
}

fn pose_distance(a: &CameraPose, b: &CameraPose) -> f64 {
    let dr = (a.rotation() - b.rotation()).amax();
    let dt = (a.translation() - b.translation()).amax();
    dr.max(dt)
}

/// Rejects trajectories whose pose `i` differs from pose `L - 1 - i`.
pub fn check_palindrome(traj: &Trajectory) -> Result<(), EvalError> {
    let p = traj.poses();
    let l = p.len();
    for i in 0..l / 2 {
        if pose_distance(&p[i], &p[l - 1 - i]) > PALINDROME_TOL {
            return Err(EvalError::NotPalindrome(i));
        }
    }
    Ok(())
}

/// `forward` followed by its reverse, sharing the turning pose.
pub fn cycle_trajectory(forward: &Trajectory) -> Trajectory {
    let mut poses = forward.poses().to_vec();
    poses.extend(forward.poses().iter().rev().skip(1).copied());
    Trajectory::new(poses).expect("non-empty")
}

/// Generates along a palindromic trajectory and compares each frame of the
/// first half with its temporally symmetric counterpart.
pub fn cycle_protocol<G: Generator + ?Sized>(gen: &mut G, reference: &Image, traj: &Trajectory, bank: &mut MemoryBank) -> Result<MetricReport, EvalError> {
    check_palindrome(traj)?;
    let l = traj.len();
    if l < 3 {
        return Err(EvalError::TooShort(l));
    }
    let frames = gen.generate(reference, traj, bank)?;
    if frames.len() != l {
        return Err(EvalError::FrameCount { expected: l, got: frames.len() });
    }
    let series = frame_series((0..l / 2).map(|i| (l - 1 - i, i)), &frames, |j| frames[j].clone())?;
    summarize("cycle", traj, series, 0, l - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn noise_image(seed: u32) -> Image {
        let mut s = seed.wrapping_mul(2654435761).wrapping_add(1);
        let data = (0..3 * 32 * 32)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 17;
                s ^= s << 5;
                (s % 1000) as f32 / 1000.0
            })
            .collect();
        Image::from_data(32, 32, data)
    }

    #[test]
    fn psnr_closed_form() {
        let a = Image::filled(16, 16, [0.2, 0.4, 0.6]);
        let b = Image::filled(16, 16, [0.3, 0.5, 0.7]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = noise_image(1);
        let b = noise_image(2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let s = ssim(&a, &b).unwrap();
        assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-9);
        assert!(s < 0.5 && s >= -1.0);
        assert!(ssim(&Image::new(8, 8), &Image::new(8, 8)).is_err());
    }

    #[test]
    fn constant_rotation_offset() {
        let poses: Vec<CameraPose> = (0..5)
            .map(|i| CameraPose::from_axis_angle(Vector3::y(), 0.1 * i as f64, Vector3::new(i as f64, 0.0, 0.0)))
            .collect();
        let off = CameraPose::from_axis_angle(Vector3::x(), 10f64.to_radians(), Vector3::zeros());
        let a = Trajectory::new(poses.clone()).unwrap();
        let b = Trajectory::new(poses.iter().map(|p| crate::geometry::compose(p, &off)).collect()).unwrap();
        assert!((rot_err(&a, &b).unwrap() - 10.0).abs() < 1e-6);
        assert_eq!(rot_err(&a, &a).unwrap(), 0.0);
        assert!(rot_err(&a, &a.slice(0, 3)).is_err());
    }

    #[test]
    fn palindrome_check() {
        let fwd = Trajectory::new((0..4).map(|i| CameraPose::from_translation(Vector3::new(i as f64, 0.0, 0.0))).collect()).unwrap();
        let cyc = cycle_trajectory(&fwd);
        assert_eq!(cyc.len(), 7);
        check_palindrome(&cyc).unwrap();
        assert_eq!(check_palindrome(&fwd), Err(EvalError::NotPalindrome(0)));
    }

    #[test]
    fn split_ratio() {
        assert_eq!(history_split(100), 60);
        assert_eq!(history_split(10), 6);
    }
}
