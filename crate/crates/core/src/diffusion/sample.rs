//! Euler sampling with classifier-free guidance, per-clip generation with
//! memory retrieval, and clip-by-clip rollout.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::codec::{from_signed, Codec, CodecError, LatentClip};
use super::cond::{build_conditioning, CondFrame};
use super::model::{CleanPass, Conditioning, Dit, ModelError};
use crate::geometry::{latent_groups, pool_trajectory, CameraPose, DepthMap, GeometryError, Intrinsics, Trajectory};
use crate::image::Image;
use crate::linalg::Real;
use crate::memory::{retrieve_top_m, FrustumParams, FrustumSampler, MemoryBank, MemoryError, RetrievalResult};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SampleError {
    #[error("at least one sampling step is required")]
    Steps,
    #[error("trajectory has {got} poses, expected {expected}")]
    TrajectoryLength { expected: usize, got: usize },
    #[error("state has {got} values, expected {expected}")]
    State { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("depth provider: {0}")]
    Depth(alloc::string::String),
    #[error("clip {index}: {source}")]
    Clip { index: usize, source: Box<SampleError> },
}

/// A time-dependent velocity field on flat `f64` state.
pub trait VelocityField {
    fn velocity(&mut self, x: &[f64], t: f64) -> Result<Vec<f64>, SampleError>;
}

/// Exact velocity `x1 - x0` of a known pair.
#[derive(Debug, Clone)]
pub struct OracleVelocity {
    pub v: Vec<f64>,
}

impl OracleVelocity {
    pub fn new(x0: &[f64], x1: &[f64]) -> Self {
        Self {
            v: x1.iter().zip(x0).map(|(a, b)| a - b).collect(),
        }
    }
}

impl VelocityField for OracleVelocity {
    fn velocity(&mut self, x: &[f64], _t: f64) -> Result<Vec<f64>, SampleError> {
        if x.len() != self.v.len() {
            return Err(SampleError::State {
                expected: self.v.len(),
                got: x.len(),
            });
        }
        Ok(self.v.clone())
    }
}

/// Integrates `dx/dt = v(x, t)` from `t = 0` to `1` with `steps` Euler steps.
pub fn euler_sample<V: VelocityField + ?Sized>(field: &mut V, x0: Vec<f64>, steps: usize) -> Result<Vec<f64>, SampleError> {
    if steps == 0 {
        return Err(SampleError::Steps);
    }
    let dt = 1.0 / steps as f64;
    let mut x = x0;
    for i in 0..steps {
        let t = i as f64 * dt;
        let v = field.velocity(&x, t)?;
        if v.len() != x.len() {
            return Err(SampleError::State {
                expected: x.len(),
                got: v.len(),
            });
        }
        x.iter_mut().zip(&v).for_each(|(a, b)| *a += dt * b);
    }
    Ok(x)
}

/// Model velocity with guidance over the class condition only:
/// `v_null + g (v_cond - v_null)`. Clean passes are computed once.
pub struct GuidedVelocity<'a, F> {
    model: &'a Dit<F>,
    cond: &'a Conditioning<F>,
    cond_pass: CleanPass<F>,
    null_pass: Option<CleanPass<F>>,
    scale: f64,
}

impl<'a, F: Real> GuidedVelocity<'a, F> {
    pub fn new(model: &'a Dit<F>, cond: &'a Conditioning<F>, class: usize, scale: f64) -> Result<Self, ModelError> {
        let cond_pass = model.clean_pass(cond, class)?;
        let null = model.config.null_class();
        let null_pass = if scale != 1.0 && class != null {
            Some(model.clean_pass(cond, null)?)
        } else {
            None
        };
        Ok(Self {
            model,
            cond,
            cond_pass,
            null_pass,
            scale,
        })
    }
}

impl<F: Real> VelocityField for GuidedVelocity<'_, F> {
    fn velocity(&mut self, x: &[f64], t: f64) -> Result<Vec<f64>, SampleError> {
        let xf: Vec<F> = x.iter().map(|&v| F::of(v)).collect();
        let vc = self.model.velocity(self.cond, &self.cond_pass, &xf, t)?;
        let Some(np) = &self.null_pass else {
            return Ok(vc.into_iter().map(F::f64).collect());
        };
        let vn = self.model.velocity(self.cond, np, &xf, t)?;
        let g = self.scale;
        Ok(vc
            .into_iter()
            .zip(vn)
            .map(|(c, n)| {
                let (c, n) = (c.f64(), n.f64());
                n + g * (c - n)
            })
            .collect())
    }
}

/// Supplies depth for generated frames before they enter the memory bank.
pub trait DepthProvider {
    fn depth(&mut self, image: &Image, pose: &CameraPose, k: &Intrinsics) -> Result<DepthMap, SampleError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub steps: usize,
    pub cfg_scale: f64,
    /// Memory frames retrieved per clip.
    pub memories: usize,
    pub frustum: FrustumParams,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            cfg_scale: 1.5,
            memories: 4,
            frustum: FrustumParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedClip {
    pub frames: Vec<Image>,
    pub trajectory: Trajectory,
    pub latent: LatentClip,
    pub retrieval: Option<RetrievalResult>,
}

/// Everything fixed while generating one clip.
pub struct ClipRequest<'a> {
    pub reference: &'a Image,
    pub trajectory: &'a Trajectory,
    pub intrinsics: &'a Intrinsics,
    pub class: usize,
}

/// Generates one clip starting at `reference`, conditioned on the top
/// memories of `bank`, then appends its latent-rate keyframes to the bank.
#[allow(clippy::too_many_arguments)]
pub fn sample_clip<F: Real, R: Rng>(
    model: &Dit<F>,
    codec: &Codec,
    req: &ClipRequest<'_>,
    bank: &mut MemoryBank,
    depth: &mut dyn DepthProvider,
    sampler: &FrustumSampler,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<GeneratedClip, SampleError> {
    if cfg.steps == 0 {
        return Err(SampleError::Steps);
    }
    let mc = &model.config;
    let k = req.intrinsics;
    let traj = req.trajectory;
    if traj.len() != mc.frames {
        return Err(SampleError::TrajectoryLength {
            expected: mc.frames,
            got: traj.len(),
        });
    }
    let r = mc.codec.temporal_stride;
    let targets = pool_trajectory(traj, r)?;
    let ref_depth = depth.depth(req.reference, traj.first(), k)?;

    let retrieval = if cfg.memories > 0 && !bank.is_empty() && targets.len() >= 2 {
        Some(retrieve_top_m(bank, &targets, k, cfg.memories, sampler)?)
    } else {
        None
    };
    let (memories, assignments): (Vec<CondFrame<'_>>, Vec<usize>) = match &retrieval {
        Some(res) => (
            res.indices
                .iter()
                .map(|&i| {
                    let rec = &bank.records()[i];
                    CondFrame {
                        image: &rec.image,
                        depth: &rec.depth,
                        pose: &rec.pose,
                        mask: None,
                    }
                })
                .collect(),
            res.assignments.clone(),
        ),
        None => (Vec::new(), Vec::new()),
    };
    let reference = CondFrame {
        image: req.reference,
        depth: &ref_depth,
        pose: traj.first(),
        mask: None,
    };
    let cond: Conditioning<F> = build_conditioning(mc, codec, k, targets.poses(), reference, &memories, &assignments)?;

    let n = mc.latent_frames() * mc.tokens_per_frame() * mc.latent_dim();
    let x0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let mut field = GuidedVelocity::new(model, &cond, req.class, cfg.cfg_scale)?;
    let x = euler_sample(&mut field, x0, cfg.steps)?;

    let (rows, cols) = codec.grid(mc.width, mc.height)?;
    let latent = LatentClip {
        frames: mc.latent_frames(),
        rows,
        cols,
        dim: mc.latent_dim(),
        data: x,
    };
    let mut frames: Vec<Image> = codec
        .decode(&latent)?
        .iter()
        .map(|f| from_signed(f, mc.width, mc.height))
        .collect();
    frames[0] = req.reference.clone();

    for g in latent_groups(frames.len(), r) {
        let f = g.start;
        let pose = traj.poses()[f];
        let d = if f == 0 { ref_depth.clone() } else { depth.depth(&frames[f], &pose, k)? };
        bank.append(frames[f].clone(), d, pose)?;
    }
    Ok(GeneratedClip {
        frames,
        trajectory: traj.clone(),
        latent,
        retrieval,
    })
}

#[derive(Debug, Clone)]
pub struct Rollout {
    /// `clips * (T - 1) + 1` frames; shared boundary frames appear once.
    pub frames: Vec<Image>,
    pub clips: Vec<GeneratedClip>,
}

/// Generates `clips` consecutive clips along `traj`; each clip starts from
/// the previous clip's last frame.
#[allow(clippy::too_many_arguments)]
pub fn rollout<F: Real, R: Rng>(
    model: &Dit<F>,
    codec: &Codec,
    reference: &Image,
    traj: &Trajectory,
    k: &Intrinsics,
    class: usize,
    clips: usize,
    bank: &mut MemoryBank,
    depth: &mut dyn DepthProvider,
    sampler: &FrustumSampler,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<Rollout, SampleError> {
    let t = model.config.frames;
    let expected = clips * (t - 1) + 1;
    if traj.len() != expected {
        return Err(SampleError::TrajectoryLength {
            expected,
            got: traj.len(),
        });
    }
    let mut out = Rollout {
        frames: alloc::vec![reference.clone()],
        clips: Vec::with_capacity(clips),
    };
    for c in 0..clips {
        let start = c * (t - 1);
        let sub = traj.slice(start, start + t);
        let current = out.frames.last().cloned().unwrap_or_else(|| reference.clone());
        let req = ClipRequest {
            reference: &current,
            trajectory: &sub,
            intrinsics: k,
            class,
        };
        let clip = sample_clip(model, codec, &req, bank, depth, sampler, cfg, rng).map_err(|e| SampleError::Clip {
            index: c,
            source: Box::new(e),
        })?;
        out.frames.extend(clip.frames[1..].iter().cloned());
        out.clips.push(clip);
    }
    Ok(out)
}

/// Convenience: builds the frustum sampler from `cfg`.
pub fn frustum_sampler(cfg: &SampleConfig) -> Result<FrustumSampler, SampleError> {
    Ok(FrustumSampler::new(cfg.frustum)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps_rejected() {
        let mut f = OracleVelocity::new(&[0.0], &[1.0]);
        assert_eq!(euler_sample(&mut f, alloc::vec![0.0], 0), Err(SampleError::Steps));
    }

    #[test]
    fn oracle_reaches_target() {
        let x0 = alloc::vec![0.3, -1.2, 2.5];
        let x1 = alloc::vec![1.0, 0.5, -0.25];
        for steps in [1, 2, 4, 8] {
            let mut f = OracleVelocity::new(&x0, &x1);
            let x = euler_sample(&mut f, x0.clone(), steps).unwrap();
            for (a, b) in x.iter().zip(&x1) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
