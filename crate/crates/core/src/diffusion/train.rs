//! Example assembly from curated clips and the optimization loop.

use alloc::vec::Vec;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::codec::{to_signed, Codec};
use super::cond::{build_conditioning, CondFrame};
use super::model::{Dit, Example, ModelError};
use super::optim::{AdamW, AdamWConfig};
use crate::curation::{CurationSample, VideoClip};
use crate::geometry::{latent_groups, pool_trajectory, CameraPose};
use crate::linalg::Real;
use crate::rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no training clips")]
    Empty,
    #[error("clip {0} does not match the model's frame count or size")]
    ClipShape(usize),
    #[error("step {step}: {source}")]
    Step { step: usize, source: ModelError },
    #[error("step callback failed at step {step}: {message}")]
    Callback { step: usize, message: alloc::string::String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Memories per example are drawn uniformly from `0..=max_memories`.
    pub max_memories: usize,
    /// Probability of replacing the class with the null class.
    pub cfg_drop: f64,
    pub optim: AdamWConfig,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            max_memories: 4,
            cfg_drop: 0.1,
            optim: AdamWConfig::default(),
            checkpoint_every: 500,
        }
    }
}

/// A clip with its revisit samples.
#[derive(Debug, Clone, Copy)]
pub struct TrainClip<'a> {
    pub clip: &'a VideoClip,
    pub samples: &'a [CurationSample],
}

/// Per-clip data reused by every example drawn from it.
struct Prepared<F> {
    x1: Vec<F>,
    targets: Vec<CameraPose>,
    /// Latent frame (1-based) each frame index belongs to.
    frame_to_latent: Vec<usize>,
}

pub struct Trainer<'a, F> {
    codec: &'a Codec,
    clips: Vec<TrainClip<'a>>,
    prepared: Vec<Prepared<F>>,
    pub config: TrainConfig,
}

impl<'a, F: Real> Trainer<'a, F> {
    pub fn new(model: &Dit<F>, codec: &'a Codec, clips: Vec<TrainClip<'a>>, config: TrainConfig) -> Result<Self, TrainError> {
        if clips.is_empty() {
            return Err(TrainError::Empty);
        }
        let mc = &model.config;
        let r = mc.codec.temporal_stride;
        let mut prepared = Vec::with_capacity(clips.len());
        for (ci, c) in clips.iter().enumerate() {
            let clip = c.clip;
            if clip.len() != mc.frames || clip.frames[0].width != mc.width || clip.frames[0].height != mc.height {
                return Err(TrainError::ClipShape(ci));
            }
            let signed: Vec<Vec<f64>> = clip.frames.iter().map(to_signed).collect();
            let refs: Vec<&[f64]> = signed.iter().map(|v| &v[..]).collect();
            let x1 = codec
                .encode(&refs, mc.width, mc.height)
                .map_err(|_| TrainError::ClipShape(ci))?
                .data
                .into_iter()
                .map(F::of)
                .collect();
            let pooled = pool_trajectory(&clip.trajectory, r).map_err(|_| TrainError::ClipShape(ci))?;
            let mut frame_to_latent = alloc::vec![0; clip.len()];
            for (g, range) in latent_groups(clip.len(), r).into_iter().enumerate() {
                for f in range {
                    frame_to_latent[f] = g + 1;
                }
            }
            prepared.push(Prepared {
                x1,
                targets: pooled.into_poses(),
                frame_to_latent,
            });
        }
        Ok(Self {
            codec,
            clips,
            prepared,
            config,
        })
    }

    /// Draws one example: random clip, random subset of revisit samples as
    /// memories (assigned to their supervision frame), noise and time.
    pub fn example<R: Rng>(&self, model: &Dit<F>, rng: &mut R) -> Result<Example<F>, ModelError> {
        let ci = rng.random_range(0..self.clips.len());
        let TrainClip { clip, samples } = self.clips[ci];
        let prep = &self.prepared[ci];
        let usable: Vec<&CurationSample> = samples
            .iter()
            .filter(|s| prep.frame_to_latent[s.target()] >= 2)
            .collect();
        let m = rng.random_range(0..=self.config.max_memories).min(usable.len());
        let chosen: Vec<&CurationSample> = sample_indices(rng, usable.len(), m).into_iter().map(|i| usable[i]).collect();
        let memories: Vec<CondFrame<'_>> = chosen
            .iter()
            .map(|s| CondFrame {
                image: &s.image,
                depth: &s.depth,
                pose: &s.pose,
                mask: Some(&s.mask),
            })
            .collect();
        let assignments: Vec<usize> = chosen.iter().map(|s| prep.frame_to_latent[s.target()]).collect();
        let reference = CondFrame {
            image: &clip.frames[0],
            depth: &clip.depths[0],
            pose: &clip.trajectory[0],
            mask: None,
        };
        let cond = build_conditioning(
            &model.config,
            self.codec,
            &clip.intrinsics,
            &prep.targets,
            reference,
            &memories,
            &assignments,
        )?;
        let class = if rng.random::<f64>() < self.config.cfg_drop {
            model.config.null_class()
        } else {
            clip.class.min(model.config.null_class())
        };
        let x0 = (0..prep.x1.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                F::of(z)
            })
            .collect();
        let t = rng.random::<f64>();
        Ok(Example {
            cond,
            class,
            x0,
            x1: prep.x1.clone(),
            t,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

impl TrainReport {
    /// Mean loss over `range` of steps.
    pub fn mean_loss(&self, range: core::ops::Range<usize>) -> f64 {
        let s = &self.losses[range.start.min(self.losses.len())..range.end.min(self.losses.len())];
        s.iter().sum::<f64>() / s.len().max(1) as f64
    }
}

/// Optimizes `model` for `config.steps` steps. `on_step(step, loss, model)`
/// runs after each update and may abort training by returning an error.
pub fn train<F: Real, C>(
    model: &mut Dit<F>,
    trainer: &Trainer<'_, F>,
    seed: u64,
    mut on_step: C,
) -> Result<TrainReport, TrainError>
where
    C: FnMut(usize, f64, &Dit<F>) -> Result<(), alloc::string::String>,
{
    let cfg = &trainer.config;
    let mut rng = rng::substream(seed, rng::TRAINING);
    let mut opt = AdamW::new(cfg.optim, model.params.len());
    let mut report = TrainReport::default();
    let batch = cfg.batch.max(1);
    for step in 0..cfg.steps {
        let mut grad = model.params.zeros_like();
        let mut loss = 0.0;
        for _ in 0..batch {
            let ex = trainer.example(model, &mut rng).map_err(|source| TrainError::Step { step, source })?;
            loss += model
                .loss_and_grad(&ex, &mut grad, 1.0 / batch as f64)
                .map_err(|source| TrainError::Step { step, source })?;
        }
        loss /= batch as f64;
        let lr = cfg.optim.lr_at(step, cfg.steps);
        let norm = opt.update(&mut model.params.data, &grad, lr);
        report.losses.push(loss);
        report.grad_norms.push(norm);
        report.learning_rates.push(lr);
        on_step(step, loss, model).map_err(|message| TrainError::Callback { step, message })?;
    }
    Ok(report)
}
