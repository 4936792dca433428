use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub warmup_steps: usize,
    /// Cosine decay to `lr * final_lr_ratio` over the run; 1 keeps it constant.
    pub final_lr_ratio: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip: 1.0,
            warmup_steps: 100,
            final_lr_ratio: 0.1,
        }
    }
}

impl AdamWConfig {
    /// Learning rate at `step` (0-based) of a `total`-step run.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1) as f64;
        let p = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let c = 0.5 * (1.0 + libm::cos(core::f64::consts::PI * p));
        self.lr * (self.final_lr_ratio + (1.0 - self.final_lr_ratio) * c)
    }
}

/// AdamW with decoupled weight decay. Moments are kept in `f64`.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, n: usize) -> Self {
        Self {
            config,
            m: alloc::vec![0.0; n],
            v: alloc::vec![0.0; n],
            step: 0,
        }
    }

    /// Applies one update with learning rate `lr`; returns the gradient norm
    /// before clipping.
    pub fn update<F: Real>(&mut self, params: &mut [F], grad: &[F], lr: f64) -> f64 {
        let c = &self.config;
        let norm = libm::sqrt(grad.iter().map(|g| g.f64() * g.f64()).sum::<f64>());
        let clip = if c.grad_clip > 0.0 && norm > c.grad_clip { c.grad_clip / norm } else { 1.0 };
        self.step += 1;
        let b1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let b2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            let g = g.f64() * clip;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let mhat = *m / b1;
            let vhat = *v / b2;
            let mut x = p.f64();
            x -= lr * c.weight_decay * x;
            x -= lr * mhat / (libm::sqrt(vhat) + c.eps);
            *p = F::of(x);
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.05,
                weight_decay: 0.0,
                warmup_steps: 0,
                ..Default::default()
            },
            2,
        );
        let mut x = [3.0f64, -2.0];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.0), 2.0 * (x[1] + 0.5)];
            opt.update(&mut x, &g, 0.05);
        }
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn schedule_shape() {
        let c = AdamWConfig::default();
        assert!(c.lr_at(0, 1000) < c.lr_at(99, 1000));
        assert!((c.lr_at(100, 1000) - c.lr).abs() < 1e-12);
        assert!((c.lr_at(1000, 1000) - c.lr * c.final_lr_ratio).abs() < 1e-12);
    }
}
