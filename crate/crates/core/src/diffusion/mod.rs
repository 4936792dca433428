//! Rectified-flow video diffusion: codec, denoiser, training and sampling.

pub mod codec;
pub mod cond;
pub mod model;
pub mod optim;
pub mod sample;
pub mod train;

use alloc::vec::Vec;

use crate::linalg::Real;

pub use codec::{Codec, CodecConfig, CodecError, LatentClip};
pub use model::{Conditioning, Dit, Example, ModelConfig, ModelError, SamplerDefaults};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("shape mismatch: {0} vs {1}")]
    Shape(usize, usize),
    #[error("t = {0} is outside [0, 1]")]
    Time(f64),
}

/// `x_t = t * x1 + (1 - t) * x0`.
pub fn forward_process<F: Real>(x0: &[F], x1: &[F], t: f64) -> Result<Vec<F>, FlowError> {
    if x0.len() != x1.len() {
        return Err(FlowError::Shape(x0.len(), x1.len()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(FlowError::Time(t));
    }
    if t == 0.0 {
        return Ok(x0.to_vec());
    }
    if t == 1.0 {
        return Ok(x1.to_vec());
    }
    let (a, b) = (F::of(t), F::of(1.0 - t));
    Ok(x0.iter().zip(x1).map(|(&u, &v)| a * v + b * u).collect())
}

/// Velocity target `x1 - x0`.
pub fn velocity_target<F: Real>(x0: &[F], x1: &[F]) -> Vec<F> {
    x0.iter().zip(x1).map(|(&a, &b)| b - a).collect()
}

/// One point on the straight path between noise and data.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub t: f64,
    pub xt: Vec<f64>,
    pub vt: Vec<f64>,
}

impl DiffusionState {
    pub fn new(x0: Vec<f64>, x1: Vec<f64>, t: f64) -> Result<Self, FlowError> {
        let xt = forward_process(&x0, &x1, t)?;
        let vt = velocity_target(&x0, &x1);
        Ok(Self { x0, x1, t, xt, vt })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let x0 = [0.5, -2.0, 3.25];
        let x1 = [1.5, 4.0, -1.0];
        assert_eq!(forward_process(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(forward_process(&x0, &x1, 1.0).unwrap(), x1);
        assert_eq!(forward_process(&x0, &x1, 0.5).unwrap(), [1.0, 1.0, 1.125]);
        assert!(forward_process(&x0, &x1, 1.5).is_err());
        assert!(forward_process(&x0, &x1[..2], 0.5).is_err());
    }
}
