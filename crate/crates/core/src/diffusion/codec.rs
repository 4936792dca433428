//! Fixed patchify codec: space-to-channel rearrangement followed by a seeded
//! orthonormal projection. Decoding applies the transpose, so the round trip
//! is exact up to rounding.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::latent_frame_count;
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("frame {width}x{height} is not divisible by patch size {patch}")]
    Indivisible { width: usize, height: usize, patch: usize },
    #[error("{frames} frames cannot be grouped as 1 + k*{stride}")]
    FrameCount { frames: usize, stride: usize },
    #[error("patch size and temporal stride must be positive")]
    ZeroStride,
    #[error("frames have inconsistent dimensions")]
    Dims,
    #[error("latent has {got} values, expected {expected}")]
    LatentSize { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub patch: usize,
    pub temporal_stride: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            temporal_stride: 1,
            seed: 0,
        }
    }
}

/// Latent tokens: `frames x rows x cols` tokens of `dim` channels each.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClip {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl LatentClip {
    pub fn tokens_per_frame(&self) -> usize {
        self.rows * self.cols
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.tokens_per_frame() * self.dim;
        &self.data[i * n..(i + 1) * n]
    }
}

#[derive(Debug, Clone)]
pub struct Codec {
    pub config: CodecConfig,
    dim: usize,
    /// Row-major `dim x dim` orthonormal matrix.
    proj: Vec<f64>,
}

impl Codec {
    pub fn new(config: CodecConfig) -> Result<Self, CodecError> {
        if config.patch == 0 || config.temporal_stride == 0 {
            return Err(CodecError::ZeroStride);
        }
        let dim = config.temporal_stride * config.patch * config.patch * 3;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let a = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
        let qr = a.qr();
        let (q, r) = (qr.q(), qr.r());
        let mut proj = alloc::vec![0.0; dim * dim];
        for i in 0..dim {
            let sign = if r[(i, i)] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..dim {
                proj[j * dim + i] = q[(j, i)] * sign;
            }
        }
        Ok(Self { config, dim, proj })
    }

    /// Channels per latent token, `r * s^2 * 3`.
    pub fn latent_dim(&self) -> usize {
        self.dim
    }

    /// Values per token of a single-frame mask, `s^2`.
    pub fn mask_dim(&self) -> usize {
        self.config.patch * self.config.patch
    }

    pub fn projection(&self) -> &[f64] {
        &self.proj
    }

    /// Token grid `(rows, cols)` for a frame size.
    pub fn grid(&self, width: usize, height: usize) -> Result<(usize, usize), CodecError> {
        let s = self.config.patch;
        if width == 0 || height == 0 || width % s != 0 || height % s != 0 {
            return Err(CodecError::Indivisible { width, height, patch: s });
        }
        Ok((height / s, width / s))
    }

    /// Latent frame count for `t` frames; rejects counts that are not `1 + k*r`.
    pub fn latent_frames(&self, t: usize) -> Result<usize, CodecError> {
        let r = self.config.temporal_stride;
        if t == 0 || (t - 1) % r != 0 {
            return Err(CodecError::FrameCount { frames: t, stride: r });
        }
        Ok(latent_frame_count(t, r))
    }

    fn group_ranges(&self, t: usize) -> Vec<core::ops::Range<usize>> {
        let r = self.config.temporal_stride;
        let mut g = alloc::vec![0..1];
        let mut start = 1;
        while start < t {
            g.push(start..start + r);
            start += r;
        }
        g
    }

    /// Projects one token vector: `z = P x`.
    fn project(&self, x: &[f64], z: &mut [f64]) {
        for (i, zi) in z.iter_mut().enumerate() {
            let row = &self.proj[i * self.dim..(i + 1) * self.dim];
            *zi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `x = P^T z`.
    fn unproject(&self, z: &[f64], x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        for (i, &zi) in z.iter().enumerate() {
            let row = &self.proj[i * self.dim..(i + 1) * self.dim];
            x.iter_mut().zip(row).for_each(|(v, &a)| *v += a * zi);
        }
    }

    /// Encodes frames of signed pixel values. Groups shorter than `r` (the
    /// first frame) are zero-padded.
    pub fn encode(&self, frames: &[&[f64]], width: usize, height: usize) -> Result<LatentClip, CodecError> {
        let (rows, cols) = self.grid(width, height)?;
        let n = self.latent_frames(frames.len())?;
        if frames.iter().any(|f| f.len() != 3 * width * height) {
            return Err(CodecError::Dims);
        }
        let s = self.config.patch;
        let per = s * s * 3;
        let mut data = Vec::with_capacity(n * rows * cols * self.dim);
        let mut x = alloc::vec![0.0; self.dim];
        let mut z = alloc::vec![0.0; self.dim];
        for group in self.group_ranges(frames.len()) {
            for ty in 0..rows {
                for tx in 0..cols {
                    x.iter_mut().for_each(|v| *v = 0.0);
                    for (slot, f) in group.clone().enumerate() {
                        let frame = frames[f];
                        for py in 0..s {
                            let src = 3 * ((ty * s + py) * width + tx * s);
                            let dst = slot * per + py * s * 3;
                            x[dst..dst + 3 * s].copy_from_slice(&frame[src..src + 3 * s]);
                        }
                    }
                    self.project(&x, &mut z);
                    data.extend_from_slice(&z);
                }
            }
        }
        Ok(LatentClip {
            frames: n,
            rows,
            cols,
            dim: self.dim,
            data,
        })
    }

    /// Exact adjoint of [`Codec::encode`]; returns `1 + (frames - 1) * r`
    /// frames of signed pixel values.
    pub fn decode(&self, latent: &LatentClip) -> Result<Vec<Vec<f64>>, CodecError> {
        let expected = latent.frames * latent.rows * latent.cols * self.dim;
        if latent.data.len() != expected || latent.dim != self.dim {
            return Err(CodecError::LatentSize {
                expected,
                got: latent.data.len(),
            });
        }
        let s = self.config.patch;
        let r = self.config.temporal_stride;
        let (width, height) = (latent.cols * s, latent.rows * s);
        let t = if latent.frames == 0 { 0 } else { 1 + (latent.frames - 1) * r };
        let mut out = alloc::vec![alloc::vec![0.0; 3 * width * height]; t];
        let per = s * s * 3;
        let mut x = alloc::vec![0.0; self.dim];
        for (g, group) in self.group_ranges(t).into_iter().enumerate() {
            for ty in 0..latent.rows {
                for tx in 0..latent.cols {
                    let tok = (g * latent.rows + ty) * latent.cols + tx;
                    self.unproject(&latent.data[tok * self.dim..(tok + 1) * self.dim], &mut x);
                    for (slot, f) in group.clone().enumerate() {
                        for py in 0..s {
                            let dst = 3 * ((ty * s + py) * width + tx * s);
                            let src = slot * per + py * s * 3;
                            out[f][dst..dst + 3 * s].copy_from_slice(&x[src..src + 3 * s]);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Single-frame latent (`rows*cols x dim`) of an image in `[0, 1]`.
    pub fn encode_image(&self, img: &Image) -> Result<Vec<f64>, CodecError> {
        let signed = to_signed(img);
        Ok(self.encode(&[&signed], img.width, img.height)?.data)
    }

    pub fn decode_image(&self, latent: &[f64], width: usize, height: usize) -> Result<Image, CodecError> {
        let (rows, cols) = self.grid(width, height)?;
        let clip = LatentClip {
            frames: 1,
            rows,
            cols,
            dim: self.dim,
            data: latent.to_vec(),
        };
        Ok(from_signed(&self.decode(&clip)?[0], width, height))
    }

    /// Patchified single-frame mask: `s^2` values per token, 1 where true.
    pub fn patchify_mask(&self, mask: &[bool], width: usize, height: usize) -> Result<Vec<f64>, CodecError> {
        let (rows, cols) = self.grid(width, height)?;
        let s = self.config.patch;
        let mut out = Vec::with_capacity(rows * cols * s * s);
        for ty in 0..rows {
            for tx in 0..cols {
                for py in 0..s {
                    for px in 0..s {
                        let m = mask[(ty * s + py) * width + tx * s + px];
                        out.push(if m { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Maps `[0, 1]` pixels to `[-1, 1]`.
pub fn to_signed(img: &Image) -> Vec<f64> {
    img.data.iter().map(|&x| 2.0 * x as f64 - 1.0).collect()
}

/// Maps signed values back to an image, clamping to `[0, 1]`.
pub fn from_signed(x: &[f64], width: usize, height: usize) -> Image {
    Image::from_data(
        width,
        height,
        x.iter().map(|&v| ((v + 1.0) * 0.5).clamp(0.0, 1.0) as f32).collect(),
    )
}
