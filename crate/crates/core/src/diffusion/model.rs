//! The denoiser: patch embedding, time and class conditioning, a stack of
//! dual-stream blocks and an adaLN-Zero output head.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codec::CodecConfig;
use super::{forward_process, FlowError};
use crate::attention::dit::{BlockDims, BlockInputs, BlockParams, CleanCache, NoisyCache, PeState};
use crate::linalg::Real;
use crate::nn::{self, Lin, ParamStore};
use crate::pe_warp::{MultiLevelPeConfig, PeError, RopeAxes};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Pe(#[from] PeError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("parameter layout mismatch at {0}")]
    Layout(String),
    #[error("class {class} is outside 0..={null}")]
    Class { class: usize, null: usize },
    #[error("input has {got} values, expected {expected}")]
    Input { expected: usize, got: usize },
    #[error("non-finite loss {loss} (t = {t}, class = {class})")]
    NonFinite { loss: f64, t: f64, class: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerDefaults {
    pub steps: usize,
    pub cfg_scale: f64,
}

impl Default for SamplerDefaults {
    fn default() -> Self {
        Self {
            steps: 50,
            cfg_scale: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub width: usize,
    pub height: usize,
    /// Frames per generated clip.
    pub frames: usize,
    pub codec: CodecConfig,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub ffn_ratio: usize,
    /// Half of the heads read 2x2 sub-patch coordinates.
    pub two_level_pe: bool,
    pub rope_theta: f64,
    /// Assumed per-channel standard deviation of clean latents; sets the
    /// input, skip and output scalings of the denoiser.
    pub data_std: f64,
    /// Scene classes; index `classes` is the null class.
    pub classes: usize,
    pub ctx_tokens: usize,
    pub sampler: SamplerDefaults,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 9,
            codec: CodecConfig::default(),
            dim: 128,
            depth: 4,
            heads: 8,
            ffn_ratio: 4,
            two_level_pe: true,
            rope_theta: 100.0,
            data_std: 0.4,
            classes: 4,
            ctx_tokens: 4,
            sampler: SamplerDefaults::default(),
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    pub fn latent_dim(&self) -> usize {
        self.codec.temporal_stride * self.codec.patch * self.codec.patch * 3
    }

    pub fn mask_dim(&self) -> usize {
        self.codec.patch * self.codec.patch
    }

    pub fn tokens_per_frame(&self) -> usize {
        (self.width / self.codec.patch.max(1)) * (self.height / self.codec.patch.max(1))
    }

    pub fn latent_frames(&self) -> usize {
        crate::geometry::latent_frame_count(self.frames, self.codec.temporal_stride.max(1))
    }

    pub fn null_class(&self) -> usize {
        self.classes
    }

    pub fn pe_config(&self) -> Result<MultiLevelPeConfig, PeError> {
        if self.two_level_pe {
            MultiLevelPeConfig::two_level(self.heads)
        } else {
            Ok(MultiLevelPeConfig::single_level(self.heads))
        }
    }

    pub fn rope_axes(&self) -> Result<RopeAxes, PeError> {
        RopeAxes::new(self.head_dim(), self.rope_theta)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: &str| Err(ModelError::Config(m.into()));
        if self.dim == 0 || self.heads == 0 || self.depth == 0 || self.ffn_ratio == 0 {
            return err("dim, heads, depth and ffn_ratio must be positive");
        }
        if self.dim % self.heads != 0 {
            return err("dim must be divisible by heads");
        }
        let s = self.codec.patch;
        let r = self.codec.temporal_stride;
        if s == 0 || r == 0 || self.width % s != 0 || self.height % s != 0 {
            return err("frame size must be divisible by the patch size");
        }
        if self.frames == 0 || (self.frames - 1) % r != 0 {
            return err("frames must be 1 + k * temporal_stride");
        }
        if self.ctx_tokens == 0 {
            return err("ctx_tokens must be positive");
        }
        if !(self.rope_theta > 1.0) {
            return err("rope_theta must exceed 1");
        }
        if !(self.data_std > 0.0 && self.data_std.is_finite()) {
            return err("data_std must be positive");
        }
        self.rope_axes()?;
        self.pe_config()?.validate(self.heads, s)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    embed: Lin,
    mask: Lin,
    t1: Lin,
    t2: Lin,
    class: usize,
    blocks: Vec<BlockParams>,
    final_mod: Lin,
    out: Lin,
}

impl Layout {
    fn build<F: Real>(cfg: &ModelConfig, store: &mut ParamStore<F>) -> Self {
        let (d, dc) = (cfg.dim, cfg.latent_dim());
        let embed = Lin::new(store, "embed", dc, d, true);
        let mask = Lin::new(store, "mask_embed", cfg.mask_dim(), d, false);
        let t1 = Lin::new(store, "time.1", d, d, true);
        let t2 = Lin::new(store, "time.2", d, d, true);
        let class = store.alloc("class_embed".into(), alloc::vec![cfg.classes + 1, cfg.ctx_tokens, d]);
        let blocks = (0..cfg.depth)
            .map(|b| BlockParams::new(store, &alloc::format!("blocks.{b}"), d, d * cfg.ffn_ratio))
            .collect();
        let final_mod = Lin::new(store, "final.modulation", d, 2 * d, true);
        let out = Lin::new(store, "final.out", d, dc, true);
        Self {
            embed,
            mask,
            t1,
            t2,
            class,
            blocks,
            final_mod,
            out,
        }
    }
}

/// Clean conditioning of one sample: reference latent followed by memory
/// latents, their mask channel, and the rotary layout.
#[derive(Debug, Clone)]
pub struct Conditioning<F> {
    pub pe: PeState<F>,
    /// `(1 + M) * P x latent_dim`.
    pub clean: Vec<F>,
    /// `(1 + M) * P x mask_dim`; 1 marks preserved pixels.
    pub masks: Vec<F>,
}

/// One training example.
#[derive(Debug, Clone)]
pub struct Example<F> {
    pub cond: Conditioning<F>,
    pub class: usize,
    pub x0: Vec<F>,
    pub x1: Vec<F>,
    pub t: f64,
}

#[derive(Debug, Clone)]
struct TimeEmbed<F> {
    sin: Vec<F>,
    a: Vec<F>,
    b: Vec<F>,
    e: Vec<F>,
    act: Vec<F>,
}

/// Clean-stream state, reusable across denoising steps for a fixed
/// conditioning and class.
#[derive(Debug, Clone)]
pub struct CleanPass<F> {
    caches: Vec<CleanCache<F>>,
    class: usize,
    ctx: Vec<F>,
    temb: TimeEmbed<F>,
}

#[derive(Debug, Clone)]
struct NoisyPass<F> {
    caches: Vec<NoisyCache<F>>,
    temb: TimeEmbed<F>,
    xin: Vec<F>,
    y: Vec<F>,
    rstd: Vec<F>,
    fm: Vec<F>,
    a: Vec<F>,
}

/// Timestep features: `[sin(w_k * 1000 t), cos(w_k * 1000 t)]`.
pub fn timestep_features<F: Real>(t: f64, dim: usize) -> Vec<F> {
    let half = dim / 2;
    let mut out = alloc::vec![F::zero(); dim];
    for k in 0..half {
        let w = libm::exp(-libm::log(10000.0) * k as f64 / half as f64);
        let (s, c) = libm::sincos(1000.0 * t * w);
        out[k] = F::of(s);
        out[half + k] = F::of(c);
    }
    out
}

/// `(c_in, c_skip, c_out)` at time `t` for data std `sd`: the network sees
/// unit-variance input and predicts the unit-variance residual left after
/// the best linear estimate of the velocity from `x_t`.
pub fn preconditioning(t: f64, sd: f64) -> (f64, f64, f64) {
    let v = sd * sd;
    let s2 = t * t * v + (1.0 - t) * (1.0 - t);
    let s = libm::sqrt(s2);
    (1.0 / s, (t * v - (1.0 - t)) / s2, sd / s)
}

#[derive(Debug, Clone)]
pub struct Dit<F> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
    layout: Layout,
    dims: BlockDims,
}

impl<F: Real> Dit<F> {
    /// Allocates all parameters as zeros.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::default();
        let layout = Layout::build(&config, &mut params);
        let dims = BlockDims {
            dim: config.dim,
            heads: config.heads,
            head_dim: config.head_dim(),
            ffn: config.dim * config.ffn_ratio,
        };
        Ok(Self {
            config,
            params,
            layout,
            dims,
        })
    }

    /// Random initialization; modulation and output weights stay zero.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        let mut m = Self::new(config)?;
        let l = m.layout.clone();
        for lin in [&l.embed, &l.mask, &l.t1, &l.t2] {
            lin.init(&mut m.params, 1.0, rng);
        }
        let n = (m.config.classes + 1) * m.config.ctx_tokens * m.config.dim;
        m.params.fill_normal(l.class, n, 0.5, rng);
        for b in &l.blocks {
            b.init(&mut m.params, rng);
        }
        Ok(m)
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore<F>) -> Result<Self, ModelError> {
        let mut m = Self::new(config)?;
        if m.params.entries.len() != params.entries.len() {
            return Err(ModelError::Layout(alloc::format!(
                "{} tensors, expected {}",
                params.entries.len(),
                m.params.entries.len()
            )));
        }
        for (a, b) in m.params.entries.iter().zip(&params.entries) {
            if a.name != b.name || a.shape != b.shape {
                return Err(ModelError::Layout(a.name.clone()));
            }
        }
        if params.data.len() != m.params.data.len() {
            return Err(ModelError::Layout("data length".into()));
        }
        m.params = params;
        Ok(m)
    }

    pub fn dims(&self) -> BlockDims {
        self.dims
    }

    pub fn cast<G: Real>(&self) -> Dit<G> {
        Dit {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
            dims: self.dims,
        }
    }

    fn time_embed(&self, t: f64) -> TimeEmbed<F> {
        let p = &self.params.data;
        let l = &self.layout;
        let sin = timestep_features(t, self.config.dim);
        let a = l.t1.apply(p, &sin, 1);
        let b: Vec<F> = a.iter().map(|&x| nn::silu(x)).collect();
        let e = l.t2.apply(p, &b, 1);
        let act = e.iter().map(|&x| nn::silu(x)).collect();
        TimeEmbed { sin, a, b, e, act }
    }

    fn time_embed_backward(&self, te: &TimeEmbed<F>, d_act: &[F], g: &mut [F]) {
        let p = &self.params.data;
        let l = &self.layout;
        let de: Vec<F> = d_act.iter().zip(&te.e).map(|(&d, &e)| d * nn::silu_grad(e)).collect();
        let mut db = alloc::vec![F::zero(); self.config.dim];
        l.t2.backward(p, &te.b, 1, &de, g, Some(&mut db));
        let da: Vec<F> = db.iter().zip(&te.a).map(|(&d, &a)| d * nn::silu_grad(a)).collect();
        l.t1.backward(p, &te.sin, 1, &da, g, None);
    }

    fn check_class(&self, class: usize) -> Result<(), ModelError> {
        if class > self.config.classes {
            return Err(ModelError::Class {
                class,
                null: self.config.classes,
            });
        }
        Ok(())
    }

    fn scaled_clean(&self, cond: &Conditioning<F>) -> Vec<F> {
        let c = F::of(1.0 / self.config.data_std);
        cond.clean.iter().map(|&x| x * c).collect()
    }

    /// Runs the clean stream through every block.
    pub fn clean_pass(&self, cond: &Conditioning<F>, class: usize) -> Result<CleanPass<F>, ModelError> {
        self.check_class(class)?;
        let p = &self.params.data;
        let l = &self.layout;
        let d = self.config.dim;
        let rows = cond.pe.clean_rows();
        let expected = rows * self.config.latent_dim();
        if cond.clean.len() != expected {
            return Err(ModelError::Input {
                expected,
                got: cond.clean.len(),
            });
        }
        let ctx_len = self.config.ctx_tokens * d;
        let ctx = p[l.class + class * ctx_len..l.class + (class + 1) * ctx_len].to_vec();
        let temb = self.time_embed(1.0);
        let mut h = l.embed.apply(p, &self.scaled_clean(cond), rows);
        let hm = l.mask.apply(p, &cond.masks, rows);
        h.iter_mut().zip(&hm).for_each(|(a, &b)| *a += b);
        let inputs = BlockInputs {
            pe: &cond.pe,
            temb_noisy: &temb.act,
            temb_clean: &temb.act,
            ctx: &ctx,
            ctx_rows: self.config.ctx_tokens,
        };
        let depth = l.blocks.len();
        let caches = l
            .blocks
            .iter()
            .enumerate()
            .map(|(b, block)| block.forward_clean(p, self.dims, &inputs, &mut h, b + 1 < depth))
            .collect();
        Ok(CleanPass { caches, class, ctx, temb })
    }

    fn noisy_pass(&self, cond: &Conditioning<F>, clean: &CleanPass<F>, x: &[F], t: f64) -> Result<(Vec<F>, NoisyPass<F>), ModelError> {
        let p = &self.params.data;
        let l = &self.layout;
        let d = self.config.dim;
        let rows = cond.pe.noisy_rows();
        let expected = rows * self.config.latent_dim();
        if x.len() != expected {
            return Err(ModelError::Input { expected, got: x.len() });
        }
        let temb = self.time_embed(t);
        let (c_in, c_skip, c_out) = preconditioning(t, self.config.data_std);
        let xin: Vec<F> = x.iter().map(|&v| v * F::of(c_in)).collect();
        let mut h = l.embed.apply(p, &xin, rows);
        let inputs = BlockInputs {
            pe: &cond.pe,
            temb_noisy: &temb.act,
            temb_clean: &clean.temb.act,
            ctx: &clean.ctx,
            ctx_rows: self.config.ctx_tokens,
        };
        let caches = l
            .blocks
            .iter()
            .zip(&clean.caches)
            .map(|(block, cc)| block.forward_noisy(p, self.dims, &inputs, &mut h, cc))
            .collect();
        let (y, rstd) = nn::layer_norm(&h, d);
        let fm = l.final_mod.apply(p, &temb.act, 1);
        let a = nn::modulate(&y, &fm[..d], &fm[d..]);
        let mut out = l.out.apply(p, &a, rows);
        let (cs, co) = (F::of(c_skip), F::of(c_out));
        out.iter_mut().zip(x).for_each(|(o, &v)| *o = cs * v + co * *o);
        Ok((
            out,
            NoisyPass {
                caches,
                temb,
                xin,
                y,
                rstd,
                fm,
                a,
            },
        ))
    }

    /// Predicted velocity for noisy latents `x` at time `t`.
    pub fn velocity(&self, cond: &Conditioning<F>, clean: &CleanPass<F>, x: &[F], t: f64) -> Result<Vec<F>, ModelError> {
        Ok(self.noisy_pass(cond, clean, x, t)?.0)
    }

    /// Mean squared velocity error of one example; adds `scale * dL/dθ`
    /// into `grad`.
    pub fn loss_and_grad(&self, ex: &Example<F>, grad: &mut [F], scale: f64) -> Result<f64, ModelError> {
        let p = &self.params.data;
        let l = &self.layout;
        let d = self.config.dim;
        let clean = self.clean_pass(&ex.cond, ex.class)?;
        let xt = forward_process(&ex.x0, &ex.x1, ex.t)?;
        let (out, np) = self.noisy_pass(&ex.cond, &clean, &xt, ex.t)?;
        let n = out.len() as f64;
        let mut loss = 0.0;
        let (_, _, c_out) = preconditioning(ex.t, self.config.data_std);
        // Only the network branch carries parameters.
        let k = F::of(2.0 * scale / n * c_out);
        let d_out: Vec<F> = out
            .iter()
            .zip(ex.x0.iter().zip(&ex.x1))
            .map(|(&o, (&a, &b))| {
                let diff = o - (b - a);
                loss += diff.f64() * diff.f64();
                k * diff
            })
            .collect();
        loss /= n;
        if !loss.is_finite() {
            return Err(ModelError::NonFinite {
                loss,
                t: ex.t,
                class: ex.class,
            });
        }

        let rows = ex.cond.pe.noisy_rows();
        let crow = ex.cond.pe.clean_rows();
        let mut da = alloc::vec![F::zero(); rows * d];
        l.out.backward(p, &np.a, rows, &d_out, grad, Some(&mut da));
        let mut dfm = alloc::vec![F::zero(); 2 * d];
        let (dsh, dsc) = dfm.split_at_mut(d);
        let dy = nn::modulate_backward(&np.y, &np.fm[d..], &da, dsh, dsc);
        let mut dh_n = alloc::vec![F::zero(); rows * d];
        nn::layer_norm_backward(&np.y, &np.rstd, &dy, d, &mut dh_n);
        let mut d_act_n = alloc::vec![F::zero(); d];
        l.final_mod.backward(p, &np.temb.act, 1, &dfm, grad, Some(&mut d_act_n));

        let mut dh_c = alloc::vec![F::zero(); crow * d];
        let mut d_act_c = alloc::vec![F::zero(); d];
        let mut d_ctx = alloc::vec![F::zero(); self.config.ctx_tokens * d];
        let inputs = BlockInputs {
            pe: &ex.cond.pe,
            temb_noisy: &np.temb.act,
            temb_clean: &clean.temb.act,
            ctx: &clean.ctx,
            ctx_rows: self.config.ctx_tokens,
        };
        for b in (0..l.blocks.len()).rev() {
            let gr = l.blocks[b].backward(p, grad, self.dims, &inputs, &clean.caches[b], &np.caches[b], dh_n, dh_c);
            dh_n = gr.noisy;
            dh_c = gr.clean;
            d_act_n.iter_mut().zip(&gr.temb_noisy).for_each(|(a, &b)| *a += b);
            d_act_c.iter_mut().zip(&gr.temb_clean).for_each(|(a, &b)| *a += b);
            d_ctx.iter_mut().zip(&gr.ctx).for_each(|(a, &b)| *a += b);
        }
        l.embed.backward(p, &np.xin, rows, &dh_n, grad, None);
        l.embed.backward(p, &self.scaled_clean(&ex.cond), crow, &dh_c, grad, None);
        l.mask.backward(p, &ex.cond.masks, crow, &dh_c, grad, None);
        self.time_embed_backward(&np.temb, &d_act_n, grad);
        self.time_embed_backward(&clean.temb, &d_act_c, grad);
        let off = l.class + clean.class * d_ctx.len();
        grad[off..off + d_ctx.len()].iter_mut().zip(&d_ctx).for_each(|(a, &b)| *a += b);
        Ok(loss)
    }

    /// Loss only, without gradients.
    pub fn loss(&self, ex: &Example<F>) -> Result<f64, ModelError> {
        let clean = self.clean_pass(&ex.cond, ex.class)?;
        let xt = forward_process(&ex.x0, &ex.x1, ex.t)?;
        let out = self.velocity(&ex.cond, &clean, &xt, ex.t)?;
        let n = out.len() as f64;
        Ok(out
            .iter()
            .zip(ex.x0.iter().zip(&ex.x1))
            .map(|(&o, (&a, &b))| {
                let diff = (o - (b - a)).f64();
                diff * diff
            })
            .sum::<f64>()
            / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::cond::{build_conditioning, CondFrame};
    use crate::diffusion::Codec;
    use crate::geometry::{CameraPose, DepthMap, Intrinsics};
    use crate::image::Image;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(two_level: bool) -> ModelConfig {
        ModelConfig {
            width: 16,
            height: 8,
            frames: 3,
            codec: CodecConfig {
                patch: 4,
                temporal_stride: 1,
                seed: 1,
            },
            dim: if two_level { 128 } else { 32 },
            depth: 2,
            heads: if two_level { 8 } else { 2 },
            ffn_ratio: 2,
            two_level_pe: two_level,
            rope_theta: 100.0,
            data_std: 0.5,
            classes: 2,
            ctx_tokens: 2,
            sampler: SamplerDefaults::default(),
        }
    }

    fn example(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Example<f64> {
        let codec = Codec::new(cfg.codec).unwrap();
        let k = Intrinsics::new(8.0, 8.0, 7.5, 3.5, 16, 8).unwrap();
        let img = |rng: &mut ChaCha8Rng| Image::from_data(16, 8, (0..16 * 8 * 3).map(|_| rng.random::<f32>()).collect());
        let depth = DepthMap::constant(16, 8, 3.0);
        let targets: Vec<CameraPose> = (0..3)
            .map(|i| CameraPose::from_translation(Vector3::new(0.2 * i as f64, 0.0, 0.0)))
            .collect();
        let (r, m1, m2) = (img(rng), img(rng), img(rng));
        let mask: Vec<bool> = (0..128).map(|i| i % 5 != 0).collect();
        let p1 = CameraPose::from_translation(Vector3::new(0.3, 0.1, 0.0));
        let mems = [
            CondFrame { image: &m1, depth: &depth, pose: &targets[1], mask: None },
            CondFrame { image: &m2, depth: &depth, pose: &p1, mask: Some(&mask) },
        ];
        let cond = build_conditioning(
            cfg,
            &codec,
            &k,
            &targets,
            CondFrame { image: &r, depth: &depth, pose: &targets[0], mask: None },
            &mems,
            &[2, 3],
        )
        .unwrap();
        let n = 3 * cfg.tokens_per_frame() * cfg.latent_dim();
        let x0 = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let x1 = (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); 0.5 * z }).collect::<Vec<f64>>();
        Example { cond, class: 1, x0, x1, t: 0.37 }
    }

    use rand_distr::{Distribution, StandardNormal};

    fn check_gradients(two_level: bool) {
        let cfg = tiny(two_level);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = Dit::<f64>::init(cfg.clone(), &mut rng).unwrap();
        for x in &mut m.params.data {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += 0.05 * z;
        }
        let ex = example(&cfg, &mut rng);
        let mut g = m.params.zeros_like();
        let loss = m.loss_and_grad(&ex, &mut g, 1.0).unwrap();
        assert!((loss - m.loss(&ex).unwrap()).abs() < 1e-12);
        let h = 1e-4;
        let entries = m.params.entries.clone();
        let mut worst: f64 = 0.0;
        for e in &entries {
            for _ in 0..2 {
                let i = e.offset + rng.random_range(0..e.len());
                let orig = m.params.data[i];
                m.params.data[i] = orig + h;
                let lp = m.loss(&ex).unwrap();
                m.params.data[i] = orig - h;
                let lm = m.loss(&ex).unwrap();
                m.params.data[i] = orig;
                let num = (lp - lm) / (2.0 * h);
                let rel = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-6);
                assert!(rel < 1e-3, "{} [{}]: fd {num} vs analytic {}", e.name, i - e.offset, g[i]);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-3);
    }

    #[test]
    fn gradient_matches_finite_differences_single_level() {
        check_gradients(false);
    }

    #[test]
    fn gradient_matches_finite_differences_two_level() {
        check_gradients(true);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig { dim: 100, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { frames: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
