//! The dual-stream DiT block: block-sparse 3D self-attention, cross-attention
//! to the conditioning tokens, and a modulated feed-forward network, with a
//! hand-written backward pass.
//!
//! Both streams share the block weights. The noisy stream is modulated by the
//! diffusion-time embedding; the clean stream by the embedding of `t = 1`.

use alloc::vec::Vec;

use rand::Rng;

use super::{attend_segments, attend_segments_backward, KeySegment};
use crate::linalg::Real;
use crate::nn::{self, Lin, ParamStore};
use crate::pe_warp::{CondSource, CondTokenSet, MultiLevelPeConfig, PeError, RopeAxes, RopeTable, TimeAwarePe};

/// Weight layout of one block inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockParams {
    pub modulation: Lin,
    pub q: Lin,
    pub k: Lin,
    pub v: Lin,
    pub o: Lin,
    pub cross_q: Lin,
    pub cross_k: Lin,
    pub cross_v: Lin,
    pub cross_o: Lin,
    pub ff1: Lin,
    pub ff2: Lin,
}

impl BlockParams {
    pub fn new<F: Real>(store: &mut ParamStore<F>, prefix: &str, dim: usize, ffn: usize) -> Self {
        let l = |store: &mut ParamStore<F>, name: &str, din, dout| {
            Lin::new(store, &alloc::format!("{prefix}.{name}"), din, dout, true)
        };
        Self {
            modulation: l(store, "modulation", dim, 6 * dim),
            q: l(store, "attn.q", dim, dim),
            k: l(store, "attn.k", dim, dim),
            v: l(store, "attn.v", dim, dim),
            o: l(store, "attn.o", dim, dim),
            cross_q: l(store, "cross.q", dim, dim),
            cross_k: l(store, "cross.k", dim, dim),
            cross_v: l(store, "cross.v", dim, dim),
            cross_o: l(store, "cross.o", dim, dim),
            ff1: l(store, "ffn.1", dim, ffn),
            ff2: l(store, "ffn.2", ffn, dim),
        }
    }

    /// Random projections; the modulation stays zero so gates start closed.
    pub fn init<F: Real, R: Rng>(&self, store: &mut ParamStore<F>, rng: &mut R) {
        for lin in [&self.q, &self.k, &self.v, &self.o, &self.cross_q, &self.cross_k, &self.cross_v, &self.cross_o, &self.ff1, &self.ff2] {
            lin.init(store, 1.0, rng);
        }
    }
}

/// Rotary tables and key validity for one conditioning layout.
#[derive(Debug, Clone)]
pub struct PeState<F> {
    pub frames: usize,
    pub tokens: usize,
    /// Native PEs of the noisy frames (`frames * tokens` rows).
    pub noisy: RopeTable<F>,
    /// Original PEs of the stored clean latents: reference, then memories.
    pub clean: RopeTable<F>,
    pub ref_views: Vec<RopeTable<F>>,
    pub ref_valid: Vec<Vec<bool>>,
    pub mem_views: Vec<RopeTable<F>>,
    pub mem_valid: Vec<Vec<bool>>,
    pub assignments: Vec<usize>,
}

impl<F: Real> PeState<F> {
    /// `noisy[i]` is the native PE of target frame `i + 1`; `cond` holds the
    /// warped reference and memory views.
    pub fn new(
        noisy: &[TimeAwarePe],
        cond: &CondTokenSet,
        patch: usize,
        cfg: &MultiLevelPeConfig,
        axes: &RopeAxes,
    ) -> Result<Self, PeError> {
        let frames = cond.frames;
        if noisy.len() != frames {
            return Err(PeError::ReferenceViews {
                expected: frames,
                got: noisy.len(),
            });
        }
        let tokens = noisy[0].tokens();
        let (rows, cols) = (noisy[0].rows, noisy[0].cols);
        let native = |tau| TimeAwarePe::native(cols * patch, rows * patch, tau, patch, cfg);
        let mut clean = alloc::vec![native(1)?];
        let (mut ref_views, mut ref_valid, mut mem_views, mut mem_valid, mut assignments) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for e in &cond.entries {
            match e.source {
                CondSource::Reference => {
                    ref_views.push(RopeTable::new(core::slice::from_ref(&e.pe), cfg, axes));
                    ref_valid.push(e.pe.validity());
                }
                CondSource::Memory(_) => {
                    clean.push(native(e.frame)?);
                    mem_views.push(RopeTable::new(core::slice::from_ref(&e.pe), cfg, axes));
                    mem_valid.push(e.pe.validity());
                    assignments.push(e.frame);
                }
            }
        }
        Ok(Self {
            frames,
            tokens,
            noisy: RopeTable::new(noisy, cfg, axes),
            clean: RopeTable::new(&clean, cfg, axes),
            ref_views,
            ref_valid,
            mem_views,
            mem_valid,
            assignments,
        })
    }

    pub fn memories(&self) -> usize {
        self.mem_views.len()
    }

    pub fn noisy_rows(&self) -> usize {
        self.frames * self.tokens
    }

    pub fn clean_rows(&self) -> usize {
        (1 + self.memories()) * self.tokens
    }
}

/// Shapes shared by every block of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    pub dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn: usize,
}

#[derive(Debug, Clone, Default)]
struct StreamCache<F> {
    rows: usize,
    modv: Vec<F>,
    y1: Vec<F>,
    rstd1: Vec<F>,
    a1: Vec<F>,
    qr: Vec<F>,
    kr: Vec<F>,
    v: Vec<F>,
    att: Vec<F>,
    o: Vec<F>,
    y2: Vec<F>,
    rstd2: Vec<F>,
    cq: Vec<F>,
    cprobs: Vec<F>,
    catt: Vec<F>,
    y3: Vec<F>,
    rstd3: Vec<F>,
    a3: Vec<F>,
    f1: Vec<F>,
    act: Vec<F>,
    f2: Vec<F>,
}

/// Clean-stream activations of one block. The clean stream never reads the
/// noisy stream, so this is computed once per conditioning layout and class.
#[derive(Debug, Clone, Default)]
pub struct CleanCache<F> {
    c: StreamCache<F>,
    kw_ref: Vec<Vec<F>>,
    kw_mem: Vec<Vec<F>>,
    probs: Vec<Vec<F>>,
    ck: Vec<F>,
    cv: Vec<F>,
    full: bool,
}

/// Noisy-stream activations of one block.
#[derive(Debug, Clone, Default)]
pub struct NoisyCache<F> {
    n: StreamCache<F>,
    probs: Vec<Vec<F>>,
}

/// Gradients flowing out of a block besides the weight gradients.
#[derive(Debug, Clone)]
pub struct BlockGrads<F> {
    pub noisy: Vec<F>,
    pub clean: Vec<F>,
    /// Gradient w.r.t. the activated time embedding of each stream.
    pub temb_noisy: Vec<F>,
    pub temb_clean: Vec<F>,
    /// Gradient w.r.t. the conditioning context tokens.
    pub ctx: Vec<F>,
}

/// Conditioning inputs shared by both streams of a block.
pub struct BlockInputs<'a, F> {
    pub pe: &'a PeState<F>,
    /// `silu(e_t)` for the noisy stream.
    pub temb_noisy: &'a [F],
    /// `silu(e_1)` for the clean stream.
    pub temb_clean: &'a [F],
    /// Conditioning tokens, `ctx_rows x dim`.
    pub ctx: &'a [F],
    pub ctx_rows: usize,
}

fn rows_of<F>(x: &[F], row0: usize, rows: usize, dim: usize) -> &[F] {
    &x[row0 * dim..(row0 + rows) * dim]
}

impl BlockParams {
    fn pre_attention<F: Real>(&self, p: &[F], dims: BlockDims, h: &[F], temb: &[F], with_q: bool) -> StreamCache<F> {
        let d = dims.dim;
        let rows = h.len() / d;
        let modv = self.modulation.apply(p, temb, 1);
        let (y1, rstd1) = nn::layer_norm(h, d);
        let a1 = nn::modulate(&y1, &modv[0..d], &modv[d..2 * d]);
        let qr = if with_q { self.q.apply(p, &a1, rows) } else { Vec::new() };
        let kr = self.k.apply(p, &a1, rows);
        let v = self.v.apply(p, &a1, rows);
        StreamCache {
            rows,
            modv,
            y1,
            rstd1,
            a1,
            qr,
            kr,
            v,
            ..Default::default()
        }
    }

    /// Output projection, cross-attention and FFN; updates `h` in place.
    #[allow(clippy::too_many_arguments)]
    fn post_attention<F: Real>(
        &self,
        p: &[F],
        dims: BlockDims,
        h: &mut [F],
        c: &mut StreamCache<F>,
        ck: &[F],
        cv: &[F],
        ctx_rows: usize,
    ) {
        let d = dims.dim;
        let rows = c.rows;
        c.o = self.o.apply(p, &c.att, rows);
        let gate1 = &c.modv[2 * d..3 * d];
        for (hr, orow) in h.chunks_exact_mut(d).zip(c.o.chunks_exact(d)) {
            hr.iter_mut().zip(orow).zip(gate1).for_each(|((x, &o), &g)| *x += g * o);
        }

        let (y2, rstd2) = nn::layer_norm(h, d);
        c.cq = self.cross_q.apply(p, &y2, rows);
        c.catt = alloc::vec![F::zero(); rows * d];
        let seg = [KeySegment { k: ck, v: cv, rows: ctx_rows, valid: None }];
        c.cprobs = attend_segments(&c.cq, rows, &seg, dims.heads, dims.head_dim, &mut c.catt, true);
        let co = self.cross_o.apply(p, &c.catt, rows);
        h.iter_mut().zip(&co).for_each(|(x, &y)| *x += y);
        c.y2 = y2;
        c.rstd2 = rstd2;

        let (y3, rstd3) = nn::layer_norm(h, d);
        c.a3 = nn::modulate(&y3, &c.modv[3 * d..4 * d], &c.modv[4 * d..5 * d]);
        c.f1 = self.ff1.apply(p, &c.a3, rows);
        c.act = c.f1.iter().map(|&x| nn::gelu(x)).collect();
        c.f2 = self.ff2.apply(p, &c.act, rows);
        let gate2 = &c.modv[5 * d..6 * d];
        for (hr, frow) in h.chunks_exact_mut(d).zip(c.f2.chunks_exact(d)) {
            hr.iter_mut().zip(frow).zip(gate2).for_each(|((x, &f), &g)| *x += g * f);
        }
        c.y3 = y3;
        c.rstd3 = rstd3;
    }

    /// Clean-stream pass, updating `clean` in place.
    ///
    /// With `full == false` (the last block) the clean stream only provides
    /// keys and values to the noisy stream and is left unchanged.
    pub fn forward_clean<F: Real>(
        &self,
        p: &[F],
        dims: BlockDims,
        inputs: &BlockInputs<'_, F>,
        clean: &mut [F],
        full: bool,
    ) -> CleanCache<F> {
        let pe = inputs.pe;
        let (d, tok) = (dims.dim, pe.tokens);
        debug_assert_eq!(clean.len(), pe.clean_rows() * d);
        let mut c = self.pre_attention(p, dims, clean, inputs.temb_clean, full);

        // Warped keys are rotated from the unrotated clean keys.
        let kw_ref: Vec<Vec<F>> = pe.ref_views.iter().map(|t| t.rotated(rows_of(&c.kr, 0, tok, d))).collect();
        let kw_mem: Vec<Vec<F>> = pe
            .mem_views
            .iter()
            .enumerate()
            .map(|(j, t)| t.rotated(rows_of(&c.kr, (1 + j) * tok, tok, d)))
            .collect();
        let ck = self.cross_k.apply(p, inputs.ctx, inputs.ctx_rows);
        let cv = self.cross_v.apply(p, inputs.ctx, inputs.ctx_rows);

        let mut probs = Vec::new();
        if full {
            pe.clean.apply(&mut c.qr, false);
            pe.clean.apply(&mut c.kr, false);
            let mut att = alloc::vec![F::zero(); c.rows * d];
            for e in 0..c.rows / tok {
                let seg = [KeySegment {
                    k: rows_of(&c.kr, e * tok, tok, d),
                    v: rows_of(&c.v, e * tok, tok, d),
                    rows: tok,
                    valid: None,
                }];
                probs.push(attend_segments(
                    rows_of(&c.qr, e * tok, tok, d),
                    tok,
                    &seg,
                    dims.heads,
                    dims.head_dim,
                    &mut att[e * tok * d..(e + 1) * tok * d],
                    true,
                ));
            }
            c.att = att;
            self.post_attention(p, dims, clean, &mut c, &ck, &cv, inputs.ctx_rows);
        }
        CleanCache {
            c,
            kw_ref,
            kw_mem,
            probs,
            ck,
            cv,
            full,
        }
    }

    /// Noisy-stream pass against the clean keys and values of the same block,
    /// updating `noisy` in place.
    pub fn forward_noisy<F: Real>(
        &self,
        p: &[F],
        dims: BlockDims,
        inputs: &BlockInputs<'_, F>,
        noisy: &mut [F],
        cc: &CleanCache<F>,
    ) -> NoisyCache<F> {
        let pe = inputs.pe;
        let (d, tok) = (dims.dim, pe.tokens);
        debug_assert_eq!(noisy.len(), pe.noisy_rows() * d);
        let mut n = self.pre_attention(p, dims, noisy, inputs.temb_noisy, true);
        pe.noisy.apply(&mut n.qr, false);
        pe.noisy.apply(&mut n.kr, false);

        let mut att = alloc::vec![F::zero(); n.rows * d];
        let mut probs = Vec::with_capacity(pe.frames);
        for i in 0..pe.frames {
            let segs = noisy_segments(pe, i, &n, cc, d);
            probs.push(attend_segments(
                rows_of(&n.qr, i * tok, tok, d),
                tok,
                &segs,
                dims.heads,
                dims.head_dim,
                &mut att[i * tok * d..(i + 1) * tok * d],
                true,
            ));
        }
        n.att = att;
        self.post_attention(p, dims, noisy, &mut n, &cc.ck, &cc.cv, inputs.ctx_rows);
        NoisyCache { n, probs }
    }

    /// Backward through output projection, cross-attention and FFN.
    /// Adds into `dh` and returns the gradient w.r.t. the attention output.
    #[allow(clippy::too_many_arguments)]
    fn post_attention_backward<F: Real>(
        &self,
        p: &[F],
        g: &mut [F],
        dims: BlockDims,
        c: &StreamCache<F>,
        ck: &[F],
        cv: &[F],
        ctx_rows: usize,
        dh: &mut [F],
        dmod: &mut [F],
        dck: &mut [F],
        dcv: &mut [F],
    ) -> Vec<F> {
        let d = dims.dim;
        let rows = c.rows;

        // FFN
        let gate2 = &c.modv[5 * d..6 * d];
        let mut df2 = alloc::vec![F::zero(); rows * d];
        for ((dfr, dhr), fr) in df2.chunks_exact_mut(d).zip(dh.chunks_exact(d)).zip(c.f2.chunks_exact(d)) {
            for i in 0..d {
                dmod[5 * d + i] += dhr[i] * fr[i];
                dfr[i] = dhr[i] * gate2[i];
            }
        }
        let mut dact = alloc::vec![F::zero(); rows * dims.ffn];
        self.ff2.backward(p, &c.act, rows, &df2, g, Some(&mut dact));
        for (da, &x) in dact.iter_mut().zip(&c.f1) {
            *da *= nn::gelu_grad(x);
        }
        let mut da3 = alloc::vec![F::zero(); rows * d];
        self.ff1.backward(p, &c.a3, rows, &dact, g, Some(&mut da3));
        let (dsh, dsc) = dmod[3 * d..5 * d].split_at_mut(d);
        let dy3 = nn::modulate_backward(&c.y3, &c.modv[4 * d..5 * d], &da3, dsh, dsc);
        nn::layer_norm_backward(&c.y3, &c.rstd3, &dy3, d, dh);

        // Cross-attention
        let mut dcatt = alloc::vec![F::zero(); rows * d];
        self.cross_o.backward(p, &c.catt, rows, dh, g, Some(&mut dcatt));
        let seg = [KeySegment { k: ck, v: cv, rows: ctx_rows, valid: None }];
        let mut dcq = alloc::vec![F::zero(); rows * d];
        attend_segments_backward(&c.cq, rows, &seg, &c.cprobs, &dcatt, dims.heads, dims.head_dim, &mut dcq, &mut [(dck, dcv)]);
        let mut dy2 = alloc::vec![F::zero(); rows * d];
        self.cross_q.backward(p, &c.y2, rows, &dcq, g, Some(&mut dy2));
        nn::layer_norm_backward(&c.y2, &c.rstd2, &dy2, d, dh);

        // Gated residual of the self-attention output.
        let gate1 = &c.modv[2 * d..3 * d];
        let mut do_ = alloc::vec![F::zero(); rows * d];
        for ((dor, dhr), orow) in do_.chunks_exact_mut(d).zip(dh.chunks_exact(d)).zip(c.o.chunks_exact(d)) {
            for i in 0..d {
                dmod[2 * d + i] += dhr[i] * orow[i];
                dor[i] = dhr[i] * gate1[i];
            }
        }
        let mut datt = alloc::vec![F::zero(); rows * d];
        self.o.backward(p, &c.att, rows, &do_, g, Some(&mut datt));
        datt
    }

    /// Backward through the pre-attention projections given gradients of
    /// the unrotated q, k and v. Adds into `dh` and `dmod`.
    #[allow(clippy::too_many_arguments)]
    fn pre_attention_backward<F: Real>(
        &self,
        p: &[F],
        g: &mut [F],
        dims: BlockDims,
        c: &StreamCache<F>,
        dq: Option<&[F]>,
        dk: &[F],
        dv: &[F],
        dh: &mut [F],
        dmod: &mut [F],
    ) {
        let d = dims.dim;
        let rows = c.rows;
        let mut da1 = alloc::vec![F::zero(); rows * d];
        if let Some(dq) = dq {
            self.q.backward(p, &c.a1, rows, dq, g, Some(&mut da1));
        }
        self.k.backward(p, &c.a1, rows, dk, g, Some(&mut da1));
        self.v.backward(p, &c.a1, rows, dv, g, Some(&mut da1));
        let (dsh, dsc) = dmod[0..2 * d].split_at_mut(d);
        let dy1 = nn::modulate_backward(&c.y1, &c.modv[d..2 * d], &da1, dsh, dsc);
        nn::layer_norm_backward(&c.y1, &c.rstd1, &dy1, d, dh);
    }

    /// Backward pass of both streams. `d_noisy`/`d_clean` are gradients
    /// w.r.t. the block outputs; weight gradients accumulate into `g`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<F: Real>(
        &self,
        p: &[F],
        g: &mut [F],
        dims: BlockDims,
        inputs: &BlockInputs<'_, F>,
        cc: &CleanCache<F>,
        nc: &NoisyCache<F>,
        d_noisy: Vec<F>,
        d_clean: Vec<F>,
    ) -> BlockGrads<F> {
        let pe = inputs.pe;
        let (d, tok) = (dims.dim, pe.tokens);
        let (n, c) = (&nc.n, &cc.c);
        let mut dctx = alloc::vec![F::zero(); inputs.ctx_rows * d];
        let mut dck = alloc::vec![F::zero(); inputs.ctx_rows * d];
        let mut dcv = alloc::vec![F::zero(); inputs.ctx_rows * d];
        let mut dmod_n = alloc::vec![F::zero(); 6 * d];
        let mut dmod_c = alloc::vec![F::zero(); 6 * d];

        let mut dh_n = d_noisy;
        let mut dh_c = d_clean;

        // Clean-stream gradients w.r.t. rotated k (native PE) and v.
        let mut dkr_c = alloc::vec![F::zero(); c.rows * d];
        let mut dv_c = alloc::vec![F::zero(); c.rows * d];
        let mut dqr_c = Vec::new();
        if cc.full {
            let datt_c = self.post_attention_backward(p, g, dims, c, &cc.ck, &cc.cv, inputs.ctx_rows, &mut dh_c, &mut dmod_c, &mut dck, &mut dcv);
            dqr_c = alloc::vec![F::zero(); c.rows * d];
            for e in 0..c.rows / tok {
                let seg = [KeySegment {
                    k: rows_of(&c.kr, e * tok, tok, d),
                    v: rows_of(&c.v, e * tok, tok, d),
                    rows: tok,
                    valid: None,
                }];
                let r = e * tok * d..(e + 1) * tok * d;
                attend_segments_backward(
                    &c.qr[r.clone()],
                    tok,
                    &seg,
                    &cc.probs[e],
                    &datt_c[r.clone()],
                    dims.heads,
                    dims.head_dim,
                    &mut dqr_c[r.clone()],
                    &mut [(&mut dkr_c[r.clone()], &mut dv_c[r])],
                );
            }
        }

        let datt_n = self.post_attention_backward(p, g, dims, n, &cc.ck, &cc.cv, inputs.ctx_rows, &mut dh_n, &mut dmod_n, &mut dck, &mut dcv);

        let mut dqr_n = alloc::vec![F::zero(); n.rows * d];
        let mut dkr_n = alloc::vec![F::zero(); n.rows * d];
        let mut dv_n = alloc::vec![F::zero(); n.rows * d];
        let mut dkw_ref: Vec<Vec<F>> = (0..pe.frames).map(|_| alloc::vec![F::zero(); tok * d]).collect();
        let mut dkw_mem: Vec<Vec<F>> = (0..pe.memories()).map(|_| alloc::vec![F::zero(); tok * d]).collect();
        for i in 0..pe.frames {
            let segs = noisy_segments(pe, i, n, cc, d);
            let (dv_ref, dv_mem) = dv_c.split_at_mut(tok * d);
            let mut dkv: Vec<(&mut [F], &mut [F])> = Vec::with_capacity(segs.len());
            dkv.push((&mut dkr_n[..], &mut dv_n[..]));
            dkv.push((&mut dkw_ref[i][..], dv_ref));
            for ((j, dk), dv) in dkw_mem.iter_mut().enumerate().zip(dv_mem.chunks_exact_mut(tok * d)) {
                if pe.assignments[j] == i + 1 {
                    dkv.push((&mut dk[..], dv));
                }
            }
            let r = i * tok * d..(i + 1) * tok * d;
            attend_segments_backward(
                &n.qr[r.clone()],
                tok,
                &segs,
                &nc.probs[i],
                &datt_n[r.clone()],
                dims.heads,
                dims.head_dim,
                &mut dqr_n[r],
                &mut dkv,
            );
        }

        // Undo the rotations to reach the projection outputs.
        pe.noisy.apply(&mut dqr_n, true);
        pe.noisy.apply(&mut dkr_n, true);
        if cc.full {
            pe.clean.apply(&mut dqr_c, true);
            pe.clean.apply(&mut dkr_c, true);
        }
        for (t, dk) in pe.ref_views.iter().zip(dkw_ref.iter_mut()) {
            t.apply(dk, true);
            dkr_c[..tok * d].iter_mut().zip(dk.iter()).for_each(|(a, &b)| *a += b);
        }
        for (j, (t, dk)) in pe.mem_views.iter().zip(dkw_mem.iter_mut()).enumerate() {
            t.apply(dk, true);
            let r = (1 + j) * tok * d..(2 + j) * tok * d;
            dkr_c[r].iter_mut().zip(dk.iter()).for_each(|(a, &b)| *a += b);
        }

        self.pre_attention_backward(p, g, dims, n, Some(&dqr_n), &dkr_n, &dv_n, &mut dh_n, &mut dmod_n);
        self.pre_attention_backward(p, g, dims, c, cc.full.then_some(&dqr_c[..]), &dkr_c, &dv_c, &mut dh_c, &mut dmod_c);

        self.cross_k.backward(p, inputs.ctx, inputs.ctx_rows, &dck, g, Some(&mut dctx));
        self.cross_v.backward(p, inputs.ctx, inputs.ctx_rows, &dcv, g, Some(&mut dctx));

        let mut temb_noisy = alloc::vec![F::zero(); d];
        let mut temb_clean = alloc::vec![F::zero(); d];
        self.modulation.backward(p, inputs.temb_noisy, 1, &dmod_n, g, Some(&mut temb_noisy));
        self.modulation.backward(p, inputs.temb_clean, 1, &dmod_c, g, Some(&mut temb_clean));

        BlockGrads {
            noisy: dh_n,
            clean: dh_c,
            temb_noisy,
            temb_clean,
            ctx: dctx,
        }
    }
}

/// Key segments visible to noisy frame `i`: all noisy tokens, the reference
/// replica warped to frame `i`, and memories assigned to frame `i`.
fn noisy_segments<'a, F: Real>(
    pe: &'a PeState<F>,
    i: usize,
    n: &'a StreamCache<F>,
    cc: &'a CleanCache<F>,
    d: usize,
) -> Vec<KeySegment<'a, F>> {
    let tok = pe.tokens;
    let mut segs = Vec::with_capacity(2 + pe.memories());
    segs.push(KeySegment {
        k: &n.kr,
        v: &n.v,
        rows: n.rows,
        valid: None,
    });
    segs.push(KeySegment {
        k: &cc.kw_ref[i],
        v: rows_of(&cc.c.v, 0, tok, d),
        rows: tok,
        valid: Some(&pe.ref_valid[i]),
    });
    for (j, &k) in pe.assignments.iter().enumerate() {
        if k == i + 1 {
            segs.push(KeySegment {
                k: &cc.kw_mem[j],
                v: rows_of(&cc.c.v, (1 + j) * tok, tok, d),
                rows: tok,
                valid: Some(&pe.mem_valid[j]),
            });
        }
    }
    segs
}

/// Forward of a single block on both streams, returning the updated
/// `(noisy, clean)` token rows.
pub fn dit_block_forward<F: Real>(
    block: &BlockParams,
    params: &[F],
    dims: BlockDims,
    inputs: &BlockInputs<'_, F>,
    noisy: &[F],
    clean: &[F],
) -> (Vec<F>, Vec<F>) {
    let mut n = noisy.to_vec();
    let mut c = clean.to_vec();
    let cc = block.forward_clean(params, dims, inputs, &mut c, true);
    block.forward_noisy(params, dims, inputs, &mut n, &cc);
    (n, c)
}
