//! Dual-stream block-sparse attention.
//!
//! The token sequence is `N` noisy frame blocks followed by `N + M` clean
//! entry blocks (the reference replicated once per target frame, then the
//! memories). Noisy queries see every noisy key plus the clean entries warped
//! into their own frame; clean queries see only their own entry.

pub mod dit;

use alloc::vec::Vec;

use crate::linalg::{gemm, Real, View, ViewMut};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AttentionError {
    #[error("expected {expected} assignments, got {got}")]
    AssignmentCount { expected: usize, got: usize },
    #[error("assignment {value} for memory entry {entry} is outside 1..={frames}")]
    AssignmentOutOfRange { entry: usize, value: usize, frames: usize },
    #[error("key validity has length {got}, expected {expected}")]
    ValidityLength { expected: usize, got: usize },
}

/// Block-level sparsity pattern over `frames + entries` query and key blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMask {
    pub frames: usize,
    /// Assigned target frame (1-based) of every clean entry.
    pub entry_frames: Vec<usize>,
    pub tokens_per_block: usize,
    /// Row-major `(frames + entries)²` block matrix.
    pub blocks: Vec<bool>,
    /// Per clean-entry token; refines noisy-to-clean blocks only.
    pub key_valid: Vec<bool>,
}

impl BlockMask {
    pub fn entries(&self) -> usize {
        self.entry_frames.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.frames + self.entries()
    }

    pub fn seq_len(&self) -> usize {
        self.n_blocks() * self.tokens_per_block
    }

    pub fn allows(&self, q_block: usize, k_block: usize) -> bool {
        self.blocks[q_block * self.n_blocks() + k_block]
    }

    pub fn true_blocks(&self) -> usize {
        self.blocks.iter().filter(|&&b| b).count()
    }

    /// Replaces the clean-key validity vector (`entries * tokens_per_block` long).
    pub fn with_key_validity(mut self, valid: Vec<bool>) -> Result<Self, AttentionError> {
        let expected = self.entries() * self.tokens_per_block;
        if valid.len() != expected {
            return Err(AttentionError::ValidityLength {
                expected,
                got: valid.len(),
            });
        }
        self.key_valid = valid;
        Ok(self)
    }

    /// Token-level permission, combining the block rule with key validity.
    pub fn token_allows(&self, q: usize, k: usize) -> bool {
        let p = self.tokens_per_block;
        let (qb, kb) = (q / p, k / p);
        if !self.allows(qb, kb) {
            return false;
        }
        if qb < self.frames && kb >= self.frames {
            return self.key_valid[k - self.frames * p];
        }
        true
    }

    /// Dense `seq_len²` token mask.
    pub fn token_mask(&self) -> Vec<bool> {
        let n = self.seq_len();
        let mut m = Vec::with_capacity(n * n);
        for q in 0..n {
            for k in 0..n {
                m.push(self.token_allows(q, k));
            }
        }
        m
    }

    /// Key blocks a query block may read, in increasing order.
    pub fn allowed_keys(&self, q_block: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_blocks()).filter(move |&kb| self.allows(q_block, kb))
    }
}

/// Builds the dual-stream mask for `frames` noisy frames and `assignments.len()`
/// memory entries. Reference replica `i` is assigned to frame `i + 1`.
pub fn build_dual_stream_mask(
    frames: usize,
    memories: usize,
    assignments: &[usize],
    tokens_per_frame: usize,
) -> Result<BlockMask, AttentionError> {
    if assignments.len() != memories {
        return Err(AttentionError::AssignmentCount {
            expected: memories,
            got: assignments.len(),
        });
    }
    for (j, &k) in assignments.iter().enumerate() {
        if k == 0 || k > frames {
            return Err(AttentionError::AssignmentOutOfRange { entry: j, value: k, frames });
        }
    }
    let entry_frames: Vec<usize> = (1..=frames).chain(assignments.iter().copied()).collect();
    let nb = frames + entry_frames.len();
    let mut blocks = alloc::vec![false; nb * nb];
    for q in 0..nb {
        for k in 0..nb {
            blocks[q * nb + k] = match (q < frames, k < frames) {
                (true, true) => true,
                (true, false) => entry_frames[k - frames] == q + 1,
                (false, true) => false,
                (false, false) => q == k,
            };
        }
    }
    Ok(BlockMask {
        frames,
        key_valid: alloc::vec![true; entry_frames.len() * tokens_per_frame],
        entry_frames,
        tokens_per_block: tokens_per_frame,
        blocks,
    })
}

fn softmax_rows<F: Real>(logits: &mut [F], cols: usize) {
    for row in logits.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        if max == F::neg_infinity() {
            row.iter_mut().for_each(|x| *x = F::zero());
            continue;
        }
        let mut sum = F::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        let inv = F::one() / sum;
        row.iter_mut().for_each(|x| *x *= inv);
    }
}

/// Scaled dot-product attention with a dense `n_q x n_k` boolean mask. Rows
/// are `heads * head_dim` wide. Fully masked query rows produce zeros.
pub fn dense_masked_attention<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    n_q: usize,
    n_k: usize,
    heads: usize,
    head_dim: usize,
    mask: &[bool],
) -> Vec<F> {
    let dim = heads * head_dim;
    assert_eq!(q.len(), n_q * dim);
    assert_eq!(k.len(), n_k * dim);
    assert_eq!(v.len(), n_k * dim);
    assert_eq!(mask.len(), n_q * n_k);
    let scale = F::of(1.0 / libm::sqrt(head_dim as f64));
    let mut out = alloc::vec![F::zero(); n_q * dim];
    let mut logits = alloc::vec![F::zero(); n_q * n_k];
    for h in 0..heads {
        let c0 = h * head_dim;
        gemm(
            scale,
            View::cols_of(q, n_q, dim, c0, head_dim),
            View::cols_of(k, n_k, dim, c0, head_dim).t(),
            F::zero(),
            ViewMut::rm(&mut logits, n_q, n_k),
        );
        for (x, &m) in logits.iter_mut().zip(mask) {
            if !m {
                *x = F::neg_infinity();
            }
        }
        softmax_rows(&mut logits, n_k);
        gemm(
            F::one(),
            View::rm(&logits, n_q, n_k),
            View::cols_of(v, n_k, dim, c0, head_dim),
            F::zero(),
            ViewMut::cols_of(&mut out, n_q, dim, c0, head_dim),
        );
    }
    out
}

/// A contiguous run of keys/values visible to a query block.
#[derive(Clone, Copy)]
pub struct KeySegment<'a, F> {
    pub k: &'a [F],
    pub v: &'a [F],
    pub rows: usize,
    pub valid: Option<&'a [bool]>,
}

/// Attention of `n_q` queries over concatenated key segments, per head.
/// Returns the softmax probabilities (`heads x n_q x total_keys`) when
/// `keep_probs` is set, for use by [`attend_segments_backward`].
pub fn attend_segments<F: Real>(
    q: &[F],
    n_q: usize,
    segments: &[KeySegment<'_, F>],
    heads: usize,
    head_dim: usize,
    out: &mut [F],
    keep_probs: bool,
) -> Vec<F> {
    let dim = heads * head_dim;
    let total: usize = segments.iter().map(|s| s.rows).sum();
    assert_eq!(out.len(), n_q * dim);
    let scale = F::of(1.0 / libm::sqrt(head_dim as f64));
    let mut probs = alloc::vec![F::zero(); if keep_probs { heads * n_q * total } else { n_q * total }];
    for h in 0..heads {
        let c0 = h * head_dim;
        let logits = if keep_probs {
            &mut probs[h * n_q * total..(h + 1) * n_q * total]
        } else {
            &mut probs[..]
        };
        let mut col = 0;
        for seg in segments {
            gemm(
                scale,
                View::cols_of(q, n_q, dim, c0, head_dim),
                View::cols_of(seg.k, seg.rows, dim, c0, head_dim).t(),
                F::zero(),
                ViewMut {
                    data: &mut logits[col..],
                    rows: n_q,
                    cols: seg.rows,
                    rs: total,
                    cs: 1,
                },
            );
            if let Some(valid) = seg.valid {
                for r in 0..n_q {
                    for (c, &ok) in valid.iter().enumerate() {
                        if !ok {
                            logits[r * total + col + c] = F::neg_infinity();
                        }
                    }
                }
            }
            col += seg.rows;
        }
        softmax_rows(logits, total);
        let mut col = 0;
        for (si, seg) in segments.iter().enumerate() {
            gemm(
                F::one(),
                View {
                    data: &logits[col..],
                    rows: n_q,
                    cols: seg.rows,
                    rs: total,
                    cs: 1,
                },
                View::cols_of(seg.v, seg.rows, dim, c0, head_dim),
                if si == 0 { F::zero() } else { F::one() },
                ViewMut::cols_of(out, n_q, dim, c0, head_dim),
            );
            col += seg.rows;
        }
        if segments.is_empty() {
            for r in 0..n_q {
                out[r * dim + c0..r * dim + c0 + head_dim].iter_mut().for_each(|x| *x = F::zero());
            }
        }
    }
    if keep_probs {
        probs
    } else {
        Vec::new()
    }
}

/// Gradients of [`attend_segments`]. Writes `dq` (overwritten) and
/// accumulates into each segment's `dk`/`dv` buffers.
#[allow(clippy::too_many_arguments)]
pub fn attend_segments_backward<F: Real>(
    q: &[F],
    n_q: usize,
    segments: &[KeySegment<'_, F>],
    probs: &[F],
    d_out: &[F],
    heads: usize,
    head_dim: usize,
    dq: &mut [F],
    dkv: &mut [(&mut [F], &mut [F])],
) {
    let dim = heads * head_dim;
    let total: usize = segments.iter().map(|s| s.rows).sum();
    assert_eq!(dkv.len(), segments.len());
    let scale = F::of(1.0 / libm::sqrt(head_dim as f64));
    let mut dp = alloc::vec![F::zero(); n_q * total];
    for h in 0..heads {
        let c0 = h * head_dim;
        let p = &probs[h * n_q * total..(h + 1) * n_q * total];
        let mut col = 0;
        for (seg, (_, dv)) in segments.iter().zip(dkv.iter_mut()) {
            // dP = dO V^T ; dV += P^T dO
            gemm(
                F::one(),
                View::cols_of(d_out, n_q, dim, c0, head_dim),
                View::cols_of(seg.v, seg.rows, dim, c0, head_dim).t(),
                F::zero(),
                ViewMut {
                    data: &mut dp[col..],
                    rows: n_q,
                    cols: seg.rows,
                    rs: total,
                    cs: 1,
                },
            );
            gemm(
                F::one(),
                View {
                    data: &p[col..],
                    rows: n_q,
                    cols: seg.rows,
                    rs: total,
                    cs: 1,
                }
                .t(),
                View::cols_of(d_out, n_q, dim, c0, head_dim),
                F::one(),
                ViewMut::cols_of(dv, seg.rows, dim, c0, head_dim),
            );
            col += seg.rows;
        }
        // dS = P * (dP - rowsum(P * dP)), then the logit scale.
        for (prow, dprow) in p.chunks_exact(total).zip(dp.chunks_exact_mut(total)) {
            let dot: F = prow.iter().zip(dprow.iter()).map(|(&a, &b)| a * b).sum();
            for (d, &pp) in dprow.iter_mut().zip(prow) {
                *d = pp * (*d - dot) * scale;
            }
        }
        let mut col = 0;
        for (si, (seg, (dk, _))) in segments.iter().zip(dkv.iter_mut()).enumerate() {
            let ds = View {
                data: &dp[col..],
                rows: n_q,
                cols: seg.rows,
                rs: total,
                cs: 1,
            };
            gemm(
                F::one(),
                ds,
                View::cols_of(seg.k, seg.rows, dim, c0, head_dim),
                if si == 0 { F::zero() } else { F::one() },
                ViewMut::cols_of(dq, n_q, dim, c0, head_dim),
            );
            gemm(
                F::one(),
                ds.t(),
                View::cols_of(q, n_q, dim, c0, head_dim),
                F::one(),
                ViewMut::cols_of(dk, seg.rows, dim, c0, head_dim),
            );
            col += seg.rows;
        }
        if segments.is_empty() {
            for r in 0..n_q {
                dq[r * dim + c0..r * dim + c0 + head_dim].iter_mut().for_each(|x| *x = F::zero());
            }
        }
    }
}

/// Computes only the blocks permitted by `mask` over the flat token sequence.
/// Agrees with [`dense_masked_attention`] on `mask.token_mask()`.
pub fn block_sparse_attention<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    heads: usize,
    head_dim: usize,
    mask: &BlockMask,
) -> Vec<F> {
    let dim = heads * head_dim;
    let p = mask.tokens_per_block;
    let n = mask.seq_len();
    assert_eq!(q.len(), n * dim);
    assert_eq!(k.len(), n * dim);
    assert_eq!(v.len(), n * dim);
    let mut out = alloc::vec![F::zero(); n * dim];
    let mut segs = Vec::new();
    for qb in 0..mask.n_blocks() {
        segs.clear();
        for kb in mask.allowed_keys(qb) {
            let rows = kb * p * dim..(kb + 1) * p * dim;
            let valid = (qb < mask.frames && kb >= mask.frames)
                .then(|| &mask.key_valid[(kb - mask.frames) * p..(kb - mask.frames + 1) * p]);
            segs.push(KeySegment {
                k: &k[rows.clone()],
                v: &v[rows],
                rows: p,
                valid,
            });
        }
        attend_segments(
            &q[qb * p * dim..(qb + 1) * p * dim],
            p,
            &segs,
            heads,
            head_dim,
            &mut out[qb * p * dim..(qb + 1) * p * dim],
            false,
        );
    }
    out
}
