//! Warped coordinate maps, time-aware positional encodings and 3D rotary
//! embeddings.
//!
//! A conditional frame is lifted to 3D with its depth, projected into a target
//! camera, and the resulting pixel coordinate maps are averaged per latent
//! patch (and per sub-cell, for finer PE levels). Paired with the target's
//! latent time index these give the `(τ, u, v)` coordinates that the rotary
//! embedding consumes, so a clean token "sits" where its content lands in
//! the target view.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{self, CameraPose, DepthMap, GeometryError, Intrinsics, Z_MIN};
use crate::linalg::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PeError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("assignment {value} for memory entry {entry} is outside 1..={frames}")]
    AssignmentOutOfRange { entry: usize, value: usize, frames: usize },
    #[error("expected {expected} reference views, got {got}")]
    ReferenceViews { expected: usize, got: usize },
    #[error("{memories} memory views but {assignments} assignments")]
    MemoryCount { memories: usize, assignments: usize },
    #[error("invalid multi-level PE config: {0}")]
    Config(&'static str),
    #[error("head dimension {0} cannot be split into even (τ, u, v) channel groups")]
    HeadDim(usize),
    #[error("image {width}x{height} is not divisible by patch size {patch}")]
    Indivisible { width: usize, height: usize, patch: usize },
}

/// Target-view pixel coordinates for every source pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpMaps {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
}

impl WarpMaps {
    /// Every pixel maps to itself.
    pub fn identity(width: usize, height: usize) -> Self {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                u.push(x as f64);
                v.push(y as f64);
            }
        }
        Self {
            width,
            height,
            u,
            v,
            valid: alloc::vec![true; width * height],
        }
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|&&b| b).count() as f64 / self.valid.len().max(1) as f64
    }
}

/// Lifts `d` from `src` and projects into `dst`.
///
/// Identical poses short-circuit to the identity grid so that a memory frame
/// captured at a target's pose reproduces the target's native PE exactly.
pub fn compute_warp_maps(
    d: &DepthMap,
    src: &CameraPose,
    dst: &CameraPose,
    k: &Intrinsics,
) -> Result<WarpMaps, GeometryError> {
    d.check_against(k)?;
    let mut maps = WarpMaps::identity(d.width, d.height);
    if src == dst {
        maps.valid.copy_from_slice(&d.valid);
        return Ok(maps);
    }
    // Source camera -> target camera in one rigid transform.
    let rel = geometry::compose(&geometry::invert_pose(dst), src);
    for y in 0..d.height {
        for x in 0..d.width {
            let i = y * d.width + x;
            if !d.valid[i] {
                maps.valid[i] = false;
                continue;
            }
            let p = rel.apply(&k.unproject(x as f64, y as f64, d.depth[i]));
            let (u, v) = k.project(&p);
            maps.u[i] = u;
            maps.v[i] = v;
            maps.valid[i] = p.z > Z_MIN;
        }
    }
    Ok(maps)
}

/// Which pooled coordinate grid an attention head reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadPe {
    pub level: usize,
    /// Row-major sub-cell index within the patch, `< factor²`.
    pub cell: usize,
}

/// Multi-level PE layout: level `l` splits every patch into
/// `level_factors[l]²` sub-cells, and each head reads one sub-cell of one level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiLevelPeConfig {
    pub level_factors: Vec<usize>,
    pub heads: Vec<HeadPe>,
}

impl MultiLevelPeConfig {
    pub fn single_level(heads: usize) -> Self {
        Self {
            level_factors: alloc::vec![1],
            heads: alloc::vec![HeadPe { level: 0, cell: 0 }; heads],
        }
    }

    /// Half the heads on whole-patch coordinates, half on 2x2 quadrants
    /// (quadrants assigned round-robin). Needs a multiple of 8 heads.
    pub fn two_level(heads: usize) -> Result<Self, PeError> {
        if heads == 0 || heads % 8 != 0 {
            return Err(PeError::Config("two-level layout needs a positive multiple of 8 heads"));
        }
        let half = heads / 2;
        let mut assign = alloc::vec![HeadPe { level: 0, cell: 0 }; half];
        assign.extend((0..half).map(|h| HeadPe { level: 1, cell: h % 4 }));
        Ok(Self {
            level_factors: alloc::vec![1, 2],
            heads: assign,
        })
    }

    pub fn levels(&self) -> usize {
        self.level_factors.len()
    }

    pub fn validate(&self, heads: usize, patch: usize) -> Result<(), PeError> {
        if self.level_factors.is_empty() || self.level_factors[0] != 1 {
            return Err(PeError::Config("level 0 must pool whole patches"));
        }
        if self.level_factors.iter().any(|&f| f == 0 || patch % f != 0) {
            return Err(PeError::Config("level factors must divide the patch size"));
        }
        if self.heads.len() != heads {
            return Err(PeError::Config("every head needs exactly one level assignment"));
        }
        for h in &self.heads {
            match self.level_factors.get(h.level) {
                Some(f) if h.cell < f * f => {}
                _ => return Err(PeError::Config("head assignment references a missing level or cell")),
            }
        }
        Ok(())
    }
}

/// Pooled coordinates of one level: per token, per sub-cell, in latent-grid units.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCoords {
    pub factor: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Mean of valid warped coordinates over each level sub-cell, divided by the
/// patch size `s`. Empty sub-cells are flagged invalid with zero coordinates.
pub fn pool_coords_to_level(maps: &WarpMaps, patch: usize, factor: usize) -> Result<LevelCoords, PeError> {
    if maps.width % patch != 0 || maps.height % patch != 0 {
        return Err(PeError::Indivisible {
            width: maps.width,
            height: maps.height,
            patch,
        });
    }
    if factor == 0 || patch % factor != 0 {
        return Err(PeError::Config("level factor must divide the patch size"));
    }
    let (rows, cols) = (maps.height / patch, maps.width / patch);
    let cells = factor * factor;
    let sub = patch / factor;
    let n = rows * cols * cells;
    let mut sum_u = alloc::vec![0.0; n];
    let mut sum_v = alloc::vec![0.0; n];
    let mut count = alloc::vec![0usize; n];
    for y in 0..maps.height {
        for x in 0..maps.width {
            let i = y * maps.width + x;
            if !maps.valid[i] {
                continue;
            }
            let token = (y / patch) * cols + x / patch;
            let cell = ((y % patch) / sub) * factor + (x % patch) / sub;
            let j = token * cells + cell;
            sum_u[j] += maps.u[i];
            sum_v[j] += maps.v[i];
            count[j] += 1;
        }
    }
    let inv_s = 1.0 / patch as f64;
    let mut out = LevelCoords {
        factor,
        u: alloc::vec![0.0; n],
        v: alloc::vec![0.0; n],
        valid: alloc::vec![false; n],
    };
    for j in 0..n {
        if count[j] > 0 {
            let c = count[j] as f64;
            out.u[j] = sum_u[j] / c * inv_s;
            out.v[j] = sum_v[j] / c * inv_s;
            out.valid[j] = true;
        }
    }
    Ok(out)
}

/// Per-token `(τ, u, v)` encodings of one latent frame, at every PE level.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeAwarePe {
    /// Latent time index, 1-based.
    pub tau: usize,
    pub rows: usize,
    pub cols: usize,
    pub levels: Vec<LevelCoords>,
}

impl TimeAwarePe {
    pub fn from_maps(maps: &WarpMaps, tau: usize, patch: usize, cfg: &MultiLevelPeConfig) -> Result<Self, PeError> {
        let levels = cfg
            .level_factors
            .iter()
            .map(|&f| pool_coords_to_level(maps, patch, f))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            tau,
            rows: maps.height / patch,
            cols: maps.width / patch,
            levels,
        })
    }

    /// The unwarped grid of a `width x height` frame at time `tau`.
    pub fn native(width: usize, height: usize, tau: usize, patch: usize, cfg: &MultiLevelPeConfig) -> Result<Self, PeError> {
        Self::from_maps(&WarpMaps::identity(width, height), tau, patch, cfg)
    }

    pub fn tokens(&self) -> usize {
        self.rows * self.cols
    }

    /// A token is a usable key when its whole-patch coordinate exists.
    pub fn token_valid(&self, token: usize) -> bool {
        self.levels[0].valid[token]
    }

    pub fn validity(&self) -> Vec<bool> {
        (0..self.tokens()).map(|t| self.token_valid(t)).collect()
    }

    /// Coordinate read by a head. Empty sub-cells fall back to the token's
    /// whole-patch coordinate; invalid tokens read zeros and must be masked.
    pub fn coord(&self, token: usize, head: HeadPe) -> [f64; 3] {
        let lvl = &self.levels[head.level];
        let cells = lvl.factor * lvl.factor;
        let j = token * cells + head.cell;
        let (u, v) = if lvl.valid[j] {
            (lvl.u[j], lvl.v[j])
        } else {
            (self.levels[0].u[token], self.levels[0].v[token])
        };
        [self.tau as f64, u, v]
    }

    /// Same spatial coordinates relabelled with another time index.
    pub fn with_tau(&self, tau: usize) -> Self {
        let mut pe = self.clone();
        pe.tau = tau;
        pe
    }
}

/// Channel layout of the 3D rotary embedding within one head.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeAxes {
    pub head_dim: usize,
    /// Channels for the τ, u and v axes (each even).
    pub split: [usize; 3],
    /// Angular frequency of every channel pair, in head order.
    pub freqs: Vec<f64>,
    /// Axis (0 = τ, 1 = u, 2 = v) of every channel pair.
    pub pair_axis: Vec<u8>,
}

impl RopeAxes {
    /// τ gets a quarter of the channels, u and v three eighths each.
    pub fn new(head_dim: usize, theta: f64) -> Result<Self, PeError> {
        if head_dim == 0 || head_dim % 16 != 0 {
            return Err(PeError::HeadDim(head_dim));
        }
        let split = [head_dim / 4, 3 * head_dim / 8, 3 * head_dim / 8];
        let mut freqs = Vec::with_capacity(head_dim / 2);
        let mut pair_axis = Vec::with_capacity(head_dim / 2);
        for (axis, &d) in split.iter().enumerate() {
            for k in 0..d / 2 {
                freqs.push(libm::pow(theta, -2.0 * k as f64 / d as f64));
                pair_axis.push(axis as u8);
            }
        }
        Ok(Self {
            head_dim,
            split,
            freqs,
            pair_axis,
        })
    }

    pub fn pairs(&self) -> usize {
        self.head_dim / 2
    }

    fn angle(&self, pair: usize, coord: [f64; 3]) -> f64 {
        coord[self.pair_axis[pair] as usize] * self.freqs[pair]
    }
}

/// Rotates one head-sized row in place by the angles of `coord`.
pub fn rotate_row<F: Real>(row: &mut [F], coord: [f64; 3], axes: &RopeAxes) {
    debug_assert_eq!(row.len(), axes.head_dim);
    for p in 0..axes.pairs() {
        let (s, c) = libm::sincos(axes.angle(p, coord));
        let (s, c) = (F::of(s), F::of(c));
        let (x0, x1) = (row[2 * p], row[2 * p + 1]);
        row[2 * p] = x0 * c - x1 * s;
        row[2 * p + 1] = x0 * s + x1 * c;
    }
}

/// Applies the multi-level 3D rotary embedding to `vectors`, laid out as
/// `tokens x (heads * head_dim)` rows. Head `h` reads the grid chosen by
/// `cfg.heads[h]`.
pub fn apply_rope<F: Real>(vectors: &mut [F], pe: &TimeAwarePe, cfg: &MultiLevelPeConfig, axes: &RopeAxes) {
    let heads = cfg.heads.len();
    let dim = heads * axes.head_dim;
    assert_eq!(vectors.len(), pe.tokens() * dim, "vector rows do not match PE grid");
    for (t, row) in vectors.chunks_exact_mut(dim).enumerate() {
        for (h, chunk) in row.chunks_exact_mut(axes.head_dim).enumerate() {
            rotate_row(chunk, pe.coord(t, cfg.heads[h]), axes);
        }
    }
}

/// Precomputed rotation tables for one PE grid, reused across blocks and
/// denoising steps.
#[derive(Debug, Clone)]
pub struct RopeTable<F> {
    pub tokens: usize,
    pub heads: usize,
    pub pairs: usize,
    cos: Vec<F>,
    sin: Vec<F>,
}

impl<F: Real> RopeTable<F> {
    /// Tables for the given grids stacked in order.
    pub fn new(pes: &[TimeAwarePe], cfg: &MultiLevelPeConfig, axes: &RopeAxes) -> Self {
        let (tokens, heads, pairs) = (pes.iter().map(|p| p.tokens()).sum(), cfg.heads.len(), axes.pairs());
        let mut cos = Vec::with_capacity(tokens * heads * pairs);
        let mut sin = Vec::with_capacity(tokens * heads * pairs);
        for pe in pes {
            for t in 0..pe.tokens() {
                for h in 0..heads {
                    let coord = pe.coord(t, cfg.heads[h]);
                    for p in 0..pairs {
                        let (s, c) = libm::sincos(axes.angle(p, coord));
                        cos.push(F::of(c));
                        sin.push(F::of(s));
                    }
                }
            }
        }
        Self {
            tokens,
            heads,
            pairs,
            cos,
            sin,
        }
    }

    /// Rotates rows in place; `inverse` applies the transpose rotation
    /// (the backward pass of the forward rotation).
    pub fn apply(&self, x: &mut [F], inverse: bool) {
        let dim = self.heads * self.pairs * 2;
        assert_eq!(x.len(), self.tokens * dim);
        for (t, row) in x.chunks_exact_mut(dim).enumerate() {
            let base = t * self.heads * self.pairs;
            for (p, pair) in row.chunks_exact_mut(2).enumerate() {
                let c = self.cos[base + p];
                let s = if inverse { -self.sin[base + p] } else { self.sin[base + p] };
                let (x0, x1) = (pair[0], pair[1]);
                pair[0] = x0 * c - x1 * s;
                pair[1] = x0 * s + x1 * c;
            }
        }
    }

    /// Rotated copy.
    pub fn rotated(&self, x: &[F]) -> Vec<F> {
        let mut y = x.to_vec();
        self.apply(&mut y, false);
        y
    }
}

/// Which stored clean latent an entry reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondSource {
    Reference,
    Memory(usize),
}

/// One conditional frame view: stored latent reference plus its warped PE.
#[derive(Debug, Clone, PartialEq)]
pub struct CondEntry {
    pub source: CondSource,
    /// Target latent frame (1-based) the entry was warped to.
    pub frame: usize,
    pub pe: TimeAwarePe,
}

/// The conditional token sequence: `N` reference views (one per target frame)
/// followed by `M` memory views at their assigned frames.
#[derive(Debug, Clone, PartialEq)]
pub struct CondTokenSet {
    pub frames: usize,
    pub entries: Vec<CondEntry>,
}

impl CondTokenSet {
    pub fn memories(&self) -> usize {
        self.entries.len() - self.frames
    }

    pub fn token_count(&self) -> usize {
        self.entries.iter().map(|e| e.pe.tokens()).sum()
    }

    /// Assigned frame of every entry, in order.
    pub fn frame_assignments(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frame).collect()
    }

    /// Memory assignments `k_j`.
    pub fn memory_assignments(&self) -> Vec<usize> {
        self.entries[self.frames..].iter().map(|e| e.frame).collect()
    }
}

/// Builds the conditional token set from warp maps.
///
/// `reference_maps[i]` warps the reference frame into target frame `i + 1`;
/// `memory_maps[j]` warps memory `j` into its assigned frame `assignments[j]`.
pub fn assemble_condition_set(
    frames: usize,
    reference_maps: &[WarpMaps],
    memory_maps: &[WarpMaps],
    assignments: &[usize],
    patch: usize,
    cfg: &MultiLevelPeConfig,
) -> Result<CondTokenSet, PeError> {
    if reference_maps.len() != frames {
        return Err(PeError::ReferenceViews {
            expected: frames,
            got: reference_maps.len(),
        });
    }
    if memory_maps.len() != assignments.len() {
        return Err(PeError::MemoryCount {
            memories: memory_maps.len(),
            assignments: assignments.len(),
        });
    }
    for (j, &k) in assignments.iter().enumerate() {
        if k == 0 || k > frames {
            return Err(PeError::AssignmentOutOfRange { entry: j, value: k, frames });
        }
    }
    let mut entries = Vec::with_capacity(frames + assignments.len());
    for (i, maps) in reference_maps.iter().enumerate() {
        entries.push(CondEntry {
            source: CondSource::Reference,
            frame: i + 1,
            pe: TimeAwarePe::from_maps(maps, i + 1, patch, cfg)?,
        });
    }
    for (j, (maps, &k)) in memory_maps.iter().zip(assignments).enumerate() {
        entries.push(CondEntry {
            source: CondSource::Memory(j),
            frame: k,
            pe: TimeAwarePe::from_maps(maps, k, patch, cfg)?,
        });
    }
    Ok(CondTokenSet { frames, entries })
}
