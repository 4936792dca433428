//! Flat parameter storage and the handful of layers the denoiser needs, each
//! with a hand-written backward pass.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{gemm, Real, View, ViewMut};

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All weights in one contiguous buffer, addressed by named entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    pub data: Vec<F>,
    pub entries: Vec<ParamEntry>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self {
            data: Vec::new(),
            entries: Vec::new(),
        }
    }
}

impl<F: Real> ParamStore<F> {
    /// Reserves a zero-initialized tensor and returns its offset.
    pub fn alloc(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.data.len();
        let entry = ParamEntry { name, shape, offset };
        self.data.resize(offset + entry.len(), F::zero());
        self.entries.push(entry);
        offset
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn zeros_like(&self) -> Vec<F> {
        alloc::vec![F::zero(); self.data.len()]
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            data: self.data.iter().map(|x| G::of(x.f64())).collect(),
            entries: self.entries.clone(),
        }
    }

    pub fn fill_normal<R: Rng>(&mut self, offset: usize, len: usize, std: f64, rng: &mut R) {
        for x in &mut self.data[offset..offset + len] {
            let z: f64 = StandardNormal.sample(rng);
            *x = F::of(z * std);
        }
    }
}

/// Dense layer `y = x W + b` with `W` stored row-major as `din x dout`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lin {
    pub w: usize,
    pub b: Option<usize>,
    pub din: usize,
    pub dout: usize,
}

impl Lin {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, din: usize, dout: usize, bias: bool) -> Self {
        let w = store.alloc(alloc::format!("{name}.weight"), alloc::vec![din, dout]);
        let b = bias.then(|| store.alloc(alloc::format!("{name}.bias"), alloc::vec![dout]));
        Self { w, b, din, dout }
    }

    pub fn weight<'a, F>(&self, p: &'a [F]) -> &'a [F] {
        &p[self.w..self.w + self.din * self.dout]
    }

    /// Xavier-style normal init; biases stay zero.
    pub fn init<F: Real, R: Rng>(&self, store: &mut ParamStore<F>, gain: f64, rng: &mut R) {
        let std = gain / libm::sqrt(self.din as f64);
        store.fill_normal(self.w, self.din * self.dout, std, rng);
    }

    /// `out = x W + b` (overwrites `out`).
    pub fn forward<F: Real>(&self, p: &[F], x: &[F], rows: usize, out: &mut [F]) {
        debug_assert_eq!(x.len(), rows * self.din);
        debug_assert_eq!(out.len(), rows * self.dout);
        gemm(
            F::one(),
            View::rm(x, rows, self.din),
            View::rm(self.weight(p), self.din, self.dout),
            F::zero(),
            ViewMut::rm(out, rows, self.dout),
        );
        if let Some(b) = self.b {
            let bias = &p[b..b + self.dout];
            for row in out.chunks_exact_mut(self.dout) {
                row.iter_mut().zip(bias).for_each(|(y, &b)| *y += b);
            }
        }
    }

    pub fn apply<F: Real>(&self, p: &[F], x: &[F], rows: usize) -> Vec<F> {
        let mut out = alloc::vec![F::zero(); rows * self.dout];
        self.forward(p, x, rows, &mut out);
        out
    }

    /// Accumulates weight/bias gradients into `g`; adds `dy W^T` into `dx`
    /// when given.
    pub fn backward<F: Real>(&self, p: &[F], x: &[F], rows: usize, dy: &[F], g: &mut [F], dx: Option<&mut [F]>) {
        gemm(
            F::one(),
            View::rm(x, rows, self.din).t(),
            View::rm(dy, rows, self.dout),
            F::one(),
            ViewMut::rm(&mut g[self.w..self.w + self.din * self.dout], self.din, self.dout),
        );
        if let Some(b) = self.b {
            let gb = &mut g[b..b + self.dout];
            for row in dy.chunks_exact(self.dout) {
                gb.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
            }
        }
        if let Some(dx) = dx {
            gemm(
                F::one(),
                View::rm(dy, rows, self.dout),
                View::rm(self.weight(p), self.din, self.dout).t(),
                F::one(),
                ViewMut::rm(dx, rows, self.din),
            );
        }
    }
}

/// Parameter-free layer norm over rows of width `dim`. Returns the normalized
/// rows and the per-row reciprocal standard deviations.
pub fn layer_norm<F: Real>(x: &[F], dim: usize) -> (Vec<F>, Vec<F>) {
    let rows = x.len() / dim;
    let mut y = alloc::vec![F::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    let inv_d = F::of(1.0 / dim as f64);
    for (xr, yr) in x.chunks_exact(dim).zip(y.chunks_exact_mut(dim)) {
        let mean = xr.iter().copied().sum::<F>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let r = F::one() / (var + F::of(LN_EPS)).sqrt();
        for (yv, &xv) in yr.iter_mut().zip(xr) {
            *yv = (xv - mean) * r;
        }
        rstd.push(r);
    }
    (y, rstd)
}

/// Adds the input gradient of [`layer_norm`] into `dx`.
pub fn layer_norm_backward<F: Real>(y: &[F], rstd: &[F], dy: &[F], dim: usize, dx: &mut [F]) {
    let inv_d = F::of(1.0 / dim as f64);
    for (((yr, dyr), dxr), &r) in y
        .chunks_exact(dim)
        .zip(dy.chunks_exact(dim))
        .zip(dx.chunks_exact_mut(dim))
        .zip(rstd)
    {
        let mean_dy = dyr.iter().copied().sum::<F>() * inv_d;
        let mean_dyy = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum::<F>() * inv_d;
        for ((d, &yv), &dyv) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d += r * (dyv - mean_dy - yv * mean_dyy);
        }
    }
}

/// `y * (1 + scale) + shift`, broadcasting the modulation vectors over rows.
pub fn modulate<F: Real>(y: &[F], shift: &[F], scale: &[F]) -> Vec<F> {
    let dim = shift.len();
    let mut out = y.to_vec();
    for row in out.chunks_exact_mut(dim) {
        for ((v, &sh), &sc) in row.iter_mut().zip(shift).zip(scale) {
            *v = *v * (F::one() + sc) + sh;
        }
    }
    out
}

/// Backward of [`modulate`]: accumulates shift/scale gradients and returns
/// the gradient with respect to `y`.
pub fn modulate_backward<F: Real>(y: &[F], scale: &[F], d_out: &[F], d_shift: &mut [F], d_scale: &mut [F]) -> Vec<F> {
    let dim = scale.len();
    let mut dy = d_out.to_vec();
    for ((row, yr), dr) in dy.chunks_exact_mut(dim).zip(y.chunks_exact(dim)).zip(d_out.chunks_exact(dim)) {
        for i in 0..dim {
            d_shift[i] += dr[i];
            d_scale[i] += dr[i] * yr[i];
            row[i] = dr[i] * (F::one() + scale[i]);
        }
    }
    dy
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub fn gelu<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let k = F::of(0.044715);
    let half = F::of(0.5);
    half * x * (F::one() + (c * (x + k * x * x * x)).tanh())
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let k = F::of(0.044715);
    let half = F::of(0.5);
    let inner = c * (x + k * x * x * x);
    let th = inner.tanh();
    half * (F::one() + th) + half * x * (F::one() - th * th) * c * (F::one() + F::of(3.0) * k * x * x)
}

pub fn silu<F: Real>(x: F) -> F {
    x / (F::one() + (-x).exp())
}

pub fn silu_grad<F: Real>(x: F) -> F {
    let s = F::one() / (F::one() + (-x).exp());
    s * (F::one() + x * (F::one() - s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<Fun: Fn(f64) -> f64>(f: Fun, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn activation_derivatives() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            assert!((gelu_grad(x) - fd(gelu, x)).abs() < 1e-7);
            assert!((silu_grad(x) - fd(silu, x)).abs() < 1e-7);
        }
    }

    #[test]
    fn layer_norm_gradient() {
        let x: Vec<f64> = (0..8).map(|i| libm::sin(i as f64 * 1.3) * 2.0).collect();
        let w: Vec<f64> = (0..8).map(|i| libm::cos(i as f64 * 0.7)).collect();
        let loss = |x: &[f64]| -> f64 {
            let (y, _) = layer_norm(x, 4);
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (y, r) = layer_norm(&x, 4);
        let mut dx = alloc::vec![0.0; 8];
        layer_norm_backward(&y, &r, &w, 4, &mut dx);
        for i in 0..8 {
            let mut xp = x.clone();
            xp[i] += 1e-6;
            let mut xm = x.clone();
            xm[i] -= 1e-6;
            let num = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((num - dx[i]).abs() < 1e-6, "{i}: {num} vs {}", dx[i]);
        }
    }
}
