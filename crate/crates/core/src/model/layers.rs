//! Layer forward/backward passes over flat row-major buffers.
//!
//! Backward functions accumulate (`+=`) into the gradient buffer and into any
//! input-gradient buffer they are handed, so callers zero them once.

use rand::{Rng, RngCore};

use super::params::{AttnP, FfnP, LinearP, NormP};
use super::tensor::{gemm, Real, View};

const LN_EPS: f64 = 1e-5;

pub fn linear_fwd<T: Real>(p: &[T], l: &LinearP, x: &[T], rows: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(rows * l.n_out);
    for _ in 0..rows {
        y.extend_from_slice(&p[l.b..l.b + l.n_out]);
    }
    gemm(
        T::one(),
        x,
        View::rm(0, rows, l.n_in),
        p,
        View::rm(l.w, l.n_in, l.n_out),
        T::one(),
        &mut y,
        View::rm(0, rows, l.n_out),
    );
    y
}

pub fn linear_bwd<T: Real>(
    p: &[T],
    g: &mut [T],
    l: &LinearP,
    x: &[T],
    dy: &[T],
    rows: usize,
    dx: Option<&mut [T]>,
) {
    gemm(
        T::one(),
        x,
        View::rm(0, rows, l.n_in).t(),
        dy,
        View::rm(0, rows, l.n_out),
        T::one(),
        g,
        View::rm(l.w, l.n_in, l.n_out),
    );
    let gb = &mut g[l.b..l.b + l.n_out];
    for row in dy.chunks_exact(l.n_out) {
        for (acc, &d) in gb.iter_mut().zip(row) {
            *acc += d;
        }
    }
    if let Some(dx) = dx {
        gemm(
            T::one(),
            dy,
            View::rm(0, rows, l.n_out),
            p,
            View::rm(l.w, l.n_in, l.n_out).t(),
            T::one(),
            dx,
            View::rm(0, rows, l.n_in),
        );
    }
}

pub struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

pub fn norm_fwd<T: Real>(p: &[T], n: &NormP, x: &[T]) -> (Vec<T>, NormCache<T>) {
    let d = n.dim;
    let rows = x.len() / d;
    let inv_d = T::c(1.0 / d as f64);
    let gain = &p[n.g..n.g + d];
    let bias = &p[n.b..n.b + d];
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + T::c(LN_EPS)).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (xr[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub fn norm_bwd<T: Real>(p: &[T], g: &mut [T], n: &NormP, cache: &NormCache<T>, dy: &[T], dx: &mut [T]) {
    let d = n.dim;
    let inv_d = T::c(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for j in 0..d {
            g[n.g + j] += dyr[j] * xh[j];
            g[n.b + j] += dyr[j];
            dxhat[j] = dyr[j] * p[n.g + j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xh[j];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        for j in 0..d {
            dx[r * d + j] += rs * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let u = T::c(GELU_K) * (x + T::c(GELU_A) * x * x * x);
    T::c(0.5) * x * (T::one() + u.fast_tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let u = T::c(GELU_K) * (x + T::c(GELU_A) * x * x * x);
    let t = u.fast_tanh();
    let du = T::c(GELU_K) * (T::one() + T::c(3.0 * GELU_A) * x * x);
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * du
}

pub struct FfnCache<T> {
    pre: Vec<T>,
    act: Vec<T>,
}

pub fn ffn_fwd<T: Real>(p: &[T], f: &FfnP, x: &[T], rows: usize) -> (Vec<T>, FfnCache<T>) {
    let pre = linear_fwd(p, &f.up, x, rows);
    let act: Vec<T> = pre.iter().map(|&v| gelu(v)).collect();
    let y = linear_fwd(p, &f.down, &act, rows);
    (y, FfnCache { pre, act })
}

#[allow(clippy::too_many_arguments)]
pub fn ffn_bwd<T: Real>(
    p: &[T],
    g: &mut [T],
    f: &FfnP,
    cache: &FfnCache<T>,
    x: &[T],
    dy: &[T],
    rows: usize,
    dx: &mut [T],
) {
    let mut dact = vec![T::zero(); cache.act.len()];
    linear_bwd(p, g, &f.down, &cache.act, dy, rows, Some(&mut dact));
    for (d, &u) in dact.iter_mut().zip(&cache.pre) {
        *d *= gelu_grad(u);
    }
    linear_bwd(p, g, &f.up, x, &dact, rows, Some(dx));
}

/// Batch of `nseq` attention problems with `sq` queries and `skv` keys each.
#[derive(Debug, Clone, Copy)]
pub struct AttnShape {
    pub nseq: usize,
    pub sq: usize,
    pub skv: usize,
    pub heads: usize,
    pub causal: bool,
}

pub struct AttnCache<T> {
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Softmax weights, `nseq × heads × sq × skv`.
    pub probs: Vec<T>,
    ctx: Vec<T>,
}

pub fn attn_fwd<T: Real>(
    p: &[T],
    a: &AttnP,
    xq: &[T],
    xkv: &[T],
    sh: AttnShape,
) -> (Vec<T>, AttnCache<T>) {
    let c = a.q.n_in;
    let dh = c / sh.heads;
    let scale = T::c(1.0 / (dh as f64).sqrt());
    let q = linear_fwd(p, &a.q, xq, sh.nseq * sh.sq);
    let k = linear_fwd(p, &a.k, xkv, sh.nseq * sh.skv);
    let v = linear_fwd(p, &a.v, xkv, sh.nseq * sh.skv);
    let block = sh.sq * sh.skv;
    let mut probs = vec![T::zero(); sh.nseq * sh.heads * block];
    let mut ctx = vec![T::zero(); sh.nseq * sh.sq * c];
    for n in 0..sh.nseq {
        for h in 0..sh.heads {
            let pv = View::rm((n * sh.heads + h) * block, sh.sq, sh.skv);
            let qv = View::ld(n * sh.sq * c + h * dh, sh.sq, dh, c);
            let kv = View::ld(n * sh.skv * c + h * dh, sh.skv, dh, c);
            gemm(scale, &q, qv, &k, kv.t(), T::zero(), &mut probs, pv);
            for i in 0..sh.sq {
                let row = &mut probs[pv.off + i * sh.skv..pv.off + (i + 1) * sh.skv];
                if sh.causal {
                    super::tensor::softmax_in_place(&mut row[..=i]);
                    row[i + 1..].fill(T::zero());
                } else {
                    super::tensor::softmax_in_place(row);
                }
            }
            let vv = View::ld(n * sh.skv * c + h * dh, sh.skv, dh, c);
            let cv = View::ld(n * sh.sq * c + h * dh, sh.sq, dh, c);
            gemm(T::one(), &probs, pv, &v, vv, T::zero(), &mut ctx, cv);
        }
    }
    let out = linear_fwd(p, &a.o, &ctx, sh.nseq * sh.sq);
    (out, AttnCache { q, k, v, probs, ctx })
}

/// Returns (d xq, d xkv). For self-attention the caller adds both.
#[allow(clippy::too_many_arguments)]
pub fn attn_bwd<T: Real>(
    p: &[T],
    g: &mut [T],
    a: &AttnP,
    cache: &AttnCache<T>,
    xq: &[T],
    xkv: &[T],
    sh: AttnShape,
    dout: &[T],
) -> (Vec<T>, Vec<T>) {
    let c = a.q.n_in;
    let dh = c / sh.heads;
    let scale = T::c(1.0 / (dh as f64).sqrt());
    let nq = sh.nseq * sh.sq;
    let nkv = sh.nseq * sh.skv;

    let mut dctx = vec![T::zero(); nq * c];
    linear_bwd(p, g, &a.o, &cache.ctx, dout, nq, Some(&mut dctx));

    let mut dq = vec![T::zero(); nq * c];
    let mut dk = vec![T::zero(); nkv * c];
    let mut dv = vec![T::zero(); nkv * c];
    let block = sh.sq * sh.skv;
    let mut ds = vec![T::zero(); block];
    let sv = View::rm(0, sh.sq, sh.skv);
    for n in 0..sh.nseq {
        for h in 0..sh.heads {
            let pv = View::rm((n * sh.heads + h) * block, sh.sq, sh.skv);
            let qv = View::ld(n * sh.sq * c + h * dh, sh.sq, dh, c);
            let kv = View::ld(n * sh.skv * c + h * dh, sh.skv, dh, c);
            // dP = dctx · Vᵀ ; dV = Pᵀ · dctx
            gemm(T::one(), &dctx, qv, &cache.v, kv.t(), T::zero(), &mut ds, sv);
            gemm(T::one(), &cache.probs, pv.t(), &dctx, qv, T::one(), &mut dv, kv);
            let pr = &cache.probs[pv.off..pv.off + block];
            for i in 0..sh.sq {
                let prow = &pr[i * sh.skv..(i + 1) * sh.skv];
                let drow = &mut ds[i * sh.skv..(i + 1) * sh.skv];
                let s: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                for (d, &pij) in drow.iter_mut().zip(prow) {
                    *d = pij * (*d - s) * scale;
                }
            }
            gemm(T::one(), &ds, sv, &cache.k, kv, T::one(), &mut dq, qv);
            gemm(T::one(), &ds, sv.t(), &cache.q, qv, T::one(), &mut dk, kv);
        }
    }
    let mut dxq = vec![T::zero(); nq * c];
    let mut dxkv = vec![T::zero(); nkv * c];
    linear_bwd(p, g, &a.q, xq, &dq, nq, Some(&mut dxq));
    linear_bwd(p, g, &a.k, xkv, &dk, nkv, Some(&mut dxkv));
    linear_bwd(p, g, &a.v, xkv, &dv, nkv, Some(&mut dxkv));
    (dxq, dxkv)
}

/// Inverted dropout driven by an explicit generator. Disabled when `rng` is
/// `None` (evaluation) or `p == 0`.
pub struct Dropout<'a> {
    p: f64,
    rng: Option<&'a mut dyn RngCore>,
}

impl<'a> Dropout<'a> {
    pub fn off() -> Self {
        Dropout { p: 0.0, rng: None }
    }

    pub fn new(p: f64, rng: &'a mut dyn RngCore) -> Self {
        Dropout { p, rng: Some(rng) }
    }

    /// Scales `x` in place; returns the mask for the backward pass.
    pub fn apply<T: Real>(&mut self, x: &mut [T]) -> Option<Vec<T>> {
        let rng = self.rng.as_mut().filter(|_| self.p > 0.0)?;
        let keep = T::c(1.0 / (1.0 - self.p));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.random_bool(self.p) { T::zero() } else { keep })
            .collect();
        for (v, &m) in x.iter_mut().zip(&mask) {
            *v *= m;
        }
        Some(mask)
    }
}

pub fn dropout_bwd<T: Real>(mask: &Option<Vec<T>>, dy: &[T]) -> Vec<T> {
    match mask {
        Some(m) => dy.iter().zip(m).map(|(&d, &k)| d * k).collect(),
        None => dy.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_values_and_derivative() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_191_990_607_477_3).abs() < 1e-12);
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let n = NormP { g: 0, b: 3, dim: 3 };
        let p = [1.0f64, 1.0, 1.0, 0.0, 0.0, 0.0];
        let (y, _) = norm_fwd(&p, &n, &[1.0, 2.0, 3.0, -5.0, 0.0, 5.0]);
        for r in y.chunks(3) {
            assert!(r.iter().sum::<f64>().abs() < 1e-12);
            let var = r.iter().map(|v| v * v).sum::<f64>() / 3.0;
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn dropout_off_is_identity() {
        let mut x = vec![1.0f32; 8];
        assert!(Dropout::off().apply(&mut x).is_none());
        assert!(x.iter().all(|&v| v == 1.0));
    }
}
