//! Scalar abstraction and strided matrix multiply.
//!
//! Everything in the model is a flat row-major buffer; a [`View`] describes a
//! matrix inside one (offset, shape, strides), which lets per-head attention
//! work on column slices of a projection without copying.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Real:
    Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + DivAssign + 'static
{
    /// # Safety
    /// Every index reachable through the given shapes and strides must lie
    /// inside the allocations behind `a`, `b` and `c`, and `c` must not
    /// overlap `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn c(x: f64) -> Self;

    fn f64(self) -> f64;

    /// `exp` for hot loops. f32 uses a branch-free polynomial the compiler
    /// can vectorize; f64 (used for gradient checks) stays exact.
    fn fast_exp(self) -> Self;

    fn fast_tanh(self) -> Self;
}

/// Cephes-style single-precision exp: round-to-nearest via the 1.5·2^23
/// trick (whose low mantissa bits then hold the integer exponent), a
/// degree-6 polynomial on the reduced argument, then an exponent splice.
/// Branch- and cast-free so the compiler vectorizes it. Relative error is
/// a few ulp over the clamped range.
#[inline]
#[allow(clippy::manual_clamp, clippy::eq_op)]
fn exp_f32(x_in: f32) -> f32 {
    const ROUND: f32 = 12_582_912.0;
    // max/min drop NaN; `x_in - x_in` below puts it back.
    let x = x_in.max(-87.0).min(88.0);
    let t = x * std::f32::consts::LOG2_E + ROUND;
    let n = t - ROUND;
    let r = x - n * 0.693_359_4 + n * 2.121_944_4e-4;
    let p = (((((1.987_569_1e-4 * r + 1.398_199_9e-3) * r + 8.333_452e-3) * r + 4.166_579_6e-2) * r
        + 0.166_666_65)
        * r
        + 0.5)
        * (r * r)
        + r
        + 1.0;
    let scale = t.to_bits().wrapping_sub(ROUND.to_bits()).wrapping_add(127) << 23;
    p * f32::from_bits(scale) + (x_in - x_in)
}

#[inline]
fn tanh_f32(x: f32) -> f32 {
    let e = exp_f32(-2.0 * x.abs());
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn c(x: f64) -> f32 {
        x as f32
    }

    fn f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn fast_exp(self) -> f32 {
        exp_f32(self)
    }

    #[inline]
    fn fast_tanh(self) -> f32 {
        tanh_f32(self)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn c(x: f64) -> f64 {
        x
    }

    fn f64(self) -> f64 {
        self
    }

    fn fast_exp(self) -> f64 {
        self.exp()
    }

    fn fast_tanh(self) -> f64 {
        self.tanh()
    }
}

/// A matrix inside a flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct View {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// Contiguous row-major `rows × cols` at `off`.
    pub fn rm(off: usize, rows: usize, cols: usize) -> View {
        View { off, rows, cols, rs: cols, cs: 1 }
    }

    /// Row-major with an explicit leading dimension.
    pub fn ld(off: usize, rows: usize, cols: usize, ld: usize) -> View {
        View { off, rows, cols, rs: ld, cs: 1 }
    }

    pub fn t(self) -> View {
        View { off: self.off, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn end(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            self.off
        } else {
            self.off + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `C ← alpha·A·B + beta·C`. With `beta = 0` the prior contents of C are ignored.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(alpha: T, a: &[T], av: View, b: &[T], bv: View, beta: T, c: &mut [T], cv: View) {
    assert_eq!(av.cols, bv.rows, "inner dimensions");
    assert_eq!(av.rows, cv.rows, "output rows");
    assert_eq!(bv.cols, cv.cols, "output cols");
    assert!(av.end() <= a.len() && bv.end() <= b.len() && cv.end() <= c.len(), "view out of bounds");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    if av.cols == 0 {
        for i in 0..cv.rows {
            for j in 0..cv.cols {
                let x = &mut c[cv.off + i * cv.rs + j * cv.cs];
                *x = if beta == T::zero() { T::zero() } else { *x * beta };
            }
        }
        return;
    }
    // SAFETY: bounds were checked above; `c` is a unique borrow so it cannot
    // alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            av.rows,
            av.cols,
            bv.cols,
            alpha,
            a.as_ptr().add(av.off),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.off),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.off),
            cv.rs as isize,
            cv.cs as isize,
        )
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    for x in row.iter_mut() {
        *x = (*x - max).fast_exp();
    }
    let inv = T::one() / row.iter().copied().sum::<T>();
    for x in row.iter_mut() {
        *x *= inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, m, k, &b, n);

        let mut c = vec![f64::NAN; m * n];
        gemm(1.0, &a, View::rm(0, m, k), &b, View::rm(0, k, n), 0.0, &mut c, View::rm(0, m, n));
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // Same product through a transposed copy of B.
        let mut bt = vec![0.0; n * k];
        for i in 0..k {
            for j in 0..n {
                bt[j * k + i] = b[i * n + j];
            }
        }
        let mut c2 = vec![1.0; m * n];
        gemm(1.0, &a, View::rm(0, m, k), &bt, View::rm(0, n, k).t(), 1.0, &mut c2, View::rm(0, m, n));
        for (x, y) in c2.iter().zip(&want) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn column_slice_view() {
        // Right half columns of a 2×4 matrix times identity.
        let a = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let eye = [1.0f32, 0.0, 0.0, 1.0];
        let mut c = [0.0f32; 4];
        gemm(1.0, &a, View::ld(2, 2, 2, 4), &eye, View::rm(0, 2, 2), 0.0, &mut c, View::rm(0, 2, 2));
        assert_eq!(c, [3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn fast_exp_and_tanh_track_libm() {
        let mut worst = 0.0f64;
        for i in 0..=35_000 {
            let x = -87.0 + i as f64 * 0.005;
            let got = (x as f32).fast_exp() as f64;
            let want = (x as f32 as f64).exp();
            worst = worst.max(((got - want) / want).abs());
        }
        assert!(worst < 5e-7, "exp rel err {worst}");
        for i in 0..=4_000 {
            let x = -10.0 + i as f64 * 0.005;
            let got = (x as f32).fast_tanh() as f64;
            assert!((got - (x as f32 as f64).tanh()).abs() < 3e-7, "tanh at {x}");
        }
        assert_eq!(0.0f32.fast_exp(), 1.0);
        assert_eq!(0.0f32.fast_tanh(), 0.0);
        assert!(f32::NAN.fast_exp().is_nan());
        assert!(f32::NAN.fast_tanh().is_nan());
        assert_eq!((-1e4f32).fast_tanh(), -1.0);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut r = vec![1000.0f64, 1001.0, 999.0];
        softmax_in_place(&mut r);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r[1] > r[0] && r[0] > r[2]);
    }
}
