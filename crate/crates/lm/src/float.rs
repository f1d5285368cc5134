use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float as NumFloat, FromPrimitive, ToPrimitive};

/// Scalar type the model can run in. `f32` for training and inference,
/// `f64` for numerical gradient checks.
pub trait Float:
    NumFloat + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + DivAssign + 'static
{
    /// `C = alpha·A·B + beta·C` over strided matrices.
    ///
    /// # Safety
    /// All pointers must address valid `m×k`, `k×n` and `m×n` matrices under
    /// the given strides, and `c` must not alias `a` or `b`.
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

    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    /// `tanh` as used by the GELU activation.
    #[inline]
    fn act_tanh(self) -> Self {
        self.tanh()
    }
}

impl Float for f32 {
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

    /// Branch-free rational approximation (odd degree 13 over even degree
    /// 6), within a few ulp of `tanh` and vectorizable.
    #[inline]
    fn act_tanh(self) -> f32 {
        const CLAMP: f32 = 7.905_311;
        let x = self.clamp(-CLAMP, CLAMP);
        let x2 = x * x;
        let p = -2.760_768_5e-16f32;
        let p = p * x2 + 2.000_188e-13;
        let p = p * x2 - 8.604_672e-11;
        let p = p * x2 + 5.122_297e-8;
        let p = p * x2 + 1.485_722_4e-5;
        let p = p * x2 + 6.372_619e-4;
        let p = p * x2 + 4.893_524_6e-3;
        let q = 1.198_258_4e-6f32;
        let q = q * x2 + 1.185_347_1e-4;
        let q = q * x2 + 2.268_434_6e-3;
        let q = q * x2 + 4.893_525e-3;
        x * p / q
    }
}

impl Float for f64 {
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
}

/// Row-major operand view: `data` holds `rows×cols` with leading dimension
/// `ld`, optionally read transposed.
#[derive(Clone, Copy)]
pub struct Mat<'a, T> {
    pub data: &'a [T],
    pub ld: usize,
    pub trans: bool,
}

impl<'a, T> Mat<'a, T> {
    pub fn n(data: &'a [T], ld: usize) -> Self {
        Self { data, ld, trans: false }
    }

    pub fn t(data: &'a [T], ld: usize) -> Self {
        Self { data, ld, trans: true }
    }

    fn strides(&self) -> (isize, isize) {
        if self.trans {
            (1, self.ld as isize)
        } else {
            (self.ld as isize, 1)
        }
    }

    /// Minimum storage length for a logical `rows×cols` view.
    fn needed(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        let (r, c) = if self.trans { (cols, rows) } else { (rows, cols) };
        (r - 1) * self.ld + c
    }
}

/// `C[m×n] = A[m×k]·B[k×n] (+ C if accumulate)`, `C` row-major with
/// leading dimension `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Float>(m: usize, k: usize, n: usize, a: Mat<T>, b: Mat<T>, c: &mut [T], ldc: usize, accumulate: bool) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.data.len() >= a.needed(m, k), "A operand too small");
    assert!(b.data.len() >= b.needed(k, n), "B operand too small");
    assert!(c.len() >= (m - 1) * ldc + n, "C operand too small");
    assert!(ldc >= n && a.ld > 0 && b.ld > 0);
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: extents checked above; `c` is a unique borrow, so it cannot
    // alias the shared operands.
    unsafe { T::gemm_raw(m, k, n, T::one(), a.data.as_ptr(), rsa, csa, b.data.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), ldc as isize, 1) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn approximate_tanh_is_close() {
        let mut worst = 0.0f64;
        for i in -200_000..=200_000 {
            let x = i as f32 * 1e-4;
            worst = worst.max((x.act_tanh() as f64 - (x as f64).tanh()).abs());
        }
        assert!(worst < 1e-6, "{worst}");
        assert!((1e6f32.act_tanh() - 1.0).abs() < 1e-6);
        assert!(((-1e6f32).act_tanh() + 1.0).abs() < 1e-6);
    }

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn matches_naive_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|x| x as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|x| (x as f64).sin()).collect();
        let want = naive(m, k, n, &a, &b);
        let mut c = vec![0.0; m * n];
        matmul(m, k, n, Mat::n(&a, k), Mat::n(&b, n), &mut c, n, false);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let at: Vec<f64> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        let mut c2 = vec![1.0; m * n];
        matmul(m, k, n, Mat::t(&at, m), Mat::t(&bt, k), &mut c2, n, true);
        assert!(c2.iter().zip(&want).all(|(x, y)| (x - 1.0 - y).abs() < 1e-12));
    }
}
