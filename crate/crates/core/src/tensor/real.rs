use std::fmt::{Debug, Display};

use num_traits::Float;

/// Scalar element type: `f64` for verification, `f32` for training.
pub trait Real: Float + Debug + Display + Default + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `C = alpha * A * B + beta * C` with arbitrary row/column strides.
    ///
    /// `A` is `m x k`, `B` is `k x n`, `C` is `m x n`; strides are in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize, what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand {what} out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn from_f64(x: f64) -> Self {
                x as $t
            }

            fn to_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_extent(a.len(), m, k, rsa, csa, "A");
                check_extent(b.len(), k, n, rsb, csb, "B");
                check_extent(c.len(), m, n, rsc, csc, "C");
                // SAFETY: every index touched by the kernel lies inside the
                // slices, as checked above; C does not alias A or B because it
                // is borrowed mutably.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Row-major `C (m x n) = A (m x k) * B (k x n)` plus `beta * C`.
pub(crate) fn matmul_into<R: Real>(m: usize, k: usize, n: usize, a: &[R], b: &[R], beta: R, c: &mut [R]) {
    R::gemm(m, k, n, R::one(), a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `C (m x n) += A^T * B` where `A` is stored `k x m` and `B` is `k x n`.
pub(crate) fn matmul_tn_acc<R: Real>(m: usize, k: usize, n: usize, a: &[R], b: &[R], c: &mut [R]) {
    R::gemm(m, k, n, R::one(), a, 1, m as isize, b, n as isize, 1, R::one(), c, n as isize, 1);
}

/// `C (m x n) = A * B^T + beta * C` where `A` is `m x k` and `B` is stored `n x k`.
pub(crate) fn matmul_nt_into<R: Real>(m: usize, k: usize, n: usize, a: &[R], b: &[R], beta: R, c: &mut [R]) {
    R::gemm(m, k, n, R::one(), a, k as isize, 1, b, 1, k as isize, beta, c, n as isize, 1);
}

/// `C (m x n) += A (m x k) * B (k x n)`, all row-major, as row updates.
///
/// Faster than the packed kernel for the skinny per-timestep products of
/// the recurrence. Every output element sees the same operations in the same
/// order on both code paths, so results do not depend on the CPU.
pub(crate) fn small_matmul_acc<R: Real>(m: usize, k: usize, n: usize, a: &[R], b: &[R], c: &mut [R]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "small_matmul_acc extents");
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: AVX support was just detected.
        unsafe { small_matmul_acc_avx(m, k, n, a, b, c) };
        return;
    }
    small_matmul_acc_body(m, k, n, a, b, c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn small_matmul_acc_avx<R: Real>(m: usize, k: usize, n: usize, a: &[R], b: &[R], c: &mut [R]) {
    small_matmul_acc_body(m, k, n, a, b, c);
}

#[inline(always)]
fn small_matmul_acc_body<R: Real>(m: usize, k: usize, n: usize, a: &[R], b: &[R], c: &mut [R]) {
    // column blocks small enough for the accumulator to live in registers
    const NB: usize = 16;
    for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)).take(m) {
        let mut j0 = 0;
        while j0 + NB <= n {
            let mut acc = [R::zero(); NB];
            acc.copy_from_slice(&c_row[j0..j0 + NB]);
            for (kk, &coef) in a_row.iter().enumerate() {
                let br: &[R; NB] = b[kk * n + j0..kk * n + j0 + NB].try_into().expect("block width");
                for q in 0..NB {
                    acc[q] = acc[q] + coef * br[q];
                }
            }
            c_row[j0..j0 + NB].copy_from_slice(&acc);
            j0 += NB;
        }
        if j0 < n {
            for (kk, &coef) in a_row.iter().enumerate() {
                for (cv, &bv) in c_row[j0..].iter_mut().zip(&b[kk * n + j0..(kk + 1) * n]) {
                    *cv = *cv + coef * bv;
                }
            }
        }
    }
}

/// Transpose of a row-major `rows x cols` matrix.
pub(crate) fn transpose<R: Real>(rows: usize, cols: usize, a: &[R]) -> Vec<R> {
    let mut out = vec![R::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
