//! Forward and backward kernels on plain tensors.
//!
//! Everything here is tape-free; [`crate::autodiff`] wraps these kernels into
//! recorded operations.

pub mod conv;
pub mod elementwise;
pub mod pool;
pub mod resample;

pub use conv::{conv2d, conv2d_backward, conv_transpose2x2, conv_transpose2x2_backward};
pub use elementwise::{broadcast_mul, broadcast_mul_backward, concat_channels, slice_channels};
pub use pool::{channel_max, channel_mean, global_avg_pool, maxpool2};
pub use resample::{interpolate2x, interpolate2x_backward};

/// Strided view of a row-major matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rs: isize,
    pub cs: isize,
}

impl<'a> Mat<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Mat {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// The transpose of a row-major `rows x cols` matrix.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Mat {
            data,
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n` (row stride `ldc`).
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64], ldc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            for i in 0..m {
                c[i * ldc..i * ldc + n].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        return;
    }
    let a_end = (m - 1) * a.rs.max(0) as usize + (k - 1) * a.cs.max(0) as usize;
    let b_end = (k - 1) * b.rs.max(0) as usize + (n - 1) * b.cs.max(0) as usize;
    assert!(a_end < a.data.len(), "gemm: lhs operand too short");
    assert!(b_end < b.data.len(), "gemm: rhs operand too short");
    assert!((m - 1) * ldc + n <= c.len(), "gemm: output too short");
    // SAFETY: bounds of every operand were checked above against the strides used.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_loops() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut c = vec![1.0; m * n];
        gemm(m, k, n, Mat::rows(&a, k), Mat::rows(&b, n), 1.0, &mut c, n);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = 1.0 + (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum::<f64>();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
        // a^T stored as k x m
        let at: Vec<f64> = (0..k * m).map(|i| a[(i % m) * k + i / m]).collect();
        let mut c2 = vec![0.0; m * n];
        gemm(m, k, n, Mat::transposed(&at, m), Mat::rows(&b, n), 0.0, &mut c2, n);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - 1.0 - y).abs() < 1e-12);
        }
    }
}
