//! One-dimensional FFT plans: iterative radix-2 for power-of-two lengths,
//! Bluestein's chirp-z reduction to radix-2 for every other length.

use std::f64::consts::PI;

use crate::tensor::Complex;

/// Precomputed transform of a fixed length. Transforms are unnormalized.
#[derive(Clone, Debug)]
pub struct FftPlan {
    len: usize,
    kind: PlanKind,
}

#[derive(Clone, Debug)]
enum PlanKind {
    Trivial,
    Radix2(Radix2),
    Bluestein(Bluestein),
}

#[derive(Clone, Debug)]
struct Radix2 {
    n: usize,
    /// `e^{-j 2 pi k / n}` for `k < n/2`.
    twiddles: Vec<Complex>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let twiddles = (0..n / 2).map(|k| Complex::cis(-2.0 * PI * k as f64 / n as f64)).collect();
        Radix2 { n, twiddles }
    }

    /// Forward transform in place.
    fn run(&self, buf: &mut [Complex]) {
        let n = self.n;
        let bits = n.trailing_zeros();
        if bits > 0 {
            for i in 0..n {
                let j = i.reverse_bits() >> (usize::BITS - bits);
                if j > i {
                    buf.swap(i, j);
                }
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let step = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let t = self.twiddles[k * step] * buf[start + k + half];
                    let u = buf[start + k];
                    buf[start + k] = u + t;
                    buf[start + k + half] = u - t;
                }
            }
            size *= 2;
        }
    }
}

#[derive(Clone, Debug)]
struct Bluestein {
    inner: Radix2,
    /// `e^{-j pi k^2 / n}` for `k < n`.
    chirp: Vec<Complex>,
    /// Forward transform of the conjugate chirp, zero padded and wrapped.
    kernel_hat: Vec<Complex>,
}

impl Bluestein {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        let two_n = 2 * n as u128;
        let chirp: Vec<Complex> = (0..n)
            .map(|k| {
                // k^2 mod 2n keeps the angle argument small and exact.
                let r = (k as u128 * k as u128) % two_n;
                Complex::cis(-PI * r as f64 / n as f64)
            })
            .collect();
        let mut kernel = vec![Complex::ZERO; m];
        kernel[0] = chirp[0].conj();
        for k in 1..n {
            kernel[k] = chirp[k].conj();
            kernel[m - k] = chirp[k].conj();
        }
        inner.run(&mut kernel);
        Bluestein {
            inner,
            chirp,
            kernel_hat: kernel,
        }
    }

    fn run(&self, buf: &mut [Complex], scratch: &mut Vec<Complex>) {
        let n = self.chirp.len();
        let m = self.kernel_hat.len();
        scratch.clear();
        scratch.resize(m, Complex::ZERO);
        for k in 0..n {
            scratch[k] = buf[k] * self.chirp[k];
        }
        self.inner.run(scratch);
        for (s, kh) in scratch.iter_mut().zip(&self.kernel_hat) {
            *s = (*s * *kh).conj();
        }
        // inverse via conjugation: ifft(y) = conj(fft(conj(y))) / m
        self.inner.run(scratch);
        let inv = 1.0 / m as f64;
        for k in 0..n {
            buf[k] = scratch[k].conj().scale(inv) * self.chirp[k];
        }
    }
}

impl FftPlan {
    pub fn new(len: usize) -> Self {
        let kind = if len <= 1 {
            PlanKind::Trivial
        } else if len.is_power_of_two() {
            PlanKind::Radix2(Radix2::new(len))
        } else {
            PlanKind::Bluestein(Bluestein::new(len))
        };
        FftPlan { len, kind }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized transform in place. `inverse` flips the exponent sign.
    pub fn process(&self, buf: &mut [Complex], inverse: bool, scratch: &mut Vec<Complex>) {
        assert_eq!(buf.len(), self.len, "fft plan length mismatch");
        if inverse {
            buf.iter_mut().for_each(|z| *z = z.conj());
        }
        match &self.kind {
            PlanKind::Trivial => {}
            PlanKind::Radix2(r) => r.run(buf),
            PlanKind::Bluestein(b) => b.run(buf, scratch),
        }
        if inverse {
            buf.iter_mut().for_each(|z| *z = z.conj());
        }
    }
}

/// Row/column plans for repeated 2D transforms of `h x w` planes.
#[derive(Clone, Debug)]
pub struct Fft2Plan {
    h: usize,
    w: usize,
    rows: FftPlan,
    cols: FftPlan,
}

impl Fft2Plan {
    pub fn new(h: usize, w: usize) -> Self {
        Fft2Plan {
            h,
            w,
            rows: FftPlan::new(w),
            cols: FftPlan::new(h),
        }
    }

    /// Unnormalized 2D transform of a row-major `h x w` plane.
    pub fn process(&self, plane: &mut [Complex], inverse: bool) {
        let (h, w) = (self.h, self.w);
        let mut scratch = Vec::new();
        for r in 0..h {
            self.rows.process(&mut plane[r * w..(r + 1) * w], inverse, &mut scratch);
        }
        let mut col = vec![Complex::ZERO; h];
        for c in 0..w {
            for r in 0..h {
                col[r] = plane[r * w + c];
            }
            self.cols.process(&mut col, inverse, &mut scratch);
            for r in 0..h {
                plane[r * w + c] = col[r];
            }
        }
    }
}
