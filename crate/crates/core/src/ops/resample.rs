//! Bilinear resampling with the half-pixel-center (align_corners = false) convention.

use crate::tensor::RealTensor4;

/// Per output index: the two source taps and their weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
}

/// Taps for resizing an axis of length `src` to length `dst`.
/// Source coordinate is `(i + 0.5) * src / dst - 0.5`, clamped at the low edge.
pub(crate) fn linear_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let l = s - i0 as f64;
            Tap {
                i0,
                i1,
                w0: 1.0 - l,
                w1: l,
            }
        })
        .collect()
}

/// Bilinear resize of every plane to `(oh, ow)`.
pub fn resize_bilinear(x: &RealTensor4, oh: usize, ow: usize) -> RealTensor4 {
    let d = x.dims();
    let ty = linear_taps(d.h(), oh);
    let tx = linear_taps(d.w(), ow);
    let mut out = RealTensor4::zeros([d.n(), d.c(), oh, ow]);
    for n in 0..d.n() {
        for c in 0..d.c() {
            let src = x.plane(n, c).to_vec();
            let dst = out.plane_mut(n, c);
            for (oy, a) in ty.iter().enumerate() {
                let r0 = &src[a.i0 * d.w()..(a.i0 + 1) * d.w()];
                let r1 = &src[a.i1 * d.w()..(a.i1 + 1) * d.w()];
                for (ox, b) in tx.iter().enumerate() {
                    dst[oy * ow + ox] = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1])
                        + a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
                }
            }
        }
    }
    out
}

/// Transpose of [`resize_bilinear`]: maps an output gradient back to the source grid.
pub fn resize_bilinear_backward(grad_out: &RealTensor4, h: usize, w: usize) -> RealTensor4 {
    let d = grad_out.dims();
    let (oh, ow) = (d.h(), d.w());
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let mut gx = RealTensor4::zeros([d.n(), d.c(), h, w]);
    for n in 0..d.n() {
        for c in 0..d.c() {
            let g = grad_out.plane(n, c).to_vec();
            let dst = gx.plane_mut(n, c);
            for (oy, a) in ty.iter().enumerate() {
                for (ox, b) in tx.iter().enumerate() {
                    let v = g[oy * ow + ox];
                    dst[a.i0 * w + b.i0] += a.w0 * b.w0 * v;
                    dst[a.i0 * w + b.i1] += a.w0 * b.w1 * v;
                    dst[a.i1 * w + b.i0] += a.w1 * b.w0 * v;
                    dst[a.i1 * w + b.i1] += a.w1 * b.w1 * v;
                }
            }
        }
    }
    gx
}

/// 2x bilinear upsampling.
pub fn interpolate2x(x: &RealTensor4) -> RealTensor4 {
    let d = x.dims();
    resize_bilinear(x, 2 * d.h(), 2 * d.w())
}

pub fn interpolate2x_backward(grad_out: &RealTensor4) -> RealTensor4 {
    let d = grad_out.dims();
    resize_bilinear_backward(grad_out, d.h() / 2, d.w() / 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_stay_constant() {
        let y = interpolate2x(&RealTensor4::full([1, 2, 3, 5], 4.25));
        assert_eq!(y.dims().0, [1, 2, 6, 10]);
        assert!(y.data().iter().all(|&v| v == 4.25));
        let y = interpolate2x(&RealTensor4::full([1, 1, 1, 1], 7.0));
        assert_eq!(y.data(), &[7.0; 4]);
    }

    #[test]
    fn two_by_two_against_formula() {
        let x = RealTensor4::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = interpolate2x(&x);
        assert_eq!(y.at(0, 0, 0, 0), 0.0);
        assert_eq!(y.at(0, 0, 0, 3), 1.0);
        assert_eq!(y.at(0, 0, 3, 0), 2.0);
        assert_eq!(y.at(0, 0, 3, 3), 3.0);
        // Direct evaluation: f(r, c) = 2r + c on the source grid, source coordinate
        // s(i) = clamp((i + 0.5) / 2 - 0.5, 0, 1).
        let s = |i: usize| ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
        for i in 0..4 {
            for j in 0..4 {
                let want = 2.0 * s(i) + s(j);
                assert!((y.at(0, 0, i, j) - want).abs() < 1e-15, "({i},{j})");
            }
        }
        assert_eq!(y.at(0, 0, 1, 1), 0.75);
    }

    #[test]
    fn backward_is_transpose() {
        let x = RealTensor4::from_fn([1, 2, 3, 4], |[_, c, h, w]| (c * 12 + h * 4 + w) as f64 * 0.3 - 1.0);
        let y = interpolate2x(&x);
        let g = RealTensor4::from_fn(y.dims(), |[_, c, h, w]| ((c + h * 8 + w) as f64).sin());
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let gx = interpolate2x_backward(&g);
        let rhs: f64 = gx.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
