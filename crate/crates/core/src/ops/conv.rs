//! 2D convolution (cross-correlation) and the 2x2/stride-2 transposed convolution.
//!
//! Convolutions lower to GEMM through an im2col buffer. Small samples are
//! batched into one buffer; large ones are filled one band of output rows at a
//! time, so memory stays bounded at 224x224 inputs.

use super::{gemm, Mat};
use crate::error::{Error, Result};
use crate::tensor::{Dims, RealTensor4};

/// Upper bound on im2col buffer entries per band.
const IM2COL_BUDGET: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    pub fn new(x: Dims, weight: Dims, bias: Dims, stride: usize, pad: usize) -> Result<Self> {
        if x.c() != weight.c() {
            return Err(Error::Shape(format!(
                "conv2d: input {x} has {} channels but weight {weight} expects {}",
                x.c(),
                weight.c()
            )));
        }
        if bias.numel() != weight.n() {
            return Err(Error::Shape(format!(
                "conv2d: bias {bias} does not match {} output channels of weight {weight}",
                weight.n()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be positive".into()));
        }
        let (kh, kw) = (weight.h(), weight.w());
        if x.h() + 2 * pad < kh || x.w() + 2 * pad < kw {
            return Err(Error::Shape(format!(
                "conv2d: padded input {x} (pad {pad}) smaller than kernel {kh}x{kw}"
            )));
        }
        Ok(ConvGeometry {
            cin: x.c(),
            cout: weight.n(),
            kh,
            kw,
            stride,
            pad,
            h: x.h(),
            w: x.w(),
            ho: (x.h() + 2 * pad - kh) / stride + 1,
            wo: (x.w() + 2 * pad - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    /// Work units covering `n` samples: whole samples are grouped while their
    /// columns fit the budget, larger samples are split into row bands.
    fn chunks(&self, n: usize) -> Vec<Chunk> {
        let per_sample = self.k() * self.ho * self.wo;
        let mut out = Vec::new();
        if per_sample <= IM2COL_BUDGET {
            let group = (IM2COL_BUDGET / per_sample.max(1)).max(1);
            let mut s0 = 0;
            while s0 < n {
                let s1 = (s0 + group).min(n);
                out.push(Chunk { s0, s1, r0: 0, r1: self.ho });
                s0 = s1;
            }
        } else {
            let band = (IM2COL_BUDGET / (self.k() * self.wo).max(1)).clamp(1, self.ho);
            for s in 0..n {
                let mut r0 = 0;
                while r0 < self.ho {
                    let r1 = (r0 + band).min(self.ho);
                    out.push(Chunk { s0: s, s1: s + 1, r0, r1 });
                    r0 = r1;
                }
            }
        }
        out
    }
}

/// Output rows `r0..r1` of samples `s0..s1`, laid out as columns sample by sample.
#[derive(Clone, Copy, Debug)]
struct Chunk {
    s0: usize,
    s1: usize,
    r0: usize,
    r1: usize,
}

impl Chunk {
    fn cols_per_sample(&self, g: &ConvGeometry) -> usize {
        (self.r1 - self.r0) * g.wo
    }

    fn cols(&self, g: &ConvGeometry) -> usize {
        (self.s1 - self.s0) * self.cols_per_sample(g)
    }
}

/// Fill columns `offset..offset + (r1-r0)*wo` of `cols` (row stride `ld`) with
/// the patches of output rows `r0..r1` of one sample.
fn im2col(g: &ConvGeometry, x: &[f64], r0: usize, r1: usize, cols: &mut [f64], ld: usize, offset: usize) {
    let plane = g.h * g.w;
    for ci in 0..g.cin {
        let xp = &x[ci * plane..(ci + 1) * plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ld + offset..];
                let mut idx = 0;
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst[idx..idx + g.wo].iter_mut().for_each(|v| *v = 0.0);
                        idx += g.wo;
                        continue;
                    }
                    let src = &xp[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        dst[idx] = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-add columns back into one sample's input gradient (transpose of [`im2col`]).
fn col2im(g: &ConvGeometry, cols: &[f64], ld: usize, offset: usize, r0: usize, r1: usize, gx: &mut [f64]) {
    let plane = g.h * g.w;
    for ci in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ld + offset..];
                let mut idx = 0;
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        idx += g.wo;
                        continue;
                    }
                    let base = ci * plane + iy as usize * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            gx[base + ix as usize] += src[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

fn fill_cols(g: &ConvGeometry, x: &RealTensor4, c: Chunk, cols: &mut [f64]) {
    let in_per = g.cin * g.h * g.w;
    let (ld, per) = (c.cols(g), c.cols_per_sample(g));
    for s in c.s0..c.s1 {
        let xs = &x.data()[s * in_per..(s + 1) * in_per];
        im2col(g, xs, c.r0, c.r1, cols, ld, (s - c.s0) * per);
    }
}

/// Copy the chunk's rows of `t [N, C, ho, wo]` into a `[C, cols]` matrix.
fn gather_out(g: &ConvGeometry, t: &RealTensor4, c: Chunk, dst: &mut [f64]) {
    let out_plane = g.ho * g.wo;
    let (ld, per) = (c.cols(g), c.cols_per_sample(g));
    for s in c.s0..c.s1 {
        for co in 0..g.cout {
            let src = &t.data()[(s * g.cout + co) * out_plane + c.r0 * g.wo..][..per];
            dst[co * ld + (s - c.s0) * per..][..per].copy_from_slice(src);
        }
    }
}

/// Cross-correlation of `x [N,Cin,H,W]` with `weight [Cout,Cin,kh,kw]`, plus a
/// per-output-channel `bias` holding `Cout` values.
pub fn conv2d(x: &RealTensor4, weight: &RealTensor4, bias: &RealTensor4, stride: usize, pad: usize) -> Result<RealTensor4> {
    let g = ConvGeometry::new(x.dims(), weight.dims(), bias.dims(), stride, pad)?;
    let n = x.dims().n();
    let mut out = RealTensor4::zeros([n, g.cout, g.ho, g.wo]);
    let out_plane = g.ho * g.wo;
    let k = g.k();
    let wmat = Mat::rows(weight.data(), k);
    let chunks = g.chunks(n);
    let widest = chunks.iter().map(|c| c.cols(&g)).max().unwrap_or(0);
    let mut cols = vec![0.0; k * widest];
    let mut tmp = vec![0.0; g.cout * widest];
    for c in chunks {
        let (ld, per) = (c.cols(&g), c.cols_per_sample(&g));
        fill_cols(&g, x, c, &mut cols[..k * ld]);
        for (co, b) in bias.data().iter().enumerate() {
            tmp[co * ld..(co + 1) * ld].iter_mut().for_each(|v| *v = *b);
        }
        gemm(g.cout, k, ld, wmat, Mat::rows(&cols[..k * ld], ld), 1.0, &mut tmp[..g.cout * ld], ld);
        for s in c.s0..c.s1 {
            for co in 0..g.cout {
                let dst = &mut out.data_mut()[(s * g.cout + co) * out_plane + c.r0 * g.wo..][..per];
                dst.copy_from_slice(&tmp[co * ld + (s - c.s0) * per..][..per]);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to whichever of input, weight and bias are requested.
pub fn conv2d_backward(
    x: &RealTensor4,
    weight: &RealTensor4,
    bias: &RealTensor4,
    stride: usize,
    pad: usize,
    grad_out: &RealTensor4,
    need: [bool; 3],
) -> Result<[Option<RealTensor4>; 3]> {
    let g = ConvGeometry::new(x.dims(), weight.dims(), bias.dims(), stride, pad)?;
    let n = x.dims().n();
    if grad_out.dims() != Dims::new(n, g.cout, g.ho, g.wo) {
        return Err(Error::Shape(format!(
            "conv2d backward: gradient {} does not match output [{n}, {}, {}, {}]",
            grad_out.dims(),
            g.cout,
            g.ho,
            g.wo
        )));
    }
    let k = g.k();
    let in_per = g.cin * g.h * g.w;
    let mut gx = need[0].then(|| RealTensor4::zeros(x.dims()));
    let mut gw = need[1].then(|| RealTensor4::zeros(weight.dims()));
    let gb = need[2].then(|| {
        let mut gb = RealTensor4::zeros(bias.dims());
        for s in 0..n {
            for co in 0..g.cout {
                gb.data_mut()[co] += grad_out.plane(s, co).iter().sum::<f64>();
            }
        }
        gb
    });
    if gx.is_none() && gw.is_none() {
        return Ok([gx, gw, gb]);
    }
    let chunks = g.chunks(n);
    let widest = chunks.iter().map(|c| c.cols(&g)).max().unwrap_or(0);
    let mut cols = vec![0.0; k * widest];
    let mut go = vec![0.0; g.cout * widest];
    for c in chunks {
        let (ld, per) = (c.cols(&g), c.cols_per_sample(&g));
        gather_out(&g, grad_out, c, &mut go[..g.cout * ld]);
        let gom = Mat::rows(&go[..g.cout * ld], ld);
        if let Some(gw) = gw.as_mut() {
            fill_cols(&g, x, c, &mut cols[..k * ld]);
            gemm(g.cout, ld, k, gom, Mat::transposed(&cols[..k * ld], ld), 1.0, gw.data_mut(), k);
        }
        if let Some(gx) = gx.as_mut() {
            gemm(k, g.cout, ld, Mat::transposed(weight.data(), k), gom, 0.0, &mut cols[..k * ld], ld);
            for s in c.s0..c.s1 {
                let gxs = &mut gx.data_mut()[s * in_per..(s + 1) * in_per];
                col2im(&g, &cols[..k * ld], ld, (s - c.s0) * per, c.r0, c.r1, gxs);
            }
        }
    }
    Ok([gx, gw, gb])
}

fn check_transpose(x: Dims, weight: Dims, bias: Dims) -> Result<usize> {
    if weight.n() != x.c() {
        return Err(Error::Shape(format!(
            "conv_transpose2d: input {x} has {} channels but weight {weight} expects {}",
            x.c(),
            weight.n()
        )));
    }
    if weight.h() != 2 || weight.w() != 2 {
        return Err(Error::Shape(format!(
            "conv_transpose2d: only 2x2 kernels with stride 2 are supported, got weight {weight}"
        )));
    }
    if bias.numel() != weight.c() {
        return Err(Error::Shape(format!(
            "conv_transpose2d: bias {bias} does not match {} output channels",
            weight.c()
        )));
    }
    Ok(weight.c())
}

/// Transposed convolution, kernel 2x2, stride 2, no padding: every input pixel
/// scatters `weight[ci, co] * x` into its own 2x2 output patch.
pub fn conv_transpose2x2(x: &RealTensor4, weight: &RealTensor4, bias: &RealTensor4) -> Result<RealTensor4> {
    let cout = check_transpose(x.dims(), weight.dims(), bias.dims())?;
    let d = x.dims();
    let (cin, h, w) = (d.c(), d.h(), d.w());
    let hw = h * w;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = RealTensor4::zeros([d.n(), cout, ho, wo]);
    let mut tmp = vec![0.0; cout * 4 * hw];
    for s in 0..d.n() {
        let xs = &x.data()[s * cin * hw..(s + 1) * cin * hw];
        gemm(cout * 4, cin, hw, Mat::transposed(weight.data(), cout * 4), Mat::rows(xs, hw), 0.0, &mut tmp, hw);
        for co in 0..cout {
            let b = bias.data()[co];
            let plane = out.plane_mut(s, co);
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &tmp[((co * 2 + a) * 2 + bb) * hw..][..hw];
                    for i in 0..h {
                        for j in 0..w {
                            plane[(2 * i + a) * wo + 2 * j + bb] = row[i * w + j] + b;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv_transpose2x2_backward(
    x: &RealTensor4,
    weight: &RealTensor4,
    bias: &RealTensor4,
    grad_out: &RealTensor4,
    need: [bool; 3],
) -> Result<[Option<RealTensor4>; 3]> {
    let cout = check_transpose(x.dims(), weight.dims(), bias.dims())?;
    let d = x.dims();
    let (cin, h, w) = (d.c(), d.h(), d.w());
    let hw = h * w;
    let wo = 2 * w;
    if grad_out.dims() != Dims::new(d.n(), cout, 2 * h, 2 * w) {
        return Err(Error::Shape(format!(
            "conv_transpose2d backward: gradient {} does not match output",
            grad_out.dims()
        )));
    }
    let mut gx = need[0].then(|| RealTensor4::zeros(d));
    let mut gw = need[1].then(|| RealTensor4::zeros(weight.dims()));
    let mut gb = need[2].then(|| RealTensor4::zeros(bias.dims()));
    let mut gathered = vec![0.0; cout * 4 * hw];
    for s in 0..d.n() {
        for co in 0..cout {
            let plane = grad_out.plane(s, co);
            if let Some(gb) = gb.as_mut() {
                gb.data_mut()[co] += plane.iter().sum::<f64>();
            }
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &mut gathered[((co * 2 + a) * 2 + bb) * hw..][..hw];
                    for i in 0..h {
                        for j in 0..w {
                            row[i * w + j] = plane[(2 * i + a) * wo + 2 * j + bb];
                        }
                    }
                }
            }
        }
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx.data_mut()[s * cin * hw..(s + 1) * cin * hw];
            gemm(cin, cout * 4, hw, Mat::rows(weight.data(), cout * 4), Mat::rows(&gathered, hw), 0.0, gxs, hw);
        }
        if let Some(gw) = gw.as_mut() {
            let xs = &x.data()[s * cin * hw..(s + 1) * cin * hw];
            gemm(cin, hw, cout * 4, Mat::rows(xs, hw), Mat::transposed(&gathered, hw), 1.0, gw.data_mut(), cout * 4);
        }
    }
    Ok([gx, gw, gb])
}
