use crate::error::{Error, Result};
use crate::tensor::RealTensor4;

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index of the winning element (first index on ties).
pub fn maxpool2(x: &RealTensor4) -> Result<(RealTensor4, Vec<usize>)> {
    let d = x.dims();
    if !d.h().is_multiple_of(2) || !d.w().is_multiple_of(2) {
        return Err(Error::Shape(format!("maxpool2: spatial dims of {d} must be even")));
    }
    let (ho, wo) = (d.h() / 2, d.w() / 2);
    let mut out = RealTensor4::zeros([d.n(), d.c(), ho, wo]);
    let mut argmax = Vec::with_capacity(out.len());
    let src = x.data();
    let mut o = 0;
    for n in 0..d.n() {
        for c in 0..d.c() {
            for i in 0..ho {
                for j in 0..wo {
                    let base = d.offset(n, c, 2 * i, 2 * j);
                    let mut best = base;
                    for cand in [base + 1, base + d.w(), base + d.w() + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    out.data_mut()[o] = src[best];
                    argmax.push(best);
                    o += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Spatial mean per channel: `[N,C,H,W] -> [N,C,1,1]`.
pub fn global_avg_pool(x: &RealTensor4) -> RealTensor4 {
    let d = x.dims();
    let inv = 1.0 / d.plane() as f64;
    RealTensor4::from_fn([d.n(), d.c(), 1, 1], |[n, c, _, _]| x.plane(n, c).iter().sum::<f64>() * inv)
}

/// Maximum over channels: `[N,C,H,W] -> [N,1,H,W]` plus the winning channel per pixel.
pub fn channel_max(x: &RealTensor4) -> (RealTensor4, Vec<usize>) {
    let d = x.dims();
    let plane = d.plane();
    let mut out = RealTensor4::full([d.n(), 1, d.h(), d.w()], f64::NEG_INFINITY);
    let mut arg = vec![0usize; d.n() * plane];
    for n in 0..d.n() {
        for c in 0..d.c() {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, 0);
            for p in 0..plane {
                if src[p] > dst[p] {
                    dst[p] = src[p];
                    arg[n * plane + p] = c;
                }
            }
        }
    }
    (out, arg)
}

/// Mean over channels: `[N,C,H,W] -> [N,1,H,W]`.
pub fn channel_mean(x: &RealTensor4) -> RealTensor4 {
    let d = x.dims();
    let inv = 1.0 / d.c() as f64;
    let mut out = RealTensor4::zeros([d.n(), 1, d.h(), d.w()]);
    for n in 0..d.n() {
        for c in 0..d.c() {
            let src = x.plane(n, c).to_vec();
            for (o, v) in out.plane_mut(n, 0).iter_mut().zip(src) {
                *o += v;
            }
        }
        out.plane_mut(n, 0).iter_mut().for_each(|v| *v *= inv);
    }
    out
}
