use crate::error::{Error, Result};
use crate::tensor::{Dims, RealTensor4};

/// Checks that `b` broadcasts against `x`: every axis of `b` equals the matching
/// axis of `x` or is 1.
fn check_broadcast(x: Dims, b: Dims) -> Result<()> {
    for axis in 0..4 {
        if b.0[axis] != x.0[axis] && b.0[axis] != 1 {
            return Err(Error::Shape(format!("cannot broadcast {b} against {x}")));
        }
    }
    Ok(())
}

#[inline]
fn bcast_index(b: Dims, n: usize, c: usize, h: usize, w: usize) -> usize {
    let pick = |i: usize, axis: usize| if b.0[axis] == 1 { 0 } else { i };
    b.offset(pick(n, 0), pick(c, 1), pick(h, 2), pick(w, 3))
}

/// `x * b` with `b` broadcast over its unit axes.
pub fn broadcast_mul(x: &RealTensor4, b: &RealTensor4) -> Result<RealTensor4> {
    let (xd, bd) = (x.dims(), b.dims());
    check_broadcast(xd, bd)?;
    if xd == bd {
        let data = x.data().iter().zip(b.data()).map(|(p, q)| p * q).collect();
        return RealTensor4::from_vec(xd, data);
    }
    let mut out = RealTensor4::zeros(xd);
    let mut i = 0;
    let o = out.data_mut();
    for n in 0..xd.n() {
        for c in 0..xd.c() {
            for h in 0..xd.h() {
                for w in 0..xd.w() {
                    o[i] = x.data()[i] * b.data()[bcast_index(bd, n, c, h, w)];
                    i += 1;
                }
            }
        }
    }
    Ok(out)
}

pub fn broadcast_mul_backward(
    x: &RealTensor4,
    b: &RealTensor4,
    grad_out: &RealTensor4,
    need: [bool; 2],
) -> Result<[Option<RealTensor4>; 2]> {
    let (xd, bd) = (x.dims(), b.dims());
    check_broadcast(xd, bd)?;
    let gx = if need[0] { Some(broadcast_mul(grad_out, b)?) } else { None };
    let gb = need[1].then(|| {
        let mut gb = RealTensor4::zeros(bd);
        let mut i = 0;
        for n in 0..xd.n() {
            for c in 0..xd.c() {
                for h in 0..xd.h() {
                    for w in 0..xd.w() {
                        gb.data_mut()[bcast_index(bd, n, c, h, w)] += grad_out.data()[i] * x.data()[i];
                        i += 1;
                    }
                }
            }
        }
        gb
    });
    Ok([gx, gb])
}

pub fn add(a: &RealTensor4, b: &RealTensor4) -> Result<RealTensor4> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("add: {} vs {}", a.dims(), b.dims())));
    }
    let data = a.data().iter().zip(b.data()).map(|(p, q)| p + q).collect();
    RealTensor4::from_vec(a.dims(), data)
}

/// Concatenate along the channel axis.
pub fn concat_channels(a: &RealTensor4, b: &RealTensor4) -> Result<RealTensor4> {
    let (ad, bd) = (a.dims(), b.dims());
    if ad.n() != bd.n() || ad.h() != bd.h() || ad.w() != bd.w() {
        return Err(Error::Shape(format!("concat_channels: {ad} and {bd} differ outside the channel axis")));
    }
    let plane = ad.plane();
    let (ca, cb) = (ad.c() * plane, bd.c() * plane);
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..ad.n() {
        data.extend_from_slice(&a.data()[n * ca..(n + 1) * ca]);
        data.extend_from_slice(&b.data()[n * cb..(n + 1) * cb]);
    }
    RealTensor4::from_vec([ad.n(), ad.c() + bd.c(), ad.h(), ad.w()], data)
}

/// Channels `start..start + len` of `x`.
pub fn slice_channels(x: &RealTensor4, start: usize, len: usize) -> Result<RealTensor4> {
    let d = x.dims();
    if start + len > d.c() {
        return Err(Error::Shape(format!(
            "slice_channels: range {start}..{} exceeds {} channels",
            start + len,
            d.c()
        )));
    }
    let plane = d.plane();
    let mut data = Vec::with_capacity(d.n() * len * plane);
    for n in 0..d.n() {
        let base = (n * d.c() + start) * plane;
        data.extend_from_slice(&x.data()[base..base + len * plane]);
    }
    RealTensor4::from_vec([d.n(), len, d.h(), d.w()], data)
}

/// Split into channels `[0, at)` and `[at, C)`.
pub fn split_channels(x: &RealTensor4, at: usize) -> Result<(RealTensor4, RealTensor4)> {
    let c = x.dims().c();
    if at == 0 || at >= c {
        return Err(Error::InvalidArgument(format!("split_channels: split point {at} must lie in (0, {c})")));
    }
    Ok((slice_channels(x, 0, at)?, slice_channels(x, at, c - at)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(dims: [usize; 4], seed: f64) -> RealTensor4 {
        RealTensor4::from_fn(dims, |[a, b, c, d]| ((a * 97 + b * 13 + c * 5 + d) as f64 + seed).cos())
    }

    #[test]
    fn broadcast_identity_and_annihilator() {
        let x = pseudo([2, 3, 4, 4], 0.0);
        assert_eq!(broadcast_mul(&x, &RealTensor4::full([2, 3, 1, 1], 1.0)).unwrap(), x);
        let z = broadcast_mul(&x, &RealTensor4::zeros([2, 3, 1, 1])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn broadcast_matches_loop() {
        let x = pseudo([2, 3, 4, 5], 0.5);
        let a = pseudo([2, 3, 1, 1], 1.5);
        let y = broadcast_mul(&x, &a).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for h in 0..4 {
                    for w in 0..5 {
                        assert_eq!(y.at(n, c, h, w), x.at(n, c, h, w) * a.at(n, c, 0, 0));
                    }
                }
            }
        }
        let m = pseudo([2, 1, 4, 5], 2.5);
        let y = broadcast_mul(&x, &m).unwrap();
        assert_eq!(y.at(1, 2, 3, 4), x.at(1, 2, 3, 4) * m.at(1, 0, 3, 4));
        assert!(broadcast_mul(&x, &RealTensor4::zeros([2, 2, 1, 1])).is_err());
    }

    #[test]
    fn concat_layout_and_split_roundtrip() {
        let a = pseudo([2, 2, 4, 4], 0.0);
        let b = pseudo([2, 3, 4, 4], 9.0);
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.dims(), Dims::new(2, 5, 4, 4));
        assert_eq!(ab.plane(1, 3), b.plane(1, 1));
        let (a2, b2) = split_channels(&ab, 2).unwrap();
        assert_eq!((a2, b2), (a, b));
        assert!(concat_channels(&pseudo([1, 1, 4, 4], 0.0), &pseudo([1, 1, 2, 4], 0.0)).is_err());
        assert!(split_channels(&ab, 0).is_err());
        assert!(split_channels(&ab, 5).is_err());
    }
}
