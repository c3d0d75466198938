//! Two-dimensional discrete Fourier analysis of feature maps.
//!
//! Forward transform: `f(U,V) = sum_x sum_y x(x,y) e^{-j2pi(Ux/H + Vy/W)}`.
//! Inverse transform carries the `1/(HW)` normalization.
//!
//! Frequency masks and learnable filters are stored in *centered* order: the
//! DC bin sits at `(H/2, W/2)` (integer division). Unshifted bin `(u, v)` maps
//! to centered position `((u + H/2) mod H, (v + W/2) mod W)`.

mod fft;
pub mod spectrum;

use std::f64::consts::PI;
use std::sync::Arc;

pub use fft::{Fft2Plan, FftPlan};

use crate::autodiff::{Backward, CVar, Grad, Tape, Var};
use crate::error::{Error, Result};
use crate::param::{ParamId, ParameterRegistry};
use crate::tensor::{Complex, ComplexTensor4, Dims, RealTensor4};

fn transform_planes(f: &mut ComplexTensor4, inverse: bool) {
    let d = f.dims();
    let plan = Fft2Plan::new(d.h(), d.w());
    for n in 0..d.n() {
        for c in 0..d.c() {
            plan.process(f.plane_mut(n, c), inverse);
        }
    }
}

/// Forward 2D DFT of every `[H, W]` plane.
pub fn dft2(x: &RealTensor4) -> ComplexTensor4 {
    let mut f = ComplexTensor4::from_real(x);
    transform_planes(&mut f, false);
    f
}

/// Forward 2D DFT of a complex tensor.
pub fn dft2_complex(x: &ComplexTensor4) -> ComplexTensor4 {
    let mut f = x.clone();
    transform_planes(&mut f, false);
    f
}

/// Inverse 2D DFT with `1/(HW)` normalization.
pub fn idft2(f: &ComplexTensor4) -> ComplexTensor4 {
    let mut x = f.clone();
    transform_planes(&mut x, true);
    let inv = 1.0 / x.dims().plane() as f64;
    x.data_mut().iter_mut().for_each(|z| *z = z.scale(inv));
    x
}

/// Direct `O(H^2 W^2)` evaluation of the forward transform, one plane at a time.
/// Kept as the reference the FFT path is checked against.
pub fn dft2_direct(x: &RealTensor4) -> ComplexTensor4 {
    let d = x.dims();
    let (h, w) = (d.h(), d.w());
    let mut out = ComplexTensor4::zeros(d);
    for n in 0..d.n() {
        for c in 0..d.c() {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for u in 0..h {
                for v in 0..w {
                    let mut acc = Complex::ZERO;
                    for xx in 0..h {
                        for yy in 0..w {
                            // reduce the phase exactly before converting to an angle
                            let num = ((u * xx) % h) as f64 / h as f64 + ((v * yy) % w) as f64 / w as f64;
                            acc += Complex::cis(-2.0 * PI * num).scale(src[xx * w + yy]);
                        }
                    }
                    dst[u * w + v] = acc;
                }
            }
        }
    }
    out
}

/// Centered position of unshifted bin index `u` along an axis of length `len`.
#[inline]
pub fn centered(u: usize, len: usize) -> usize {
    (u + len / 2) % len
}

/// Complementary low/high-frequency binary masks in centered order.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqMaskPair {
    h: usize,
    w: usize,
    side_n: usize,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl FreqMaskPair {
    /// Low-pass square of side `n = max(1, floor(rho * min(H, W)))` centered on DC.
    pub fn build(h: usize, w: usize, rho: f64) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!("mask dims must be positive, got {h}x{w}")));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidArgument(format!("mask fraction rho must lie in (0, 1], got {rho}")));
        }
        let side_n = ((rho * h.min(w) as f64).floor() as usize).max(1);
        let r0 = h / 2 - side_n / 2;
        let c0 = w / 2 - side_n / 2;
        let mut low = vec![0.0; h * w];
        for r in r0..r0 + side_n {
            for c in c0..c0 + side_n {
                low[r * w + c] = 1.0;
            }
        }
        let high = low.iter().map(|v| 1.0 - v).collect();
        Ok(FreqMaskPair { h, w, side_n, low, high })
    }

    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }
    pub fn side_n(&self) -> usize {
        self.side_n
    }
    /// Low-pass mask, centered order, row-major `[H, W]`.
    pub fn low(&self) -> &[f64] {
        &self.low
    }
    pub fn high(&self) -> &[f64] {
        &self.high
    }
}

/// Multiply every plane by a real centered-order `[H, W]` mask.
pub fn apply_mask(f: &ComplexTensor4, mask: &[f64]) -> Result<ComplexTensor4> {
    let d = f.dims();
    if mask.len() != d.plane() {
        return Err(Error::Shape(format!(
            "apply_mask: mask has {} entries, spectrum {d} needs {}",
            mask.len(),
            d.plane()
        )));
    }
    let unshifted = unshift(mask, d.h(), d.w());
    let mut out = f.clone();
    for n in 0..d.n() {
        for c in 0..d.c() {
            for (z, m) in out.plane_mut(n, c).iter_mut().zip(&unshifted) {
                *z = z.scale(*m);
            }
        }
    }
    Ok(out)
}

/// Reorder a centered `[H, W]` array into natural DFT bin order.
pub fn unshift(centered_vals: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for u in 0..h {
        let cu = centered(u, h);
        for v in 0..w {
            out[u * w + v] = centered_vals[cu * w + centered(v, w)];
        }
    }
    out
}

/// Reorder natural-order bins into centered order.
pub fn shift<T: Copy + Default>(natural: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::default(); h * w];
    for u in 0..h {
        let cu = centered(u, h);
        for v in 0..w {
            out[cu * w + centered(v, w)] = natural[u * w + v];
        }
    }
    out
}

/// How the learnable low-band filter is shared across channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterMode {
    /// One `[H, W]` filter shared by all channels.
    Broadcast,
    /// A separate `[H, W]` filter per channel.
    PerChannel,
}

impl FilterMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterMode::Broadcast => "broadcast",
            FilterMode::PerChannel => "per-channel",
        }
    }
}

impl std::str::FromStr for FilterMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "broadcast" => Ok(FilterMode::Broadcast),
            "per-channel" | "per_channel" => Ok(FilterMode::PerChannel),
            other => Err(Error::Config(format!("unknown filter mode {other:?}"))),
        }
    }
}

/// Learnable real-valued frequency filter, centered order, initialized to ones.
#[derive(Clone, Debug)]
pub struct GlobalFilter {
    mode: FilterMode,
    channels: usize,
    h: usize,
    w: usize,
    param: ParamId,
}

impl GlobalFilter {
    pub fn register(
        registry: &mut ParameterRegistry,
        name: &str,
        mode: FilterMode,
        channels: usize,
        h: usize,
        w: usize,
    ) -> Result<Self> {
        let c = match mode {
            FilterMode::Broadcast => 1,
            FilterMode::PerChannel => channels,
        };
        let param = registry.register(name, RealTensor4::full([1, c, h, w], 1.0))?;
        Ok(GlobalFilter { mode, channels, h, w, param })
    }

    pub fn mode(&self) -> FilterMode {
        self.mode
    }
    pub fn param(&self) -> ParamId {
        self.param
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
}

fn check_filter(f: Dims, filt: Dims) -> Result<()> {
    if filt.n() != 1 || filt.h() != f.h() || filt.w() != f.w() || (filt.c() != 1 && filt.c() != f.c()) {
        return Err(Error::Shape(format!(
            "apply_filter: filter {filt} does not fit spectrum {f} (expects [1, 1 or C, H, W])"
        )));
    }
    Ok(())
}

/// Elementwise product of a spectrum with a real centered-order filter
/// `[1, 1 | C, H, W]`.
pub fn apply_filter(f: &ComplexTensor4, filt: &RealTensor4) -> Result<ComplexTensor4> {
    let (d, fd) = (f.dims(), filt.dims());
    check_filter(d, fd)?;
    let mut out = f.clone();
    for c in 0..d.c() {
        let nat = unshift(filt.plane(0, if fd.c() == 1 { 0 } else { c }), d.h(), d.w());
        for n in 0..d.n() {
            for (z, k) in out.plane_mut(n, c).iter_mut().zip(&nat) {
                *z = z.scale(*k);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Recorded operations.

struct Dft2Op;

impl Backward for Dft2Op {
    fn name(&self) -> &'static str {
        "dft2"
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        // adjoint of the forward transform = unnormalized inverse transform
        let mut gx = g.complex()?.clone();
        transform_planes(&mut gx, true);
        Ok(vec![Some(Grad::Real(gx.real()))])
    }
}

struct Idft2Op;

impl Backward for Idft2Op {
    fn name(&self) -> &'static str {
        "idft2"
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let mut gf = g.complex()?.clone();
        transform_planes(&mut gf, false);
        let inv = 1.0 / gf.dims().plane() as f64;
        gf.data_mut().iter_mut().for_each(|z| *z = z.scale(inv));
        Ok(vec![Some(Grad::Complex(gf))])
    }
}

struct MaskOp {
    mask: Vec<f64>,
}

impl Backward for MaskOp {
    fn name(&self) -> &'static str {
        "apply_mask"
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        Ok(vec![Some(Grad::Complex(apply_mask(g.complex()?, &self.mask)?))])
    }
}

struct FilterOp {
    f: Arc<ComplexTensor4>,
    filt: Arc<RealTensor4>,
}

impl Backward for FilterOp {
    fn name(&self) -> &'static str {
        "apply_filter"
    }
    fn backward(&self, g: &Grad, need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let g = g.complex()?;
        let gf = if need[0] {
            Some(Grad::Complex(apply_filter(g, &self.filt)?))
        } else {
            None
        };
        let gk = if need[1] {
            let d = g.dims();
            let fd = self.filt.dims();
            let mut natural = vec![vec![0.0; d.plane()]; fd.c()];
            for n in 0..d.n() {
                for c in 0..d.c() {
                    let acc = &mut natural[if fd.c() == 1 { 0 } else { c }];
                    for ((a, gz), fz) in acc.iter_mut().zip(g.plane(n, c)).zip(self.f.plane(n, c)) {
                        *a += gz.re * fz.re + gz.im * fz.im;
                    }
                }
            }
            let mut gk = RealTensor4::zeros(fd);
            for (c, nat) in natural.iter().enumerate() {
                gk.plane_mut(0, c).copy_from_slice(&shift(nat, d.h(), d.w()));
            }
            Some(Grad::Real(gk))
        } else {
            None
        };
        Ok(vec![gf, gk])
    }
}

struct ComplexAddOp;

impl Backward for ComplexAddOp {
    fn name(&self) -> &'static str {
        "complex_add"
    }
    fn backward(&self, g: &Grad, need: &[bool]) -> Result<Vec<Option<Grad>>> {
        Ok(need.iter().map(|&n| n.then(|| g.clone())).collect())
    }
}

struct TakeRealOp;

impl Backward for TakeRealOp {
    fn name(&self) -> &'static str {
        "take_real"
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        Ok(vec![Some(Grad::Complex(ComplexTensor4::from_real(g.real()?)))])
    }
}

struct Abs2SumOp {
    f: Arc<ComplexTensor4>,
}

impl Backward for Abs2SumOp {
    fn name(&self) -> &'static str {
        "abs2_sum"
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let k = 2.0 * g.real()?.item()?;
        let data = self.f.data().iter().map(|z| z.scale(k)).collect();
        Ok(vec![Some(Grad::Complex(ComplexTensor4::from_vec(self.f.dims(), data)?))])
    }
}

impl Tape {
    pub fn dft2(&mut self, x: &Var) -> CVar {
        let out = dft2(x.value());
        let node = self.record(&[x.node()], Dft2Op);
        self.wrap_complex(out, node)
    }

    pub fn idft2(&mut self, f: &CVar) -> CVar {
        let out = idft2(f.value());
        let node = self.record(&[f.node()], Idft2Op);
        self.wrap_complex(out, node)
    }

    pub fn apply_mask(&mut self, f: &CVar, mask: &[f64]) -> Result<CVar> {
        let out = apply_mask(f.value(), mask)?;
        let node = self.record(&[f.node()], MaskOp { mask: mask.to_vec() });
        Ok(self.wrap_complex(out, node))
    }

    pub fn apply_filter(&mut self, f: &CVar, filt: &Var) -> Result<CVar> {
        let out = apply_filter(f.value(), filt.value())?;
        let node = self.record(
            &[f.node(), filt.node()],
            FilterOp {
                f: f.arc(),
                filt: filt.arc(),
            },
        );
        Ok(self.wrap_complex(out, node))
    }

    pub fn complex_add(&mut self, a: &CVar, b: &CVar) -> Result<CVar> {
        if a.dims() != b.dims() {
            return Err(Error::Shape(format!("complex_add: {} vs {}", a.dims(), b.dims())));
        }
        let mut out = a.value().clone();
        out.add_assign(b.value());
        let node = self.record(&[a.node(), b.node()], ComplexAddOp);
        Ok(self.wrap_complex(out, node))
    }

    /// Drop imaginary parts.
    pub fn take_real(&mut self, f: &CVar) -> Var {
        let out = f.value().real();
        let node = self.record(&[f.node()], TakeRealOp);
        self.wrap(out, node)
    }

    /// `sum |f|^2` as a scalar.
    pub fn abs2_sum(&mut self, f: &CVar) -> Var {
        let s = f.value().data().iter().map(|z| z.norm_sqr()).sum();
        let node = self.record(&[f.node()], Abs2SumOp { f: f.arc() });
        self.wrap(RealTensor4::scalar(s), node)
    }
}

/// The complete frequency branch: high band passes through, the low band is
/// scaled by the filter, and the recombined spectrum returns to the spatial
/// domain with its imaginary residue discarded.
pub fn frequency_branch(tape: &mut Tape, x: &Var, masks: &FreqMaskPair, filt: &Var) -> Result<Var> {
    let d = x.dims();
    if masks.h() != d.h() || masks.w() != d.w() {
        return Err(Error::Shape(format!(
            "frequency branch built for {}x{} but input is {d}",
            masks.h(),
            masks.w()
        )));
    }
    let f = tape.dft2(x);
    let high = tape.apply_mask(&f, masks.high())?;
    let low = tape.apply_mask(&f, masks.low())?;
    let low = tape.apply_filter(&low, filt)?;
    let merged = tape.complex_add(&high, &low)?;
    let back = tape.idft2(&merged);
    Ok(tape.take_real(&back))
}
