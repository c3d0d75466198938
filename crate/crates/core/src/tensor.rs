//! Dense rank-4 real and complex arrays in `[N, C, H, W]` row-major layout.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Shape of a rank-4 tensor: `[batch, channels, height, width]`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims(pub [usize; 4]);

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Number of elements in one `[H, W]` plane.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.0[1] + c) * self.0[2] + h) * self.0[3] + w
    }
}

impl fmt::Debug for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl From<[usize; 4]> for Dims {
    fn from(d: [usize; 4]) -> Self {
        Dims(d)
    }
}

/// Dense real tensor.
#[derive(Clone, PartialEq)]
pub struct RealTensor4 {
    dims: Dims,
    data: Vec<f64>,
}

impl RealTensor4 {
    pub fn zeros(dims: impl Into<Dims>) -> Self {
        let dims = dims.into();
        RealTensor4 {
            dims,
            data: vec![0.0; dims.numel()],
        }
    }

    pub fn full(dims: impl Into<Dims>, value: f64) -> Self {
        let dims = dims.into();
        RealTensor4 {
            dims,
            data: vec![value; dims.numel()],
        }
    }

    pub fn from_vec(dims: impl Into<Dims>, data: Vec<f64>) -> Result<Self> {
        let dims = dims.into();
        if data.len() != dims.numel() {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {dims} ({} elements)",
                data.len(),
                dims.numel()
            )));
        }
        Ok(RealTensor4 { dims, data })
    }

    pub fn from_fn(dims: impl Into<Dims>, mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let dims = dims.into();
        let mut data = Vec::with_capacity(dims.numel());
        for n in 0..dims.n() {
            for c in 0..dims.c() {
                for h in 0..dims.h() {
                    for w in 0..dims.w() {
                        data.push(f([n, c, h, w]));
                    }
                }
            }
        }
        RealTensor4 { dims, data }
    }

    pub fn scalar(value: f64) -> Self {
        RealTensor4 {
            dims: Dims::new(1, 1, 1, 1),
            data: vec![value],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Reinterpret the same data under new dims with equal element count.
    pub fn reshape(&self, dims: impl Into<Dims>) -> Result<Self> {
        RealTensor4::from_vec(dims, self.data.clone())
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.dims.offset(n, c, h, w)]
    }

    /// The `[H, W]` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.dims.plane();
        let start = (n * self.dims.c() + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.dims.plane();
        let start = (n * self.dims.c() + c) * p;
        &mut self.data[start..start + p]
    }

    /// The value of a `[1,1,1,1]` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Shape(format!("item() on tensor with dims {}", self.dims)));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        RealTensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &RealTensor4) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &RealTensor4) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of sample `n` as a `[1, C, H, W]` tensor.
    pub fn sample(&self, n: usize) -> RealTensor4 {
        let per = self.dims.c() * self.dims.plane();
        RealTensor4 {
            dims: Dims::new(1, self.dims.c(), self.dims.h(), self.dims.w()),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Stack `[1, C, H, W]` tensors along the batch axis.
    pub fn stack(items: &[RealTensor4]) -> Result<RealTensor4> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("stack of zero tensors".into()))?;
        let d = first.dims;
        let mut data = Vec::with_capacity(d.numel() * items.len());
        let mut n = 0;
        for t in items {
            if t.dims.0[1..] != d.0[1..] {
                return Err(Error::Shape(format!("stack: dims {} vs {}", t.dims, d)));
            }
            data.extend_from_slice(&t.data);
            n += t.dims.n();
        }
        RealTensor4::from_vec([n, d.c(), d.h(), d.w()], data)
    }
}

impl Index<[usize; 4]> for RealTensor4 {
    type Output = f64;
    fn index(&self, i: [usize; 4]) -> &f64 {
        &self.data[self.dims.offset(i[0], i[1], i[2], i[3])]
    }
}

impl IndexMut<[usize; 4]> for RealTensor4 {
    fn index_mut(&mut self, i: [usize; 4]) -> &mut f64 {
        let o = self.dims.offset(i[0], i[1], i[2], i[3]);
        &mut self.data[o]
    }
}

impl fmt::Debug for RealTensor4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RealTensor4 {} ", self.dims)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "[{} elements]", self.data.len())
        }
    }
}

/// A complex scalar as a `(re, im)` pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    #[inline]
    pub const fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    /// `e^{j theta}`
    #[inline]
    pub fn cis(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Complex { re: c, im: s }
    }

    #[inline]
    pub fn conj(self) -> Self {
        Complex::new(self.re, -self.im)
    }

    #[inline]
    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    #[inline]
    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    #[inline]
    pub fn scale(self, k: f64) -> Self {
        Complex::new(self.re * k, self.im * k)
    }
}

impl std::ops::Add for Complex {
    type Output = Complex;
    #[inline]
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }
}

impl std::ops::AddAssign for Complex {
    #[inline]
    fn add_assign(&mut self, o: Complex) {
        self.re += o.re;
        self.im += o.im;
    }
}

impl std::ops::Sub for Complex {
    type Output = Complex;
    #[inline]
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
}

impl std::ops::Mul for Complex {
    type Output = Complex;
    #[inline]
    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

/// Dense complex tensor, same layout as [`RealTensor4`].
#[derive(Clone, PartialEq)]
pub struct ComplexTensor4 {
    dims: Dims,
    data: Vec<Complex>,
}

impl ComplexTensor4 {
    pub fn zeros(dims: impl Into<Dims>) -> Self {
        let dims = dims.into();
        ComplexTensor4 {
            dims,
            data: vec![Complex::ZERO; dims.numel()],
        }
    }

    pub fn from_vec(dims: impl Into<Dims>, data: Vec<Complex>) -> Result<Self> {
        let dims = dims.into();
        if data.len() != dims.numel() {
            return Err(Error::Shape(format!(
                "complex data length {} does not match dims {dims}",
                data.len()
            )));
        }
        Ok(ComplexTensor4 { dims, data })
    }

    pub fn from_real(x: &RealTensor4) -> Self {
        ComplexTensor4 {
            dims: x.dims(),
            data: x.data().iter().map(|&re| Complex::new(re, 0.0)).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[Complex] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> Complex {
        self.data[self.dims.offset(n, c, h, w)]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[Complex] {
        let p = self.dims.plane();
        let start = (n * self.dims.c() + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [Complex] {
        let p = self.dims.plane();
        let start = (n * self.dims.c() + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn real(&self) -> RealTensor4 {
        RealTensor4 {
            dims: self.dims,
            data: self.data.iter().map(|z| z.re).collect(),
        }
    }

    pub fn imag(&self) -> RealTensor4 {
        RealTensor4 {
            dims: self.dims,
            data: self.data.iter().map(|z| z.im).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &ComplexTensor4) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(0.0, f64::max)
    }

    pub fn add_assign(&mut self, other: &ComplexTensor4) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

impl fmt::Debug for ComplexTensor4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexTensor4 {} [{} elements]", self.dims, self.data.len())
    }
}

/// Integer class-index masks `[N, H, W]`.
#[derive(Clone, PartialEq, Eq)]
pub struct LabelMap {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn zeros(n: usize, h: usize, w: usize) -> Self {
        LabelMap {
            n,
            h,
            w,
            data: vec![0; n * h * w],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != n * h * w {
            return Err(Error::Shape(format!(
                "label data length {} does not match [{n}, {h}, {w}]",
                data.len()
            )));
        }
        Ok(LabelMap { n, h, w, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, n: usize, h: usize, w: usize) -> u8 {
        self.data[(n * self.h + h) * self.w + w]
    }

    /// Mask of sample `n` as a row-major `[H, W]` slice.
    pub fn mask(&self, n: usize) -> &[u8] {
        let p = self.h * self.w;
        &self.data[n * p..(n + 1) * p]
    }

    pub fn max_label(&self) -> Option<u8> {
        self.data.iter().copied().max()
    }

    /// Concatenate along the batch axis.
    pub fn stack(items: &[LabelMap]) -> Result<LabelMap> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("stack of zero label maps".into()))?;
        let mut data = Vec::new();
        let mut n = 0;
        for l in items {
            if (l.h, l.w) != (first.h, first.w) {
                return Err(Error::Shape(format!(
                    "label stack: {}x{} vs {}x{}",
                    l.h, l.w, first.h, first.w
                )));
            }
            data.extend_from_slice(&l.data);
            n += l.n;
        }
        LabelMap::from_vec(n, first.h, first.w, data)
    }

    /// Number of pixels holding each class `0..classes`.
    pub fn histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes.max(self.max_label().map_or(0, |m| m as usize + 1))];
        for &v in &self.data {
            h[v as usize] += 1;
        }
        h
    }
}

impl fmt::Debug for LabelMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LabelMap [{}, {}, {}]", self.n, self.h, self.w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(RealTensor4::from_vec([1, 2, 2, 2], vec![0.0; 8]).is_ok());
        let err = RealTensor4::from_vec([1, 2, 2, 2], vec![0.0; 7]).unwrap_err();
        assert!(err.to_string().contains("[1, 2, 2, 2]"));
    }

    #[test]
    fn row_major_offsets() {
        let t = RealTensor4::from_fn([2, 3, 4, 5], |[n, c, h, w]| {
            (n * 1000 + c * 100 + h * 10 + w) as f64
        });
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.data()[t.dims().offset(1, 0, 2, 1)], 1021.0);
        assert_eq!(t.plane(1, 1)[0], 1100.0);
    }

    #[test]
    fn stack_and_sample_invert() {
        let t = RealTensor4::from_fn([3, 2, 2, 2], |[n, c, h, w]| (n + c + h * w) as f64);
        let parts: Vec<_> = (0..3).map(|n| t.sample(n)).collect();
        assert_eq!(RealTensor4::stack(&parts).unwrap(), t);
    }

    #[test]
    fn complex_arithmetic() {
        let a = Complex::new(1.0, 2.0);
        let b = Complex::new(3.0, -1.0);
        assert_eq!(a * b, Complex::new(5.0, 5.0));
        assert_eq!(a.conj(), Complex::new(1.0, -2.0));
        assert_eq!(a.norm_sqr(), 5.0);
    }
}
