//! Paired image/label augmentation.

use rand::Rng;

use crate::data::SegmentationSample;
use crate::tensor::{LabelMap, RealTensor4};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub hflip: f64,
    pub vflip: f64,
    pub rot90: f64,
    /// When set, rotate by a uniform angle in `[-max, max]` degrees instead of
    /// a multiple of 90 degrees.
    pub max_angle: Option<f64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip: 0.5,
            vflip: 0.5,
            rot90: 0.5,
            max_angle: None,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            hflip: 0.0,
            vflip: 0.0,
            rot90: 0.0,
            max_angle: None,
        }
    }
}

/// Spatial permutation or resampling applied to every plane of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    HFlip,
    VFlip,
    /// Counter-clockwise quarter turns.
    Rot90(u8),
    /// Counter-clockwise rotation in degrees about the image center.
    Rotate(f64),
}

/// Source pixel for output `(r, c)` under `t`; `None` lands outside the image.
fn source(t: Transform, r: usize, c: usize, h: usize, w: usize) -> Option<(usize, usize)> {
    match t {
        Transform::HFlip => Some((r, w - 1 - c)),
        Transform::VFlip => Some((h - 1 - r, c)),
        Transform::Rot90(k) => Some(match k % 4 {
            0 => (r, c),
            1 => (c, w - 1 - r),
            2 => (h - 1 - r, w - 1 - c),
            _ => (h - 1 - c, r),
        }),
        Transform::Rotate(_) => None,
    }
}

fn rotate_coords(deg: f64, r: usize, c: usize, h: usize, w: usize) -> (f64, f64) {
    let (s, co) = deg.to_radians().sin_cos();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let (y, x) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
    // inverse rotation maps output pixel centers back into the source
    let sx = co * x - s * y;
    let sy = s * x + co * y;
    (sy + cy - 0.5, sx + cx - 0.5)
}

pub fn transform_image(x: &RealTensor4, t: Transform) -> RealTensor4 {
    let d = x.dims();
    let (h, w) = (d.h(), d.w());
    let out_dims = match t {
        Transform::Rot90(k) if k % 2 == 1 => [d.n(), d.c(), w, h],
        _ => d.0,
    };
    let (oh, ow) = (out_dims[2], out_dims[3]);
    RealTensor4::from_fn(out_dims, |[n, ch, r, c]| match t {
        Transform::Rotate(deg) => {
            let (sy, sx) = rotate_coords(deg, r, c, oh, ow);
            let (y0, x0) = (sy.floor(), sx.floor());
            let (ty, tx) = (sy - y0, sx - x0);
            let plane = x.plane(n, ch);
            let at = |yy: f64, xx: f64| {
                if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                    0.0
                } else {
                    plane[yy as usize * w + xx as usize]
                }
            };
            (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x0 + 1.0))
                + ty * ((1.0 - tx) * at(y0 + 1.0, x0) + tx * at(y0 + 1.0, x0 + 1.0))
        }
        _ => {
            let (sr, sc) = source(t, r, c, oh, ow).expect("permutation transforms always map inside");
            x.at(n, ch, sr, sc)
        }
    })
}

pub fn transform_label(l: &LabelMap, t: Transform) -> LabelMap {
    let (h, w) = (l.h(), l.w());
    let (oh, ow) = match t {
        Transform::Rot90(k) if k % 2 == 1 => (w, h),
        _ => (h, w),
    };
    let mut data = Vec::with_capacity(l.n() * oh * ow);
    for n in 0..l.n() {
        for r in 0..oh {
            for c in 0..ow {
                let v = match t {
                    Transform::Rotate(deg) => {
                        let (sy, sx) = rotate_coords(deg, r, c, oh, ow);
                        let (yy, xx) = (sy.round(), sx.round());
                        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                            0
                        } else {
                            l.at(n, yy as usize, xx as usize)
                        }
                    }
                    _ => {
                        let (sr, sc) = source(t, r, c, oh, ow).expect("permutation transforms always map inside");
                        l.at(n, sr, sc)
                    }
                };
                data.push(v);
            }
        }
    }
    LabelMap::from_vec(l.n(), oh, ow, data).expect("dims computed above")
}

/// Draw the transforms for one sample. Every call consumes the same number
/// of random values. Quarter turns on non-square images are restricted to
/// half turns so dims are preserved.
pub fn draw(cfg: &AugmentConfig, h: usize, w: usize, rng: &mut impl Rng) -> Vec<Transform> {
    let (uh, uv, ur) = (rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
    let k = rng.gen_range(1..=3u8);
    let angle = rng.gen::<f64>();
    let mut out = Vec::new();
    if uh < cfg.hflip {
        out.push(Transform::HFlip);
    }
    if uv < cfg.vflip {
        out.push(Transform::VFlip);
    }
    if ur < cfg.rot90 {
        match cfg.max_angle {
            Some(max) => out.push(Transform::Rotate((2.0 * angle - 1.0) * max)),
            None => out.push(Transform::Rot90(if h == w { k } else { 2 })),
        }
    }
    out
}

/// Apply one random draw of `cfg` to image and label alike.
pub fn augment(sample: &SegmentationSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> SegmentationSample {
    let d = sample.image.dims();
    let mut image = sample.image.clone();
    let mut label = sample.label.clone();
    for t in draw(cfg, d.h(), d.w(), rng) {
        image = transform_image(&image, t);
        label = transform_label(&label, t);
    }
    SegmentationSample {
        id: sample.id.clone(),
        image,
        label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(h: usize, w: usize) -> SegmentationSample {
        let image = RealTensor4::from_fn([1, 2, h, w], |[_, c, r, q]| (c * 100 + r * w + q) as f64);
        let label = LabelMap::from_vec(1, h, w, (0..h * w).map(|i| (i % 3) as u8).collect()).unwrap();
        SegmentationSample::new("s", image, label).unwrap()
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let s = sample(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let a = augment(&s, &AugmentConfig::none(), &mut rng);
            assert_eq!(a.image, s.image);
            assert_eq!(a.label, s.label);
        }
    }

    #[test]
    fn group_laws() {
        let s = sample(5, 5);
        let twice = transform_image(&transform_image(&s.image, Transform::HFlip), Transform::HFlip);
        assert_eq!(twice, s.image);
        let mut x = s.image.clone();
        let mut l = s.label.clone();
        for _ in 0..4 {
            x = transform_image(&x, Transform::Rot90(1));
            l = transform_label(&l, Transform::Rot90(1));
        }
        assert_eq!((x, l), (s.image.clone(), s.label.clone()));
        let r1 = transform_image(&s.image, Transform::Rot90(1));
        assert_eq!(transform_image(&r1, Transform::Rot90(3)), s.image);
        // quarter turn moves the top-right corner to the top-left
        assert_eq!(r1.at(0, 0, 0, 0), s.image.at(0, 0, 0, 4));
    }

    #[test]
    fn image_and_label_move_together_and_histograms_hold() {
        let s = sample(6, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = augment(&s, &AugmentConfig::default(), &mut rng);
            assert_eq!(a.label.histogram(3), s.label.histogram(3));
            for r in 0..6 {
                for c in 0..6 {
                    let v = a.image.at(0, 0, r, c) as usize;
                    assert_eq!(a.label.at(0, r, c), s.label.data()[v] );
                }
            }
        }
    }

    #[test]
    fn non_square_keeps_dims() {
        let s = sample(4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = augment(&s, &AugmentConfig::default(), &mut rng);
            assert_eq!(a.image.dims(), s.image.dims());
        }
    }

    #[test]
    fn arbitrary_angle_zero_is_identity() {
        let s = sample(5, 5);
        assert!(transform_image(&s.image, Transform::Rotate(0.0)).max_abs_diff(&s.image) < 1e-12);
        assert_eq!(transform_label(&s.label, Transform::Rotate(0.0)), s.label);
        let q = transform_label(&s.label, Transform::Rotate(90.0));
        assert_eq!(q, transform_label(&s.label, Transform::Rot90(1)));
    }
}
