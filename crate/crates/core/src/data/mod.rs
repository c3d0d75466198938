//! Sample loading, dataset manifests and synthetic data.

pub mod manifest;
pub mod pnm;
pub mod synth;

use std::path::{Path, PathBuf};

pub use manifest::{split, DatasetManifest, ManifestEntry, Split};
pub use synth::{synth_generate, Ellipse, SynthSpec, SynthSummary};

use crate::error::{Error, Result};
use crate::ops::resample::resize_bilinear;
use crate::tensor::{LabelMap, RealTensor4};

/// An image tensor `[1, C, H, W]` in `[0, 1]` with its class-index mask.
#[derive(Clone, Debug)]
pub struct SegmentationSample {
    pub id: String,
    pub image: RealTensor4,
    pub label: LabelMap,
}

impl SegmentationSample {
    pub fn new(id: impl Into<String>, image: RealTensor4, label: LabelMap) -> Result<Self> {
        let d = image.dims();
        if d.n() != 1 || label.n() != 1 || d.h() != label.h() || d.w() != label.w() {
            return Err(Error::Shape(format!(
                "sample image {d} and label [{}, {}, {}] are not aligned",
                label.n(),
                label.h(),
                label.w()
            )));
        }
        Ok(SegmentationSample {
            id: id.into(),
            image,
            label,
        })
    }
}

/// Load an 8-bit PGM/PPM as `[1, channels, h, w]`, scaled by `1/255`.
///
/// Gray sources are replicated when more channels are requested; color
/// sources are averaged when a single channel is requested. Images whose
/// size differs from `(h, w)` are resized bilinearly.
pub fn load_image(path: &Path, channels: usize, h: usize, w: usize) -> Result<RealTensor4> {
    let img = pnm::read(path)?;
    let (iw, ih, ic) = (img.width, img.height, img.channels);
    let src = RealTensor4::from_fn([1, channels, ih, iw], |[_, c, y, x]| {
        let p = y * iw + x;
        let v = match (ic, channels) {
            (1, _) => img.pixels[p] as f64,
            (3, 1) => {
                let s: u32 = (0..3).map(|k| img.pixels[p * 3 + k] as u32).sum();
                s as f64 / 3.0
            }
            (3, _) => img.pixels[p * 3 + (c % 3)] as f64,
            _ => unreachable!("pnm decodes 1 or 3 channels"),
        };
        v / 255.0
    });
    if (ih, iw) == (h, w) {
        Ok(src)
    } else {
        Ok(resize_bilinear(&src, h, w))
    }
}

/// Write `[1, C, H, W]` values in `[0, 1]` as PGM (1 channel) or PPM (3 channels).
pub fn save_image(path: &Path, image: &RealTensor4) -> Result<()> {
    let d = image.dims();
    let to_u8 = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    match d.c() {
        1 => {
            let px: Vec<u8> = image.plane(0, 0).iter().map(|&v| to_u8(v)).collect();
            pnm::write_pgm(path, d.w(), d.h(), &px)
        }
        3 => {
            let mut px = Vec::with_capacity(3 * d.plane());
            for p in 0..d.plane() {
                for c in 0..3 {
                    px.push(to_u8(image.plane(0, c)[p]));
                }
            }
            pnm::write_ppm(path, d.w(), d.h(), &px)
        }
        c => Err(Error::InvalidArgument(format!("cannot save a {c}-channel image"))),
    }
}

/// Nearest-neighbour source index for output `i` when resizing `src -> dst`.
fn nearest(i: usize, src: usize, dst: usize) -> usize {
    (((i as f64 + 0.5) * src as f64 / dst as f64).floor() as usize).min(src - 1)
}

/// Load a class-index PGM as a `[1, h, w]` label map. Pixel values are the
/// class indices; values `>= classes` are rejected. Resizing uses nearest
/// neighbour so class indices are never blended.
pub fn load_label(path: &Path, classes: usize, h: usize, w: usize) -> Result<LabelMap> {
    let img = pnm::read(path)?;
    if img.channels != 1 {
        return Err(Error::ImageHeader {
            path: path.to_path_buf(),
            detail: "label masks must be single-channel PGM".into(),
        });
    }
    let (iw, ih) = (img.width, img.height);
    if let Some(p) = img.pixels.iter().position(|&v| v as usize >= classes) {
        return Err(Error::LabelRange {
            path: path.to_path_buf(),
            row: p / iw,
            col: p % iw,
            value: img.pixels[p] as u32,
            classes,
        });
    }
    let data = if (ih, iw) == (h, w) {
        img.pixels
    } else {
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            let sy = nearest(y, ih, h);
            for x in 0..w {
                out.push(img.pixels[sy * iw + nearest(x, iw, w)]);
            }
        }
        out
    };
    LabelMap::from_vec(1, h, w, data)
}

pub fn save_label(path: &Path, label: &LabelMap) -> Result<()> {
    pnm::write_pgm(path, label.w(), label.h(), label.mask(0))
}

/// Samples of a manifest loaded into memory, tagged by split.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<(Split, SegmentationSample)>,
}

impl Dataset {
    /// Load every manifest entry; relative paths resolve against `root`.
    pub fn load(
        manifest: &DatasetManifest,
        root: &Path,
        channels: usize,
        classes: usize,
        h: usize,
        w: usize,
    ) -> Result<Self> {
        let resolve = |p: &Path| -> PathBuf {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                root.join(p)
            }
        };
        let mut samples = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let image = load_image(&resolve(&e.image), channels, h, w)?;
            let label = load_label(&resolve(&e.label), classes, h, w)?;
            samples.push((e.split, SegmentationSample::new(e.id.clone(), image, label)?));
        }
        Ok(Dataset { samples })
    }

    /// Load `manifest.tsv` from a dataset directory.
    pub fn load_dir(dir: &Path, channels: usize, classes: usize, h: usize, w: usize) -> Result<Self> {
        let manifest = DatasetManifest::read(&dir.join(manifest::MANIFEST_FILE))?;
        Dataset::load(&manifest, dir, channels, classes, h, w)
    }

    pub fn split(&self, which: Split) -> Vec<&SegmentationSample> {
        self.samples.iter().filter(|(s, _)| *s == which).map(|(_, x)| x).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_scaling_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        pnm::write_pgm(&path, 2, 2, &[0, 255, 128, 64]).unwrap();
        let t = load_image(&path, 1, 2, 2).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert!((t.data()[2] - 0.50196).abs() < 1e-5);
        assert!((t.data()[3] - 0.25098).abs() < 1e-5);
        let t3 = load_image(&path, 3, 2, 2).unwrap();
        assert_eq!(t3.plane(0, 2), t.plane(0, 0));
    }

    #[test]
    fn image_save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.ppm");
        let px: Vec<u8> = (0..48).map(|i| (i * 5) as u8).collect();
        pnm::write_ppm(&path, 4, 4, &px).unwrap();
        let a = load_image(&path, 3, 4, 4).unwrap();
        let out = dir.path().join("again.ppm");
        save_image(&out, &a).unwrap();
        assert_eq!(load_image(&out, 3, 4, 4).unwrap(), a);
    }

    #[test]
    fn label_range_names_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.pgm");
        pnm::write_pgm(&path, 3, 2, &[0, 1, 0, 1, 0, 2]).unwrap();
        match load_label(&path, 2, 2, 3) {
            Err(Error::LabelRange { row, col, value, .. }) => assert_eq!((row, col, value), (1, 2, 2)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(load_label(&path, 3, 2, 3).is_ok());
    }

    #[test]
    fn resize_uses_bilinear_for_images_nearest_for_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.pgm");
        pnm::write_pgm(&path, 2, 2, &[0, 1, 1, 0]).unwrap();
        let l = load_label(&path, 2, 4, 4).unwrap();
        assert!(l.data().iter().all(|&v| v <= 1));
        assert_eq!(l.mask(0), &[0, 0, 1, 1, 0, 0, 1, 1, 1, 1, 0, 0, 1, 1, 0, 0]);
        let img = load_image(&path, 1, 4, 4).unwrap();
        assert!(img.data().iter().any(|&v| v > 0.0 && v < 1.0 / 255.0));
    }
}
