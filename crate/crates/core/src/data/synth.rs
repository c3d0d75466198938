//! Synthetic segmentation data: textured dark background with non-overlapping
//! bright ellipses, one class per ellipse.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, ManifestEntry, Split, MANIFEST_FILE};
use super::pnm;
use crate::error::{Error, Result};

const PLACEMENT_TRIES: usize = 64;
const SAMPLE_RESTARTS: usize = 16;
const NOISE_CELL: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub count: usize,
    pub classes: usize,
    pub h: usize,
    pub w: usize,
    pub seed: u64,
}

/// A filled ellipse in pixel coordinates; pixel `(r, c)` belongs to it when its
/// center `(r + 0.5, c + 0.5)` lies inside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub class: u8,
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
    pub theta: f64,
}

impl Ellipse {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        let dy = r as f64 + 0.5 - self.cy;
        let dx = c as f64 + 0.5 - self.cx;
        let (s, co) = self.theta.sin_cos();
        let u = dx * co + dy * s;
        let v = -dx * s + dy * co;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

#[derive(Clone, Debug)]
pub struct SynthSummary {
    pub manifest: DatasetManifest,
    /// Ellipses drawn into each sample, in manifest order.
    pub ellipses: Vec<Vec<Ellipse>>,
}

struct Sample {
    image: Vec<u8>,
    label: Vec<u8>,
    ellipses: Vec<Ellipse>,
}

fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let gh = h / NOISE_CELL + 2;
    let gw = w / NOISE_CELL + 2;
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.gen_range(0.05..0.25)).collect();
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let fy = r as f64 / NOISE_CELL as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for c in 0..w {
            let fx = c as f64 / NOISE_CELL as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let at = |y: usize, x: usize| lattice[y * gw + x];
            out[r * w + c] = (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x0 + 1))
                + ty * ((1.0 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
        }
    }
    out
}

fn try_sample(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Option<Sample> {
    let (h, w) = (spec.h, spec.w);
    let mut intensity = value_noise(rng, h, w);
    let mut label = vec![0u8; h * w];
    let mut ellipses = Vec::new();
    let m = h.min(w) as f64;
    let (rmin, rmax) = ((m / 8.0).max(1.5), (m / 4.0).max(2.0));
    for class in 1..spec.classes {
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let ry = rng.gen_range(rmin..=rmax);
            let rx = rng.gen_range(rmin..=rmax);
            let reach = ry.max(rx);
            if 2.0 * reach >= m {
                continue;
            }
            let e = Ellipse {
                class: class as u8,
                cy: rng.gen_range(reach..h as f64 - reach),
                cx: rng.gen_range(reach..w as f64 - reach),
                ry,
                rx,
                theta: rng.gen_range(0.0..std::f64::consts::PI),
            };
            let pixels: Vec<usize> = (0..h * w).filter(|&p| e.contains(p / w, p % w)).collect();
            if !pixels.is_empty() && pixels.iter().all(|&p| label[p] == 0) {
                placed = Some((e, pixels));
                break;
            }
        }
        let (e, pixels) = placed?;
        let band = 0.35 + 0.55 * class as f64 / (spec.classes - 1) as f64;
        let offset = rng.gen_range(-0.04..0.04);
        for p in pixels {
            label[p] = class as u8;
            intensity[p] = band + offset;
        }
        ellipses.push(e);
    }
    let image = intensity
        .iter()
        .map(|v| ((v + rng.gen_range(-0.04..0.04)) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    Some(Sample { image, label, ellipses })
}

/// Write `count` samples under `out` (`images/`, `labels/`, `manifest.tsv`,
/// every entry tagged `train`). Output is byte-identical for a given spec.
pub fn synth_generate(out: &Path, spec: &SynthSpec) -> Result<SynthSummary> {
    if !(2..=4).contains(&spec.classes) {
        return Err(Error::InvalidArgument(format!("synthetic data supports 2..=4 classes, got {}", spec.classes)));
    }
    if spec.count == 0 {
        return Err(Error::InvalidArgument("synthetic sample count must be at least 1".into()));
    }
    if spec.h < 8 || spec.w < 8 {
        return Err(Error::InvalidArgument(format!("synthetic images must be at least 8x8, got {}x{}", spec.h, spec.w)));
    }
    for sub in ["images", "labels"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut manifest = DatasetManifest::default();
    let mut all = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let sample = (0..SAMPLE_RESTARTS)
            .find_map(|_| try_sample(&mut rng, spec))
            .ok_or_else(|| Error::Data(format!("could not place {} ellipses in sample {i}", spec.classes - 1)))?;
        let id = format!("synth_{i:05}");
        let image = PathBuf::from("images").join(format!("{id}.pgm"));
        let label = PathBuf::from("labels").join(format!("{id}.pgm"));
        pnm::write_pgm(&out.join(&image), spec.w, spec.h, &sample.image)?;
        pnm::write_pgm(&out.join(&label), spec.w, spec.h, &sample.label)?;
        manifest.entries.push(ManifestEntry {
            id,
            image,
            label,
            split: Split::Train,
        });
        all.push(sample.ellipses);
    }
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(SynthSummary { manifest, ellipses: all })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(classes: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            count: 3,
            classes,
            h: 32,
            w: 32,
            seed,
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synth_generate(a.path(), &spec(3, 9)).unwrap();
        synth_generate(b.path(), &spec(3, 9)).unwrap();
        for rel in ["manifest.tsv", "images/synth_00002.pgm", "labels/synth_00001.pgm"] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
        }
    }

    #[test]
    fn labels_in_range_and_ellipses_disjoint() {
        for classes in 2..=4 {
            let dir = tempfile::tempdir().unwrap();
            let s = synth_generate(dir.path(), &spec(classes, 1)).unwrap();
            for (entry, ells) in s.manifest.entries.iter().zip(&s.ellipses) {
                assert_eq!(ells.len(), classes - 1);
                let img = pnm::read(&dir.path().join(&entry.label)).unwrap();
                assert!(img.pixels.iter().all(|&v| (v as usize) < classes));
                for k in 1..classes {
                    assert!(img.pixels.contains(&(k as u8)));
                }
            }
        }
    }

    #[test]
    fn bad_specs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(synth_generate(dir.path(), &spec(5, 0)).is_err());
        assert!(synth_generate(dir.path(), &SynthSpec { count: 0, ..spec(2, 0) }).is_err());
    }
}
