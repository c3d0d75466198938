//! Overlap and boundary-distance segmentation metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::SegmentationSample;
use crate::error::{Error, Result};
use crate::network::Model;
use crate::tensor::{LabelMap, RealTensor4};

fn check_len(pred: &[bool], gt: &[bool]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("mask sizes differ: {} vs {}", pred.len(), gt.len())));
    }
    Ok(())
}

fn counts(pred: &[bool], gt: &[bool]) -> (usize, usize, usize) {
    let (mut p, mut g, mut both) = (0, 0, 0);
    for (&a, &b) in pred.iter().zip(gt) {
        p += a as usize;
        g += b as usize;
        both += (a && b) as usize;
    }
    (p, g, both)
}

/// `2|P & G| / (|P| + |G|)`; two empty masks score 1.
pub fn dsc(pred: &[bool], gt: &[bool]) -> Result<f64> {
    check_len(pred, gt)?;
    let (p, g, both) = counts(pred, gt);
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + g) as f64)
}

/// `|P & G| / |P | G|`; two empty masks score 1.
pub fn iou(pred: &[bool], gt: &[bool]) -> Result<f64> {
    check_len(pred, gt)?;
    let (p, g, both) = counts(pred, gt);
    let union = p + g - both;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(both as f64 / union as f64)
}

/// Foreground pixels with at least one background 4-neighbour; pixels
/// outside the image count as background.
pub fn boundary(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            if !mask[r * w + c] {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || !mask[(r - 1) * w + c]
                || !mask[(r + 1) * w + c]
                || !mask[r * w + c - 1]
                || !mask[r * w + c + 1];
            out[r * w + c] = edge;
        }
    }
    out
}

const FAR: f64 = 1e20;

/// One-dimensional squared distance transform by lower envelope of parabolas.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * q - 2 * p) as f64;
            if s > z[k] {
                break;
            }
            k -= 1;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Squared Euclidean distance from every pixel to the nearest `true` pixel.
fn squared_distance_map(targets: &[bool], h: usize, w: usize) -> Vec<f64> {
    let n = h.max(w);
    let (mut f, mut out, mut v, mut z) = (vec![0.0; n], vec![0.0; n], vec![0usize; n], vec![0.0; n + 1]);
    let mut grid: Vec<f64> = targets.iter().map(|&t| if t { 0.0 } else { FAR }).collect();
    for c in 0..w {
        for r in 0..h {
            f[r] = grid[r * w + c];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    for r in 0..h {
        f[..w].copy_from_slice(&grid[r * w..(r + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[r * w..(r + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

/// Percentile `q` in `[0, 100]` with linear interpolation between order
/// statistics. Sorts `values` in place.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty set");
    values.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// 95th percentile of the symmetric boundary-to-boundary distances, in pixels.
/// Two empty masks give 0; exactly one empty mask gives the image diagonal.
pub fn hd95(pred: &[bool], gt: &[bool], h: usize, w: usize) -> Result<f64> {
    check_len(pred, gt)?;
    if pred.len() != h * w {
        return Err(Error::Shape(format!("masks hold {} pixels, expected {h}x{w}", pred.len())));
    }
    let (pe, ge) = (!pred.iter().any(|&v| v), !gt.iter().any(|&v| v));
    match (pe, ge) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(((h * h + w * w) as f64).sqrt()),
        _ => {}
    }
    let pb = boundary(pred, h, w);
    let gb = boundary(gt, h, w);
    let to_g = squared_distance_map(&gb, h, w);
    let to_p = squared_distance_map(&pb, h, w);
    let mut d = Vec::new();
    for i in 0..h * w {
        if pb[i] {
            d.push(to_g[i].sqrt());
        }
        if gb[i] {
            d.push(to_p[i].sqrt());
        }
    }
    Ok(percentile(&mut d, 95.0))
}

/// Per-pixel argmax over the class axis; ties go to the lower class index.
pub fn argmax_labels(logits: &RealTensor4) -> Result<LabelMap> {
    let d = logits.dims();
    if d.c() > 256 {
        return Err(Error::InvalidArgument(format!("{} classes do not fit in u8 labels", d.c())));
    }
    let mut out = LabelMap::zeros(d.n(), d.h(), d.w());
    let plane = d.plane();
    for n in 0..d.n() {
        let dst = &mut out.data_mut()[n * plane..(n + 1) * plane];
        for (p, label) in dst.iter_mut().enumerate() {
            let mut best = (0usize, f64::NEG_INFINITY);
            for c in 0..d.c() {
                let v = logits.plane(n, c)[p];
                if v > best.1 {
                    best = (c, v);
                }
            }
            *label = best.0 as u8;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub dsc: f64,
    pub iou: f64,
    pub hd95: f64,
}

/// Per-foreground-class metrics averaged over images, plus their means.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub images: usize,
    pub classes: Vec<ClassMetrics>,
    pub mean_dsc: f64,
    pub mean_iou: f64,
    pub mean_hd95: f64,
}

impl MetricReport {
    /// Score predicted label maps against ground truth for classes `1..n_classes`.
    pub fn from_labels(preds: &[LabelMap], gts: &[LabelMap], n_classes: usize) -> Result<Self> {
        if preds.is_empty() {
            return Err(Error::Data("cannot evaluate an empty split".into()));
        }
        if preds.len() != gts.len() {
            return Err(Error::Shape(format!("{} predictions for {} labels", preds.len(), gts.len())));
        }
        let mut classes: Vec<ClassMetrics> = (1..n_classes)
            .map(|class| ClassMetrics {
                class,
                dsc: 0.0,
                iou: 0.0,
                hd95: 0.0,
            })
            .collect();
        let mut images = 0;
        for (p, g) in preds.iter().zip(gts) {
            if (p.n(), p.h(), p.w()) != (g.n(), g.h(), g.w()) {
                return Err(Error::Shape("prediction and label dims differ".into()));
            }
            for n in 0..p.n() {
                images += 1;
                let (pm, gm) = (p.mask(n), g.mask(n));
                for m in classes.iter_mut() {
                    let k = m.class as u8;
                    let pk: Vec<bool> = pm.iter().map(|&v| v == k).collect();
                    let gk: Vec<bool> = gm.iter().map(|&v| v == k).collect();
                    m.dsc += dsc(&pk, &gk)?;
                    m.iou += iou(&pk, &gk)?;
                    m.hd95 += hd95(&pk, &gk, p.h(), p.w())?;
                }
            }
        }
        for m in classes.iter_mut() {
            m.dsc /= images as f64;
            m.iou /= images as f64;
            m.hd95 /= images as f64;
        }
        let k = classes.len() as f64;
        Ok(MetricReport {
            images,
            mean_dsc: classes.iter().map(|m| m.dsc).sum::<f64>() / k,
            mean_iou: classes.iter().map(|m| m.iou).sum::<f64>() / k,
            mean_hd95: classes.iter().map(|m| m.hd95).sum::<f64>() / k,
            classes,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("class\tdsc\tiou\thd95\n");
        for m in &self.classes {
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}\t{:.6}", m.class, m.dsc, m.iou, m.hd95);
        }
        let _ = writeln!(s, "mean\t{:.6}\t{:.6}\t{:.6}", self.mean_dsc, self.mean_iou, self.mean_hd95);
        s
    }

    pub fn to_key_value(&self) -> String {
        let mut s = format!("images: {}\n", self.images);
        for m in &self.classes {
            let _ = writeln!(s, "class_{}_dsc: {:.6}", m.class, m.dsc);
            let _ = writeln!(s, "class_{}_iou: {:.6}", m.class, m.iou);
            let _ = writeln!(s, "class_{}_hd95: {:.6}", m.class, m.hd95);
        }
        let _ = writeln!(s, "mean_dsc: {:.6}", self.mean_dsc);
        let _ = writeln!(s, "mean_iou: {:.6}", self.mean_iou);
        let _ = writeln!(s, "mean_hd95: {:.6}", self.mean_hd95);
        s
    }

    /// Write `<stem>.tsv` and `<stem>.txt` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let tsv = dir.join(format!("{stem}.tsv"));
        fs::write(&tsv, self.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
        let kv = dir.join(format!("{stem}.txt"));
        fs::write(&kv, self.to_key_value()).map_err(|e| Error::io(&kv, e))
    }
}

/// Predicted label maps for `samples`, run in batches without a tape.
pub fn predict_labels(model: &Model, samples: &[&SegmentationSample], batch: usize) -> Result<Vec<LabelMap>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let images: Vec<RealTensor4> = chunk.iter().map(|s| s.image.clone()).collect();
        let logits = model.predict(&RealTensor4::stack(&images)?)?;
        let labels = argmax_labels(&logits)?;
        for n in 0..labels.n() {
            out.push(LabelMap::from_vec(1, labels.h(), labels.w(), labels.mask(n).to_vec())?);
        }
    }
    Ok(out)
}

/// Evaluate a model on `samples` over its foreground classes.
pub fn evaluate(model: &Model, samples: &[&SegmentationSample]) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let preds = predict_labels(model, samples, 4)?;
    let gts: Vec<LabelMap> = samples.iter().map(|s| s.label.clone()).collect();
    MetricReport::from_labels(&preds, &gts, model.config.n_classes)
}
