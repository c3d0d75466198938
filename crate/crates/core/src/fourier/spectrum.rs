//! 8-bit renderings of spectra, masks and filters for inspection.

use std::path::Path;

use crate::data::pnm;
use crate::error::Result;
use crate::tensor::Complex;

/// `ln(1 + |v|)` scaled so the largest entry maps to 255.
pub fn log_magnitude_u8(magnitudes: &[f64]) -> Vec<u8> {
    let logs: Vec<f64> = magnitudes.iter().map(|m| m.abs().ln_1p()).collect();
    let max = logs.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 || !max.is_finite() {
        return vec![0; logs.len()];
    }
    logs.iter().map(|v| (v / max * 255.0).round().clamp(0.0, 255.0) as u8).collect()
}

/// Binary mask as 0 / 255.
pub fn mask_u8(mask: &[f64]) -> Vec<u8> {
    mask.iter().map(|&v| if v != 0.0 { 255 } else { 0 }).collect()
}

/// Centered-order log-magnitude image of a natural-order spectrum plane.
pub fn spectrum_u8(plane: &[Complex], h: usize, w: usize) -> Vec<u8> {
    let mags: Vec<f64> = plane.iter().map(|z| z.abs()).collect();
    log_magnitude_u8(&super::shift(&mags, h, w))
}

pub fn write_gray(path: &Path, h: usize, w: usize, pixels: &[u8]) -> Result<()> {
    pnm::write_pgm(path, w, h, pixels)
}
