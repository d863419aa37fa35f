//! Distortion and rate-efficiency metrics: PSNR, SSIM, Bjontegaard delta
//! rate and the sweep CSV schema.

mod bdrate;
mod table;

pub use bdrate::{bd_rate, RdCurve, MIN_OVERLAP_DB};
pub use table::{curves_by_key, read_rows, write_rows, CurveKey, SweepRow};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// PSNR of identical frames.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_pair(reference: &Frame, test: &Frame) -> Result<()> {
    if (reference.width(), reference.height()) != (test.width(), test.height()) {
        return Err(Error::domain(format!(
            "frame size mismatch: {}×{} vs {}×{}",
            reference.width(),
            reference.height(),
            test.width(),
            test.height()
        )));
    }
    if reference.bit_depth() != test.bit_depth() {
        return Err(Error::domain(format!(
            "bit depth mismatch: {} vs {}",
            reference.bit_depth(),
            test.bit_depth()
        )));
    }
    Ok(())
}

/// Mean squared error over all pixels.
pub fn mse(reference: &Frame, test: &Frame) -> Result<f64> {
    check_pair(reference, test)?;
    let sum: f64 = reference
        .samples()
        .iter()
        .zip(test.samples())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum();
    Ok(sum / reference.samples().len() as f64)
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &Frame, test: &Frame) -> Result<f64> {
    let e = mse(reference, test)?;
    Ok(psnr_from_mse(e, reference.peak()))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Normalized 1-D Gaussian of [`SSIM_WINDOW`] taps; the 2-D window is its
/// outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable weighted sum over every fully-contained window.
fn filter_valid(img: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (ow, oh) = (width - n + 1, height - n + 1);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        let line = &img[y * width..(y + 1) * width];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..x + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all 11×11 windows fully inside the frame (Gaussian
/// weights, σ = 1.5, `C1 = (0.01·peak)²`, `C2 = (0.03·peak)²`).
pub fn ssim(reference: &Frame, test: &Frame) -> Result<f64> {
    check_pair(reference, test)?;
    let (w, h) = (reference.width(), reference.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::domain(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {w}×{h}"
        )));
    }
    let peak = reference.peak();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let x: Vec<f64> = reference.samples().iter().map(|&v| f64::from(v)).collect();
    let y: Vec<f64> = test.samples().iter().map(|&v| f64::from(v)).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let taps = gaussian_taps();
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|img| filter_valid(img, w, h, &taps));
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}
