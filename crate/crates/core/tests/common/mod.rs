//! Shared builders and brute-force oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tdvc::frame::Frame;
use tdvc::linalg::{FactorMatrix, Matrix};
use tdvc::metrics::{gaussian_taps, SSIM_WINDOW};
use tdvc::tensor::{reconstruct, DenseTensor, KruskalModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Matrix::from_col_major(rows, cols, data).unwrap()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseTensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_factors(rng: &mut ChaCha8Rng, shape: &[usize], rank: usize) -> Vec<FactorMatrix> {
    shape.iter().map(|&n| random_matrix(rng, n, rank)).collect()
}

/// Exact rank-5 tensor 32×32×16 used by the recovery and PP criteria: factor
/// columns are i.i.d. standard normal, scaled to unit norm, unit weights.
pub fn exact_rank5_tensor(seed: u64) -> DenseTensor {
    let mut rng = rng(seed);
    let rank = 5;
    let factors = [32usize, 32, 16]
        .iter()
        .map(|&n| {
            let mut m = Matrix::zeros(n, rank);
            for r in 0..rank {
                let col = m.column_mut(r);
                col.iter_mut()
                    .for_each(|v| *v = rng.sample::<f64, _>(StandardNormal));
                let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                col.iter_mut().for_each(|v| *v /= norm);
            }
            m
        })
        .collect();
    reconstruct(&KruskalModel::with_unit_weights(factors).unwrap())
}

/// Element-wise MTTKRP: `M(i_n, r) = Σ_{all other indices} X(i) ∏_{m≠n} S_m(i_m, r)`.
pub fn mttkrp_oracle(t: &DenseTensor, factors: &[FactorMatrix], mode: usize) -> Matrix {
    let shape = t.shape();
    let rank = factors[0].cols();
    let mut out = Matrix::zeros(shape[mode], rank);
    let mut idx = vec![0usize; shape.len()];
    for &x in t.data() {
        for r in 0..rank {
            let mut p = x;
            for (m, f) in factors.iter().enumerate() {
                if m != mode {
                    p *= f.column(r)[idx[m]];
                }
            }
            out.column_mut(r)[idx[mode]] += p;
        }
        for (i, d) in idx.iter_mut().zip(shape) {
            *i += 1;
            if *i < *d {
                break;
            }
            *i = 0;
        }
    }
    out
}

/// Element-wise `Γ(n)(r, s) = ∏_{m≠n} Σ_i S_m(i, r) S_m(i, s)`.
pub fn gram_hadamard_oracle(factors: &[FactorMatrix], mode: usize) -> Matrix {
    let rank = factors[0].cols();
    let mut out = Matrix::zeros(rank, rank);
    for r in 0..rank {
        for s in 0..rank {
            let mut p = 1.0;
            for (m, f) in factors.iter().enumerate() {
                if m != mode {
                    p *= f
                        .column(r)
                        .iter()
                        .zip(f.column(s))
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
            out.column_mut(s)[r] = p;
        }
    }
    out
}

/// Relative max-entry difference `max|a − b| / max(1, max|b|)`.
pub fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    let scale = b.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.max_abs_diff(b) / scale
}

/// SSIM computed window by window with the full 2-D Gaussian weight, the
/// textbook definition without separable filtering.
pub fn ssim_oracle(a: &Frame, b: &Frame) -> f64 {
    let taps = gaussian_taps();
    let n = SSIM_WINDOW;
    let peak = a.peak();
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let (mut mx, mut my) = (0.0, 0.0);
            for dy in 0..n {
                for dx in 0..n {
                    let wgt = taps[dy] * taps[dx];
                    mx += wgt * f64::from(a.get(x0 + dx, y0 + dy));
                    my += wgt * f64::from(b.get(x0 + dx, y0 + dy));
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for dy in 0..n {
                for dx in 0..n {
                    let wgt = taps[dy] * taps[dx];
                    let p = f64::from(a.get(x0 + dx, y0 + dy)) - mx;
                    let q = f64::from(b.get(x0 + dx, y0 + dy)) - my;
                    vx += wgt * p * p;
                    vy += wgt * q * q;
                    cov += wgt * p * q;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

pub fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize, bit_depth: u8) -> Frame {
    let max = if bit_depth == 8 { 255 } else { 65535 };
    let samples = (0..w * h).map(|_| rng.random_range(0..=max)).collect();
    Frame::new(w, h, bit_depth, samples).unwrap()
}

/// `reference` with bounded noise added, so the pair is structurally similar.
pub fn noisy_copy(rng: &mut ChaCha8Rng, reference: &Frame, amplitude: i32) -> Frame {
    let max = reference.peak() as i32;
    let samples = reference
        .samples()
        .iter()
        .map(|&s| (i32::from(s) + rng.random_range(-amplitude..=amplitude)).clamp(0, max) as u16)
        .collect();
    Frame::new(
        reference.width(),
        reference.height(),
        reference.bit_depth(),
        samples,
    )
    .unwrap()
}
