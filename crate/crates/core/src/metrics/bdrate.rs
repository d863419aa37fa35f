//! Bjontegaard delta rate over whole RD curves.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve_in_place, Matrix};

/// Curves must share at least this much PSNR range.
pub const MIN_OVERLAP_DB: f64 = 3.0;
const MIN_POINTS: usize = 4;

/// Rate-distortion points sorted by strictly increasing bitrate.
#[derive(Clone, Debug, PartialEq)]
pub struct RdCurve {
    points: Vec<(f64, f64)>,
}

impl RdCurve {
    /// `(bitrate_kbps, psnr_db)` points in any order.
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < MIN_POINTS {
            return Err(Error::domain(format!(
                "an RD curve needs at least {MIN_POINTS} points, got {}",
                points.len()
            )));
        }
        if points
            .iter()
            .any(|&(r, p)| !(r > 0.0 && r.is_finite()) || !p.is_finite())
        {
            return Err(Error::domain(
                "RD points need positive finite bitrates and finite PSNR",
            ));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::domain("RD curve has duplicate bitrates"));
        }
        Ok(RdCurve { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn psnr_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, p)| {
                (lo.min(p), hi.max(p))
            })
    }
}

/// Least-squares cubic of `log10(rate)` against PSNR. The abscissa is
/// centred and scaled (`u = (psnr − centre) / spread`) for conditioning.
struct LogRateFit {
    centre: f64,
    spread: f64,
    coeffs: [f64; 4],
}

impl LogRateFit {
    fn new(curve: &RdCurve) -> Result<Self> {
        let n = curve.points.len() as f64;
        let centre = curve.points.iter().map(|p| p.1).sum::<f64>() / n;
        let spread = (curve
            .points
            .iter()
            .map(|p| (p.1 - centre).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        if !(spread > 0.0) {
            return Err(Error::domain("RD curve has no PSNR spread"));
        }
        let mut gram = Matrix::zeros(4, 4);
        let mut rhs = [0.0; 4];
        for &(rate, psnr) in &curve.points {
            let u = (psnr - centre) / spread;
            let basis = [1.0, u, u * u, u * u * u];
            let y = rate.log10();
            for i in 0..4 {
                rhs[i] += basis[i] * y;
                for j in 0..4 {
                    gram[(i, j)] += basis[i] * basis[j];
                }
            }
        }
        let l = cholesky(&gram).ok_or_else(|| {
            Error::domain("RD curve PSNR values are too degenerate for a cubic fit")
        })?;
        cholesky_solve_in_place(&l, &mut rhs);
        Ok(LogRateFit {
            centre,
            spread,
            coeffs: rhs,
        })
    }

    /// `∫ fit(psnr) dpsnr` over `[lo, hi]`.
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let antiderivative = |psnr: f64| {
            let u = (psnr - self.centre) / self.spread;
            self.coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * u.powi(k as i32 + 1) / (k as f64 + 1.0))
                .sum::<f64>()
        };
        self.spread * (antiderivative(hi) - antiderivative(lo))
    }
}

/// Bjontegaard delta rate in percent: average log-rate difference of the
/// two cubic fits over the common PSNR interval, as `100·(10^Δ − 1)`.
/// Negative means the test curve needs less bitrate.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    let (alo, ahi) = anchor.psnr_range();
    let (tlo, thi) = test.psnr_range();
    let (lo, hi) = (alo.max(tlo), ahi.min(thi));
    if !(hi - lo >= MIN_OVERLAP_DB) {
        return Err(Error::domain(format!(
            "RD curves overlap on [{lo:.4}, {hi:.4}] dB, less than {MIN_OVERLAP_DB} dB"
        )));
    }
    let fa = LogRateFit::new(anchor)?;
    let ft = LogRateFit::new(test)?;
    let delta = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    Ok(100.0 * (10f64.powf(delta) - 1.0))
}
