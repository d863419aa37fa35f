//! CP decomposition by alternating least squares.
//!
//! Each mode update solves the normal equations `S(n) Γ(n) = M(n)` where
//! `Γ(n)` is the Hadamard product of the other factors' Grams and `M(n)` the
//! MTTKRP. Once updates become small, MTTKRPs are served from cached
//! pairwise-perturbation operators ([`pp`]) instead of full contractions.

mod pp;

pub use pp::{build_pp_state, pp_mttkrp, pp_state_bytes, PairView, PpState};

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{solve_spd_right, FactorMatrix, Matrix};
use crate::tensor::{
    fit_error, gram_hadamard, mttkrp, reconstruct, DenseTensor, GramSet, KruskalModel,
};

#[derive(Clone, Debug, PartialEq)]
pub struct AlsConfig {
    pub rank: usize,
    pub max_sweeps: usize,
    /// Stop once `gradient_norm` (relative to `‖t‖_F`) falls below this.
    pub grad_tol: f64,
    pub seed: u64,
    pub pp_enabled: bool,
    /// Largest relative factor drift for which PP-MTTKRP is trusted.
    pub pp_threshold: f64,
    /// PP sweeps allowed before an exact sweep and a rebuild are forced.
    pub pp_recompute_after: usize,
    /// Relative ridge: `ridge · trace(Γ) / R` is added to the diagonal.
    pub ridge: f64,
    /// A run whose fit changes by less than `stall_tol` for `stall_sweeps`
    /// consecutive sweeps is stopped.
    pub stall_tol: f64,
    pub stall_sweeps: usize,
    pub pp_memory_budget: usize,
    /// After each sweep, try the extrapolated point `S + s·(S − S_prev)` with
    /// `s = sweep^(1/3)` and keep it only if it lowers the fit. Sweeps stay
    /// monotone; long swamps are shortened considerably.
    pub line_search: bool,
}

impl AlsConfig {
    pub fn new(rank: usize) -> Self {
        AlsConfig {
            rank,
            max_sweeps: 200,
            grad_tol: 1e-6,
            seed: 0,
            pp_enabled: true,
            pp_threshold: 0.1,
            pp_recompute_after: 10,
            ridge: 1e-12,
            stall_tol: 1e-12,
            stall_sweeps: 10,
            pp_memory_budget: 1 << 30,
            line_search: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::domain("rank must be at least 1"));
        }
        if self.max_sweeps == 0 {
            return Err(Error::domain("max_sweeps must be at least 1"));
        }
        let positive = [
            ("grad_tol", self.grad_tol),
            ("pp_threshold", self.pp_threshold),
            ("ridge", self.ridge),
            ("stall_tol", self.stall_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.pp_recompute_after == 0 || self.stall_sweeps == 0 {
            return Err(Error::domain(
                "pp_recompute_after and stall_sweeps must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Relative gradient norm below `grad_tol`.
    Converged,
    /// Fit stopped moving for `stall_sweeps` sweeps.
    Stalled,
    /// Ran out of sweeps; the best model seen is returned.
    MaxSweeps,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlsReport {
    pub sweeps_run: usize,
    pub final_grad_norm: f64,
    pub final_fit_error: f64,
    /// MTTKRPs computed exactly inside mode updates.
    pub exact_mttkrp_count: usize,
    /// MTTKRPs served by pairwise perturbation.
    pub pp_mttkrp_count: usize,
    pub pp_builds: usize,
    /// Exact MTTKRPs spent confirming convergence (not part of any update).
    pub check_mttkrp_count: usize,
    /// Sweeps whose extrapolated point was accepted.
    pub line_search_accepted: usize,
    pub per_sweep_fit: Vec<f64>,
    pub termination: Termination,
}

impl AlsReport {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::Converged | Termination::Stalled
        )
    }
}

/// Seeded uniform `[-1, 1)` factors, filled mode by mode in column-major order.
///
/// Centred entries keep the initial columns close to orthogonal; all-positive
/// columns start highly collinear and fall into two-factor degeneracies far
/// more often.
pub fn init_factors(shape: &[usize], config: &AlsConfig) -> Result<KruskalModel> {
    config.validate()?;
    if shape.len() < 2 || shape.contains(&0) {
        return Err(Error::domain(format!("invalid tensor shape {shape:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let factors = shape
        .iter()
        .map(|&rows| {
            let data = (0..rows * config.rank)
                .map(|_| 2.0 * rng.random::<f64>() - 1.0)
                .collect();
            Matrix::from_col_major(rows, config.rank, data)
        })
        .collect::<Result<Vec<_>>>()?;
    KruskalModel::with_unit_weights(factors)
}

/// Normal-equation update of one factor: solves `S_new Γ(n) = M(n)`.
///
/// The caller owns the bookkeeping: refresh `grams` for `mode` afterwards.
pub fn als_update_mode(
    t: &DenseTensor,
    factors: &[FactorMatrix],
    grams: &GramSet,
    mode: usize,
    config: &AlsConfig,
) -> Result<FactorMatrix> {
    let gamma = gram_hadamard(grams, mode)?;
    let m = mttkrp(t, factors, mode)?;
    solve_spd_right(&gamma, &m, config.ridge)
}

/// Per-mode gradient `∂f/∂S(n) = S(n) diag(λ) Γ(n) − M(n)` of
/// `f = ½‖t − [[λ; S]]‖²`, where the weights are absorbed into the mode being
/// differentiated. With unit weights this is the plain CP gradient.
pub fn gradient(t: &DenseTensor, model: &KruskalModel, grams: &GramSet) -> Result<Vec<Matrix>> {
    if model.shape() != t.shape() {
        return Err(Error::domain(format!(
            "model shape {:?} does not match tensor shape {:?}",
            model.shape(),
            t.shape()
        )));
    }
    (0..t.order())
        .map(|n| {
            let gamma = gram_hadamard(grams, n)?;
            let m = mttkrp(t, model.factors(), n)?;
            let mut scaled = model.factors()[n].clone();
            for (r, w) in model.weights().iter().enumerate() {
                scaled.column_mut(r).iter_mut().for_each(|v| *v *= w);
            }
            Ok(scaled.matmul(&gamma)?.sub(&m))
        })
        .collect()
}

/// `sqrt(Σₙ ‖∂f/∂S(n)‖²) / ‖t‖_F` (absolute when `t` is zero).
pub fn gradient_norm(t: &DenseTensor, model: &KruskalModel, grams: &GramSet) -> Result<f64> {
    let total: f64 = gradient(t, model, grams)?
        .iter()
        .map(|g| g.frobenius_norm().powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = t.frobenius_norm();
    Ok(if norm > 0.0 { total / norm } else { total })
}

/// Flips column signs so that, in every mode but the last, the
/// largest-magnitude entry of each column is positive. The compensating sign
/// lands in the last mode, so the represented tensor is unchanged.
pub fn canonicalize_signs(model: &mut KruskalModel) {
    let n = model.order();
    let rank = model.rank();
    let factors = model.factors_mut();
    for r in 0..rank {
        let mut parity = false;
        for f in factors[..n - 1].iter_mut() {
            let col = f.column_mut(r);
            let peak = col
                .iter()
                .copied()
                .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            if peak < 0.0 {
                col.iter_mut().for_each(|v| *v = -*v);
                parity = !parity;
            }
        }
        if parity {
            factors[n - 1]
                .column_mut(r)
                .iter_mut()
                .for_each(|v| *v = -*v);
        }
    }
}

fn relative_change(new: &Matrix, old: &Matrix) -> f64 {
    let base = old.frobenius_norm();
    let d = new.sub(old).frobenius_norm();
    if base > 0.0 {
        d / base
    } else if d > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// `old + step · (new − old)`.
fn along(old: &Matrix, new: &Matrix, step: f64) -> Matrix {
    let mut out = old.clone();
    out.as_mut_slice()
        .iter_mut()
        .zip(new.as_slice())
        .for_each(|(v, n)| *v += step * (n - *v));
    out
}

/// Exact line search along the sweep direction `D = new − old`.
///
/// The residual `‖t − [[old + αD]]‖²` is a polynomial of degree `2N` in `α`.
/// Its coefficients come from the `N + 1` tensors `Y_k` (all terms with `D`
/// in exactly `k` modes). Returns the minimizing `α > 1` when it beats the
/// plain sweep result (`α = 1`), otherwise `None`.
fn line_search_step(
    t: &DenseTensor,
    old: &[FactorMatrix],
    new: &[FactorMatrix],
) -> Result<Option<f64>> {
    let order = t.order();
    let dirs: Vec<Matrix> = new.iter().zip(old).map(|(n, o)| n.sub(o)).collect();
    let mut y: Vec<Vec<f64>> = vec![vec![0.0; t.len()]; order + 1];
    for subset in 0usize..(1 << order) {
        let factors = (0..order)
            .map(|m| {
                if subset >> m & 1 == 1 {
                    dirs[m].clone()
                } else {
                    old[m].clone()
                }
            })
            .collect();
        let part = reconstruct(&KruskalModel::with_unit_weights(factors)?);
        let k = subset.count_ones() as usize;
        y[k].iter_mut().zip(part.data()).for_each(|(a, b)| *a += b);
    }
    y[0].iter_mut().zip(t.data()).for_each(|(a, b)| *a -= b);

    let mut poly = vec![0.0; 2 * order + 1];
    for k in 0..=order {
        for l in k..=order {
            let ip = crate::linalg::dot(&y[k], &y[l]);
            poly[k + l] += if k == l { ip } else { 2.0 * ip };
        }
    }
    let eval = |a: f64| poly.iter().rev().fold(0.0, |acc, c| acc * a + c);
    let deriv = |a: f64| {
        poly.iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (i, c)| acc * a + i as f64 * c)
    };
    let deriv2 = |a: f64| {
        poly.iter()
            .enumerate()
            .skip(2)
            .rev()
            .fold(0.0, |acc, (i, c)| acc * a + (i * (i - 1)) as f64 * c)
    };

    // Coarse scan, then Newton polish of the best grid point.
    const MAX_STEP: f64 = 20.0;
    const SAMPLES: usize = 400;
    let mut best = (1.0, eval(1.0));
    for i in 1..=SAMPLES {
        let a = 1.0 + (MAX_STEP - 1.0) * i as f64 / SAMPLES as f64;
        let v = eval(a);
        if v < best.1 {
            best = (a, v);
        }
    }
    if best.0 == 1.0 {
        return Ok(None);
    }
    let mut a = best.0;
    for _ in 0..20 {
        let h = deriv2(a);
        if !(h > 0.0) {
            break;
        }
        let next = a - deriv(a) / h;
        if !next.is_finite() || next <= 1.0 || next > MAX_STEP || eval(next) > eval(a) {
            break;
        }
        a = next;
    }
    Ok((eval(a) < eval(1.0)).then_some(a))
}

/// Normalized model (weights carry the scale) and the working factors with
/// the weights folded into mode 0, which is the next mode to be recomputed.
fn renormalize(working: Vec<FactorMatrix>) -> Result<(KruskalModel, Vec<FactorMatrix>)> {
    let mut model = KruskalModel::with_unit_weights(working)?;
    model.normalize();
    let folded = model.fold_weights_into(0).into_parts().0;
    Ok((model, folded))
}

/// Rank-R CP-ALS with optional pairwise-perturbation acceleration.
///
/// Factors are renormalized after every sweep. The returned model has unit
/// factor columns, non-negative weights and canonical signs. Running out of
/// sweeps is not an error: the best model seen is returned and the report's
/// `termination` says so.
pub fn cp_als(t: &DenseTensor, config: &AlsConfig) -> Result<(KruskalModel, AlsReport)> {
    config.validate()?;
    let order = t.order();
    let tnorm = t.frobenius_norm();
    let scale = if tnorm > 0.0 { tnorm } else { 1.0 };

    let mut working = init_factors(t.shape(), config)?.into_parts().0;
    let mut grams = GramSet::from_factors(&working);
    let mut pp: Option<PpState> = None;
    let mut pp_sweeps = 0usize;

    let mut report = AlsReport {
        sweeps_run: 0,
        final_grad_norm: f64::NAN,
        final_fit_error: f64::NAN,
        exact_mttkrp_count: 0,
        pp_mttkrp_count: 0,
        pp_builds: 0,
        check_mttkrp_count: 0,
        line_search_accepted: 0,
        per_sweep_fit: Vec::new(),
        termination: Termination::MaxSweeps,
    };
    let mut best: Option<(f64, KruskalModel)> = None;
    let mut last: Option<KruskalModel> = None;
    let mut flat_run = 0usize;

    for sweep in 0..config.max_sweeps {
        let use_pp = pp.as_ref().is_some_and(|s| !s.is_stale());
        let previous = working.clone();
        let mut est_grad_sq = 0.0;

        for n in 0..order {
            let gamma = gram_hadamard(&grams, n)?;
            let m = match (&pp, use_pp) {
                (Some(state), true) => {
                    report.pp_mttkrp_count += 1;
                    pp_mttkrp(state, &working, n)?
                }
                _ => {
                    report.exact_mttkrp_count += 1;
                    mttkrp(t, &working, n)?
                }
            };
            let updated = solve_spd_right(&gamma, &m, config.ridge).map_err(|e| match e {
                Error::Convergence(msg) => {
                    Error::Convergence(format!("sweep {sweep}, mode {n}: {msg}"))
                }
                other => other,
            })?;
            // (S − S_new) Γ is the gradient at the point just before this update.
            est_grad_sq += working[n]
                .sub(&updated)
                .matmul(&gamma)?
                .frobenius_norm()
                .powi(2);
            working[n] = updated;
            grams.update(n, &working[n]);
        }

        let (mut model, folded) = renormalize(working)?;
        working = folded;
        let mut fit = fit_error(t, &model)?;
        // `previous` is only in the normalized working representation after
        // the first sweep.
        if config.line_search && sweep > 0 {
            if let Some(step) = line_search_step(t, &previous, &working)? {
                let candidate = previous
                    .iter()
                    .zip(&working)
                    .map(|(old, new)| along(old, new, step))
                    .collect();
                let (cand_model, cand_folded) = renormalize(candidate)?;
                let cand_fit = fit_error(t, &cand_model)?;
                if cand_fit < fit {
                    model = cand_model;
                    working = cand_folded;
                    fit = cand_fit;
                    report.line_search_accepted += 1;
                }
            }
        }
        grams = GramSet::from_factors(&working);
        report.sweeps_run = sweep + 1;

        let prev_fit = report.per_sweep_fit.last().copied();
        report.per_sweep_fit.push(fit);
        if best.as_ref().is_none_or(|(f, _)| fit < *f) {
            best = Some((fit, model.clone()));
        }

        let change = previous
            .iter()
            .zip(&working)
            .map(|(old, new)| relative_change(new, old))
            .fold(0.0, f64::max);
        let est_grad = est_grad_sq.sqrt() / scale;
        debug!(
            "sweep {sweep}: fit {fit:.3e} est-grad {est_grad:.3e} change {change:.3e} pp {use_pp}"
        );

        if est_grad < config.grad_tol {
            let model_grams = GramSet::from_factors(model.factors());
            report.check_mttkrp_count += order;
            if gradient_norm(t, &model, &model_grams)? < config.grad_tol {
                report.termination = Termination::Converged;
                last = Some(model);
                break;
            }
        }
        match prev_fit {
            Some(p) if (p - fit).abs() < config.stall_tol => flat_run += 1,
            _ => flat_run = 0,
        }
        if flat_run >= config.stall_sweeps {
            report.termination = Termination::Stalled;
            last = Some(model);
            break;
        }
        last = Some(model);

        if config.pp_enabled {
            if use_pp {
                pp_sweeps += 1;
                let state = pp.as_mut().expect("pp sweep implies state");
                if state.max_relative_drift(&working) >= config.pp_threshold
                    || pp_sweeps >= config.pp_recompute_after
                {
                    state.mark_stale();
                }
            } else if change < config.pp_threshold {
                match build_pp_state(t, &working, config.pp_memory_budget) {
                    Ok(state) => {
                        pp = Some(state);
                        pp_sweeps = 0;
                        report.pp_builds += 1;
                    }
                    Err(Error::Resource(msg)) => {
                        debug!("pairwise perturbation disabled: {msg}");
                        pp = None;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    let mut model = match report.termination {
        Termination::MaxSweeps => best.map(|(_, m)| m).or(last),
        _ => last,
    }
    .expect("at least one sweep ran");
    canonicalize_signs(&mut model);
    let model_grams = GramSet::from_factors(model.factors());
    report.final_grad_norm = gradient_norm(t, &model, &model_grams)?;
    report.final_fit_error = fit_error(t, &model)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_one(a: &[f64], b: &[f64], c: &[f64]) -> DenseTensor {
        DenseTensor::from_fn(vec![a.len(), b.len(), c.len()], |ix| {
            a[ix[0]] * b[ix[1]] * c[ix[2]]
        })
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_in_range() {
        let cfg = AlsConfig::new(1);
        let a = init_factors(&[2, 2, 2], &cfg).unwrap();
        let b = init_factors(&[2, 2, 2], &cfg).unwrap();
        assert_eq!(a, b);
        for f in a.factors() {
            assert_eq!((f.rows(), f.cols()), (2, 1));
            assert!(f.as_slice().iter().all(|&v| (-1.0..1.0).contains(&v)));
        }
        assert_eq!(a.weights(), &[1.0]);
    }

    #[test]
    fn different_seeds_give_different_factors() {
        let mut cfg = AlsConfig::new(2);
        let a = init_factors(&[3, 3, 3], &cfg).unwrap();
        cfg.seed = 1;
        let b = init_factors(&[3, 3, 3], &cfg).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn config_validation() {
        let mut cfg = AlsConfig::new(0);
        assert!(cfg.validate().is_err());
        cfg.rank = 1;
        cfg.grad_tol = 0.0;
        assert!(cfg.validate().is_err());
        cfg.grad_tol = 1e-6;
        cfg.max_sweeps = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rank_one_update_recovers_true_vector_direction() {
        let a = [1.0, -2.0, 0.5];
        let b = [0.3, 0.7];
        let c = [1.0, 2.0, 3.0, 4.0];
        let t = rank_one(&a, &b, &c);
        let factors = vec![
            Matrix::from_col_major(3, 1, vec![0.1, 0.2, 0.3]).unwrap(),
            Matrix::from_col_major(2, 1, b.to_vec()).unwrap(),
            Matrix::from_col_major(4, 1, c.to_vec()).unwrap(),
        ];
        let grams = GramSet::from_factors(&factors);
        let s = als_update_mode(&t, &factors, &grams, 0, &AlsConfig::new(1)).unwrap();
        for (got, want) in s.as_slice().iter().zip(a) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_gamma_returns_mttkrp() {
        // Orthonormal other factors make Γ the identity.
        let t = DenseTensor::from_fn(vec![3, 2, 2], |ix| (ix[0] + 3 * ix[1] + 6 * ix[2]) as f64)
            .unwrap();
        let factors = vec![
            Matrix::zeros(3, 2),
            Matrix::identity(2),
            Matrix::identity(2),
        ];
        let grams = GramSet::from_factors(&factors);
        assert_eq!(gram_hadamard(&grams, 0).unwrap(), Matrix::identity(2));
        let mut cfg = AlsConfig::new(2);
        cfg.ridge = 1e-300;
        let s = als_update_mode(&t, &factors, &grams, 0, &cfg).unwrap();
        let m = mttkrp(&t, &factors, 0).unwrap();
        assert!(s.max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_exact_model_and_zero_model() {
        let model = KruskalModel::with_unit_weights(vec![
            Matrix::from_rows(&[&[1.0, 0.2], &[0.5, 1.0]]).unwrap(),
            Matrix::from_rows(&[&[0.3, 1.0], &[1.0, -0.4], &[0.2, 0.2]]).unwrap(),
            Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap(),
        ])
        .unwrap();
        let t = reconstruct(&model);
        let grams = GramSet::from_factors(model.factors());
        assert!(gradient_norm(&t, &model, &grams).unwrap() < 1e-10);

        let zero = KruskalModel::with_unit_weights(
            model
                .factors()
                .iter()
                .map(|f| Matrix::zeros(f.rows(), 2))
                .collect(),
        )
        .unwrap();
        let zg = GramSet::from_factors(zero.factors());
        assert_eq!(gradient_norm(&t, &zero, &zg).unwrap(), 0.0);
    }

    #[test]
    fn rank_one_tensor_converges_fast() {
        let a = [0.9, 0.2, 0.4, 0.7];
        let b = [0.1, 0.8, 0.6];
        let c = [0.5, 0.3, 0.9, 0.2, 0.6];
        let t = rank_one(&a, &b, &c);
        let (model, report) = cp_als(&t, &AlsConfig::new(1)).unwrap();
        assert!(report.final_fit_error < 1e-8, "{report:?}");
        assert!(report.sweeps_run <= 10);
        assert!(model.weights()[0] > 0.0);
    }

    #[test]
    fn canonical_signs_keep_the_tensor() {
        let mut model = KruskalModel::with_unit_weights(vec![
            Matrix::from_rows(&[&[-1.0, 0.2], &[0.5, -1.0]]).unwrap(),
            Matrix::from_rows(&[&[0.3, 1.0], &[-1.0, -0.4]]).unwrap(),
            Matrix::from_rows(&[&[1.0, 0.5], &[0.25, 1.0]]).unwrap(),
        ])
        .unwrap();
        let before = reconstruct(&model);
        canonicalize_signs(&mut model);
        let after = reconstruct(&model);
        assert!(before
            .data()
            .iter()
            .zip(after.data())
            .all(|(a, b)| (a - b).abs() < 1e-15));
        for f in &model.factors()[..2] {
            for r in 0..2 {
                let peak = f.column(r).iter().copied().fold(0.0f64, |acc, v| {
                    if v.abs() > acc.abs() {
                        v
                    } else {
                        acc
                    }
                });
                assert!(peak > 0.0);
            }
        }
    }
}
