//! Pairwise-perturbation operators.
//!
//! With factors frozen at `S_p`, two families of contractions are cached:
//!
//! * first order `M_p(n) = X(n) · ⊙_{i≠n} S_p(i)`, shape `a_n × R`;
//! * second order `𝔐_p(i,n)`, the tensor contracted with every paused factor
//!   except modes `i` and `n`, shape `a_i × a_n × R`.
//!
//! Later MTTKRPs are approximated from these and the factor drift
//! `dS = S − S_p`. The approximation is exact when at most one other factor
//! has moved and its error is quadratic in `‖dS‖` otherwise.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{FactorMatrix, Matrix};
use crate::tensor::{DenseTensor, Partial};

/// One second-order operator, stored once per unordered pair `low < high`
/// with layout `(x_low, y_high, k)`, first index fastest.
#[derive(Clone, Debug)]
struct PairOperator {
    low: usize,
    high: usize,
    data: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PpState {
    shape: Vec<usize>,
    rank: usize,
    paused: Vec<FactorMatrix>,
    first_order: Vec<Matrix>,
    second_order: Vec<PairOperator>,
    full_passes: usize,
    stale: bool,
}

/// Read access to `𝔐_p(i,n)` in either role order.
pub struct PairView<'a> {
    op: &'a PairOperator,
    swapped: bool,
    a_low: usize,
    a_high: usize,
}

impl PairView<'_> {
    /// Entry `(x, y, k)` with `x` indexing mode `i` and `y` mode `n`.
    pub fn get(&self, x: usize, y: usize, k: usize) -> f64 {
        let (lo, hi) = if self.swapped { (y, x) } else { (x, y) };
        self.op.data[lo + self.a_low * (hi + self.a_high * k)]
    }
}

impl PpState {
    pub fn paused_factors(&self) -> &[FactorMatrix] {
        &self.paused
    }

    pub fn first_order(&self, mode: usize) -> &Matrix {
        &self.first_order[mode]
    }

    pub fn second_order(&self, i: usize, n: usize) -> PairView<'_> {
        assert_ne!(i, n, "second-order operators need two distinct modes");
        let (low, high) = if i < n { (i, n) } else { (n, i) };
        let op = self
            .second_order
            .iter()
            .find(|op| op.low == low && op.high == high)
            .expect("operator exists for every unordered pair");
        PairView {
            op,
            swapped: i > n,
            a_low: self.shape[low],
            a_high: self.shape[high],
        }
    }

    pub fn first_order_count(&self) -> usize {
        self.first_order.len()
    }

    pub fn second_order_count(&self) -> usize {
        self.second_order.len()
    }

    /// Contractions that read the whole input tensor while building.
    pub fn full_tensor_passes(&self) -> usize {
        self.full_passes
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    pub fn mark_stale(&mut self) {
        self.stale = true;
    }

    /// Largest relative drift `‖S(i) − S_p(i)‖ / ‖S_p(i)‖` over all modes.
    pub fn max_relative_drift(&self, factors: &[FactorMatrix]) -> f64 {
        self.paused
            .iter()
            .zip(factors)
            .map(|(p, s)| {
                let base = p.frobenius_norm();
                let d = s.sub(p).frobenius_norm();
                if base > 0.0 {
                    d / base
                } else if d > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Bytes the operators (and the largest intermediate) will occupy.
pub fn pp_state_bytes(shape: &[usize], rank: usize) -> usize {
    let n = shape.len();
    let mut elems = 0usize;
    for i in 0..n {
        elems = elems.saturating_add(shape[i].saturating_mul(rank));
        for j in i + 1..n {
            elems = elems.saturating_add(shape[i].saturating_mul(shape[j]).saturating_mul(rank));
        }
    }
    let total: usize = shape.iter().product();
    let smallest = shape.iter().copied().min().unwrap_or(1).max(1);
    let intermediates = (total / smallest)
        .saturating_mul(rank)
        .saturating_mul(n.max(2) - 1);
    elems.saturating_add(intermediates).saturating_mul(8)
}

/// Builds every first- and second-order operator at `paused`.
///
/// Partial contractions are memoized by their set of surviving modes, so each
/// distinct partial contraction along the dimension tree is computed once. A
/// node keeping mode set `U` is derived from `U ∪ {j}` with `j` the highest
/// mode not in `U`; the root is the tensor itself.
pub fn build_pp_state(
    t: &DenseTensor,
    paused: &[FactorMatrix],
    memory_budget: usize,
) -> Result<PpState> {
    let shape = t.shape().to_vec();
    let n = shape.len();
    let got: Vec<usize> = paused.iter().map(|f| f.rows()).collect();
    if got != shape {
        return Err(Error::domain(format!(
            "paused factor shapes {got:?} do not match tensor shape {shape:?}"
        )));
    }
    let rank = paused[0].cols();
    if paused.iter().any(|f| f.cols() != rank) {
        return Err(Error::domain("paused factors disagree on rank"));
    }
    let need = pp_state_bytes(&shape, rank);
    if need > memory_budget {
        return Err(Error::Resource(format!(
            "pairwise-perturbation operators for shape {shape:?} at rank {rank} need ~{} MiB \
             (budget {} MiB); split the sequence into smaller frame groups",
            need >> 20,
            memory_budget >> 20
        )));
    }

    let full: u64 = (1u64 << n) - 1;
    let mut tree = DimensionTree {
        root: Partial::from_tensor(t),
        full,
        memo: BTreeMap::new(),
        full_passes: 0,
    };

    let mut second_order = Vec::with_capacity(n * (n - 1) / 2);
    for low in 0..n {
        for high in low + 1..n {
            let node = tree.node((1u64 << low) | (1u64 << high), paused);
            debug_assert_eq!(node.modes, vec![low, high]);
            second_order.push(PairOperator {
                low,
                high,
                data: node.data.clone(),
            });
        }
    }

    let first_order = (0..n)
        .map(|m| {
            let other = if m == 0 { 1 } else { 0 };
            let pair = tree.node((1u64 << m) | (1u64 << other), paused);
            let p = pair.contract(other, &paused[other]);
            Matrix::from_raw(shape[m], rank, p.data)
        })
        .collect();

    Ok(PpState {
        shape,
        rank,
        paused: paused.to_vec(),
        first_order,
        second_order,
        full_passes: tree.full_passes,
        stale: false,
    })
}

struct DimensionTree {
    root: Partial,
    full: u64,
    memo: BTreeMap<u64, Partial>,
    full_passes: usize,
}

impl DimensionTree {
    fn node(&mut self, keep: u64, factors: &[FactorMatrix]) -> &Partial {
        if !self.memo.contains_key(&keep) {
            let missing = self.full & !keep;
            let j = 63 - missing.leading_zeros() as usize;
            let parent_set = keep | (1u64 << j);
            let built = if parent_set == self.full {
                self.full_passes += 1;
                self.root.contract(j, &factors[j])
            } else {
                self.node(parent_set, factors).contract(j, &factors[j])
            };
            self.memo.insert(keep, built);
        }
        &self.memo[&keep]
    }
}

/// First-order corrected MTTKRP `M̃(n) = M_p(n) + Σ_{i≠n} Σ_x 𝔐_p(i,n)(x,·,k) dS(i)(x,k)`.
pub fn pp_mttkrp(state: &PpState, factors: &[FactorMatrix], mode: usize) -> Result<Matrix> {
    if state.stale {
        return Err(Error::Contract(
            "pairwise-perturbation state is stale; rebuild it before use".into(),
        ));
    }
    let n = state.shape.len();
    if mode >= n {
        return Err(Error::domain(format!(
            "mode {mode} out of range for order {n}"
        )));
    }
    if factors.len() != n
        || factors
            .iter()
            .zip(&state.paused)
            .any(|(f, p)| f.rows() != p.rows() || f.cols() != p.cols())
    {
        return Err(Error::domain(
            "current factors are not aligned with the paused factors",
        ));
    }
    let rank = state.rank;
    let a_n = state.shape[mode];
    let mut out = state.first_order[mode].clone();
    for i in (0..n).filter(|&i| i != mode) {
        let op = state.second_order(i, mode);
        let a_i = state.shape[i];
        let cur = &factors[i];
        let paused = &state.paused[i];
        for k in 0..rank {
            let dst = out.column_mut(k);
            for x in 0..a_i {
                let d = cur[(x, k)] - paused[(x, k)];
                if d == 0.0 {
                    continue;
                }
                if op.swapped {
                    // stored (y_mode, x_i, k): contiguous in y
                    let base = a_n * (x + a_i * k);
                    let src = &op.op.data[base..base + a_n];
                    for (o, &v) in dst.iter_mut().zip(src) {
                        *o += v * d;
                    }
                } else {
                    for (y, o) in dst.iter_mut().enumerate() {
                        *o += op.op.data[x + a_i * (y + a_n * k)] * d;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::mttkrp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_col_major(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
        let len = shape.iter().product();
        DenseTensor::new(
            shape.to_vec(),
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn operator_counts_for_order_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_tensor(&mut rng, &[3, 4, 5]);
        let f: Vec<_> = [3, 4, 5]
            .iter()
            .map(|&a| random_matrix(&mut rng, a, 2))
            .collect();
        let st = build_pp_state(&t, &f, usize::MAX).unwrap();
        assert_eq!(st.first_order_count(), 3);
        assert_eq!(st.second_order_count(), 3);
        assert_eq!(st.full_tensor_passes(), 3);
    }

    #[test]
    fn second_order_is_direct_contraction_for_order_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = [3, 4, 5];
        let t = random_tensor(&mut rng, &shape);
        let f: Vec<_> = shape
            .iter()
            .map(|&a| random_matrix(&mut rng, a, 3))
            .collect();
        let st = build_pp_state(&t, &f, usize::MAX).unwrap();
        for i in 0..3 {
            for n in 0..3 {
                if i == n {
                    continue;
                }
                let j = 3 - i - n;
                let view = st.second_order(i, n);
                for k in 0..3 {
                    for x in 0..shape[i] {
                        for y in 0..shape[n] {
                            let mut want = 0.0;
                            for z in 0..shape[j] {
                                let mut idx = [0usize; 3];
                                idx[i] = x;
                                idx[n] = y;
                                idx[j] = z;
                                want += t.get(&idx) * f[j][(z, k)];
                            }
                            assert!((view.get(x, y, k) - want).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn first_order_matches_mttkrp_at_paused_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for shape in [vec![3, 4, 5], vec![2, 3, 4, 3]] {
            let t = random_tensor(&mut rng, &shape);
            let f: Vec<_> = shape
                .iter()
                .map(|&a| random_matrix(&mut rng, a, 3))
                .collect();
            let st = build_pp_state(&t, &f, usize::MAX).unwrap();
            for m in 0..shape.len() {
                let exact = mttkrp(&t, &f, m).unwrap();
                let rel = st.first_order(m).sub(&exact).frobenius_norm() / exact.frobenius_norm();
                assert!(rel < 1e-10, "mode {m}: {rel}");
            }
        }
    }

    #[test]
    fn zero_paused_factors_give_zero_operators() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_tensor(&mut rng, &[3, 3, 3]);
        let f = vec![Matrix::zeros(3, 2); 3];
        let st = build_pp_state(&t, &f, usize::MAX).unwrap();
        for m in 0..3 {
            assert!(st.first_order(m).as_slice().iter().all(|&v| v == 0.0));
        }
        for op in &st.second_order {
            assert!(op.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn stale_state_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_tensor(&mut rng, &[2, 2, 2]);
        let f: Vec<_> = (0..3).map(|_| random_matrix(&mut rng, 2, 1)).collect();
        let mut st = build_pp_state(&t, &f, usize::MAX).unwrap();
        st.mark_stale();
        assert!(matches!(pp_mttkrp(&st, &f, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn memory_budget_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = random_tensor(&mut rng, &[8, 8, 8]);
        let f: Vec<_> = (0..3).map(|_| random_matrix(&mut rng, 8, 4)).collect();
        let err = build_pp_state(&t, &f, 1024).unwrap_err();
        assert!(matches!(err, Error::Resource(ref m) if m.contains("smaller frame groups")));
    }
}
