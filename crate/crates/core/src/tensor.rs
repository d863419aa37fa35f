//! Dense order-N tensors and the multilinear kernels consumed by CP-ALS.
//!
//! Every linearization in this module puts the first index fastest: tensor
//! storage, the column index of a mode-n matricization, and the row index of
//! a Khatri-Rao product. With one convention throughout, `X(n) · K(n)` is the
//! MTTKRP without any permutation. Modes are numbered from zero.

use crate::error::{Error, Result};
use crate::linalg::{FactorMatrix, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::domain(format!(
                "tensor of shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "tensor entry {pos} is not finite ({})",
                data[pos]
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        validate_shape(&shape)?;
        let len = shape.iter().product();
        Ok(DenseTensor {
            shape,
            data: vec![0.0; len],
        })
    }

    /// Fills a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        validate_shape(&shape)?;
        let len: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            advance_index(&mut idx, &shape);
        }
        DenseTensor::new(shape, data)
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut lin = 0;
        for (&i, &a) in idx.iter().zip(&self.shape).rev() {
            debug_assert!(i < a);
            lin = lin * a + i;
        }
        lin
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.len() < 2 {
        return Err(Error::domain(format!(
            "tensor order must be at least 2, got shape {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::domain(format!(
            "tensor extents must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

/// Odometer increment with the first index fastest.
pub(crate) fn advance_index(idx: &mut [usize], shape: &[usize]) {
    for (i, &a) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < a {
            return;
        }
        *i = 0;
    }
}

fn check_mode(order: usize, mode: usize) -> Result<()> {
    if mode >= order {
        return Err(Error::domain(format!(
            "mode {mode} out of range for an order-{order} tensor"
        )));
    }
    Ok(())
}

/// Extents before and after `mode`, as flat products.
fn split_extents(shape: &[usize], mode: usize) -> (usize, usize) {
    let left = shape[..mode].iter().product();
    let right = shape[mode + 1..].iter().product();
    (left, right)
}

/// Mode-`mode` unfolding `X(n)` of shape `a_n × ∏_{i≠n} a_i`.
pub fn matricize(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    check_mode(t.order(), mode)?;
    let a = t.shape[mode];
    let (left, right) = split_extents(&t.shape, mode);
    let cols = left * right;
    let mut out = vec![0.0; a * cols];
    for r in 0..right {
        for i in 0..a {
            let src = &t.data[left * (i + a * r)..left * (i + a * r) + left];
            for (l, &v) in src.iter().enumerate() {
                out[i + a * (l + left * r)] = v;
            }
        }
    }
    Ok(Matrix::from_raw(a, cols, out))
}

/// Inverse of [`matricize`].
pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    validate_shape(shape)?;
    check_mode(shape.len(), mode)?;
    let a = shape[mode];
    let (left, right) = split_extents(shape, mode);
    if m.rows() != a || m.cols() != left * right {
        return Err(Error::domain(format!(
            "cannot fold a {}x{} matrix along mode {mode} into shape {shape:?}",
            m.rows(),
            m.cols()
        )));
    }
    let src = m.as_slice();
    let mut data = vec![0.0; a * left * right];
    for r in 0..right {
        for i in 0..a {
            let dst = &mut data[left * (i + a * r)..left * (i + a * r) + left];
            for (l, d) in dst.iter_mut().enumerate() {
                *d = src[i + a * (l + left * r)];
            }
        }
    }
    DenseTensor::new(shape.to_vec(), data)
}

/// Column-wise Kronecker product of `mats`, omitting index `skip` if given.
///
/// Row `x₁ + a₁(x₂ + a₂(…))` of column `r` is `∏ᵢ Sᵢ(xᵢ, r)` over the retained
/// matrices in list order, so the first retained matrix varies fastest.
pub fn khatri_rao(mats: &[FactorMatrix], skip: Option<usize>) -> Result<Matrix> {
    let kept: Vec<&FactorMatrix> = mats
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, m)| m)
        .collect();
    let first = kept
        .first()
        .ok_or_else(|| Error::domain("khatri_rao needs at least one matrix after skipping"))?;
    let rank = first.cols();
    if let Some(bad) = kept.iter().find(|m| m.cols() != rank) {
        return Err(Error::domain(format!(
            "khatri_rao column mismatch: {} vs {}",
            rank,
            bad.cols()
        )));
    }
    let rows: usize = kept.iter().map(|m| m.rows()).product();
    let mut out = vec![0.0; rows * rank];
    let mut col = Vec::with_capacity(rows);
    let mut next = Vec::with_capacity(rows);
    for r in 0..rank {
        col.clear();
        col.push(1.0);
        for m in &kept {
            next.clear();
            for &v in m.column(r) {
                next.extend(col.iter().map(|c| c * v));
            }
            std::mem::swap(&mut col, &mut next);
        }
        out[r * rows..(r + 1) * rows].copy_from_slice(&col);
    }
    Ok(Matrix::from_raw(rows, rank, out))
}

/// The Gram matrices `A(i) = S(i)ᵀ S(i)` of every factor.
#[derive(Clone, Debug, PartialEq)]
pub struct GramSet {
    grams: Vec<Matrix>,
}

impl GramSet {
    pub fn from_factors(factors: &[FactorMatrix]) -> Self {
        GramSet {
            grams: factors.iter().map(Matrix::gram).collect(),
        }
    }

    pub fn from_grams(grams: Vec<Matrix>) -> Result<Self> {
        let r = grams.first().map(|g| g.rows()).unwrap_or(0);
        if grams.len() < 2 || grams.iter().any(|g| g.rows() != r || g.cols() != r) {
            return Err(Error::domain(
                "a Gram set needs at least two square matrices of equal size",
            ));
        }
        Ok(GramSet { grams })
    }

    pub fn get(&self, mode: usize) -> &Matrix {
        &self.grams[mode]
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    /// Refreshes the Gram of one mode after its factor changed.
    pub fn update(&mut self, mode: usize, factor: &FactorMatrix) {
        self.grams[mode] = factor.gram();
    }
}

/// `Γ(n)`: the elementwise product of every Gram except `skip`.
pub fn gram_hadamard(grams: &GramSet, skip: usize) -> Result<Matrix> {
    check_mode(grams.len(), skip)?;
    let mut iter = grams
        .grams
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != skip)
        .map(|(_, g)| g);
    let mut out = iter
        .next()
        .ok_or_else(|| Error::domain("gram_hadamard needs at least two modes"))?
        .clone();
    for g in iter {
        out.hadamard_assign(g);
    }
    Ok(out)
}

/// Rank-R CP model `Σᵣ λᵣ s(1)ᵣ ∘ … ∘ s(N)ᵣ`.
#[derive(Clone, Debug, PartialEq)]
pub struct KruskalModel {
    factors: Vec<FactorMatrix>,
    weights: Vec<f64>,
}

impl KruskalModel {
    pub fn new(factors: Vec<FactorMatrix>, weights: Vec<f64>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::domain("a Kruskal model needs at least two factors"));
        }
        let rank = factors[0].cols();
        if factors.iter().any(|f| f.cols() != rank) {
            return Err(Error::domain("all factors must share the same rank"));
        }
        if weights.len() != rank {
            return Err(Error::domain(format!(
                "expected {rank} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::domain("weights must be finite"));
        }
        Ok(KruskalModel { factors, weights })
    }

    pub fn with_unit_weights(factors: Vec<FactorMatrix>) -> Result<Self> {
        let rank = factors.first().map_or(0, |f| f.cols());
        KruskalModel::new(factors, vec![1.0; rank])
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.rows()).collect()
    }

    pub fn factors(&self) -> &[FactorMatrix] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [FactorMatrix] {
        &mut self.factors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_parts(self) -> (Vec<FactorMatrix>, Vec<f64>) {
        (self.factors, self.weights)
    }

    /// Same tensor, with `λ` multiplied into the columns of factor `mode`
    /// and the weights reset to one.
    pub fn fold_weights_into(&self, mode: usize) -> KruskalModel {
        let mut out = self.clone();
        for (r, w) in self.weights.iter().enumerate() {
            for v in out.factors[mode].column_mut(r) {
                *v *= w;
            }
        }
        out.weights.iter_mut().for_each(|w| *w = 1.0);
        out
    }

    /// Scales every factor column to unit 2-norm, accumulating the norms into
    /// `λ`. Zero columns are left as they are and zero their weight.
    pub fn normalize(&mut self) {
        for f in &mut self.factors {
            for r in 0..f.cols() {
                let col = f.column_mut(r);
                let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    col.iter_mut().for_each(|v| *v /= norm);
                }
                self.weights[r] *= norm;
            }
        }
    }

    fn check_against(&self, shape: &[usize]) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::domain(format!(
                "model shape {:?} does not match tensor shape {shape:?}",
                self.shape()
            )));
        }
        Ok(())
    }
}

/// Partial contraction of a tensor with some of its factor matrices.
///
/// Holds the surviving modes (ascending, first fastest) followed by an
/// optional trailing rank index once at least one factor has been absorbed.
#[derive(Clone, Debug)]
pub(crate) struct Partial {
    pub modes: Vec<usize>,
    pub extents: Vec<usize>,
    pub rank: Option<usize>,
    pub data: Vec<f64>,
}

impl Partial {
    pub fn from_tensor(t: &DenseTensor) -> Self {
        Partial {
            modes: (0..t.order()).collect(),
            extents: t.shape.clone(),
            rank: None,
            data: t.data.clone(),
        }
    }

    /// Sums out `mode` against `factor`. The first contraction introduces the
    /// rank index; later ones are Hadamard in that index.
    pub fn contract(&self, mode: usize, factor: &FactorMatrix) -> Partial {
        let pos = self
            .modes
            .iter()
            .position(|&m| m == mode)
            .expect("mode already contracted");
        let a = self.extents[pos];
        debug_assert_eq!(factor.rows(), a);
        let rank = factor.cols();
        debug_assert!(self.rank.is_none_or(|r| r == rank));
        let left: usize = self.extents[..pos].iter().product();
        let right: usize = self.extents[pos + 1..].iter().product();
        let slab_in = left * a * right;
        let slab_out = left * right;
        let mut out = vec![0.0; slab_out * rank];
        for k in 0..rank {
            let input = match self.rank {
                None => &self.data[..],
                Some(_) => &self.data[k * slab_in..(k + 1) * slab_in],
            };
            let dst = &mut out[k * slab_out..(k + 1) * slab_out];
            let s = factor.column(k);
            if left == 1 {
                for (rr, d) in dst.iter_mut().enumerate() {
                    let fiber = &input[a * rr..a * (rr + 1)];
                    *d = fiber.iter().zip(s).map(|(x, y)| x * y).sum();
                }
            } else {
                for rr in 0..right {
                    let d = &mut dst[left * rr..left * (rr + 1)];
                    for (x, &sv) in s.iter().enumerate() {
                        if sv == 0.0 {
                            continue;
                        }
                        let src = &input[left * (x + a * rr)..left * (x + a * rr + 1)];
                        for (o, &v) in d.iter_mut().zip(src) {
                            *o += v * sv;
                        }
                    }
                }
            }
        }
        let mut modes = self.modes.clone();
        let mut extents = self.extents.clone();
        modes.remove(pos);
        extents.remove(pos);
        Partial {
            modes,
            extents,
            rank: Some(rank),
            data: out,
        }
    }
}

/// Order in which MTTKRP sums out the other modes: decreasing extent, ties
/// broken by mode index. Removing large modes first keeps intermediates small.
pub(crate) fn contraction_order(shape: &[usize], keep: &[usize]) -> Vec<usize> {
    let mut modes: Vec<usize> = (0..shape.len()).filter(|m| !keep.contains(m)).collect();
    modes.sort_by(|&x, &y| shape[y].cmp(&shape[x]).then(x.cmp(&y)));
    modes
}

/// Matricized tensor times Khatri-Rao product, `M(n) = X(n) K(n)`, where
/// `K(n)` is built from `factors` without their Kruskal weights. `K(n)` is
/// never materialized.
pub fn mttkrp(t: &DenseTensor, factors: &[FactorMatrix], mode: usize) -> Result<Matrix> {
    check_mode(t.order(), mode)?;
    let shape: Vec<usize> = factors.iter().map(|f| f.rows()).collect();
    if shape != t.shape {
        return Err(Error::domain(format!(
            "factor shapes {shape:?} do not match tensor shape {:?}",
            t.shape
        )));
    }
    let rank = factors[0].cols();
    if factors.iter().any(|f| f.cols() != rank) {
        return Err(Error::domain("factors disagree on rank"));
    }
    let order = contraction_order(&t.shape, &[mode]);
    let mut partial = Partial::from_tensor(t).contract(order[0], &factors[order[0]]);
    for &m in &order[1..] {
        partial = partial.contract(m, &factors[m]);
    }
    Ok(Matrix::from_raw(t.shape[mode], rank, partial.data))
}

/// Dense tensor `Σᵣ λᵣ ∏ₙ S(n)(iₙ, r)`.
pub fn reconstruct(model: &KruskalModel) -> DenseTensor {
    let shape = model.shape();
    let rank = model.rank();
    let lead = &model.factors[0];
    let rest = khatri_rao(&model.factors, Some(0)).expect("model invariants hold");
    let a0 = shape[0];
    let mut data = vec![0.0; a0 * rest.rows()];
    for r in 0..rank {
        let w = model.weights[r];
        if w == 0.0 {
            continue;
        }
        let s0 = lead.column(r);
        for (col, &k) in rest.column(r).iter().enumerate() {
            let scale = w * k;
            if scale == 0.0 {
                continue;
            }
            let dst = &mut data[a0 * col..a0 * (col + 1)];
            for (d, &v) in dst.iter_mut().zip(s0) {
                *d += v * scale;
            }
        }
    }
    DenseTensor { shape, data }
}

/// `‖t − [[model]]‖_F / ‖t‖_F`, or the absolute norm when `t` is zero.
pub fn fit_error(t: &DenseTensor, model: &KruskalModel) -> Result<f64> {
    model.check_against(&t.shape)?;
    let approx = reconstruct(model);
    let diff: f64 = t
        .data
        .iter()
        .zip(&approx.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm = t.frobenius_norm();
    Ok(if norm > 0.0 { diff / norm } else { diff })
}
