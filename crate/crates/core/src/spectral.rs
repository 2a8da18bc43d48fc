//! Symmetric eigen-analysis and subspace agreement measures.
//!
//! Eigenvalues are ordered by decreasing absolute value by default, with ties
//! broken by decreasing signed value and then by the solver's original index.
//! Eigenvectors are sign-canonicalized so that the entry of largest magnitude
//! is positive (the first such entry when several share the maximum).
//!
//! Projectors onto subspaces are never formed explicitly. Every trace of a
//! projector product is evaluated through the `K x K` cross-Gram matrix of
//! the two orthonormal frames.

use std::cmp::Ordering as CmpOrdering;

use nalgebra::{DMatrix, DVector, DVectorView, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, GapViolation, Result};

/// Orthonormality tolerance for frames and eigenvector sets.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Relative tolerance (scaled by `max |eigenvalue|`) used when checking the
/// separation between a selected subspace and its complement.
pub const DEFAULT_RELATIVE_GAP_TOL: f64 = 1e-8;

/// Relative separation below which a result is flagged as ill-conditioned.
pub const ILL_CONDITIONED_RELATIVE_GAP: f64 = 1e-6;

const SIGN_TIE_TOL: f64 = 1e-12;

/// A real symmetric matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Symmetrizes `m` as `(m + m^T) / 2`, so the stored entries are exactly
    /// symmetric.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::DimensionMismatch("empty matrix".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("symmetric matrix".into()));
        }
        Ok(Self::symmetrized(m))
    }

    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let p = m.nrows();
        let mut out = m;
        for i in 0..p {
            for j in (i + 1)..p {
                let v = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        SymmetricMatrix(out)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn identity(p: usize) -> Self {
        SymmetricMatrix(DMatrix::identity(p, p))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Quadratic form `u^T M v`.
    pub fn bilinear(&self, u: &DVectorView<'_, f64>, v: &DVectorView<'_, f64>) -> f64 {
        let mv = &self.0 * v;
        u.dot(&mv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EigenOrdering {
    /// `|k_1| >= |k_2| >= ...`
    #[default]
    AbsoluteDescending,
    /// `k_1 >= k_2 >= ...`
    Descending,
}

/// Ordered eigenvalues and orthonormal eigenvectors (stored as columns).
#[derive(Debug, Clone)]
pub struct EigenSystem {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    ordering: EigenOrdering,
}

impl EigenSystem {
    /// Builds an eigensystem from explicit parts, validating ordering and
    /// orthonormality. Signs are taken as given.
    pub fn from_parts(
        values: DVector<f64>,
        vectors: DMatrix<f64>,
        ordering: EigenOrdering,
    ) -> Result<Self> {
        let p = values.len();
        if vectors.nrows() != p || vectors.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} eigenvalues but eigenvector matrix is {}x{}",
                p,
                vectors.nrows(),
                vectors.ncols()
            )));
        }
        if values.iter().chain(vectors.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("eigensystem".into()));
        }
        let ordered = values.as_slice().windows(2).all(|w| match ordering {
            EigenOrdering::AbsoluteDescending => w[0].abs() >= w[1].abs(),
            EigenOrdering::Descending => w[0] >= w[1],
        });
        if !ordered {
            return Err(Error::InvalidArgument(format!(
                "eigenvalues are not in {ordering:?} order"
            )));
        }
        let dev = orthonormality_deviation(&vectors);
        if dev > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(dev));
        }
        Ok(Self {
            values,
            vectors,
            ordering,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn ordering(&self) -> EigenOrdering {
        self.ordering
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn eigenvalue(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn eigenvector(&self, i: usize) -> DVectorView<'_, f64> {
        self.vectors.column(i)
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `1e-8 * max |eigenvalue|`.
    pub fn default_gap_tol(&self) -> f64 {
        DEFAULT_RELATIVE_GAP_TOL * self.max_abs_eigenvalue()
    }

    /// Orthonormal frame made of the selected eigenvectors, in selection order.
    pub fn frame(&self, sel: &SubspaceSelection) -> Result<OrthonormalFrame> {
        sel.check_dim(self.dim())?;
        let cols: Vec<_> = sel.indices().iter().map(|&i| self.vectors.column(i)).collect();
        Ok(OrthonormalFrame(DMatrix::from_columns(&cols)))
    }

    /// `sum_i k_i v_i v_i^T`
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |r, c| {
            self.vectors[(r, c)] * self.values[c]
        });
        scaled * self.vectors.transpose()
    }
}

/// Largest absolute entry of `V^T V - I`.
pub(crate) fn orthonormality_deviation(v: &DMatrix<f64>) -> f64 {
    let gram = v.transpose() * v;
    let k = gram.nrows();
    let mut worst = 0.0_f64;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Flips `v` so that its largest-magnitude entry is positive.
pub(crate) fn canonicalize_sign(mut v: nalgebra::DVectorViewMut<'_, f64>) {
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .position(|x| x.abs() >= max - SIGN_TIE_TOL * max)
        .unwrap_or(0);
    if v[pivot] < 0.0 {
        v.neg_mut();
    }
}

/// Permutation that sorts `values` in the requested order, ties broken by
/// signed value descending, then by original index.
pub(crate) fn order_permutation(values: &[f64], ordering: EigenOrdering) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let (va, vb) = (values[a], values[b]);
        let primary = match ordering {
            EigenOrdering::AbsoluteDescending => vb.abs().total_cmp(&va.abs()),
            EigenOrdering::Descending => CmpOrdering::Equal,
        };
        primary.then(vb.total_cmp(&va)).then(a.cmp(&b))
    });
    idx
}

/// Assembles an eigensystem from unordered solver output: sorts, canonicalizes
/// signs. The caller guarantees orthonormal columns.
pub(crate) fn assemble(values: &[f64], vectors: &DMatrix<f64>, ordering: EigenOrdering) -> EigenSystem {
    let perm = order_permutation(values, ordering);
    let sorted_values = DVector::from_iterator(perm.len(), perm.iter().map(|&i| values[i]));
    let mut sorted_vectors = DMatrix::zeros(vectors.nrows(), perm.len());
    for (dst, &src) in perm.iter().enumerate() {
        sorted_vectors.set_column(dst, &vectors.column(src));
        canonicalize_sign(sorted_vectors.column_mut(dst));
    }
    EigenSystem {
        values: sorted_values,
        vectors: sorted_vectors,
        ordering,
    }
}

pub fn eigendecompose(m: &SymmetricMatrix, ordering: EigenOrdering) -> Result<EigenSystem> {
    eigendecompose_raw(m.as_matrix(), ordering)
}

pub(crate) fn eigendecompose_raw(m: &DMatrix<f64>, ordering: EigenOrdering) -> Result<EigenSystem> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to the eigensolver".into()));
    }
    let p = m.nrows();
    let max_iter = 1000 * p.max(1) + 10_000;
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, max_iter).ok_or(Error::NoConvergence)?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence);
    }
    Ok(assemble(eig.eigenvalues.as_slice(), &eig.eigenvectors, ordering))
}

/// A set `S` of eigen-indices (zero-based, sorted, distinct) within `0..p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceSelection {
    indices: Vec<usize>,
    dim: usize,
}

impl SubspaceSelection {
    /// `indices` are zero-based. `1 <= K <= p`; the full space (`K = p`) is
    /// accepted and makes every influence measure vanish.
    pub fn new(indices: impl IntoIterator<Item = usize>, dim: usize) -> Result<Self> {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        let before = indices.len();
        indices.dedup();
        if indices.len() != before {
            return Err(Error::InvalidSelection("repeated index".into()));
        }
        if indices.is_empty() {
            return Err(Error::InvalidSelection("empty selection".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= dim {
                return Err(Error::InvalidSelection(format!(
                    "index {} out of range for dimension {}",
                    last + 1,
                    dim
                )));
            }
        }
        Ok(Self { indices, dim })
    }

    /// One-based indices, as users write them (`{1, 2, 3}`).
    pub fn from_one_based(indices: &[usize], dim: usize) -> Result<Self> {
        if indices.contains(&0) {
            return Err(Error::InvalidSelection("one-based indices start at 1".into()));
        }
        Self::new(indices.iter().map(|i| i - 1), dim)
    }

    /// `{1, ..., k}`
    pub fn leading(k: usize, dim: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidSelection("K must be at least 1".into()));
        }
        Self::new(0..k, dim)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn complement(&self) -> Vec<usize> {
        (0..self.dim).filter(|i| !self.contains(*i)).collect()
    }

    pub fn max_index(&self) -> usize {
        *self.indices.last().expect("selection is non-empty")
    }

    /// Same indices in a space of another dimension.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        Self::new(self.indices.iter().copied(), dim)
    }

    pub(crate) fn check_dim(&self, p: usize) -> Result<()> {
        if self.dim != p {
            return Err(Error::DimensionMismatch(format!(
                "selection is for dimension {}, eigensystem has {}",
                self.dim, p
            )));
        }
        Ok(())
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i + 1).collect()
    }
}

/// `K` orthonormal columns in `R^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalFrame(DMatrix<f64>);

impl OrthonormalFrame {
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        if columns.ncols() == 0 || columns.nrows() == 0 {
            return Err(Error::DimensionMismatch("empty frame".into()));
        }
        if columns.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frame".into()));
        }
        let dev = orthonormality_deviation(&columns);
        if dev > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(dev));
        }
        Ok(Self(columns))
    }

    pub fn from_vectors(vectors: &[DVector<f64>]) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::DimensionMismatch("empty frame".into()));
        }
        let p = vectors[0].len();
        if vectors.iter().any(|v| v.len() != p) {
            return Err(Error::DimensionMismatch("frame vectors differ in length".into()));
        }
        Self::new(DMatrix::from_columns(vectors))
    }

    pub(crate) fn from_columns_unchecked(columns: DMatrix<f64>) -> Self {
        Self(columns)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Minimal separation between a selected and a complementary eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separation {
    pub selected: usize,
    pub complement: usize,
    pub gap: f64,
}

fn min_separation(values: &[f64], sel: &SubspaceSelection) -> Option<Separation> {
    let complement = sel.complement();
    let mut best: Option<Separation> = None;
    for &j in sel.indices() {
        for &r in &complement {
            let gap = (values[j] - values[r]).abs();
            if best.map_or(true, |b| gap < b.gap) {
                best = Some(Separation {
                    selected: j,
                    complement: r,
                    gap,
                });
            }
        }
    }
    best
}

/// Checks that no selected eigenvalue equals (to within `gap_tol`) a
/// complementary one. Ties inside `S` or inside `S'` are allowed. Returns
/// the closest pair on success (`None` when `S'` is empty).
pub fn check_condition1(
    es: &EigenSystem,
    sel: &SubspaceSelection,
    gap_tol: f64,
) -> std::result::Result<Option<Separation>, GapViolation> {
    check_separation(es.eigenvalues().as_slice(), sel, gap_tol)
}

/// [`check_condition1`] on a bare ordered spectrum.
pub(crate) fn check_separation(
    values: &[f64],
    sel: &SubspaceSelection,
    gap_tol: f64,
) -> std::result::Result<Option<Separation>, GapViolation> {
    match min_separation(values, sel) {
        Some(s) if !(s.gap > gap_tol) => Err(GapViolation {
            selected: s.selected,
            complement: s.complement,
            gap: s.gap,
            tolerance: gap_tol,
        }),
        other => Ok(other),
    }
}

/// [`check_condition1`] with the default relative tolerance, as an [`Error`].
pub(crate) fn require_condition1(es: &EigenSystem, sel: &SubspaceSelection) -> Result<Option<Separation>> {
    sel.check_dim(es.dim())?;
    check_condition1(es, sel, es.default_gap_tol()).map_err(Error::Condition)
}

fn check_same_dim(a: &OrthonormalFrame, b: &OrthonormalFrame) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "frames live in R^{} and R^{}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn check_same_k(a: &OrthonormalFrame, b: &OrthonormalFrame) -> Result<()> {
    check_same_dim(a, b)?;
    if a.k() != b.k() {
        return Err(Error::DimensionMismatch(format!(
            "frames have {} and {} columns",
            a.k(),
            b.k()
        )));
    }
    Ok(())
}

/// `trace(P_A P_B) = sum_{i,j} (a_i . b_j)^2`.
pub fn trace_product(a: &OrthonormalFrame, b: &OrthonormalFrame) -> Result<f64> {
    check_same_dim(a, b)?;
    let cross = a.columns().transpose() * b.columns();
    Ok(cross.iter().map(|v| v * v).sum())
}

/// RV coefficient / GCD measure, `trace(P_A P_B) / K`.
pub fn rv_gcd(a: &OrthonormalFrame, b: &OrthonormalFrame) -> Result<f64> {
    check_same_k(a, b)?;
    Ok(trace_product(a, b)? / a.k() as f64)
}

/// Residuals `a_k - P_B a_k` for every column of `a`.
fn residuals(a: &OrthonormalFrame, b: &OrthonormalFrame) -> DMatrix<f64> {
    let coef = b.columns().transpose() * a.columns();
    a.columns() - b.columns() * coef
}

/// Benasseni's coefficient `1 - (1/K) sum_k ||a_k - P_B a_k||`. Not symmetric.
pub fn benasseni_rho1(a: &OrthonormalFrame, b: &OrthonormalFrame) -> Result<f64> {
    check_same_k(a, b)?;
    let res = residuals(a, b);
    let total: f64 = res.column_iter().map(|c| c.norm()).sum();
    Ok(1.0 - total / a.k() as f64)
}

/// `1 - (1/K) sum_k ||a_k - P_B a_k||^2`, which equals [`rv_gcd`].
pub fn squared_residual_identity(a: &OrthonormalFrame, b: &OrthonormalFrame) -> Result<f64> {
    check_same_k(a, b)?;
    let res = residuals(a, b);
    let total: f64 = res.column_iter().map(|c| c.norm_squared()).sum();
    Ok(1.0 - total / a.k() as f64)
}

/// `1 - rv_gcd(a, b)`, evaluated as `(1/K) sum_k ||b_k - P_A b_k||^2` so that
/// nearly coincident spans keep full relative precision.
pub fn rv_deficit(a: &OrthonormalFrame, b: &OrthonormalFrame) -> Result<f64> {
    check_same_k(a, b)?;
    let res = residuals(b, a);
    let total: f64 = res.column_iter().map(|c| c.norm_squared()).sum();
    Ok(total / a.k() as f64)
}
