//! Sample influence of each observation on an estimated eigen-subspace.
//!
//! * [`exact_loo`]: refits the estimator without each observation and scales
//!   the loss in subspace agreement by `(n - 1)^2`.
//! * [`approx_influence`]: one eigen-analysis at the full sample, then the
//!   limiting measure with the empirical influence function of each point.
//! * [`shortcut_influence`]: the covariance approximation computed in the
//!   `n`-dimensional dual space, summing only over the at most `n - 1`
//!   nonzero sample eigenvalues.
//!
//! Covariance and correlation fits switch to the dual (Gram matrix) route
//! when `p > 2n`; a `p x p` matrix is never formed there.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::influence::{contaminant_at, estimate, Divisor, Estimator, EstimatorKind, FittedModel};
use crate::measures::{cov_closed_form, rho_tilde_generic};
use crate::spectral::{
    canonicalize_sign, check_separation, eigendecompose, eigendecompose_raw, require_condition1,
    rv_deficit, EigenOrdering, OrthonormalFrame, Separation, SubspaceSelection,
    DEFAULT_RELATIVE_GAP_TOL, ILL_CONDITIONED_RELATIVE_GAP,
};

/// How an estimator is eigen-analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitRoute {
    /// Dual for covariance/correlation when `p > 2n`, primal otherwise.
    #[default]
    Auto,
    /// `p x p` estimate and its full eigen-decomposition.
    Primal,
    /// `n x n` Gram matrix of the (scaled) centred rows.
    Dual,
}

#[derive(Debug, Clone, Default)]
pub struct LooOptions {
    /// Zero-based observations to evaluate, in output order. All when `None`.
    pub observations: Option<Vec<usize>>,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    pub route: FitRoute,
}

/// Frame of the selected eigenvectors of one fit, plus its spectrum.
struct SubspaceFit {
    frame: OrthonormalFrame,
    separation: Option<Separation>,
    max_abs: f64,
}

fn use_dual(data: &Dataset, estimator: &Estimator, route: FitRoute) -> bool {
    let supported = matches!(estimator.kind, EstimatorKind::Covariance | EstimatorKind::Correlation);
    match route {
        FitRoute::Auto => supported && data.p() > 2 * data.n(),
        FitRoute::Dual => supported,
        FitRoute::Primal => false,
    }
}

/// Centred rows scaled so that `Z^T Z / d` is the estimate, with `d`.
fn dual_factor(data: &Dataset, estimator: &Estimator) -> Result<(DMatrix<f64>, f64)> {
    let m = data.n();
    let mut z = data.centered();
    match estimator.kind {
        EstimatorKind::Covariance => Ok((z, estimator.divisor.value(m))),
        EstimatorKind::Correlation => {
            for (j, mut col) in z.column_iter_mut().enumerate() {
                let var = col.norm_squared() / m as f64;
                let scale = data.x().column(j).amax().max(1.0);
                if !(var > 1e-24 * scale * scale) {
                    return Err(Error::ZeroVariance(format!("column {}", j + 1)));
                }
                col /= var.sqrt();
            }
            Ok((z, m as f64))
        }
        EstimatorKind::Phd => Err(Error::InvalidArgument(
            "the principal Hessian estimator has no dual route".into(),
        )),
    }
}

/// Eigen-analysis of `Z^T Z / d` through `Z Z^T / d`. Returns the dual
/// eigensystem and the `p`-space spectrum (dual eigenvalues padded with the
/// structural zeros).
fn dual_spectrum(z: &DMatrix<f64>, d: f64) -> Result<(crate::spectral::EigenSystem, Vec<f64>)> {
    let gram = (z * z.transpose()) / d;
    let es = eigendecompose_raw(&gram, EigenOrdering::AbsoluteDescending)?;
    let p = z.ncols();
    let mut spectrum: Vec<f64> = es.eigenvalues().iter().copied().take(p).collect();
    spectrum.resize(p, 0.0);
    Ok((es, spectrum))
}

fn fit_subspace(data: &Dataset, estimator: &Estimator, sel: &SubspaceSelection, route: FitRoute) -> Result<SubspaceFit> {
    sel.check_dim(data.p())?;
    if use_dual(data, estimator, route) {
        let (z, d) = dual_factor(data, estimator)?;
        let (es, spectrum) = dual_spectrum(&z, d)?;
        let max_abs = spectrum.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = DEFAULT_RELATIVE_GAP_TOL * max_abs;
        let separation = check_separation(&spectrum, sel, tol).map_err(Error::Condition)?;
        let mut cols = DMatrix::zeros(data.p(), sel.k());
        for (c, &j) in sel.indices().iter().enumerate() {
            let mu = spectrum[j];
            if !(mu > tol) || j >= es.dim() {
                return Err(Error::InvalidSelection(format!(
                    "eigenvalue {} is zero: the selection exceeds the rank of the estimate",
                    j + 1
                )));
            }
            let eta = z.tr_mul(&es.eigenvector(j)) / (d * mu).sqrt();
            cols.set_column(c, &eta);
            canonicalize_sign(cols.column_mut(c));
        }
        Ok(SubspaceFit {
            frame: OrthonormalFrame::from_columns_unchecked(cols),
            separation,
            max_abs,
        })
    } else {
        let w = estimate(data, estimator)?;
        let es = eigendecompose(&w, EigenOrdering::AbsoluteDescending)?;
        let separation = require_condition1(&es, sel)?;
        Ok(SubspaceFit {
            frame: es.frame(sel)?,
            separation,
            max_abs: es.max_abs_eigenvalue(),
        })
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Exact leave-one-out influence `(n-1)^2 [1 - trace(P_S P_S,(i)) / K]` for
/// every observation.
pub fn exact_loo(data: &Dataset, estimator: &Estimator, sel: &SubspaceSelection) -> Result<Vec<f64>> {
    exact_loo_with(data, estimator, sel, &LooOptions::default())
}

/// [`exact_loo`] restricted to `options.observations` (returned in that
/// order), with explicit threading and fit route.
pub fn exact_loo_with(
    data: &Dataset,
    estimator: &Estimator,
    sel: &SubspaceSelection,
    options: &LooOptions,
) -> Result<Vec<f64>> {
    let n = data.n();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("leave-one-out needs n >= 3, got {n}")));
    }
    let observations: Vec<usize> = match &options.observations {
        Some(obs) => {
            if let Some(&bad) = obs.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidArgument(format!(
                    "observation {} out of range (n = {n})",
                    bad + 1
                )));
            }
            obs.clone()
        }
        None => (0..n).collect(),
    };
    // the route is fixed by the full sample so all fits are comparable
    let route = match options.route {
        FitRoute::Auto if use_dual(data, estimator, FitRoute::Auto) => FitRoute::Dual,
        FitRoute::Auto => FitRoute::Primal,
        r => r,
    };
    let full = fit_subspace(data, estimator, sel, route)?;
    let scale = (n as f64 - 1.0).powi(2);

    let one = |i: usize| -> Result<f64> {
        let reduced = data.without_row(i);
        let fit = fit_subspace(&reduced, estimator, sel, route).map_err(|e| match e {
            Error::Condition(violation) => Error::ConditionAtDeletion {
                observation: i + 1,
                violation,
            },
            other => other,
        })?;
        Ok(scale * rv_deficit(&full.frame, &fit.frame)?)
    };

    let results: Vec<Result<f64>> = if options.threads == Some(1) {
        observations.iter().map(|&i| one(i)).collect()
    } else {
        with_pool(options.threads, || observations.par_iter().map(|&i| one(i)).collect())?
    };
    results.into_iter().collect()
}

/// Scores of every centred observation on every eigenvector of the sample
/// covariance, with the ordered eigenvalues.
fn covariance_scores(data: &Dataset, divisor: Divisor, sel: &SubspaceSelection) -> Result<(DMatrix<f64>, DVector<f64>, bool)> {
    let s = estimate(data, &Estimator::covariance().with_divisor(divisor))?;
    let es = eigendecompose(&s, EigenOrdering::AbsoluteDescending)?;
    let sep = require_condition1(&es, sel)?;
    let ill = sep.is_some_and(|s| s.gap < ILL_CONDITIONED_RELATIVE_GAP * es.max_abs_eigenvalue());
    let scores = data.centered() * es.eigenvectors();
    Ok((scores, es.eigenvalues().clone(), ill))
}

/// One-pass approximation to [`exact_loo`]. For the covariance estimator the
/// closed form in the sample scores is used; other estimators go through the
/// empirical influence function.
pub fn approx_influence(data: &Dataset, estimator: &Estimator, sel: &SubspaceSelection) -> Result<Vec<f64>> {
    sel.check_dim(data.p())?;
    match estimator.kind {
        EstimatorKind::Covariance => {
            let (scores, lambda, _) = covariance_scores(data, estimator.divisor, sel)?;
            Ok((0..data.n())
                .map(|i| cov_closed_form(&lambda, &scores.row(i).transpose(), sel))
                .collect())
        }
        _ => approx_influence_generic(data, estimator, sel),
    }
}

/// Approximation through `rho_tilde_generic` and the empirical influence
/// function, for any estimator.
pub fn approx_influence_generic(data: &Dataset, estimator: &Estimator, sel: &SubspaceSelection) -> Result<Vec<f64>> {
    sel.check_dim(data.p())?;
    let model = FittedModel::fit(data, estimator)?;
    let es = eigendecompose(model.matrix(), EigenOrdering::AbsoluteDescending)?;
    require_condition1(&es, sel)?;
    (0..data.n())
        .map(|i| {
            let c = contaminant_at(data, i)?;
            Ok(rho_tilde_generic(&es, sel, &model.influence(&c)?)?.value)
        })
        .collect()
}

/// Whether the approximation at the full sample is flagged ill-conditioned.
pub fn approx_ill_conditioned(data: &Dataset, estimator: &Estimator, sel: &SubspaceSelection) -> Result<bool> {
    let fit = fit_subspace(data, estimator, sel, FitRoute::Auto)?;
    Ok(fit
        .separation
        .is_some_and(|s| s.gap < ILL_CONDITIONED_RELATIVE_GAP * fit.max_abs))
}

/// Covariance approximation summing only over the first `n - 1` sample
/// eigenvalues, the only ones that can be nonzero. Works on the `n x n` Gram
/// matrix: `y_ri = sqrt(d mu_r) u_ri`.
pub fn shortcut_influence(data: &Dataset, sel: &SubspaceSelection, divisor: Divisor) -> Result<Vec<f64>> {
    let n = data.n();
    sel.check_dim(data.p())?;
    if n < 3 {
        return Err(Error::InvalidArgument(format!("the shortcut needs n >= 3, got {n}")));
    }
    if sel.max_index() + 1 > n - 2 {
        return Err(Error::InvalidSelection(format!(
            "the shortcut needs every selected index <= n - 2 = {}, got {}",
            n - 2,
            sel.max_index() + 1
        )));
    }
    let xc = data.centered();
    let d = divisor.value(n);
    let (es, spectrum) = dual_spectrum(&xc, d)?;
    let max_abs = spectrum.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    check_separation(&spectrum, sel, DEFAULT_RELATIVE_GAP_TOL * max_abs).map_err(Error::Condition)?;

    let rank_bound = (n - 1).min(data.p());
    let lambda = DVector::from_iterator(rank_bound, spectrum.iter().copied().take(rank_bound));
    let truncated = SubspaceSelection::new(sel.indices().iter().copied(), rank_bound)?;
    let root = lambda.map(|l| (d * l.max(0.0)).sqrt());
    Ok((0..n)
        .map(|i| {
            let y = DVector::from_fn(rank_bound, |r, _| root[r] * es.eigenvectors()[(i, r)]);
            cov_closed_form(&lambda, &y, &truncated)
        })
        .collect())
}

/// Loop iteration counts over all `n` observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationCounts {
    /// `n K (p - 1)`: every `r != j` visited for each selected `j`.
    pub full: u64,
    /// `n K (n - 1 - K)`: complementary indices among the first `n - 1` only.
    pub shortcut: u64,
}

impl IterationCounts {
    pub fn ratio(&self) -> f64 {
        self.shortcut as f64 / self.full as f64
    }
}

pub fn iteration_counts(n: usize, p: usize, k: usize) -> Result<IterationCounts> {
    if n < 3 || k == 0 || k >= p.min(n - 1) {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= K < min(p, n - 1); got n = {n}, p = {p}, K = {k}"
        )));
    }
    let (n, p, k) = (n as u64, p as u64, k as u64);
    Ok(IterationCounts {
        full: n * k * (p - 1),
        shortcut: n * k * (n - 1 - k),
    })
}

/// Average ranks (one-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("Spearman correlation needs at least two values".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Spearman input".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance("ranks".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
