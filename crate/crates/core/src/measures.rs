//! Second-order subspace influence measures.
//!
//! For an eigensystem `(k_i, v_i)` of `W(F)`, a selection `S` of size `K` and
//! an influence function `IF`, the limiting measure is
//!
//! ```text
//! rho(S) = (1/K) sum_{j in S} sum_{r not in S} (v_j^T IF v_r)^2 / (k_j - k_r)^2
//! ```
//!
//! The estimator-specific functions evaluate the same quantity from closed
//! forms and must agree with [`rho_tilde_generic`] fed the matching influence
//! function.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::{Contaminant, CorrelationModel, PhdModel, PopulationModel};
use crate::spectral::{
    eigendecompose, require_condition1, rv_deficit, EigenOrdering, EigenSystem, Separation,
    SubspaceSelection, SymmetricMatrix, ILL_CONDITIONED_RELATIVE_GAP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureSource {
    Generic,
    Covariance,
    Correlation,
    Phd,
    Example1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceValue {
    pub value: f64,
    pub k: usize,
    pub source: MeasureSource,
    /// The closest selected/complementary eigenvalue pair is within
    /// `1e-6 * max |k|`: the value is dominated by a tiny denominator.
    pub ill_conditioned: bool,
}

impl InfluenceValue {
    fn new(value: f64, k: usize, source: MeasureSource, ill_conditioned: bool) -> Self {
        Self {
            value,
            k,
            source,
            ill_conditioned,
        }
    }
}

fn ill_conditioned(es: &EigenSystem, sep: Option<Separation>) -> bool {
    sep.is_some_and(|s| s.gap < ILL_CONDITIONED_RELATIVE_GAP * es.max_abs_eigenvalue())
}

/// Columns of `es` at the given indices.
fn columns(es: &EigenSystem, idx: &[usize]) -> DMatrix<f64> {
    let cols: Vec<_> = idx.iter().map(|&i| es.eigenvector(i)).collect();
    if cols.is_empty() {
        return DMatrix::zeros(es.dim(), 0);
    }
    DMatrix::from_columns(&cols)
}

/// `(1/K) sum_{a, b} cross[a, b]^2 / (k_{S[a]} - k_{S'[b]})^2`
fn weighted_cross_sum(es: &EigenSystem, sel: &SubspaceSelection, complement: &[usize], cross: &DMatrix<f64>) -> f64 {
    let k = es.eigenvalues();
    let mut total = 0.0;
    for (a, &j) in sel.indices().iter().enumerate() {
        for (b, &r) in complement.iter().enumerate() {
            let gap = k[j] - k[r];
            total += cross[(a, b)] * cross[(a, b)] / (gap * gap);
        }
    }
    total / sel.k() as f64
}

/// Generic measure from any symmetric influence matrix.
pub fn rho_tilde_generic(es: &EigenSystem, sel: &SubspaceSelection, ifm: &SymmetricMatrix) -> Result<InfluenceValue> {
    if ifm.dim() != es.dim() {
        return Err(Error::DimensionMismatch(format!(
            "influence matrix is {0}x{0}, eigensystem has dimension {1}",
            ifm.dim(),
            es.dim()
        )));
    }
    let sep = require_condition1(es, sel)?;
    let complement = sel.complement();
    let vs = columns(es, sel.indices());
    let vc = columns(es, &complement);
    let cross = vs.transpose() * ifm.as_matrix() * vc;
    let value = weighted_cross_sum(es, sel, &complement, &cross);
    Ok(InfluenceValue::new(value, sel.k(), MeasureSource::Generic, ill_conditioned(es, sep)))
}

fn check_es_dim(es: &EigenSystem, p: usize) -> Result<()> {
    if es.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "eigensystem has dimension {}, model has {}",
            es.dim(),
            p
        )));
    }
    Ok(())
}

/// Covariance closed form, `(1/K) sum y_j^2 y_r^2 / (l_j - l_r)^2` with
/// `y = V^T (x - mu)`. `es` must be the eigensystem of `model.sigma()`.
pub fn rho_tilde_cov(
    model: &PopulationModel,
    es: &EigenSystem,
    sel: &SubspaceSelection,
    c: &Contaminant,
) -> Result<InfluenceValue> {
    check_es_dim(es, model.dim())?;
    model.check_point(&c.x)?;
    let sep = require_condition1(es, sel)?;
    let y = es.eigenvectors().tr_mul(&(&c.x - model.mu()));
    let value = cov_closed_form(es.eigenvalues(), &y, sel);
    Ok(InfluenceValue::new(value, sel.k(), MeasureSource::Covariance, ill_conditioned(es, sep)))
}

/// Shared by the population and sample covariance paths: `y` holds the
/// scores of one observation on every eigenvector.
pub(crate) fn cov_closed_form(lambda: &DVector<f64>, y: &DVector<f64>, sel: &SubspaceSelection) -> f64 {
    let mut total = 0.0;
    for &j in sel.indices() {
        let yj2 = y[j] * y[j];
        for r in (0..lambda.len()).filter(|r| !sel.contains(*r)) {
            let gap = lambda[j] - lambda[r];
            total += yj2 * y[r] * y[r] / (gap * gap);
        }
    }
    total / sel.k() as f64
}

/// Correlation closed form with `u = G^T z` and `D = diag(z_i^2)`:
/// `(1/K) sum { u_j u_r - (a_j + a_r) g_j^T D g_r / 2 }^2 / (a_j - a_r)^2`.
pub fn rho_tilde_corr(
    model: &CorrelationModel,
    es: &EigenSystem,
    sel: &SubspaceSelection,
    c: &Contaminant,
) -> Result<InfluenceValue> {
    check_es_dim(es, model.dim())?;
    let z = model.standardize(&c.x)?;
    let sep = require_condition1(es, sel)?;
    let g = es.eigenvectors();
    let alpha = es.eigenvalues();
    let u = g.tr_mul(&z);
    let z2 = z.map(|v| v * v);
    let mut total = 0.0;
    for &j in sel.indices() {
        let dg_j = g.column(j).component_mul(&z2);
        for r in (0..es.dim()).filter(|r| !sel.contains(*r)) {
            let gdg = dg_j.dot(&g.column(r));
            let brace = u[j] * u[r] - 0.5 * (alpha[j] + alpha[r]) * gdg;
            let gap = alpha[j] - alpha[r];
            total += brace * brace / (gap * gap);
        }
    }
    let value = total / sel.k() as f64;
    Ok(InfluenceValue::new(value, sel.k(), MeasureSource::Correlation, ill_conditioned(es, sep)))
}

/// PHD closed form. `sel` must be exactly the set of nonzero eigenvalues of
/// `H` and the OLS slope must lie in their span.
pub fn rho_tilde_phd(
    model: &PhdModel,
    es: &EigenSystem,
    sel: &SubspaceSelection,
    c: &Contaminant,
) -> Result<InfluenceValue> {
    check_es_dim(es, model.dim())?;
    let y = c.y.ok_or(Error::MissingResponse)?;
    let pop = model.population();
    pop.check_point(&c.x)?;
    sel.check_dim(es.dim())?;

    let lambda = es.eigenvalues();
    let zero_tol = es.default_gap_tol();
    for i in 0..es.dim() {
        if sel.contains(i) != (lambda[i].abs() > zero_tol) {
            return Err(Error::InvalidSelection(format!(
                "PHD selection must be exactly the nonzero eigenvalues; eigenvalue {} is {:e}",
                i + 1,
                lambda[i]
            )));
        }
    }
    let sep = require_condition1(es, sel)?;
    let complement = sel.complement();
    let v = es.eigenvectors();
    let b = model.b_ols();
    let off_span: f64 = complement.iter().map(|&r| v.column(r).dot(b).powi(2)).sum::<f64>().sqrt();
    if off_span > 1e-8 * b.norm() + 1e-12 {
        return Err(Error::InvalidArgument(
            "OLS slope must lie in the span of the selected eigenvectors".into(),
        ));
    }

    let w = pop.solve(&(&c.x - pop.mu()));
    let wm = v.tr_mul(&w);
    let sigma_w = pop.sigma().as_matrix() * &w;
    let vc = columns(es, &complement);
    let sinv_vc = pop.solve_matrix(&vc);
    let resid = y - model.ey();

    let mut total = 0.0;
    for &j in sel.indices() {
        let eta_j = v.column(j);
        let lead = lambda[j] * eta_j.dot(&sigma_w) + eta_j.dot(b);
        let mut inner = 0.0;
        for (col, &r) in complement.iter().enumerate() {
            let cross = eta_j.dot(&sinv_vc.column(col));
            let t = resid * (wm[j] * wm[r] - cross) - lead * wm[r];
            inner += t * t;
        }
        total += inner / (lambda[j] * lambda[j]);
    }
    let value = total / sel.k() as f64;
    Ok(InfluenceValue::new(value, sel.k(), MeasureSource::Phd, ill_conditioned(es, sep)))
}

/// Single-eigenvector measure `S = {j}`.
pub fn k1_norm_reduction(es: &EigenSystem, j: usize, ifm: &SymmetricMatrix) -> Result<InfluenceValue> {
    let sel = SubspaceSelection::new([j], es.dim())?;
    rho_tilde_generic(es, &sel, ifm)
}

/// Classical influence function of the `j`-th eigenvector,
/// `sum_{r != j} (v_r^T IF v_j) / (k_j - k_r) v_r`. Requires `k_j` simple.
pub fn eigenvector_influence(es: &EigenSystem, j: usize, ifm: &SymmetricMatrix) -> Result<DVector<f64>> {
    let sel = SubspaceSelection::new([j], es.dim())?;
    require_condition1(es, &sel)?;
    let vj = es.eigenvector(j);
    let if_vj = ifm.as_matrix() * vj;
    let mut out = DVector::zeros(es.dim());
    for r in (0..es.dim()).filter(|&r| r != j) {
        let vr = es.eigenvector(r);
        out += vr * (vr.dot(&if_vj) / (es.eigenvalue(j) - es.eigenvalue(r)));
    }
    Ok(out)
}

/// Closed form for two-block covariances `diag(l1 I_K, lp I_{p-K})`:
/// `l1 lp MD^4 / (K (l1 - lp)^2) * c (1 - c)` with `c = cos^2(theta)`.
pub fn example1_closed_form(lambda1: f64, lambdap: f64, k: usize, md: f64, cos2theta: f64) -> Result<InfluenceValue> {
    if !(lambdap < lambda1) {
        return Err(Error::InvalidArgument(format!(
            "two-block form needs lambda_p < lambda_1, got {lambdap} and {lambda1}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if !(md >= 0.0) || !md.is_finite() {
        return Err(Error::InvalidArgument(format!("Mahalanobis distance {md} must be >= 0")));
    }
    if !(0.0..=1.0).contains(&cos2theta) {
        return Err(Error::InvalidArgument(format!("cos^2 {cos2theta} outside [0, 1]")));
    }
    let gap = lambda1 - lambdap;
    let value = lambda1 * lambdap * md.powi(4) / (k as f64 * gap * gap) * cos2theta * (1.0 - cos2theta);
    Ok(InfluenceValue::new(value, k, MeasureSource::Example1, false))
}

/// `sqrt((x - mu)^T Sigma^{-1} (x - mu))` through a triangular solve.
pub fn mahalanobis(model: &PopulationModel, x: &DVector<f64>) -> Result<f64> {
    Ok(model.whiten(x)?.norm())
}

/// A contamination weight together with the contaminant.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationProbe {
    epsilon: f64,
    direction: Contaminant,
}

impl PerturbationProbe {
    pub fn new(epsilon: f64, direction: Contaminant) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} must lie in (0, 1)")));
        }
        Ok(Self { epsilon, direction })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn direction(&self) -> &Contaminant {
        &self.direction
    }

    /// Covariance of `(1 - e) F + e delta_x`:
    /// `(1 - e) Sigma + e (1 - e) (x - mu)(x - mu)^T`.
    pub fn perturbed_covariance(&self, model: &PopulationModel) -> Result<SymmetricMatrix> {
        model.check_point(&self.direction.x)?;
        let e = self.epsilon;
        let d = &self.direction.x - model.mu();
        let m = model.sigma().as_matrix() * (1.0 - e) + &d * d.transpose() * (e * (1.0 - e));
        SymmetricMatrix::new(m)
    }
}

/// Finite-contamination value `(1/e^2) [1 - trace(P_S P_S(e)) / K]` for the
/// covariance functional, from two exact eigen-decompositions.
///
/// The bracket is evaluated as the mean squared residual of the perturbed
/// frame off the unperturbed span, which equals `1 - RV` without the
/// cancellation of subtracting a trace from one.
pub fn finite_epsilon_rho(model: &PopulationModel, sel: &SubspaceSelection, c: &Contaminant, epsilon: f64) -> Result<f64> {
    let probe = PerturbationProbe::new(epsilon, c.clone())?;
    let base = eigendecompose(model.sigma(), EigenOrdering::AbsoluteDescending)?;
    let perturbed = eigendecompose(&probe.perturbed_covariance(model)?, EigenOrdering::AbsoluteDescending)?;
    require_condition1(&base, sel)?;
    require_condition1(&perturbed, sel)?;
    let a = base.frame(sel)?;
    let b = perturbed.frame(sel)?;
    Ok(rv_deficit(&a, &b)? / (epsilon * epsilon))
}
