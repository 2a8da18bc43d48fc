//! Population influence functions for the covariance, correlation and
//! principal Hessian (PHD) matrix estimators, and their empirical plug-in
//! versions at the sample distribution.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::spectral::SymmetricMatrix;

/// Divisor used for sample second moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Divisor {
    /// `1/n`: the covariance functional evaluated at the empirical
    /// distribution. Empirical influence values then average to zero.
    #[default]
    N,
    /// `1/(n-1)`: the unbiased estimator.
    NMinusOne,
}

impl Divisor {
    pub fn value(self, n: usize) -> f64 {
        match self {
            Divisor::N => n as f64,
            Divisor::NMinusOne => n as f64 - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Covariance,
    Correlation,
    Phd,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Covariance => "cov",
            EstimatorKind::Correlation => "corr",
            EstimatorKind::Phd => "phd",
        }
    }
}

/// A symmetric matrix estimator together with its sample conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Estimator {
    pub kind: EstimatorKind,
    /// Only affects the covariance estimator.
    pub divisor: Divisor,
}

impl Estimator {
    pub fn covariance() -> Self {
        Self {
            kind: EstimatorKind::Covariance,
            divisor: Divisor::N,
        }
    }

    pub fn correlation() -> Self {
        Self {
            kind: EstimatorKind::Correlation,
            divisor: Divisor::N,
        }
    }

    pub fn phd() -> Self {
        Self {
            kind: EstimatorKind::Phd,
            divisor: Divisor::N,
        }
    }

    pub fn with_divisor(mut self, divisor: Divisor) -> Self {
        self.divisor = divisor;
        self
    }
}

/// Location and (positive definite) scatter of `F_{mu, Sigma}`.
#[derive(Debug, Clone)]
pub struct PopulationModel {
    mu: DVector<f64>,
    sigma: SymmetricMatrix,
    chol: Cholesky<f64, Dyn>,
}

impl PopulationModel {
    pub fn new(mu: DVector<f64>, sigma: SymmetricMatrix) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {}, covariance is {}x{}",
                mu.len(),
                sigma.dim(),
                sigma.dim()
            )));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mean vector".into()));
        }
        let chol = Cholesky::new(sigma.as_matrix().clone())
            .ok_or_else(|| Error::NotPositiveDefinite("covariance matrix".into()))?;
        Ok(Self { mu, sigma, chol })
    }

    pub fn standard(p: usize) -> Self {
        Self::new(DVector::zeros(p), SymmetricMatrix::identity(p)).expect("identity is positive definite")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &SymmetricMatrix {
        &self.sigma
    }

    /// Lower-triangular `L` with `Sigma = L L^T`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `Sigma^{-1} v`
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    pub fn solve_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(m)
    }

    pub fn sigma_inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `L^{-1} (x - mu)`, whose norm is the Mahalanobis distance.
    pub fn whiten(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let d = x - &self.mu;
        let l = self.chol.l_dirty();
        l.solve_lower_triangular(&d)
            .ok_or_else(|| Error::NotPositiveDefinite("covariance matrix".into()))
    }

    pub(crate) fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has length {}, model dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Parameters for the correlation estimator: `Gamma`, the means and the
/// marginal variances.
#[derive(Debug, Clone)]
pub struct CorrelationModel {
    gamma: SymmetricMatrix,
    mu: DVector<f64>,
    sigma_diag: DVector<f64>,
}

impl CorrelationModel {
    pub fn new(gamma: SymmetricMatrix, mu: DVector<f64>, sigma_diag: DVector<f64>) -> Result<Self> {
        let p = gamma.dim();
        if mu.len() != p || sigma_diag.len() != p {
            return Err(Error::DimensionMismatch("correlation model parts differ in dimension".into()));
        }
        for i in 0..p {
            if (gamma.get(i, i) - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "correlation matrix diagonal entry {} is {}",
                    i + 1,
                    gamma.get(i, i)
                )));
            }
            if !(sigma_diag[i] > 0.0) {
                return Err(Error::NonPositiveVariance(i));
            }
        }
        if gamma.as_matrix().iter().any(|v| v.abs() > 1.0 + 1e-12) {
            return Err(Error::InvalidArgument("correlation entries must lie in [-1, 1]".into()));
        }
        let eig = gamma.as_matrix().clone().symmetric_eigenvalues();
        if eig.iter().any(|&v| v < -1e-10) {
            return Err(Error::InvalidArgument("correlation matrix is not positive semidefinite".into()));
        }
        Ok(Self {
            gamma,
            mu,
            sigma_diag,
        })
    }

    /// Correlation model implied by a population covariance.
    pub fn from_population(model: &PopulationModel) -> Result<Self> {
        let s = model.sigma().as_matrix();
        let p = s.nrows();
        let sd = DVector::from_fn(p, |i, _| s[(i, i)].sqrt());
        let mut gamma = DMatrix::from_fn(p, p, |i, j| s[(i, j)] / (sd[i] * sd[j]));
        gamma.fill_diagonal(1.0);
        let sigma_diag = DVector::from_fn(p, |i, _| s[(i, i)]);
        Self::new(SymmetricMatrix::new(gamma)?, model.mu().clone(), sigma_diag)
    }

    pub fn dim(&self) -> usize {
        self.gamma.dim()
    }

    pub fn gamma(&self) -> &SymmetricMatrix {
        &self.gamma
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma_diag(&self) -> &DVector<f64> {
        &self.sigma_diag
    }

    /// `(x_i - mu_i) / sqrt(sigma_ii)`
    pub fn standardize(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has length {}, model dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(DVector::from_fn(self.dim(), |i, _| {
            (x[i] - self.mu[i]) / self.sigma_diag[i].sqrt()
        }))
    }
}

/// Parameters for the PHD average-Hessian estimator.
#[derive(Debug, Clone)]
pub struct PhdModel {
    hbar: SymmetricMatrix,
    pop: PopulationModel,
    b_ols: DVector<f64>,
    ey: f64,
}

impl PhdModel {
    pub fn new(hbar: SymmetricMatrix, pop: PopulationModel, b_ols: DVector<f64>, ey: f64) -> Result<Self> {
        let p = pop.dim();
        if hbar.dim() != p || b_ols.len() != p {
            return Err(Error::DimensionMismatch("PHD model parts differ in dimension".into()));
        }
        if !ey.is_finite() || b_ols.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PHD model".into()));
        }
        Ok(Self { hbar, pop, b_ols, ey })
    }

    pub fn dim(&self) -> usize {
        self.pop.dim()
    }

    pub fn hbar(&self) -> &SymmetricMatrix {
        &self.hbar
    }

    pub fn population(&self) -> &PopulationModel {
        &self.pop
    }

    pub fn b_ols(&self) -> &DVector<f64> {
        &self.b_ols
    }

    pub fn ey(&self) -> f64 {
        self.ey
    }
}

/// Point mass location `x`, plus a response for regression estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct Contaminant {
    pub x: DVector<f64>,
    pub y: Option<f64>,
}

impl Contaminant {
    pub fn new(x: DVector<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("contaminant".into()));
        }
        Ok(Self { x, y: None })
    }

    pub fn with_response(x: DVector<f64>, y: f64) -> Result<Self> {
        if !y.is_finite() {
            return Err(Error::NonFinite("contaminant response".into()));
        }
        let mut c = Self::new(x)?;
        c.y = Some(y);
        Ok(c)
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(x))
    }
}

/// `(x - mu)(x - mu)^T - Sigma`
pub fn if_covariance(model: &PopulationModel, c: &Contaminant) -> Result<SymmetricMatrix> {
    model.check_point(&c.x)?;
    Ok(covariance_influence(model.mu(), model.sigma(), &c.x))
}

fn covariance_influence(mu: &DVector<f64>, sigma: &SymmetricMatrix, x: &DVector<f64>) -> SymmetricMatrix {
    let d = x - mu;
    SymmetricMatrix::symmetrized(&d * d.transpose() - sigma.as_matrix())
}

/// `z z^T - (D Gamma + Gamma D) / 2` with `z_i = (x_i - mu_i)/sqrt(sigma_ii)`
/// and `D = diag(z_i^2)`. The diagonal is exactly zero.
pub fn if_correlation(model: &CorrelationModel, c: &Contaminant) -> Result<SymmetricMatrix> {
    let z = model.standardize(&c.x)?;
    let g = model.gamma().as_matrix();
    let p = z.len();
    let m = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            0.0
        } else {
            z[i] * z[j] - 0.5 * (z[i] * z[i] + z[j] * z[j]) * g[(i, j)]
        }
    });
    Ok(SymmetricMatrix::symmetrized(m))
}

/// Influence function of the average Hessian matrix estimator, with
/// `w = Sigma^{-1}(x - mu)`:
/// `(y - E[Y])(w w^T - Sigma^{-1}) - w (w^T Sigma H + b^T) - (H Sigma w + b) w^T - H`.
pub fn if_phd(model: &PhdModel, c: &Contaminant) -> Result<SymmetricMatrix> {
    let y = c.y.ok_or(Error::MissingResponse)?;
    let pop = model.population();
    pop.check_point(&c.x)?;
    let w = pop.solve(&(&c.x - pop.mu()));
    let h = model.hbar().as_matrix();
    let v = h * (pop.sigma().as_matrix() * &w) + model.b_ols();
    let resid = y - model.ey();
    let m = (&w * w.transpose() - pop.sigma_inverse()) * resid
        - &w * v.transpose()
        - &v * w.transpose()
        - h;
    Ok(SymmetricMatrix::symmetrized(m))
}

/// Sample mean and covariance (with the given divisor).
pub fn fit_population_model(data: &Dataset, divisor: Divisor) -> Result<PopulationModel> {
    let n = data.n();
    if n < 2 {
        return Err(Error::InvalidArgument("at least two observations are required".into()));
    }
    let xc = data.centered();
    let s = xc.tr_mul(&xc) / divisor.value(n);
    PopulationModel::new(data.column_means(), SymmetricMatrix::symmetrized(s))
}

/// Sample covariance without requiring positive definiteness.
pub(crate) fn sample_covariance(data: &Dataset, divisor: Divisor) -> SymmetricMatrix {
    let xc = data.centered();
    SymmetricMatrix::symmetrized(xc.tr_mul(&xc) / divisor.value(data.n()))
}

/// Sample correlation model (variances with the `1/n` divisor).
pub fn fit_correlation_model(data: &Dataset) -> Result<CorrelationModel> {
    let n = data.n();
    if n < 2 {
        return Err(Error::InvalidArgument("at least two observations are required".into()));
    }
    let s = sample_covariance(data, Divisor::N);
    let p = data.p();
    let var = DVector::from_fn(p, |i, _| s.get(i, i));
    for i in 0..p {
        let scale = data.x().column(i).amax().max(1.0);
        if !(var[i] > 1e-24 * scale * scale) {
            return Err(Error::ZeroVariance(format!("column {}", i + 1)));
        }
    }
    let mut gamma = DMatrix::from_fn(p, p, |i, j| {
        (s.get(i, j) / (var[i].sqrt() * var[j].sqrt())).clamp(-1.0, 1.0)
    });
    gamma.fill_diagonal(1.0);
    CorrelationModel::new(SymmetricMatrix::symmetrized(gamma), data.column_means(), var)
}

/// Plug-in PHD quantities: `Sigma^{-1} M Sigma^{-1}` with
/// `M = (1/n) sum (y_i - ybar)(x_i - xbar)(x_i - xbar)^T`, the OLS slope and
/// the response mean. Requires an invertible sample covariance.
pub fn fit_phd_model(data: &Dataset) -> Result<PhdModel> {
    let y = data.y().ok_or(Error::MissingResponse)?;
    let n = data.n();
    if n <= data.p() {
        return Err(Error::NotPositiveDefinite(format!(
            "sample covariance is singular with n = {} <= p = {}",
            n,
            data.p()
        )));
    }
    let pop = fit_population_model(data, Divisor::N)?;
    let xc = data.centered();
    let ybar = y.mean();
    let yc = y.map(|v| v - ybar);
    let weighted = DMatrix::from_fn(n, data.p(), |i, j| xc[(i, j)] * yc[i]);
    let m = weighted.tr_mul(&xc) / n as f64;
    let sinv_m = pop.solve_matrix(&m);
    let hbar = pop.solve_matrix(&sinv_m.transpose());
    let cov_xy = xc.tr_mul(&yc) / n as f64;
    let b = pop.solve(&cov_xy);
    PhdModel::new(SymmetricMatrix::symmetrized(hbar), pop, b, ybar)
}

/// The symmetric matrix estimate `W(F_n)` for a sample.
pub fn estimate(data: &Dataset, estimator: &Estimator) -> Result<SymmetricMatrix> {
    match estimator.kind {
        EstimatorKind::Covariance => {
            if data.n() < 2 {
                return Err(Error::InvalidArgument("at least two observations are required".into()));
            }
            Ok(sample_covariance(data, estimator.divisor))
        }
        EstimatorKind::Correlation => Ok(fit_correlation_model(data)?.gamma().clone()),
        EstimatorKind::Phd => Ok(fit_phd_model(data)?.hbar().clone()),
    }
}

/// Plug-in model for an estimator, fitted once and reusable across observations.
#[derive(Debug, Clone)]
pub enum FittedModel {
    /// Mean and covariance; the covariance may be singular (`p >= n`).
    Covariance { mean: DVector<f64>, cov: SymmetricMatrix },
    Correlation(CorrelationModel),
    Phd(PhdModel),
}

impl FittedModel {
    pub fn fit(data: &Dataset, estimator: &Estimator) -> Result<Self> {
        Ok(match estimator.kind {
            EstimatorKind::Covariance => FittedModel::Covariance {
                cov: estimate(data, estimator)?,
                mean: data.column_means(),
            },
            EstimatorKind::Correlation => FittedModel::Correlation(fit_correlation_model(data)?),
            EstimatorKind::Phd => FittedModel::Phd(fit_phd_model(data)?),
        })
    }

    /// The estimate `W(F_n)` itself.
    pub fn matrix(&self) -> &SymmetricMatrix {
        match self {
            FittedModel::Covariance { cov, .. } => cov,
            FittedModel::Correlation(m) => m.gamma(),
            FittedModel::Phd(m) => m.hbar(),
        }
    }

    pub fn influence(&self, c: &Contaminant) -> Result<SymmetricMatrix> {
        match self {
            FittedModel::Covariance { mean, cov } => {
                if c.x.len() != mean.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "point has length {}, model dimension is {}",
                        c.x.len(),
                        mean.len()
                    )));
                }
                Ok(covariance_influence(mean, cov, &c.x))
            }
            FittedModel::Correlation(m) => if_correlation(m, c),
            FittedModel::Phd(m) => if_phd(m, c),
        }
    }
}

pub(crate) fn contaminant_at(data: &Dataset, i: usize) -> Result<Contaminant> {
    if i >= data.n() {
        return Err(Error::InvalidArgument(format!(
            "observation {} out of range (n = {})",
            i + 1,
            data.n()
        )));
    }
    let x = data.row(i);
    match data.y() {
        Some(y) => Contaminant::with_response(x, y[i]),
        None => Contaminant::new(x),
    }
}

/// Empirical influence function at observation `i` (zero-based).
pub fn eif(estimator: &Estimator, data: &Dataset, i: usize) -> Result<SymmetricMatrix> {
    let c = contaminant_at(data, i)?;
    FittedModel::fit(data, estimator)?.influence(&c)
}
