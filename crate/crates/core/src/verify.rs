//! Self-contained numerical checks with seeded fixtures.
//!
//! Each check builds its own inputs, compares two independent evaluations
//! and reports pass/fail with a one-line detail. The leave-one-out check uses
//! a deliberately naive recompute (full covariance, unsorted eigensolver,
//! explicit projectors) that shares no code with [`crate::sample`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::influence::{
    eif, if_correlation, if_covariance, if_phd, CorrelationModel, Divisor, Estimator, PhdModel, PopulationModel,
};
use crate::measures::{
    example1_closed_form, finite_epsilon_rho, mahalanobis, rho_tilde_corr, rho_tilde_cov, rho_tilde_generic,
    rho_tilde_phd,
};
use crate::influence::Contaminant;
use crate::sample::{approx_influence, exact_loo, iteration_counts, shortcut_influence, spearman};
use crate::spectral::{
    benasseni_rho1, eigendecompose, rv_gcd, squared_residual_identity, EigenOrdering, EigenSystem, OrthonormalFrame,
    SubspaceSelection, SymmetricMatrix,
};
use crate::synthetic::{NormalStream, SyntheticSpec};

pub const CHECKS: &[&str] = &[
    "theorem1",
    "equivalence",
    "example1",
    "shortcut",
    "iterations",
    "loo-oracle",
    "detection",
    "zero-influence",
    "identities",
    "mean-zero-eif",
    "permutation",
];

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Contamination weights for the convergence check.
    pub epsilons: Vec<f64>,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            epsilons: vec![1e-3, 1e-4, 1e-5],
            seed: 20080901,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn run_all(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    CHECKS.iter().map(|c| run_check(c, opts).expect("known check")).collect()
}

/// Runs one named check. Unknown names are an error; numerical failures
/// (including module errors inside a check) are a failed outcome.
pub fn run_check(name: &str, opts: &VerifyOptions) -> Result<CheckOutcome> {
    let f: fn(&VerifyOptions) -> Result<(bool, String)> = match name {
        "theorem1" => theorem1,
        "equivalence" => equivalence,
        "example1" => example1,
        "shortcut" => shortcut,
        "iterations" => iterations,
        "loo-oracle" => loo_oracle,
        "detection" => detection,
        "zero-influence" => zero_influence,
        "identities" => identities,
        "mean-zero-eif" => mean_zero_eif,
        "permutation" => permutation,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown check '{other}' (known: {})",
                CHECKS.join(", ")
            )))
        }
    };
    let (passed, detail) = match f(opts) {
        Ok(r) => r,
        Err(e) => (false, format!("error[{}]: {e}", e.code())),
    };
    Ok(CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
    })
}

/// Random draws for fixtures.
struct Draws(NormalStream);

impl Draws {
    fn new(seed: u64) -> Self {
        Draws(NormalStream::new(seed))
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.uniform()
    }

    fn below(&mut self, n: usize) -> usize {
        ((self.0.uniform() * n as f64) as usize).min(n - 1)
    }

    fn vector(&mut self, p: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(p, |_, _| scale * self.0.normal())
    }

    fn orthogonal(&mut self, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(p, p, |_, _| self.0.normal()).qr().q()
    }

    /// `Q diag(values) Q^T` for a random rotation `Q`.
    fn spd_with(&mut self, values: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let q = self.orthogonal(values.len());
        let m = &q * DMatrix::from_diagonal(&DVector::from_column_slice(values)) * q.transpose();
        (m, q)
    }

    /// Random subset of size `1..p` as a selection.
    fn selection(&mut self, p: usize) -> Result<SubspaceSelection> {
        let k = 1 + self.below(p - 1);
        let mut idx: Vec<usize> = (0..p).collect();
        for i in 0..k {
            let j = i + self.below(p - i);
            idx.swap(i, j);
        }
        SubspaceSelection::new(idx[..k].iter().copied(), p)
    }
}

/// Relative difference, with an absolute floor for values that vanish
/// identically (e.g. two-variable correlation, where the influence
/// function is a multiple of the exchange matrix).
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-4)
}

fn es_of(m: &SymmetricMatrix) -> Result<EigenSystem> {
    eigendecompose(m, EigenOrdering::AbsoluteDescending)
}

fn min_relative_gap(es: &EigenSystem) -> f64 {
    let v = es.eigenvalues();
    let mut best = f64::INFINITY;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            best = best.min((v[i] - v[j]).abs());
        }
    }
    best / es.max_abs_eigenvalue()
}

fn theorem1(opts: &VerifyOptions) -> Result<(bool, String)> {
    if opts.epsilons.len() < 2 {
        return Err(Error::InvalidArgument("the convergence check needs at least two epsilons".into()));
    }
    let model = PopulationModel::new(DVector::zeros(3), SymmetricMatrix::from_diagonal(&[3.0, 2.0, 1.0])?)?;
    let sel = SubspaceSelection::leading(1, 3)?;
    let c = Contaminant::from_slice(&[1.0, 1.0, 1.0])?;
    let limit = rho_tilde_cov(&model, &es_of(model.sigma())?, &sel, &c)?.value;
    let errors: Vec<f64> = opts
        .epsilons
        .iter()
        .map(|&e| Ok((finite_epsilon_rho(&model, &sel, &c, e)? / limit - 1.0).abs()))
        .collect::<Result<_>>()?;
    let mut ok = (limit - 1.25).abs() < 1e-12;
    let mut ratios = Vec::new();
    for w in 0..errors.len() - 1 {
        let ratio = errors[w] / errors[w + 1];
        // an O(eps) remainder shrinks in proportion to eps
        let expected = opts.epsilons[w] / opts.epsilons[w + 1];
        ok &= ratio >= 0.8 * expected && ratio <= 1.2 * expected;
        ratios.push(ratio);
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    Ok((
        ok,
        format!(
            "limit {limit:.15}; relative errors [{}]; error ratios ({})",
            errors.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", "),
            fmt(&ratios)
        ),
    ))
}

fn equivalence(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut d = Draws::new(opts.seed ^ 0x5eed_0002);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let p = 2 + d.below(5);
        let values: Vec<f64> = (0..p).map(|j| 1.0 + j as f64 + d.uniform(0.1, 0.8)).collect();
        let (sigma, _) = d.spd_with(&values);
        let model = PopulationModel::new(d.vector(p, 0.5), SymmetricMatrix::new(sigma)?)?;
        let corr = CorrelationModel::from_population(&model)?;
        let es = es_of(model.sigma())?;
        let ces = es_of(corr.gamma())?;
        if min_relative_gap(&ces) < 1e-3 {
            continue;
        }
        let sel = d.selection(p)?;
        let c = Contaminant::new(d.vector(p, 2.0))?;

        let closed = rho_tilde_cov(&model, &es, &sel, &c)?.value;
        let generic = rho_tilde_generic(&es, &sel, &if_covariance(&model, &c)?)?.value;
        worst = worst.max(rel_err(closed, generic));
        let closed = rho_tilde_corr(&corr, &ces, &sel, &c)?.value;
        let generic = rho_tilde_generic(&ces, &sel, &if_correlation(&corr, &c)?)?.value;
        worst = worst.max(rel_err(closed, generic));

        // rank-K curvature with the slope inside its span
        let k = sel.k();
        let (_, q) = d.spd_with(&vec![1.0; p]);
        let mut hbar = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        for j in 0..k {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let qj = q.column(j);
            hbar += &qj * qj.transpose() * (sign * (1.0 + j as f64 + d.uniform(0.2, 0.7)));
            b += qj * d.uniform(-1.0, 1.0);
        }
        let phd = PhdModel::new(SymmetricMatrix::new(hbar)?, model.clone(), b, d.uniform(-1.0, 1.0))?;
        let hes = es_of(phd.hbar())?;
        let lead = SubspaceSelection::leading(k, p)?;
        let cy = Contaminant::with_response(c.x.clone(), d.uniform(-3.0, 3.0))?;
        let closed = rho_tilde_phd(&phd, &hes, &lead, &cy)?.value;
        let generic = rho_tilde_generic(&hes, &lead, &if_phd(&phd, &cy)?)?.value;
        worst = worst.max(rel_err(closed, generic));
        done += 1;
    }
    Ok((worst <= 1e-10, format!("100 instances x 3 estimators; worst relative difference {worst:.2e}")))
}

fn example1(opts: &VerifyOptions) -> Result<(bool, String)> {
    let model = PopulationModel::new(DVector::zeros(3), SymmetricMatrix::from_diagonal(&[2.0, 1.0, 1.0])?)?;
    let x = DVector::from_column_slice(&[2f64.sqrt(), 1.0, 0.0]);
    let sel = SubspaceSelection::leading(1, 3)?;
    let closed = example1_closed_form(2.0, 1.0, 1, mahalanobis(&model, &x)?, 0.5)?.value;
    let cov = rho_tilde_cov(&model, &es_of(model.sigma())?, &sel, &Contaminant::new(x)?)?.value;
    let fixture_ok = (closed - 2.0).abs() <= 1e-12 && (cov - 2.0).abs() <= 1e-12;

    let mut d = Draws::new(opts.seed ^ 0x5eed_0003);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = 2 + d.below(6);
        let k = 1 + d.below(p - 1);
        let lp = d.uniform(0.2, 2.0);
        let l1 = lp + d.uniform(0.3, 3.0);
        let values: Vec<f64> = (0..p).map(|j| if j < k { l1 } else { lp }).collect();
        let (sigma, q) = d.spd_with(&values);
        let model = PopulationModel::new(d.vector(p, 1.0), SymmetricMatrix::new(sigma)?)?;
        let x = model.mu() + d.vector(p, 1.5);
        let md = mahalanobis(&model, &x)?;
        // share of the squared distance carried by the leading block
        let scores = q.tr_mul(&(&x - model.mu()));
        let lead: f64 = (0..k).map(|j| scores[j] * scores[j] / l1).sum();
        let closed = example1_closed_form(l1, lp, k, md, lead / (md * md))?.value;
        let sel = SubspaceSelection::leading(k, p)?;
        let cov = rho_tilde_cov(&model, &es_of(model.sigma())?, &sel, &Contaminant::new(x)?)?.value;
        worst = worst.max((closed - cov).abs() / cov.abs().max(1.0));
    }
    Ok((
        fixture_ok && worst <= 1e-10,
        format!("fixture {closed:.15} / {cov:.15}; 50 two-block draws, worst difference {worst:.2e}"),
    ))
}

fn shortcut(opts: &VerifyOptions) -> Result<(bool, String)> {
    let data = SyntheticSpec::isotropic(20, 200, opts.seed)?.generate()?;
    let mut worst: f64 = 0.0;
    for k in 1..=5 {
        let sel = SubspaceSelection::leading(k, 200)?;
        let a = approx_influence(&data, &Estimator::covariance(), &sel)?;
        let s = shortcut_influence(&data, &sel, Divisor::N)?;
        for (x, y) in a.iter().zip(&s) {
            worst = worst.max((x - y).abs() / x.abs().max(1.0));
        }
    }
    Ok((worst <= 1e-10, format!("n=20, p=200, K=1..5; worst difference {worst:.2e}")))
}

fn iterations(_: &VerifyOptions) -> Result<(bool, String)> {
    let c = iteration_counts(62, 2000, 10)?;
    Ok((
        c.full == 1_239_380 && c.shortcut == 31_620,
        format!("n=62, p=2000, K=10: {} vs {} ({:.2}%)", c.full, c.shortcut, 100.0 * c.ratio()),
    ))
}

/// Naive leave-one-out: `(n-1)^2 (1 - trace(P P_i) / K)` with explicit
/// projectors, sorting the raw eigenpairs by decreasing absolute value.
pub fn brute_force_loo(x: &DMatrix<f64>, k_leading: usize, divisor_n: bool) -> Vec<f64> {
    let n = x.nrows();
    let projector = |rows: &[usize]| {
        let m = rows.len();
        let p = x.ncols();
        let mut mean = DVector::zeros(p);
        for &i in rows {
            mean += x.row(i).transpose();
        }
        mean /= m as f64;
        let mut cov = DMatrix::zeros(p, p);
        for &i in rows {
            let d = x.row(i).transpose() - &mean;
            cov += &d * d.transpose();
        }
        cov /= if divisor_n { m as f64 } else { m as f64 - 1.0 };
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
        let mut proj = DMatrix::zeros(p, p);
        for &j in &order[..k_leading] {
            let v = eig.eigenvectors.column(j);
            proj += &v * v.transpose();
        }
        proj
    };
    let all: Vec<usize> = (0..n).collect();
    let full = projector(&all);
    (0..n)
        .map(|i| {
            let rest: Vec<usize> = all.iter().copied().filter(|&j| j != i).collect();
            let trace = (&full * projector(&rest)).trace();
            (n as f64 - 1.0).powi(2) * (1.0 - trace / k_leading as f64)
        })
        .collect()
}

fn loo_oracle(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (t, k) in [1usize, 2].into_iter().enumerate() {
        let data = SyntheticSpec::spiked(8, 3, &[3.0, 1.0], opts.seed + t as u64)?.generate()?;
        let sel = SubspaceSelection::leading(k, 3)?;
        let fast = exact_loo(&data, &Estimator::covariance(), &sel)?;
        let slow = brute_force_loo(data.x(), k, true);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    Ok((worst <= 1e-10, format!("n=8, p=3, K=1,2; worst difference {worst:.2e}")))
}

fn detection(opts: &VerifyOptions) -> Result<(bool, String)> {
    let data = SyntheticSpec::default_benchmark(40, 200, opts.seed)?.generate()?;
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 1..=3 {
        let sel = SubspaceSelection::leading(k, 200)?;
        let e = exact_loo(&data, &Estimator::covariance(), &sel)?;
        let s = shortcut_influence(&data, &sel, Divisor::N)?;
        let r = spearman(&e, &s)?;
        ok &= r >= 0.9;
        parts.push(format!("K={k}: {r:.4}"));
    }
    Ok((ok, format!("n=40, p=200 Spearman(exact, shortcut) {}", parts.join(", "))))
}

fn zero_influence(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut d = Draws::new(opts.seed ^ 0x5eed_0009);
    let p = 4;
    let values = [4.0, 2.5, 1.5, 0.7];
    let (sigma, _) = d.spd_with(&values);
    let model = PopulationModel::new(d.vector(p, 1.0), SymmetricMatrix::new(sigma)?)?;
    let es = es_of(model.sigma())?;
    let sel = SubspaceSelection::leading(2, p)?;
    let corr = CorrelationModel::from_population(&model)?;
    let ces = es_of(corr.gamma())?;
    let at_mean = Contaminant::new(model.mu().clone())?;
    let mut worst: f64 = rho_tilde_cov(&model, &es, &sel, &at_mean)?.value.abs();
    worst = worst.max(rho_tilde_corr(&corr, &ces, &sel, &at_mean)?.value.abs());
    for _ in 0..10 {
        let a = d.uniform(-5.0, 5.0);
        let b = d.uniform(-5.0, 5.0);
        let inside = model.mu() + es.eigenvector(0) * a + es.eigenvector(1) * b;
        let outside = model.mu() + es.eigenvector(2) * a + es.eigenvector(3) * b;
        worst = worst.max(rho_tilde_cov(&model, &es, &sel, &Contaminant::new(inside)?)?.value.abs());
        worst = worst.max(rho_tilde_cov(&model, &es, &sel, &Contaminant::new(outside)?)?.value.abs());
    }
    // PHD at the standard normal with x inside the curvature span
    let q = d.orthogonal(p);
    let hbar = &q.column(0) * q.column(0).transpose() * 2.0 - &q.column(1) * q.column(1).transpose() * 0.8;
    let phd = PhdModel::new(SymmetricMatrix::new(hbar)?, PopulationModel::standard(p), q.column(0) * 0.6, 0.4)?;
    let hes = es_of(phd.hbar())?;
    for y in [-1e4, 0.0, 2.0, 1e6] {
        let x = q.column(0) * d.uniform(-20.0, 20.0) + q.column(1) * d.uniform(-20.0, 20.0);
        let v = rho_tilde_phd(&phd, &hes, &sel, &Contaminant::with_response(x, y)?)?.value;
        worst = worst.max(v.abs());
    }
    Ok((worst <= 1e-12, format!("largest |value| {worst:.2e}")))
}

fn identities(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut d = Draws::new(opts.seed ^ 0x5eed_000a);
    let mut worst: f64 = 0.0;
    let mut self_ok = true;
    for _ in 0..100 {
        let p = 2 + d.below(7);
        let k = 1 + d.below(p);
        let qa = d.orthogonal(p);
        let qb = d.orthogonal(p);
        let a = OrthonormalFrame::new(qa.columns(0, k).into_owned())?;
        let b = OrthonormalFrame::new(qb.columns(0, k).into_owned())?;
        worst = worst.max((rv_gcd(&a, &b)? - squared_residual_identity(&a, &b)?).abs());
        self_ok &= (benasseni_rho1(&a, &a)? - 1.0).abs() <= 1e-12;
    }
    Ok((
        worst <= 1e-12 && self_ok,
        format!("100 frame pairs; worst identity gap {worst:.2e}; self-agreement {}", if self_ok { "ok" } else { "off" }),
    ))
}

fn mean_zero_eif(opts: &VerifyOptions) -> Result<(bool, String)> {
    let data = SyntheticSpec::spiked(12, 4, &[2.0, 1.0], opts.seed)?.generate()?;
    let mut worst: f64 = 0.0;
    for est in [Estimator::covariance(), Estimator::correlation()] {
        let mut total = DMatrix::zeros(4, 4);
        for i in 0..data.n() {
            total += eif(&est, &data, i)?.as_matrix();
        }
        worst = worst.max(total.amax() / data.n() as f64);
    }
    Ok((worst <= 1e-12, format!("largest entry of the averaged empirical influence {worst:.2e}")))
}

fn permutation(opts: &VerifyOptions) -> Result<(bool, String)> {
    let data: Dataset = SyntheticSpec::spiked(10, 5, &[3.0, 1.0], opts.seed)?.generate()?;
    let mut d = Draws::new(opts.seed ^ 0x5eed_000b);
    let mut order: Vec<usize> = (0..data.n()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, d.below(i + 1));
    }
    let perm = data.permuted(&order)?;
    let sel = SubspaceSelection::leading(2, 5)?;
    let est = Estimator::covariance();
    let (e, ep) = (exact_loo(&data, &est, &sel)?, exact_loo(&perm, &est, &sel)?);
    let (a, ap) = (approx_influence(&data, &est, &sel)?, approx_influence(&perm, &est, &sel)?);
    let mut worst: f64 = 0.0;
    for (k, &o) in order.iter().enumerate() {
        worst = worst.max((ep[k] - e[o]).abs() / e[o].max(1.0));
        worst = worst.max((ap[k] - a[o]).abs() / a[o].max(1.0));
    }
    Ok((worst <= 1e-9, format!("row permutation; worst difference {worst:.2e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_check_is_an_error() {
        assert!(run_check("nope", &VerifyOptions::default()).is_err());
    }

    #[test]
    fn cheap_checks_pass() {
        let opts = VerifyOptions::default();
        for name in ["theorem1", "example1", "iterations", "loo-oracle", "zero-influence", "identities", "mean-zero-eif", "permutation"] {
            let out = run_check(name, &opts).unwrap();
            assert!(out.passed, "{name}: {}", out.detail);
        }
    }

    #[test]
    fn theorem1_needs_two_weights() {
        let opts = VerifyOptions {
            epsilons: vec![1e-3],
            ..Default::default()
        };
        assert!(!run_check("theorem1", &opts).unwrap().passed);
    }
}
