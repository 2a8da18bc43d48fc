//! Runs the requested influence methods on one dataset and assembles a
//! report; sweeps the subspace size for timing tables.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, StandardizationMode};
use crate::error::{Error, Result};
use crate::influence::{Estimator, EstimatorKind};
use crate::report::{ConfigEcho, InfluenceReport, IterationSummary, Method, MethodTimings, PairCorrelation, TopObservations};
use crate::sample::{
    approx_ill_conditioned, approx_influence, exact_loo_with, shortcut_influence, spearman, FitRoute, LooOptions,
};
use crate::spectral::{SubspaceSelection, DEFAULT_RELATIVE_GAP_TOL, ILL_CONDITIONED_RELATIVE_GAP};

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub estimator: Estimator,
    pub selection: SubspaceSelection,
    pub methods: Vec<Method>,
    /// Threads for the leave-one-out refits; `None` uses all available.
    pub threads: Option<usize>,
    pub route: FitRoute,
    /// How many of the largest values to flag per method.
    pub top: usize,
    pub seed: Option<u64>,
    pub input: Option<String>,
    pub standardization: StandardizationMode,
}

impl AnalysisConfig {
    pub fn new(estimator: Estimator, selection: SubspaceSelection, methods: Vec<Method>) -> Self {
        Self {
            estimator,
            selection,
            methods,
            threads: None,
            route: FitRoute::Auto,
            top: 5,
            seed: None,
            input: None,
            standardization: StandardizationMode::None,
        }
    }
}

fn normalized_methods(methods: &[Method]) -> Result<Vec<Method>> {
    let mut m = methods.to_vec();
    m.sort();
    m.dedup();
    if m.is_empty() {
        return Err(Error::InvalidArgument("no methods requested".into()));
    }
    Ok(m)
}

fn validate(data: &Dataset, cfg: &AnalysisConfig, methods: &[Method]) -> Result<()> {
    cfg.selection.check_dim(data.p())?;
    if cfg.estimator.kind == EstimatorKind::Phd && data.y().is_none() {
        return Err(Error::MissingResponse);
    }
    if methods.contains(&Method::Shortcut) && cfg.estimator.kind != EstimatorKind::Covariance {
        return Err(Error::InvalidArgument(format!(
            "the shortcut exists only for the covariance estimator, not '{}'",
            cfg.estimator.kind.name()
        )));
    }
    Ok(())
}

/// `(values, seconds)` for one method, timing only the numerical work.
fn run_method(data: &Dataset, cfg: &AnalysisConfig, method: Method) -> Result<(Vec<f64>, f64)> {
    let start = Instant::now();
    let values = match method {
        Method::Exact => exact_loo_with(
            data,
            &cfg.estimator,
            &cfg.selection,
            &LooOptions {
                observations: None,
                threads: cfg.threads,
                route: cfg.route,
            },
        )?,
        Method::Approx => approx_influence(data, &cfg.estimator, &cfg.selection)?,
        Method::Shortcut => shortcut_influence(data, &cfg.selection, cfg.estimator.divisor)?,
    };
    Ok((values, start.elapsed().as_secs_f64()))
}

/// One-based indices of the `m` largest values, ties by index.
pub fn top_indices(values: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.into_iter().take(m).map(|i| i + 1).collect()
}

/// The headline pair: exact against the cheapest approximation present,
/// otherwise approx against shortcut.
fn headline_pair(methods: &[Method]) -> Option<(Method, Method)> {
    let has = |m| methods.contains(&m);
    if has(Method::Exact) && has(Method::Shortcut) {
        Some((Method::Exact, Method::Shortcut))
    } else if has(Method::Exact) && has(Method::Approx) {
        Some((Method::Exact, Method::Approx))
    } else if has(Method::Approx) && has(Method::Shortcut) {
        Some((Method::Approx, Method::Shortcut))
    } else {
        None
    }
}

pub fn run_analysis(data: &Dataset, cfg: &AnalysisConfig) -> Result<InfluenceReport> {
    let methods = normalized_methods(&cfg.methods)?;
    validate(data, cfg, &methods)?;
    let (n, p, k) = (data.n(), data.p(), cfg.selection.k());

    let mut timings = MethodTimings::default();
    let mut results: Vec<(Method, Vec<f64>)> = Vec::new();
    for &m in &methods {
        let (values, seconds) = run_method(data, cfg, m)?;
        timings.set(m, seconds);
        results.push((m, values));
    }
    let get = |m: Method| results.iter().find(|(x, _)| *x == m).map(|(_, v)| v.clone());

    let mut pairwise = Vec::new();
    for (i, (a, va)) in results.iter().enumerate() {
        for (b, vb) in &results[i + 1..] {
            // undefined (constant ranks) correlations are left out
            if let Ok(s) = spearman(va, vb) {
                pairwise.push(PairCorrelation { a: *a, b: *b, spearman: s });
            }
        }
    }
    let headline = headline_pair(&methods).and_then(|(a, b)| {
        pairwise
            .iter()
            .find(|c| c.a == a && c.b == b)
            .map(|c| c.spearman)
    });

    let (n64, k64, p64) = (n as u64, k as u64, p as u64);
    let rank_bound = (n as u64 - 1).min(p64);
    let iterations = IterationSummary {
        exact_refits: methods.contains(&Method::Exact).then_some(n64 + 1),
        approx: methods.contains(&Method::Approx).then_some(n64 * k64 * (p64 - 1)),
        shortcut: methods
            .contains(&Method::Shortcut)
            .then_some(n64 * k64 * rank_bound.saturating_sub(k64)),
    };
    let top = TopObservations {
        exact: get(Method::Exact).map(|v| top_indices(&v, cfg.top)),
        approx: get(Method::Approx).map(|v| top_indices(&v, cfg.top)),
        shortcut: get(Method::Shortcut).map(|v| top_indices(&v, cfg.top)),
    };

    Ok(InfluenceReport {
        config: ConfigEcho {
            estimator: cfg.estimator.kind,
            divisor: cfg.estimator.divisor,
            subset: cfg.selection.one_based(),
            methods: methods.clone(),
            gap_tol_relative: DEFAULT_RELATIVE_GAP_TOL,
            ill_conditioned_relative: ILL_CONDITIONED_RELATIVE_GAP,
            seed: cfg.seed,
            input: cfg.input.clone(),
            standardization: cfg.standardization,
            threads: cfg.threads,
        },
        n,
        p,
        exact: get(Method::Exact),
        approx: get(Method::Approx),
        shortcut: get(Method::Shortcut),
        spearman: headline,
        pairwise_spearman: pairwise,
        timings,
        iterations,
        top,
        ill_conditioned: approx_ill_conditioned(data, &cfg.estimator, &cfg.selection)?,
    })
}

/// One row of a timing sweep, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_exact: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_approx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_shortcut: Option<f64>,
    /// Rank correlation of the headline pair (see [`InfluenceReport`]).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spearman: Option<f64>,
}

/// Runs the leading-`K` analysis for every `K` in `ks`.
pub fn bench(data: &Dataset, base: &AnalysisConfig, ks: &[usize]) -> Result<Vec<BenchRow>> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("empty K sweep".into()));
    }
    if normalized_methods(&base.methods)?.len() < 2 {
        return Err(Error::InvalidArgument("a benchmark needs at least two methods".into()));
    }
    ks.iter()
        .map(|&k| {
            let cfg = AnalysisConfig {
                selection: SubspaceSelection::leading(k, data.p())?,
                ..base.clone()
            };
            let r = run_analysis(data, &cfg)?;
            Ok(BenchRow {
                k,
                t_exact: r.timings.exact,
                t_approx: r.timings.approx,
                t_shortcut: r.timings.shortcut,
                spearman: r.spearman,
            })
        })
        .collect()
}

/// `k,t_exact,t_approx,t_shortcut,spearman` with empty cells for methods
/// not run.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut out = String::from("k,t_exact,t_approx,t_shortcut,spearman\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.k,
            cell(r.t_exact),
            cell(r.t_approx),
            cell(r.t_shortcut),
            cell(r.spearman)
        ));
    }
    out
}

/// The sweep as a JSON array of rows.
pub fn bench_json(rows: &[BenchRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticSpec;

    #[test]
    fn report_has_requested_columns() {
        let data = SyntheticSpec::spiked(15, 40, &[10.0, 5.0], 1).unwrap().generate().unwrap();
        let sel = SubspaceSelection::leading(2, 40).unwrap();
        let cfg = AnalysisConfig::new(Estimator::covariance(), sel, vec![Method::Shortcut, Method::Approx]);
        let r = run_analysis(&data, &cfg).unwrap();
        assert!(r.exact.is_none());
        let (a, s) = (r.approx.as_ref().unwrap(), r.shortcut.as_ref().unwrap());
        for (x, y) in a.iter().zip(s) {
            assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
        }
        assert!((r.spearman.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.config.methods, vec![Method::Approx, Method::Shortcut]);
        assert_eq!(r.iterations.approx, Some(15 * 2 * 39));
        assert_eq!(r.iterations.shortcut, Some(15 * 2 * 12));
        assert_eq!(r.top.approx, r.top.shortcut);
    }

    #[test]
    fn rejections() {
        let data = SyntheticSpec::isotropic(10, 3, 1).unwrap().generate().unwrap();
        let sel = SubspaceSelection::leading(1, 3).unwrap();
        let cfg = AnalysisConfig::new(Estimator::phd(), sel.clone(), vec![Method::Approx]);
        assert!(matches!(run_analysis(&data, &cfg), Err(Error::MissingResponse)));
        let cfg = AnalysisConfig::new(Estimator::correlation(), sel.clone(), vec![Method::Shortcut]);
        assert!(run_analysis(&data, &cfg).is_err());
        let cfg = AnalysisConfig::new(Estimator::covariance(), sel.clone(), vec![]);
        assert!(run_analysis(&data, &cfg).is_err());
        let cfg = AnalysisConfig::new(Estimator::covariance(), sel, vec![Method::Approx, Method::Exact]);
        assert!(bench(&data, &cfg, &[]).is_err());
        assert_eq!(bench(&data, &cfg, &[1, 2]).unwrap().len(), 2);
    }

    #[test]
    fn top_indices_order() {
        assert_eq!(top_indices(&[0.1, 3.0, 3.0, 2.0], 3), vec![2, 3, 4]);
        assert_eq!(top_indices(&[1.0], 5), vec![1]);
    }
}
