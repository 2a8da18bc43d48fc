//! Influence reports and their JSON/CSV serialization.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::StandardizationMode;
use crate::error::{Error, Result};
use crate::influence::{Divisor, EstimatorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Approx,
    Shortcut,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Exact, Method::Approx, Method::Shortcut];

    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Approx => "approx",
            Method::Shortcut => "shortcut",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "exact" => Ok(Method::Exact),
            "approx" => Ok(Method::Approx),
            "shortcut" => Ok(Method::Shortcut),
            other => Err(Error::InvalidArgument(format!(
                "unknown method '{other}' (expected exact, approx or shortcut)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// From a file extension; JSON unless it ends in `.csv`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

/// Settings that produced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub estimator: EstimatorKind,
    pub divisor: Divisor,
    /// One-based eigenvalue indices.
    pub subset: Vec<usize>,
    pub methods: Vec<Method>,
    pub gap_tol_relative: f64,
    pub ill_conditioned_relative: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    pub standardization: StandardizationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodTimings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut: Option<f64>,
}

impl MethodTimings {
    pub fn get(&self, m: Method) -> Option<f64> {
        match m {
            Method::Exact => self.exact,
            Method::Approx => self.approx,
            Method::Shortcut => self.shortcut,
        }
    }

    pub fn set(&mut self, m: Method, seconds: f64) {
        match m {
            Method::Exact => self.exact = Some(seconds),
            Method::Approx => self.approx = Some(seconds),
            Method::Shortcut => self.shortcut = Some(seconds),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub a: Method,
    pub b: Method,
    pub spearman: f64,
}

/// One-based indices of the largest values per method.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopObservations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approx: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub config: ConfigEcho,
    pub n: usize,
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approx: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut: Option<Vec<f64>>,
    /// Rank correlation between the exact values and the cheapest
    /// approximation present (shortcut, else approx); between the two
    /// approximations when exact is absent. Omitted with fewer than two
    /// methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spearman: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairwise_spearman: Vec<PairCorrelation>,
    pub timings: MethodTimings,
    pub iterations: IterationSummary,
    pub top: TopObservations,
    pub ill_conditioned: bool,
}

/// Per-method loop counts over all observations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    /// Eigen-analyses performed by the leave-one-out refits (`n + 1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_refits: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approx: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut: Option<u64>,
}

impl InfluenceReport {
    pub fn values(&self, m: Method) -> Option<&[f64]> {
        match m {
            Method::Exact => self.exact.as_deref(),
            Method::Approx => self.approx.as_deref(),
            Method::Shortcut => self.shortcut.as_deref(),
        }
    }

    /// The report with timings cleared, for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: MethodTimings::default(),
            ..self.clone()
        }
    }
}

pub fn write_report(report: &InfluenceReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let body = match format {
        ReportFormat::Json => report_json(report)?,
        ReportFormat::Csv => report_csv(report)?,
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn report_json(report: &InfluenceReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// `index,exact,approx,shortcut`, one row per observation, empty cells for
/// methods that were not run.
pub fn report_csv(report: &InfluenceReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    w.write_record(["index", "exact", "approx", "shortcut"]).map_err(csv_err)?;
    for i in 0..report.n {
        let get = |m| report.values(m).map(|v| v[i]);
        w.write_record([
            (i + 1).to_string(),
            cell(get(Method::Exact)),
            cell(get(Method::Approx)),
            cell(get(Method::Shortcut)),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("ascii output"))
}

/// `index,exact,approx` for external plotting.
pub fn write_plot_data(report: &InfluenceReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut body = String::from("index,exact,approx\n");
    for i in 0..report.n {
        let approx = report.approx.as_ref().or(report.shortcut.as_ref()).map(|v| v[i]);
        body.push_str(&format!(
            "{},{},{}\n",
            i + 1,
            cell(report.exact.as_ref().map(|v| v[i])),
            cell(approx)
        ));
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<InfluenceReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Per-observation columns of a CSV report; `None` for an all-empty column.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportColumns {
    pub exact: Option<Vec<f64>>,
    pub approx: Option<Vec<f64>>,
    pub shortcut: Option<Vec<f64>>,
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<ReportColumns> {
    let path = path.as_ref();
    let format_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| format_err(e.to_string()))?;
    let header = reader.headers().map_err(|e| format_err(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["index", "exact", "approx", "shortcut"] {
        return Err(format_err(format!("unexpected header {header:?}")));
    }
    let mut cols: [Vec<Option<f64>>; 3] = Default::default();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(e.to_string()))?;
        for (c, col) in cols.iter_mut().enumerate() {
            let text = record.get(c + 1).unwrap_or("");
            col.push(if text.is_empty() {
                None
            } else {
                Some(text.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    row: row + 1,
                    column: c + 2,
                    message: format!("not a number: '{text}'"),
                })?)
            });
        }
    }
    let finish = |col: &Vec<Option<f64>>| -> Result<Option<Vec<f64>>> {
        if col.iter().all(Option::is_none) {
            return Ok(None);
        }
        col.iter()
            .map(|v| v.ok_or_else(|| format_err("partially empty column".into())))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    };
    Ok(ReportColumns {
        exact: finish(&cols[0])?,
        approx: finish(&cols[1])?,
        shortcut: finish(&cols[2])?,
    })
}
