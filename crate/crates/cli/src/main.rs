//! `subinf`: influence analyses, timing sweeps and the verification suite.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use subspace_influence::analysis::{bench, bench_csv, bench_json, run_analysis, AnalysisConfig};
use subspace_influence::data::{load_csv, standardize, CsvOptions, ResponseColumn};
use subspace_influence::report::{report_csv, report_json, write_plot_data, write_report, Method, ReportFormat};
use subspace_influence::synthetic::{ResponseModel, SyntheticSpec};
use subspace_influence::verify::{run_check, VerifyOptions, CHECKS};
use subspace_influence::{Dataset, Divisor, Error, Estimator, EstimatorKind, StandardizationMode, SubspaceSelection};

#[derive(Parser)]
#[command(name = "subinf", version, about = "Influence of observations on principal subspaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-observation influence values for one subspace.
    Analyze(AnalyzeArgs),
    /// Timings and rank agreement over a sweep of leading subspace sizes.
    Bench(BenchArgs),
    /// Seeded numerical self-checks.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EstimatorArg {
    Cov,
    Corr,
    Phd,
}

#[derive(Clone, Copy, ValueEnum, Deserialize)]
enum DivisorArg {
    #[value(name = "n")]
    #[serde(rename = "n")]
    N,
    #[value(name = "n-1")]
    #[serde(rename = "n-1")]
    NMinusOne,
}

#[derive(Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum StandardizeArg {
    None,
    Rows,
    Columns,
}

#[derive(Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FormatArg {
    Json,
    Csv,
}

/// Data and estimator options shared by `analyze` and `bench`. Every field
/// may also come from `--config`; flags win.
#[derive(Args, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct DataArgs {
    /// TOML file with any of these options (kebab-case keys).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Numeric CSV table, one observation per row.
    #[arg(long, conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    /// Seeded Gaussian data instead of a file, e.g. `n=40,p=200`.
    #[arg(long)]
    synthetic: Option<String>,
    /// Seed for synthetic data.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Covariance divisor.
    #[arg(long, value_enum)]
    divisor: Option<DivisorArg>,
    #[arg(long, value_enum)]
    standardize: Option<StandardizeArg>,
    /// Response column (name, or one-based position without a header).
    #[arg(long)]
    response: Option<String>,
    /// Single-character field delimiter.
    #[arg(long)]
    delimiter: Option<char>,
    /// The input has no header row.
    #[arg(long)]
    #[serde(skip)]
    no_header: bool,
    #[serde(rename = "header")]
    #[arg(skip)]
    header: Option<bool>,
    /// Methods to run, comma separated: exact, approx, shortcut.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Leave-one-out worker threads (default: THREADS, else all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Leading subspace size.
    #[arg(long, conflicts_with = "subset")]
    k: Option<usize>,
    /// Explicit one-based eigenvalue indices, e.g. `1,3`.
    #[arg(long, value_delimiter = ',')]
    subset: Option<Vec<usize>>,
    /// Number of most influential observations to flag per method.
    #[arg(long)]
    top: Option<usize>,
    /// Also write `index,exact,approx` columns for plotting.
    #[arg(long)]
    emit_plot_data: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Leading subspace sizes, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',', required = true)]
    ks: Vec<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Checks to run (comma separated); all when absent.
    #[arg(long, value_delimiter = ',')]
    check: Vec<String>,
    /// Contamination weights for the convergence check.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
}

/// A failure with its stable code.
struct Failure {
    code: &'static str,
    detail: String,
    exit: u8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: e.code(),
            detail: e.to_string(),
            exit: 1,
        }
    }
}

fn usage(detail: impl Into<String>) -> Failure {
    Failure {
        code: "E_USAGE",
        detail: detail.into(),
        exit: 2,
    }
}

/// Fills unset fields from the `--config` file.
fn merge_config(mut args: DataArgs) -> Result<DataArgs, Failure> {
    let Some(path) = args.config.clone() else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| Failure::from(Error::Io { path: path.clone(), source: e }))?;
    let file: DataArgs = toml::from_str(&text).map_err(|e| Failure {
        code: "E_CONFIG",
        detail: format!("{}: {}", path.display(), e.message()),
        exit: 2,
    })?;
    macro_rules! fill {
        ($($f:ident),*) => { $( if args.$f.is_none() { args.$f = file.$f; } )* };
    }
    fill!(input, synthetic, seed, estimator, divisor, standardize, response, delimiter, methods, threads, output, format);
    if !args.no_header && file.header == Some(false) {
        args.no_header = true;
    }
    Ok(args)
}

fn parse_synthetic(spec: &str) -> Result<(usize, usize), Failure> {
    let (mut n, mut p) = (None, None);
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| usage(format!("synthetic spec entry '{part}' is not key=value")))?;
        let value: usize = value
            .trim()
            .parse()
            .map_err(|_| usage(format!("synthetic spec value '{value}' is not a count")))?;
        match key.trim() {
            "n" => n = Some(value),
            "p" => p = Some(value),
            other => return Err(usage(format!("unknown synthetic key '{other}' (expected n, p)"))),
        }
    }
    match (n, p) {
        (Some(n), Some(p)) if n > 0 && p > 0 => Ok((n, p)),
        _ => Err(usage("synthetic spec needs positive n and p, e.g. n=40,p=200")),
    }
}

fn estimator_of(args: &DataArgs) -> Estimator {
    let kind = match args.estimator.unwrap_or(EstimatorArg::Cov) {
        EstimatorArg::Cov => EstimatorKind::Covariance,
        EstimatorArg::Corr => EstimatorKind::Correlation,
        EstimatorArg::Phd => EstimatorKind::Phd,
    };
    let divisor = match args.divisor.unwrap_or(DivisorArg::N) {
        DivisorArg::N => Divisor::N,
        DivisorArg::NMinusOne => Divisor::NMinusOne,
    };
    Estimator { kind, divisor }
}

fn standardization_of(args: &DataArgs) -> StandardizationMode {
    match args.standardize.unwrap_or(StandardizeArg::None) {
        StandardizeArg::None => StandardizationMode::None,
        StandardizeArg::Rows => StandardizationMode::RowsMeanZeroSdOne,
        StandardizeArg::Columns => StandardizationMode::ColumnsMeanZeroSdOne,
    }
}

/// Loads or generates the dataset and applies the standardization.
fn load_data(args: &DataArgs, estimator: &Estimator) -> Result<(Dataset, Option<String>), Failure> {
    let (data, label) = match (&args.input, &args.synthetic) {
        (Some(path), None) => {
            let delimiter = match args.delimiter {
                None => b',',
                Some(c) if c.is_ascii() => c as u8,
                Some(c) => return Err(usage(format!("delimiter '{c}' is not a single-byte character"))),
            };
            let has_header = !args.no_header;
            let response = args.response.as_ref().map(|r| match r.parse::<usize>() {
                Ok(i) if !has_header && i >= 1 => ResponseColumn::Index(i - 1),
                _ => ResponseColumn::Name(r.clone()),
            });
            let opts = CsvOptions {
                delimiter,
                has_header,
                response,
            };
            (load_csv(path, &opts)?, Some(path.display().to_string()))
        }
        (None, Some(spec)) => {
            let (n, p) = parse_synthetic(spec)?;
            let mut s = SyntheticSpec::default_benchmark(n, p, args.seed.unwrap_or(0))?;
            if estimator.kind == EstimatorKind::Phd {
                // curvature along the first coordinate
                let mut beta = vec![0.0; p];
                beta[0] = 1.0;
                s = s.with_response(ResponseModel { beta, noise_sd: 0.5 });
            }
            (s.generate()?, Some(format!("synthetic:{spec}")))
        }
        (None, None) => return Err(usage("one of --input or --synthetic is required")),
        (Some(_), Some(_)) => return Err(usage("--input and --synthetic are mutually exclusive")),
    };
    let mode = standardization_of(args);
    let data = if mode == StandardizationMode::None {
        data
    } else {
        standardize(&data, mode)?.0
    };
    Ok((data, label))
}

fn methods_of(args: &DataArgs, estimator: &Estimator) -> Result<Vec<Method>, Failure> {
    match &args.methods {
        Some(names) => {
            let methods = names
                .iter()
                .filter(|s| !s.trim().is_empty())
                .map(|s| Method::parse(s).map_err(|e| usage(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            if methods.is_empty() {
                return Err(usage("--methods is empty"));
            }
            Ok(methods)
        }
        None if estimator.kind == EstimatorKind::Covariance => Ok(Method::ALL.to_vec()),
        None => Ok(vec![Method::Exact, Method::Approx]),
    }
}

fn default_threads() -> usize {
    std::env::var("THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn emit(body: &str, output: Option<&Path>) -> Result<(), Failure> {
    match output {
        Some(path) => fs::write(path, body).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes())
                .map_err(|e| Error::Io { path: "<stdout>".into(), source: e })?;
        }
    }
    Ok(())
}

fn format_of(args: &DataArgs) -> ReportFormat {
    match (args.format, &args.output) {
        (Some(FormatArg::Json), _) => ReportFormat::Json,
        (Some(FormatArg::Csv), _) => ReportFormat::Csv,
        (None, Some(path)) => ReportFormat::from_path(path),
        (None, None) => ReportFormat::Json,
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let data_args = merge_config(args.data)?;
    let estimator = estimator_of(&data_args);
    let methods = methods_of(&data_args, &estimator)?;
    let (data, label) = load_data(&data_args, &estimator)?;
    let selection = match (args.k, &args.subset) {
        (Some(0), _) => return Err(usage("--k must be at least 1")),
        (Some(k), None) => SubspaceSelection::leading(k, data.p())?,
        (None, Some(idx)) => SubspaceSelection::from_one_based(idx, data.p())?,
        _ => return Err(usage("one of --k or --subset is required")),
    };
    if methods.contains(&Method::Shortcut) && selection.k() >= data.p().min(data.n().saturating_sub(1)) {
        return Err(usage(format!(
            "the shortcut needs K < min(p, n - 1) = {}",
            data.p().min(data.n().saturating_sub(1))
        )));
    }
    let threads = data_args.threads.unwrap_or_else(default_threads);
    let cfg = AnalysisConfig {
        threads: Some(threads),
        top: args.top.unwrap_or(5),
        seed: data_args.synthetic.as_ref().map(|_| data_args.seed.unwrap_or(0)),
        input: label,
        standardization: standardization_of(&data_args),
        ..AnalysisConfig::new(estimator, selection, methods)
    };
    let report = run_analysis(&data, &cfg)?;
    match (&data_args.output, format_of(&data_args)) {
        (Some(path), format) => write_report(&report, path, format)?,
        (None, ReportFormat::Csv) => emit(&report_csv(&report)?, None)?,
        (None, ReportFormat::Json) => emit(&report_json(&report)?, None)?,
    }
    if let Some(path) = &args.emit_plot_data {
        write_plot_data(&report, path)?;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    let data_args = merge_config(args.data)?;
    if args.ks.is_empty() {
        return Err(usage("empty K sweep"));
    }
    if args.ks.contains(&0) {
        return Err(usage("K values must be at least 1"));
    }
    let estimator = estimator_of(&data_args);
    let methods = methods_of(&data_args, &estimator)?;
    if methods.len() < 2 {
        return Err(usage("bench needs at least two methods"));
    }
    let (data, label) = load_data(&data_args, &estimator)?;
    let first = SubspaceSelection::leading(args.ks[0], data.p())?;
    let cfg = AnalysisConfig {
        // single-threaded refits unless asked otherwise, so timings compare
        // like with like
        threads: Some(data_args.threads.unwrap_or(1)),
        seed: data_args.seed,
        input: label,
        standardization: standardization_of(&data_args),
        ..AnalysisConfig::new(estimator, first, methods)
    };
    let rows = bench(&data, &cfg, &args.ks)?;
    let body = match format_of(&data_args) {
        ReportFormat::Csv => bench_csv(&rows),
        ReportFormat::Json => bench_json(&rows)?,
    };
    emit(&body, data_args.output.as_deref())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let mut opts = VerifyOptions::default();
    if let Some(eps) = args.eps {
        if eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(usage("--eps values must lie in (0, 1)"));
        }
        opts.epsilons = eps;
    }
    if let Some(seed) = args.seed {
        opts.seed = seed;
    }
    let names: Vec<String> = if args.check.is_empty() {
        CHECKS.iter().map(|s| s.to_string()).collect()
    } else {
        args.check
    };
    for name in &names {
        if !CHECKS.contains(&name.as_str()) {
            return Err(usage(format!("unknown check '{name}' (known: {})", CHECKS.join(", "))));
        }
    }
    let mut first_failure = None;
    for name in &names {
        let outcome = run_check(name, &opts)?;
        println!("{} {}: {}", if outcome.passed { "PASS" } else { "FAIL" }, outcome.name, outcome.detail);
        if !outcome.passed && first_failure.is_none() {
            first_failure = Some(outcome);
        }
    }
    match first_failure {
        None => Ok(()),
        Some(o) => Err(Failure {
            code: "E_VERIFY",
            detail: format!("{}: {}", o.name, o.detail),
            exit: 1,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let line = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {line}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Bench(b) => cmd_bench(b),
        Command::Verify(v) => cmd_verify(v),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.code, f.detail.replace('\n', " "));
            ExitCode::from(f.exit)
        }
    }
}
