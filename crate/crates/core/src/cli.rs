//! Command-line surface: `simulate`, `test`, `changepoint` and `montecarlo`.
//!
//! Input series are single-column CSV files of counts with an optional
//! `count` header. The first `p` rows (the largest lag in use) are the
//! initial values; the remaining `n` rows are the scanned series, so a model
//! index `k` corresponds to raw data row `k + p`.
//!
//! Exit codes: 0 success (no rejection), 1 rejection (`test` only), 2 error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::changepoint::{
    estimate_changepoint, AlternativeQuantities, ChangePointEstimate, ScanKind,
};
use crate::cusum::{run_test_with_fit, ComponentResult, TestConfig, TestKind, TestReport};
use crate::error::{InarError, Result};
use crate::estimate::{cls_estimate, Diagnostics, EstimationResult};
use crate::model::{
    seeded_rng, simulate_with_change_rng, simulate_with_rng, stationary_initial, ChangeSpec,
    InarModel, InnovationSpec, LagSupport, ObservationSeries,
};
use crate::montecarlo::{
    run_experiment_with_log, Execution, ExperimentSpec, Metrics, MonteCarloSummary, ReplicaRecord,
    Scenario,
};

pub const SCHEMA: &str = "inar-cusum/report";
pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECT: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "inar-cusum",
    version,
    about = "CUSUM change-point tests for INAR(p) count series"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate an INAR(p) series, optionally with a single change, as CSV.
    Simulate(SimulateArgs),
    /// Fit by CLS and run the CUSUM test.
    Test(TestArgs),
    /// Estimate the change point from the fitted residuals.
    Changepoint(ChangepointArgs),
    /// Run a Monte Carlo experiment.
    Montecarlo(MonteCarloArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model order; defaults to the number of coefficients or the largest lag.
    #[arg(long)]
    pub p: Option<usize>,
    /// Coefficients `a1,a2,...` or lag pairs `1:0.5,12:0.2`.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: String,
    /// Innovation law: `poisson:M`, `negbin:M,V`, `degenerate:V` or `pmf:P0,P1,...`.
    #[arg(long)]
    pub innov: String,
    /// Number of CSV rows, initial values included.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial values; drawn after a burn-in when omitted.
    #[arg(long, value_delimiter = ',')]
    pub initial: Option<Vec<u64>>,
    /// Single change, e.g. `rho=0.5,mu=2` or `rho=0.5,alpha1=0.2`.
    #[arg(long)]
    pub change: Option<String>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Single-column CSV of counts.
    #[arg(long)]
    pub file: PathBuf,
    /// Fit lags `1..=p`.
    #[arg(long, conflicts_with = "lags")]
    pub p: Option<usize>,
    /// Fit an explicit lag set, e.g. `1,12`.
    #[arg(long, value_delimiter = ',')]
    pub lags: Option<Vec<usize>>,
    /// First data row to use (1-based, header excluded).
    #[arg(long)]
    pub from_row: Option<usize>,
    /// Last data row to use (inclusive).
    #[arg(long)]
    pub to_row: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    OneSided,
    OneSidedSup,
    OneSidedInf,
    TwoSided,
    Epidemic,
}

impl From<KindArg> for TestKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::OneSided => TestKind::OneSided,
            KindArg::OneSidedSup => TestKind::OneSidedSup,
            KindArg::OneSidedInf => TestKind::OneSidedInf,
            KindArg::TwoSided => TestKind::TwoSided,
            KindArg::Epidemic => TestKind::Epidemic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScanArg {
    Max,
    Min,
    MaxAbs,
}

impl From<ScanArg> for ScanKind {
    fn from(s: ScanArg) -> Self {
        match s {
            ScanArg::Max => ScanKind::ArgmaxSum,
            ScanArg::Min => ScanKind::ArgminSum,
            ScanArg::MaxAbs => ScanKind::ArgmaxAbsSum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExecArg {
    Sequential,
    Parallel,
}

impl From<ExecArg> for Execution {
    fn from(e: ExecArg) -> Self {
        match e {
            ExecArg::Sequential => Execution::Sequential,
            ExecArg::Parallel => Execution::Parallel,
        }
    }
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_enum, default_value = "two-sided")]
    pub kind: KindArg,
    /// Overall significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// 1-based components of (alpha_S, mu) to monitor; all by default.
    #[arg(long, value_delimiter = ',')]
    pub components: Option<Vec<usize>>,
    /// Echoed only; the test itself is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ChangepointArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_enum, default_value = "max-abs")]
    pub scan: ScanArg,
    /// Weight residuals by `X_{j-q}` (locates a change in alpha_q).
    #[arg(long)]
    pub weight_lag: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    /// JSON experiment spec; overrides the inline model flags.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Coefficients `a1,a2,...` or lag pairs `1:0.5,12:0.2`.
    #[arg(long, allow_hyphen_values = true)]
    pub coefs: Option<String>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub innov: Option<String>,
    #[arg(long)]
    pub change: Option<String>,
    /// Scan length per replica (initial values excluded).
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',')]
    pub lags: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "two-sided")]
    pub kind: KindArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_delimiter = ',')]
    pub components: Option<Vec<usize>>,
    /// Any of `rejection,changepoint,estimation`.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "max-abs")]
    pub scan: ScanArg,
    #[arg(long)]
    pub weight_lag: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "parallel")]
    pub execution: ExecArg,
    /// Write one JSON line per replica here.
    #[arg(long)]
    pub replica_log: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

// ---------------------------------------------------------------- parsing

/// Parse a single-column count CSV with an optional `count` header.
pub fn parse_counts(text: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    let mut seen_first = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let first = !seen_first;
        seen_first = true;
        if first && line.trim_matches('"').eq_ignore_ascii_case("count") {
            continue;
        }
        if line.contains(',') {
            return Err(InarError::Parse {
                line: line_no,
                message: format!("expected a single column, got {line:?}"),
            });
        }
        let v = line.parse::<u64>().map_err(|_| InarError::Parse {
            line: line_no,
            message: if line.starts_with('-') {
                format!("negative count {line:?}")
            } else {
                format!("{line:?} is not a nonnegative integer")
            },
        })?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(InarError::EmptyInput);
    }
    Ok(out)
}

pub fn read_counts(path: &Path) -> Result<Vec<u64>> {
    let text =
        fs::read_to_string(path).map_err(|e| InarError::Io(format!("{}: {e}", path.display())))?;
    parse_counts(&text)
}

pub fn write_counts(values: &[u64]) -> String {
    let mut s = String::with_capacity(values.len() * 4 + 6);
    s.push_str("count\n");
    for v in values {
        s.push_str(&v.to_string());
        s.push('\n');
    }
    s
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| InarError::InvalidConfig(format!("{what}: cannot parse {s:?} as a number")))
}

/// `poisson:M`, `negbin:M,V`, `degenerate:V`, `pmf:P0,P1,...`.
pub fn parse_innovation(s: &str) -> Result<InnovationSpec> {
    let (family, params) = s.split_once(':').ok_or_else(|| {
        InarError::InvalidConfig(format!("innovation {s:?}: expected FAMILY:PARAMS"))
    })?;
    let nums = params
        .split(',')
        .map(|p| parse_f64(p, "innovation"))
        .collect::<Result<Vec<_>>>()?;
    let want = |k: usize| -> Result<()> {
        if nums.len() == k {
            Ok(())
        } else {
            Err(InarError::InvalidConfig(format!(
                "innovation {s:?}: expected {k} parameter(s), got {}",
                nums.len()
            )))
        }
    };
    match family.trim().to_ascii_lowercase().as_str() {
        "poisson" => {
            want(1)?;
            InnovationSpec::poisson(nums[0])
        }
        "negbin" | "negative-binomial" => {
            want(2)?;
            InnovationSpec::negative_binomial(nums[0], nums[1])
        }
        "degenerate" | "const" => {
            want(1)?;
            InnovationSpec::degenerate(nums[0])
        }
        "pmf" => InnovationSpec::finite_pmf(nums),
        other => Err(InarError::InvalidConfig(format!(
            "unknown innovation family {other:?}"
        ))),
    }
}

/// Dense `a1,a2,...` or sparse `lag:value,...` coefficients.
pub fn parse_coefficients(s: &str, p: Option<usize>) -> Result<Vec<f64>> {
    let tokens: Vec<&str> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        return Err(InarError::InvalidConfig("no coefficients given".into()));
    }
    if tokens.iter().any(|t| t.contains(':')) {
        let mut pairs = Vec::with_capacity(tokens.len());
        for t in &tokens {
            let (lag, val) = t.split_once(':').ok_or_else(|| {
                InarError::InvalidConfig(format!("mixed coefficient forms in {s:?}"))
            })?;
            let lag = lag
                .parse::<usize>()
                .map_err(|_| InarError::InvalidConfig(format!("bad lag {lag:?}")))?;
            if lag == 0 {
                return Err(InarError::InvalidConfig("lags start at 1".into()));
            }
            pairs.push((lag, parse_f64(val, "coefficient")?));
        }
        let max_lag = pairs.iter().map(|&(l, _)| l).max().unwrap_or(1);
        let order = p.unwrap_or(max_lag);
        if order < max_lag {
            return Err(InarError::InvalidLag {
                lag: max_lag,
                order,
            });
        }
        let mut coefs = vec![0.0; order];
        for (lag, v) in pairs {
            coefs[lag - 1] = v;
        }
        Ok(coefs)
    } else {
        let mut coefs = tokens
            .iter()
            .map(|t| parse_f64(t, "coefficient"))
            .collect::<Result<Vec<_>>>()?;
        if let Some(p) = p {
            if p < coefs.len() {
                return Err(InarError::InvalidConfig(format!(
                    "--p {p} but {} coefficients given",
                    coefs.len()
                )));
            }
            coefs.resize(p, 0.0);
        }
        Ok(coefs)
    }
}

/// `rho=R[,mu=M][,alphaL=A]...` applied to `pre`.
pub fn parse_change(s: &str, pre: &InarModel) -> Result<ChangeSpec> {
    let mut rho = None;
    let mut post = pre.clone();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (key, val) = tok.split_once('=').ok_or_else(|| {
            InarError::InvalidConfig(format!("change {tok:?}: expected KEY=VALUE"))
        })?;
        let key = key.trim().to_ascii_lowercase();
        let v = parse_f64(val, "change")?;
        if key == "rho" {
            rho = Some(v);
        } else if key == "mu" {
            post = post.with_mu(v)?;
        } else if let Some(lag) = key.strip_prefix("alpha") {
            let lag = lag.trim_start_matches('_').parse::<usize>().map_err(|_| {
                InarError::InvalidConfig(format!("change key {key:?}: expected alphaL"))
            })?;
            post = post.with_coefficient(lag, v)?;
        } else {
            return Err(InarError::InvalidConfig(format!(
                "unknown change key {key:?}"
            )));
        }
    }
    let rho = rho.ok_or_else(|| InarError::InvalidConfig("change needs rho=...".into()))?;
    ChangeSpec::new(rho, pre.clone(), post)
}

fn build_model(coefs: &str, p: Option<usize>, innov: &str) -> Result<InarModel> {
    InarModel::new(parse_coefficients(coefs, p)?, parse_innovation(innov)?)
}

fn parse_metrics(list: &[String]) -> Result<Metrics> {
    let mut m = Metrics {
        rejection: false,
        changepoint: false,
        estimation: false,
    };
    for name in list {
        match name.trim() {
            "rejection" => m.rejection = true,
            "changepoint" => m.changepoint = true,
            "estimation" => m.estimation = true,
            other => {
                return Err(InarError::InvalidConfig(format!(
                    "unknown metric {other:?}"
                )))
            }
        }
    }
    Ok(m)
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Serialize)]
struct Document<'a, T: Serialize> {
    schema: &'static str,
    version: u32,
    command: &'static str,
    arguments: &'a [String],
    seed: Option<u64>,
    #[serde(flatten)]
    body: T,
}

#[derive(Debug, Serialize)]
struct InputEcho {
    path: String,
    /// 1-based data rows used, inclusive.
    first_row: usize,
    last_row: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Serialize)]
struct Estimates {
    lag_support: Vec<usize>,
    order: usize,
    initial_values: usize,
    n: usize,
    parameters: Vec<String>,
    theta_hat: Vec<f64>,
    sigma2_hat: f64,
    diagnostics: Diagnostics,
    q_n: Vec<Vec<f64>>,
    info_hat: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct PathSamples {
    /// `k / n` for `k = 0..=n`.
    t: Vec<f64>,
    components: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct TestBody {
    input: InputEcho,
    estimates: Estimates,
    config: TestConfig,
    alpha_star: f64,
    critical_value: f64,
    components: Vec<NamedComponent>,
    reject: bool,
    path: PathSamples,
}

#[derive(Debug, Serialize)]
struct NamedComponent {
    parameter: String,
    #[serde(flatten)]
    result: ComponentResult,
}

#[derive(Debug, Serialize)]
struct PlugIn {
    source: &'static str,
    rho: f64,
    theta_pre: Vec<f64>,
    theta_post: Vec<f64>,
    theta_tilde: Vec<f64>,
    score_drift: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct ChangepointBody {
    input: InputEcho,
    estimates: Estimates,
    scan: ScanKind,
    weight_lag: Option<usize>,
    tau_hat: usize,
    /// Data row of `tau_hat` in the input file.
    raw_row: usize,
    partial_sums: Vec<f64>,
    plug_in: Option<PlugIn>,
}

#[derive(Debug, Serialize)]
struct MonteCarloBody<'a> {
    experiment: &'a ExperimentSpec,
    execution: Execution,
    summary: &'a MonteCarloSummary,
}

fn parameter_names(support: &LagSupport) -> Vec<String> {
    support
        .lags()
        .iter()
        .map(|l| format!("alpha_{l}"))
        .chain(["mu".to_string()])
        .collect()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn estimates(series: &ObservationSeries, fit: &EstimationResult) -> Estimates {
    Estimates {
        lag_support: fit.lag_support.lags().to_vec(),
        order: series.order(),
        initial_values: series.order(),
        n: series.len(),
        parameters: parameter_names(&fit.lag_support),
        theta_hat: fit.theta_hat.iter().copied().collect(),
        sigma2_hat: fit.sigma2_hat,
        diagnostics: fit.diagnostics.clone(),
        q_n: rows(&fit.q_n),
        info_hat: rows(&fit.info_hat),
    }
}

fn emit(text: &str, output: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match output {
        Some(path) => {
            fs::write(path, text).map_err(|e| InarError::Io(format!("{}: {e}", path.display())))
        }
        None => out.write_all(text.as_bytes()).map_err(InarError::from),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| InarError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

// ---------------------------------------------------------------- commands

/// A fitted input: the series after splitting off initials, plus the echo.
pub struct LoadedSeries {
    pub series: ObservationSeries,
    pub support: LagSupport,
    /// Data row (1-based) of the first used value.
    pub first_row: usize,
    pub last_row: usize,
    pub path: PathBuf,
}

impl LoadedSeries {
    /// Data row of model index `k`.
    pub fn raw_row(&self, k: usize) -> usize {
        self.first_row - 1 + self.series.order() + k
    }

    fn echo(&self) -> InputEcho {
        InputEcho {
            path: self.path.display().to_string(),
            first_row: self.first_row,
            last_row: self.last_row,
            counts: self.series.to_raw(),
        }
    }
}

pub fn load_series(args: &FitArgs) -> Result<LoadedSeries> {
    let support = match (&args.lags, args.p) {
        (Some(lags), _) => LagSupport::new(lags.iter().copied())?,
        (None, Some(p)) => {
            if p == 0 {
                return Err(InarError::InvalidConfig("--p must be at least 1".into()));
            }
            LagSupport::full(p)
        }
        (None, None) => LagSupport::full(1),
    };
    let all = read_counts(&args.file)?;
    let first = args.from_row.unwrap_or(1);
    let last = args.to_row.unwrap_or(all.len());
    if first == 0 || first > last || last > all.len() {
        return Err(InarError::InvalidConfig(format!(
            "row range {first}..={last} outside 1..={}",
            all.len()
        )));
    }
    let raw = &all[first - 1..last];
    let order = support.max_lag();
    if raw.len() <= order + support.dim() {
        return Err(InarError::InsufficientData {
            n: raw.len().saturating_sub(order),
            required: support.dim(),
        });
    }
    let series = ObservationSeries::from_raw(raw, order)?;
    Ok(LoadedSeries {
        series,
        support,
        first_row: first,
        last_row: last,
        path: args.file.clone(),
    })
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let model = build_model(&a.alpha, a.p, &a.innov)?;
    let p = model.order();
    if a.n <= p + 1 {
        return Err(InarError::InvalidConfig(format!(
            "--n {} leaves no observations after {p} initial value(s)",
            a.n
        )));
    }
    let n = a.n - p;
    let change = a
        .change
        .as_deref()
        .map(|c| parse_change(c, &model))
        .transpose()?;
    let mut rng = seeded_rng(a.seed);
    let initial = match &a.initial {
        Some(v) => v.clone(),
        None => stationary_initial(&model, &mut rng),
    };
    let series = match &change {
        Some(spec) => simulate_with_change_rng(spec, n, &initial, &mut rng)?,
        None => simulate_with_rng(&model, n, &initial, &mut rng)?,
    };
    #[derive(Serialize)]
    struct Echo<'a> {
        model: &'a InarModel,
        change: Option<&'a ChangeSpec>,
        change_row: Option<usize>,
        rows: usize,
        initial_values: usize,
        seed: u64,
    }
    let echo = Echo {
        model: &model,
        change: change.as_ref(),
        change_row: change.as_ref().map(|c| c.tau(n) + p),
        rows: a.n,
        initial_values: p,
        seed: a.seed,
    };
    writeln!(
        err,
        "{}",
        serde_json::to_string(&echo).map_err(|e| InarError::Io(e.to_string()))?
    )?;
    emit(&write_counts(&series.to_raw()), a.output.as_deref(), out)?;
    Ok(EXIT_OK)
}

/// Load, fit and test; shared by the CLI and the acceptance suite.
pub fn test_series(
    loaded: &LoadedSeries,
    kind: TestKind,
    alpha: f64,
    components: Option<&[usize]>,
) -> Result<TestReport> {
    let dim = loaded.support.dim();
    let config = match components {
        Some(c) => TestConfig::new(c.to_vec(), kind, alpha)?,
        None => TestConfig::all_components(dim, kind, alpha)?,
    };
    if let Some(&i) = config.monitored.iter().find(|&&i| i > dim) {
        return Err(InarError::InvalidConfig(format!(
            "component {i} outside 1..={dim}"
        )));
    }
    let fit = cls_estimate(&loaded.series, &loaded.support)?;
    run_test_with_fit(&loaded.series, fit, &config)
}

fn cmd_test(a: &TestArgs, argv: &[String], out: &mut dyn Write) -> Result<i32> {
    let loaded = load_series(&a.fit)?;
    let report = test_series(&loaded, a.kind.into(), a.alpha, a.components.as_deref())?;
    let names = parameter_names(&loaded.support);
    let n = report.path.n();
    let body = TestBody {
        input: loaded.echo(),
        estimates: estimates(&loaded.series, &report.fit),
        config: report.config.clone(),
        alpha_star: report.alpha_star,
        critical_value: report.critical_value,
        components: report
            .components
            .iter()
            .map(|c| NamedComponent {
                parameter: names[c.component - 1].clone(),
                result: c.clone(),
            })
            .collect(),
        reject: report.reject,
        path: PathSamples {
            t: (0..=n).map(|k| k as f64 / n as f64).collect(),
            components: (1..=report.path.dim())
                .map(|i| report.path.component(i))
                .collect(),
        },
    };
    let doc = Document {
        schema: SCHEMA,
        version: SCHEMA_VERSION,
        command: "test",
        arguments: argv,
        seed: a.seed,
        body,
    };
    emit(&to_json(&doc)?, a.output.as_deref(), out)?;
    Ok(if report.reject { EXIT_REJECT } else { EXIT_OK })
}

/// Fit and scan; shared by the CLI and the acceptance suite.
pub fn changepoint_series(
    loaded: &LoadedSeries,
    scan: ScanKind,
    weight_lag: Option<usize>,
) -> Result<(EstimationResult, ChangePointEstimate)> {
    let fit = cls_estimate(&loaded.series, &loaded.support)?;
    let cp = estimate_changepoint(&loaded.series, &fit, scan, weight_lag)?;
    Ok((fit, cp))
}

fn cmd_changepoint(a: &ChangepointArgs, argv: &[String], out: &mut dyn Write) -> Result<i32> {
    let loaded = load_series(&a.fit)?;
    let (fit, cp) = changepoint_series(&loaded, a.scan.into(), a.weight_lag)?;
    let plug_in = AlternativeQuantities::plug_in(&loaded.series, &loaded.support, cp.tau_hat)
        .ok()
        .map(|q| PlugIn {
            source: "plug-in segment fits",
            rho: q.rho,
            theta_pre: q.theta_pre.iter().copied().collect(),
            theta_post: q.theta_post.iter().copied().collect(),
            theta_tilde: q.theta_tilde.iter().copied().collect(),
            score_drift: q.score_drift.iter().copied().collect(),
        });
    let body = ChangepointBody {
        input: loaded.echo(),
        estimates: estimates(&loaded.series, &fit),
        scan: cp.kind,
        weight_lag: cp.weight_lag,
        tau_hat: cp.tau_hat,
        raw_row: loaded.raw_row(cp.tau_hat),
        partial_sums: cp.partial_sums,
        plug_in,
    };
    let doc = Document {
        schema: SCHEMA,
        version: SCHEMA_VERSION,
        command: "changepoint",
        arguments: argv,
        seed: a.seed,
        body,
    };
    emit(&to_json(&doc)?, a.output.as_deref(), out)?;
    Ok(EXIT_OK)
}

fn experiment_from_flags(a: &MonteCarloArgs) -> Result<ExperimentSpec> {
    let coefs = a
        .coefs
        .as_deref()
        .ok_or_else(|| InarError::InvalidConfig("--coefs is required without --spec".into()))?;
    let innov = a
        .innov
        .as_deref()
        .ok_or_else(|| InarError::InvalidConfig("--innov is required without --spec".into()))?;
    let model = build_model(coefs, a.p, innov)?;
    let support = match &a.lags {
        Some(l) => LagSupport::new(l.iter().copied())?,
        None => LagSupport::full(model.order()),
    };
    let scenario = match &a.change {
        Some(c) => Scenario::Change {
            spec: parse_change(c, &model)?,
        },
        None => Scenario::Null { model },
    };
    let kind: TestKind = a.kind.into();
    let config = match &a.components {
        Some(c) => TestConfig::new(c.clone(), kind, a.alpha)?,
        None => TestConfig::all_components(support.dim(), kind, a.alpha)?,
    };
    let metrics = match &a.metrics {
        Some(m) => parse_metrics(m)?,
        None => Metrics::default(),
    };
    Ok(ExperimentSpec {
        scenario,
        n: a.n,
        replications: a.reps,
        config,
        lag_support: support,
        seed: a.seed,
        metrics,
        scan: a.scan.into(),
        weight_lag: a.weight_lag,
    })
}

fn cmd_montecarlo(a: &MonteCarloArgs, argv: &[String], out: &mut dyn Write) -> Result<i32> {
    let spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| InarError::Io(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<ExperimentSpec>(&text)
                .map_err(|e| InarError::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None => experiment_from_flags(a)?,
    };
    let exec: Execution = a.execution.into();
    let (summary, log) = run_experiment_with_log(&spec, exec)?;
    if let Some(path) = &a.replica_log {
        write_replica_log(path, &log)?;
    }
    let doc = Document {
        schema: SCHEMA,
        version: SCHEMA_VERSION,
        command: "montecarlo",
        arguments: argv,
        seed: Some(spec.seed),
        body: MonteCarloBody {
            experiment: &spec,
            execution: exec,
            summary: &summary,
        },
    };
    emit(&to_json(&doc)?, a.output.as_deref(), out)?;
    Ok(EXIT_OK)
}

fn write_replica_log(path: &Path, log: &[ReplicaRecord]) -> Result<()> {
    let mut s = String::new();
    for r in log {
        s.push_str(&serde_json::to_string(r).map_err(|e| InarError::Io(e.to_string()))?);
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| InarError::Io(format!("{}: {e}", path.display())))
}

/// Suggested fix for errors a user can act on.
pub fn remediation(e: &InarError) -> Option<&'static str> {
    match e {
        InarError::SingularDesign { .. } => Some(
            "the design matrix is singular: the series may be constant or too short for the lag set; \
             try fewer lags or a longer series",
        ),
        InarError::NotPositiveDefinite { .. } => Some(
            "the estimated information matrix is not positive definite (often a negative variance \
             estimate); try a smaller lag set or check the data for outliers",
        ),
        InarError::InsufficientData { .. } => Some("use a longer series or fewer lags"),
        InarError::Parse { .. } | InarError::EmptyInput => {
            Some("input must be one nonnegative integer per row, optionally headed by \"count\"")
        }
        _ => None,
    }
}

/// Run the CLI on `args` (program name first) and return the exit code.
pub fn execute<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let echo: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|s| s.to_string_lossy().into_owned())
        .collect();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, out, err),
        Command::Test(a) => cmd_test(a, &echo, out),
        Command::Changepoint(a) => cmd_changepoint(a, &echo, out),
        Command::Montecarlo(a) => cmd_montecarlo(a, &echo, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if let Some(h) = remediation(&e) {
                let _ = writeln!(err, "hint: {h}");
            }
            EXIT_ERROR
        }
    }
}
