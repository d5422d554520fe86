//! Monte Carlo harness: empirical size and power, change-point error
//! quantiles, estimator error rates and Brownian-bridge tail oracles.
//!
//! Replica `i` of a run with master seed `s` draws from
//! [`replica_rng(s, i)`](crate::model::replica_rng), and results are
//! aggregated by replica index, so sequential and parallel execution give
//! identical summaries.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::changepoint::{estimate_changepoint, AlternativeQuantities, ScanKind};
use crate::cusum::{run_test_with_fit, Functional, TestConfig};
use crate::error::{InarError, Result};
use crate::estimate::cls_estimate;
use crate::model::{
    replica_rng, simulate_change_stationary, simulate_stationary, ChangeSpec, InarModel,
    LagSupport, ObservationSeries,
};

/// Fewest replications for which a rate is reported.
pub const MIN_REPLICATIONS: usize = 100;

/// Quantile levels reported for the change-point error.
pub const TAU_QUANTILE_LEVELS: [f64; 7] = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Sequential,
    /// Rayon thread pool when built with the `parallel` feature, sequential
    /// otherwise.
    #[default]
    Parallel,
}

/// Evaluate `f(0..reps)` and return the results in index order.
pub fn run_replicas<T, F>(reps: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..reps as u64).into_par_iter().map(f).collect()
        }
        _ => (0..reps as u64).map(f).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Scenario {
    Null { model: InarModel },
    Change { spec: ChangeSpec },
}

impl Scenario {
    fn order(&self) -> usize {
        match self {
            Scenario::Null { model } => model.order(),
            Scenario::Change { spec } => spec.pre.order(),
        }
    }

    fn simulate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<ObservationSeries> {
        match self {
            Scenario::Null { model } => simulate_stationary(model, n, rng),
            Scenario::Change { spec } => simulate_change_stationary(spec, n, rng),
        }
    }

    /// Limit of the CLS estimate on the given support: the true parameters
    /// under no change, the straddling limit under a change.
    fn estimation_target(&self, support: &LagSupport) -> Result<DVector<f64>> {
        let full = match self {
            Scenario::Null { model } => model.theta(),
            Scenario::Change { spec } => {
                if support.len() != spec.pre.order() {
                    return Err(InarError::InvalidConfig(
                        "estimation error under a change needs the full lag support".into(),
                    ));
                }
                AlternativeQuantities::from_models(spec.rho, &spec.pre, &spec.post)?.theta_tilde
            }
        };
        let p = full.len() - 1;
        Ok(DVector::from_iterator(
            support.dim(),
            support.lags().iter().map(|&l| full[l - 1]).chain([full[p]]),
        ))
    }

    fn sigma2(&self) -> Option<f64> {
        match self {
            Scenario::Null { model } => Some(model.sigma2()),
            Scenario::Change { .. } => None,
        }
    }
}

/// What to collect per replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub rejection: bool,
    pub changepoint: bool,
    pub estimation: bool,
}

impl Default for Metrics {
    fn default() -> Self {
        Metrics {
            rejection: true,
            changepoint: false,
            estimation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub replications: usize,
    pub config: TestConfig,
    pub lag_support: LagSupport,
    pub seed: u64,
    #[serde(default)]
    pub metrics: Metrics,
    #[serde(default = "default_scan")]
    pub scan: ScanKind,
    #[serde(default)]
    pub weight_lag: Option<usize>,
}

fn default_scan() -> ScanKind {
    ScanKind::ArgmaxAbsSum
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replications < MIN_REPLICATIONS {
            return Err(InarError::InvalidConfig(format!(
                "replications = {} (need at least {MIN_REPLICATIONS})",
                self.replications
            )));
        }
        if self.n <= self.lag_support.dim() {
            return Err(InarError::InsufficientData {
                n: self.n,
                required: self.lag_support.dim(),
            });
        }
        if self.lag_support.max_lag() > self.scenario.order() {
            return Err(InarError::InvalidConfig(format!(
                "lag {} exceeds model order {}",
                self.lag_support.max_lag(),
                self.scenario.order()
            )));
        }
        if let Some(i) = self
            .config
            .monitored
            .iter()
            .find(|&&i| i > self.lag_support.dim())
        {
            return Err(InarError::InvalidConfig(format!(
                "component {i} outside the fit"
            )));
        }
        if let Scenario::Change { spec } = &self.scenario {
            if self.n < 2 || spec.pre.order() != spec.post.order() {
                return Err(InarError::InvalidConfig("invalid change scenario".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub level: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub seed: u64,
    pub n: usize,
    pub replications: usize,
    pub successes: usize,
    /// Failed replicas by error kind; excluded from every rate.
    pub failures: BTreeMap<String, usize>,
    pub rejection_rate: Option<f64>,
    pub rejection_se: Option<f64>,
    /// Quantiles of `tau_hat - tau`.
    pub tau_error_quantiles: Option<Vec<Quantile>>,
    /// 90th percentile of `|tau_hat - tau|`.
    pub tau_abs_error_p90: Option<f64>,
    /// Root mean squared norm of `theta_hat - target`.
    pub theta_rmse: Option<f64>,
    /// Mean `|sigma2_hat - sigma2|` (no-change scenarios only).
    pub sigma2_mae: Option<f64>,
    pub wall_clock_secs: f64,
}

impl MonteCarloSummary {
    /// Copy with timing zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        MonteCarloSummary {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }
}

/// Per-replica outcome, as written to replica logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub index: u64,
    /// Error kind when the replica failed.
    pub failure: Option<String>,
    pub reject: Option<bool>,
    pub tau_error: Option<f64>,
    pub theta_sq_error: Option<f64>,
    pub sigma2_abs_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct ReplicaResult {
    reject: Option<bool>,
    tau_error: Option<f64>,
    theta_sq_error: Option<f64>,
    sigma2_abs_error: Option<f64>,
}

fn failure_label(e: &InarError) -> String {
    match e {
        InarError::SingularDesign { .. } => "singular-design",
        InarError::NotPositiveDefinite { .. } => "not-positive-definite",
        InarError::InsufficientData { .. } => "insufficient-data",
        _ => "other",
    }
    .to_string()
}

/// Type-7 (linear interpolation) empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    v
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = mean(&lx);
    let my = mean(&ly);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn run_replica(
    spec: &ExperimentSpec,
    target: Option<&DVector<f64>>,
    index: u64,
) -> Result<ReplicaResult> {
    let mut rng = replica_rng(spec.seed, index);
    let series = spec.scenario.simulate(spec.n, &mut rng)?;
    let fit = cls_estimate(&series, &spec.lag_support)?;

    let tau_error = if spec.metrics.changepoint {
        let est = estimate_changepoint(&series, &fit, spec.scan, spec.weight_lag)?;
        let tau = match &spec.scenario {
            Scenario::Change { spec: change } => change.tau(spec.n),
            Scenario::Null { .. } => spec.n / 2,
        };
        Some(est.tau_hat as f64 - tau as f64)
    } else {
        None
    };
    let (theta_sq_error, sigma2_abs_error) = match target {
        Some(t) => (
            Some((&fit.theta_hat - t).norm_squared()),
            spec.scenario.sigma2().map(|s2| (fit.sigma2_hat - s2).abs()),
        ),
        None => (None, None),
    };
    let reject = if spec.metrics.rejection {
        Some(run_test_with_fit(&series, fit, &spec.config)?.reject)
    } else {
        None
    };
    Ok(ReplicaResult {
        reject,
        tau_error,
        theta_sq_error,
        sigma2_abs_error,
    })
}

/// Run an experiment and aggregate by replica index.
pub fn run_experiment(spec: &ExperimentSpec, exec: Execution) -> Result<MonteCarloSummary> {
    run_experiment_with_log(spec, exec).map(|(summary, _)| summary)
}

/// As [`run_experiment`], also returning one record per replica.
pub fn run_experiment_with_log(
    spec: &ExperimentSpec,
    exec: Execution,
) -> Result<(MonteCarloSummary, Vec<ReplicaRecord>)> {
    spec.validate()?;
    let start = Instant::now();
    let target = if spec.metrics.estimation {
        Some(spec.scenario.estimation_target(&spec.lag_support)?)
    } else {
        None
    };
    let results = run_replicas(spec.replications, exec, |i| {
        run_replica(spec, target.as_ref(), i)
    });

    let mut failures = BTreeMap::new();
    let mut ok = Vec::with_capacity(results.len());
    let mut log = Vec::with_capacity(results.len());
    for (index, r) in results.into_iter().enumerate() {
        let index = index as u64;
        match r {
            Ok(v) => {
                log.push(ReplicaRecord {
                    index,
                    failure: None,
                    reject: v.reject,
                    tau_error: v.tau_error,
                    theta_sq_error: v.theta_sq_error,
                    sigma2_abs_error: v.sigma2_abs_error,
                });
                ok.push(v);
            }
            Err(e) => {
                let label = failure_label(&e);
                log.push(ReplicaRecord {
                    index,
                    failure: Some(label.clone()),
                    reject: None,
                    tau_error: None,
                    theta_sq_error: None,
                    sigma2_abs_error: None,
                });
                *failures.entry(label).or_insert(0) += 1;
            }
        }
    }
    let successes = ok.len();

    let (rejection_rate, rejection_se) = if spec.metrics.rejection && successes > 0 {
        let rate = ok.iter().filter(|r| r.reject == Some(true)).count() as f64 / successes as f64;
        (
            Some(rate),
            Some((rate * (1.0 - rate) / successes as f64).sqrt()),
        )
    } else {
        (None, None)
    };

    let tau_errors: Vec<f64> = ok.iter().filter_map(|r| r.tau_error).collect();
    let (tau_error_quantiles, tau_abs_error_p90) = if tau_errors.is_empty() {
        (None, None)
    } else {
        let s = sorted(tau_errors.clone());
        let quantiles = TAU_QUANTILE_LEVELS
            .iter()
            .map(|&level| Quantile {
                level,
                value: quantile_sorted(&s, level),
            })
            .collect();
        let abs = sorted(tau_errors.iter().map(|v| v.abs()).collect());
        (Some(quantiles), Some(quantile_sorted(&abs, 0.9)))
    };

    let theta_sq: Vec<f64> = ok.iter().filter_map(|r| r.theta_sq_error).collect();
    let sigma2_abs: Vec<f64> = ok.iter().filter_map(|r| r.sigma2_abs_error).collect();

    let summary = MonteCarloSummary {
        seed: spec.seed,
        n: spec.n,
        replications: spec.replications,
        successes,
        failures,
        rejection_rate,
        rejection_se,
        tau_error_quantiles,
        tau_abs_error_p90,
        theta_rmse: (!theta_sq.is_empty()).then(|| mean(&theta_sq).sqrt()),
        sigma2_mae: (!sigma2_abs.is_empty()).then(|| mean(&sigma2_abs)),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((summary, log))
}

/// Rejection rate under the no-change model, full lag support.
pub fn empirical_size(
    model: &InarModel,
    n: usize,
    reps: usize,
    config: &TestConfig,
    seed: u64,
    exec: Execution,
) -> Result<MonteCarloSummary> {
    if !model.satisfies_c0() {
        return Err(InarError::InvalidConfig(
            "model does not satisfy condition C0".into(),
        ));
    }
    let spec = ExperimentSpec {
        scenario: Scenario::Null {
            model: model.clone(),
        },
        n,
        replications: reps,
        config: config.clone(),
        lag_support: LagSupport::full(model.order()),
        seed,
        metrics: Metrics::default(),
        scan: ScanKind::ArgmaxAbsSum,
        weight_lag: None,
    };
    run_experiment(&spec, exec)
}

/// Rejection rate under a single change, full lag support.
pub fn empirical_power(
    change: &ChangeSpec,
    n: usize,
    reps: usize,
    config: &TestConfig,
    seed: u64,
    exec: Execution,
) -> Result<MonteCarloSummary> {
    let spec = ExperimentSpec {
        scenario: Scenario::Change {
            spec: change.clone(),
        },
        n,
        replications: reps,
        config: config.clone(),
        lag_support: LagSupport::full(change.pre.order()),
        seed,
        metrics: Metrics::default(),
        scan: ScanKind::ArgmaxAbsSum,
        weight_lag: None,
    };
    run_experiment(&spec, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauErrorRow {
    pub n: usize,
    pub tau: usize,
    pub quantiles: Vec<Quantile>,
    pub abs_error_p90: f64,
    pub successes: usize,
    pub failures: usize,
}

/// Quantiles of `tau_hat - tau` for each sample size. Every `n` reuses the
/// master seed; the series differ because their lengths differ.
pub fn changepoint_error_quantiles(
    change: &ChangeSpec,
    n_list: &[usize],
    reps: usize,
    kind: ScanKind,
    weight_lag: Option<usize>,
    seed: u64,
    exec: Execution,
) -> Result<Vec<TauErrorRow>> {
    if let Some(&n) = n_list.iter().find(|&&n| n < 200) {
        return Err(InarError::InvalidConfig(format!("n = {n} below 200")));
    }
    let support = LagSupport::full(change.pre.order());
    n_list
        .iter()
        .map(|&n| {
            let spec = ExperimentSpec {
                scenario: Scenario::Change {
                    spec: change.clone(),
                },
                n,
                replications: reps,
                config: TestConfig::all_components(
                    support.dim(),
                    crate::cusum::TestKind::TwoSided,
                    0.05,
                )?,
                lag_support: support.clone(),
                seed,
                metrics: Metrics {
                    rejection: false,
                    changepoint: true,
                    estimation: false,
                },
                scan: kind,
                weight_lag,
            };
            let summary = run_experiment(&spec, exec)?;
            Ok(TauErrorRow {
                n,
                tau: change.tau(n),
                quantiles: summary.tau_error_quantiles.unwrap_or_default(),
                abs_error_p90: summary.tau_abs_error_p90.unwrap_or(f64::NAN),
                successes: summary.successes,
                failures: summary.failures.values().sum(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub theta_rmse: f64,
    pub sigma2_mae: f64,
}

/// Estimation error of the CLS fit and the variance estimate across sample
/// sizes, full lag support.
pub fn estimator_rates(
    model: &InarModel,
    n_list: &[usize],
    reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<RateRow>> {
    let support = LagSupport::full(model.order());
    n_list
        .iter()
        .map(|&n| {
            let spec = ExperimentSpec {
                scenario: Scenario::Null {
                    model: model.clone(),
                },
                n,
                replications: reps,
                config: TestConfig::all_components(
                    support.dim(),
                    crate::cusum::TestKind::TwoSided,
                    0.05,
                )?,
                lag_support: support.clone(),
                seed,
                metrics: Metrics {
                    rejection: false,
                    changepoint: false,
                    estimation: true,
                },
                scan: ScanKind::ArgmaxAbsSum,
                weight_lag: None,
            };
            let s = run_experiment(&spec, exec)?;
            Ok(RateRow {
                n,
                theta_rmse: s.theta_rmse.unwrap_or(f64::NAN),
                sigma2_mae: s.sigma2_mae.unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// Per-replica CLS estimates on series straddling a change, full support.
pub fn theta_hat_under_change(
    change: &ChangeSpec,
    n: usize,
    reps: usize,
    seed: u64,
    exec: Execution,
) -> Vec<Result<DVector<f64>>> {
    let support = LagSupport::full(change.pre.order());
    run_replicas(reps, exec, |i| {
        let mut rng = replica_rng(seed, i);
        let series = simulate_change_stationary(change, n, &mut rng)?;
        Ok(cls_estimate(&series, &support)?.theta_hat)
    })
}

/// `max_k sum_{j<=k} M_j w_j / n` per replica, with `w_j = X_{j-q}` when a
/// weight lag is given and `w_j = 1` otherwise.
pub fn max_partial_sum_rate(
    change: &ChangeSpec,
    n: usize,
    reps: usize,
    weight_lag: Option<usize>,
    seed: u64,
    exec: Execution,
) -> Vec<Result<f64>> {
    let support = LagSupport::full(change.pre.order());
    run_replicas(reps, exec, |i| {
        let mut rng = replica_rng(seed, i);
        let series = simulate_change_stationary(change, n, &mut rng)?;
        let fit = cls_estimate(&series, &support)?;
        let est = estimate_changepoint(&series, &fit, ScanKind::ArgmaxSum, weight_lag)?;
        Ok(est.partial_sums[est.tau_hat - 1] / n as f64)
    })
}

/// Monte Carlo variance of `sum_{k<=n} X_k` from stationary starts.
pub fn partial_sum_variance(
    model: &InarModel,
    n: usize,
    reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    let sums: Vec<Result<f64>> = run_replicas(reps, exec, |i| {
        let mut rng = replica_rng(seed, i);
        let s = simulate_stationary(model, n, &mut rng)?;
        Ok(s.values().iter().sum::<u64>() as f64)
    });
    let sums: Vec<f64> = sums.into_iter().collect::<Result<_>>()?;
    let m = mean(&sums);
    Ok(sums.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (sums.len() - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub probability: f64,
    pub standard_error: f64,
}

/// Supremum-type functional of one simulated bridge on `grid_points` steps:
/// a Wiener path minus `t W(1)`.
fn bridge_functional<R: Rng + ?Sized>(
    functional: Functional,
    grid_points: usize,
    rng: &mut R,
    buf: &mut Vec<f64>,
) -> f64 {
    let step = (1.0 / grid_points as f64).sqrt();
    buf.clear();
    let mut w = 0.0;
    for _ in 0..grid_points {
        let z: f64 = rng.sample(StandardNormal);
        w += step * z;
        buf.push(w);
    }
    let end = w;
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for (k, wk) in buf.iter().enumerate() {
        let t = (k + 1) as f64 / grid_points as f64;
        let b = wk - t * end;
        hi = hi.max(b);
        lo = lo.min(b);
    }
    match functional {
        Functional::OneSided => hi,
        Functional::TwoSided => hi.max(-lo),
        Functional::Epidemic => hi - lo,
    }
}

/// Empirical `P(functional(B) >= x)` over `reps` simulated bridges.
pub fn bridge_tail(
    functional: Functional,
    x: f64,
    reps: usize,
    grid_points: usize,
    seed: u64,
    exec: Execution,
) -> Result<TailEstimate> {
    if x.is_nan() || x <= 0.0 || grid_points < 100 || reps == 0 {
        return Err(InarError::InvalidConfig(format!(
            "bridge tail needs x > 0, grid >= 100, reps > 0 (got {x}, {grid_points}, {reps})"
        )));
    }
    const CHUNK: usize = 1000;
    let chunks = reps.div_ceil(CHUNK);
    let counts = run_replicas(chunks, exec, |c| {
        let mut rng = replica_rng(seed, c);
        let mut buf = Vec::with_capacity(grid_points);
        let size = CHUNK.min(reps - c as usize * CHUNK);
        (0..size)
            .filter(|_| bridge_functional(functional, grid_points, &mut rng, &mut buf) >= x)
            .count()
    });
    let hits: usize = counts.iter().sum();
    let p = hits as f64 / reps as f64;
    Ok(TailEstimate {
        probability: p,
        standard_error: (p * (1.0 - p) / reps as f64).sqrt(),
    })
}
