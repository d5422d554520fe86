//! The normalised CUSUM process of fitted scores, its functionals, the
//! Brownian-bridge critical values and the componentwise tests.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{InarError, Result};
use crate::estimate::{self, cls_estimate, fill_regressor, EstimationResult};
use crate::linalg;
use crate::model::{LagSupport, ObservationSeries};

const SERIES_TERM_FLOOR: f64 = 1e-14;
const SERIES_MAX_TERMS: usize = 10_000;
const ROOT_TOLERANCE: f64 = 1e-10;

/// `I_n^{-1/2} sum_{j<=k} M_j z_j` on the grid `k = 0..=n`; the process is
/// constant between grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumPath {
    /// `dim x (n + 1)`; column `k` is the value at `t = k / n`.
    values: DMatrix<f64>,
}

impl CusumPath {
    pub fn from_columns(values: DMatrix<f64>) -> Self {
        CusumPath { values }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Number of observations `n`; the grid has `n + 1` points.
    pub fn n(&self) -> usize {
        self.values.ncols() - 1
    }

    pub fn at(&self, k: usize) -> DVector<f64> {
        self.values.column(k).into_owned()
    }

    /// Values of component `i` (1-based) on the grid.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.values.row(i - 1).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Functional of a single path component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticKind {
    Sup,
    Inf,
    TwoSided,
    Epidemic,
}

/// Brownian-bridge functional whose tail gives the critical value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Functional {
    /// `sup B` (equivalently `-inf B`).
    OneSided,
    /// `sup |B|`.
    TwoSided,
    /// `sup B - inf B`.
    Epidemic,
}

/// Which test to run on each monitored component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    /// Rejects on `sup >= C` (downward change) or `inf <= -C` (upward change).
    OneSided,
    /// Downward direction only: `sup >= C`.
    OneSidedSup,
    /// Upward direction only: `inf <= -C`.
    OneSidedInf,
    TwoSided,
    Epidemic,
}

impl TestKind {
    pub fn functional(self) -> Functional {
        match self {
            TestKind::OneSided | TestKind::OneSidedSup | TestKind::OneSidedInf => {
                Functional::OneSided
            }
            TestKind::TwoSided => Functional::TwoSided,
            TestKind::Epidemic => Functional::Epidemic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Large positive excursion: the parameter decreased.
    Downward,
    /// Large negative excursion: the parameter increased.
    Upward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    /// 1-based indices into `(a_i for i in S, mu)`.
    pub monitored: Vec<usize>,
    pub kind: TestKind,
    pub overall_alpha: f64,
}

impl TestConfig {
    pub fn new(monitored: Vec<usize>, kind: TestKind, overall_alpha: f64) -> Result<Self> {
        let mut monitored = monitored;
        monitored.sort_unstable();
        monitored.dedup();
        let cfg = TestConfig {
            monitored,
            kind,
            overall_alpha,
        };
        if cfg.monitored.is_empty() || cfg.monitored[0] == 0 {
            return Err(InarError::InvalidConfig(
                "monitored components must be a nonempty set of indices >= 1".into(),
            ));
        }
        if !(overall_alpha > 0.0 && overall_alpha < 1.0) {
            return Err(InarError::InvalidConfig(format!(
                "significance level {overall_alpha} not in (0, 1)"
            )));
        }
        Ok(cfg)
    }

    /// Every component of a `dim`-parameter fit.
    pub fn all_components(dim: usize, kind: TestKind, overall_alpha: f64) -> Result<Self> {
        Self::new((1..=dim).collect(), kind, overall_alpha)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self.monitored.iter().find(|&&i| i > dim) {
            Some(i) => Err(InarError::InvalidConfig(format!(
                "component {i} outside 1..={dim}"
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub component: usize,
    pub statistic: f64,
    pub sup: f64,
    pub inf: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub direction: Option<Direction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub config: TestConfig,
    pub alpha_star: f64,
    pub critical_value: f64,
    pub components: Vec<ComponentResult>,
    pub reject: bool,
    pub fit: EstimationResult,
    pub path: CusumPath,
}

/// Build the CUSUM path from a fit.
pub fn cusum_path(series: &ObservationSeries, est: &EstimationResult) -> Result<CusumPath> {
    let support = &est.lag_support;
    let n = series.len();
    if est.residuals.len() != n {
        return Err(InarError::DimensionMismatch(format!(
            "fit has {} residuals, series has {n} observations",
            est.residuals.len()
        )));
    }
    let root = linalg::inverse_sqrt(&est.info_hat)?;
    let d = support.dim();
    let mut partial = DMatrix::zeros(d, n + 1);
    let mut z = vec![0.0; d];
    let mut acc = vec![0.0; d];
    for k in 1..=n {
        fill_regressor(series, k, support, &mut z);
        let m = est.residuals[k - 1];
        for i in 0..d {
            acc[i] += m * z[i];
            partial[(i, k)] = acc[i];
        }
    }
    Ok(CusumPath {
        values: root * partial,
    })
}

/// The CUSUM form `I_n^{-1/2} Q_k (theta_k - theta_n)` at a single `k`, with
/// `theta_k` refitted on the first `k` observations. Returns `None` when
/// `Q_k` is singular.
pub fn cusum_form_at(
    series: &ObservationSeries,
    est: &EstimationResult,
    k: usize,
) -> Result<Option<DVector<f64>>> {
    let support = &est.lag_support;
    let head = ObservationSeries::new(series.initial().to_vec(), series.values()[..k].to_vec())?;
    let (q_k, b_k) = estimate::design_sums(&head, support);
    let theta_k = match q_k.clone().lu().solve(&b_k) {
        Some(t) if linalg::condition_number(&q_k) < estimate::CONDITION_CAP => t,
        _ => return Ok(None),
    };
    let root = linalg::inverse_sqrt(&est.info_hat)?;
    Ok(Some(root * q_k * (theta_k - &est.theta_hat)))
}

/// Exact supremum-type functional of component `i` (1-based) over the grid.
pub fn statistic(path: &CusumPath, component: usize, kind: StatisticKind) -> f64 {
    let (sup, inf) = extremes(
        &path
            .values
            .row(component - 1)
            .iter()
            .copied()
            .collect::<Vec<_>>(),
    );
    match kind {
        StatisticKind::Sup => sup,
        StatisticKind::Inf => inf,
        StatisticKind::TwoSided => sup.max(-inf),
        StatisticKind::Epidemic => sup - inf,
    }
}

fn extremes(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((0.0f64, 0.0f64), |(hi, lo), &v| (hi.max(v), lo.min(v)))
}

/// Per-component level giving overall level `alpha` across `d` independent
/// components: `1 - (1 - alpha)^(1/d)`.
pub fn alpha_star(alpha: f64, d: usize) -> f64 {
    assert!(d >= 1, "at least one component");
    -(((-alpha).ln_1p()) / d as f64).exp_m1()
}

/// `P(sup B >= x) = exp(-2 x^2)`.
pub fn one_sided_tail(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        (-2.0 * x * x).exp()
    }
}

/// `P(sup |B| >= x)` for a Brownian bridge (Kolmogorov distribution).
pub fn two_sided_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        // theta-function form of the cdf, fast for small x
        let c = std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let mut cdf = 0.0;
        for k in 1..=SERIES_MAX_TERMS {
            let odd = (2 * k - 1) as f64;
            let term = (-odd * odd * c).exp();
            cdf += term;
            if term < SERIES_TERM_FLOOR {
                break;
            }
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / x;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut tail = 0.0;
    for k in 1..=SERIES_MAX_TERMS {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        tail += if k % 2 == 1 { term } else { -term };
        if term < SERIES_TERM_FLOOR {
            break;
        }
    }
    (2.0 * tail).clamp(0.0, 1.0)
}

/// `P(sup B - inf B >= x)` (Kuiper's range of the bridge).
pub fn epidemic_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut tail = 0.0;
    for k in 1..=SERIES_MAX_TERMS {
        let k2x2 = (k * k) as f64 * x * x;
        let decay = (-2.0 * k2x2).exp();
        tail += (4.0 * k2x2 - 1.0) * decay;
        if decay < SERIES_TERM_FLOOR && k2x2 > 1.0 {
            break;
        }
    }
    (2.0 * tail).clamp(0.0, 1.0)
}

pub fn tail_probability(functional: Functional, x: f64) -> f64 {
    match functional {
        Functional::OneSided => one_sided_tail(x),
        Functional::TwoSided => two_sided_tail(x),
        Functional::Epidemic => epidemic_tail(x),
    }
}

/// The `x` with `P(functional >= x) = alpha`.
pub fn critical_value(functional: Functional, alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha = {alpha} not in (0, 1)");
    if functional == Functional::OneSided {
        return (-alpha.ln() / 2.0).sqrt();
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while tail_probability(functional, hi) > alpha {
        hi *= 2.0;
    }
    while hi - lo > ROOT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if tail_probability(functional, mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn evaluate_component(
    path: &CusumPath,
    component: usize,
    kind: TestKind,
    critical_value: f64,
) -> ComponentResult {
    let sup = statistic(path, component, StatisticKind::Sup);
    let inf = statistic(path, component, StatisticKind::Inf);
    let downward = sup >= critical_value;
    let upward = inf <= -critical_value;
    let (statistic, reject, direction) = match kind {
        TestKind::OneSided => {
            let direction = match (downward, upward) {
                (true, true) if -inf > sup => Some(Direction::Upward),
                (true, _) => Some(Direction::Downward),
                (false, true) => Some(Direction::Upward),
                (false, false) => None,
            };
            (sup.max(-inf), downward || upward, direction)
        }
        TestKind::OneSidedSup => (sup, downward, downward.then_some(Direction::Downward)),
        TestKind::OneSidedInf => (inf, upward, upward.then_some(Direction::Upward)),
        TestKind::TwoSided => {
            let stat = sup.max(-inf);
            (stat, stat >= critical_value, None)
        }
        TestKind::Epidemic => {
            let stat = sup - inf;
            (stat, stat >= critical_value, None)
        }
    };
    ComponentResult {
        component,
        statistic,
        sup,
        inf,
        critical_value,
        reject,
        direction,
    }
}

/// Fit, build the path and test every monitored component at the per-component
/// level `alpha_star(overall_alpha, |monitored|)`.
pub fn run_test(
    series: &ObservationSeries,
    config: &TestConfig,
    support: &LagSupport,
) -> Result<TestReport> {
    let fit = cls_estimate(series, support)?;
    run_test_with_fit(series, fit, config)
}

pub fn run_test_with_fit(
    series: &ObservationSeries,
    fit: EstimationResult,
    config: &TestConfig,
) -> Result<TestReport> {
    config.check_dim(fit.lag_support.dim())?;
    let path = cusum_path(series, &fit)?;
    let alpha_star = alpha_star(config.overall_alpha, config.monitored.len());
    let critical_value = critical_value(config.kind.functional(), alpha_star);
    let components: Vec<ComponentResult> = config
        .monitored
        .iter()
        .map(|&i| evaluate_component(&path, i, config.kind, critical_value))
        .collect();
    let reject = components.iter().any(|c| c.reject);
    Ok(TestReport {
        config: config.clone(),
        alpha_star,
        critical_value,
        components,
        reject,
        fit,
        path,
    })
}
