//! Conditional least squares fit, residuals, innovation variance and the
//! estimated information matrix.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{InarError, Result};
use crate::linalg;
use crate::model::{LagSupport, ObservationSeries};

/// Condition-number cap on `Q_n` above which the design counts as singular.
pub const CONDITION_CAP: f64 = 1e12;

/// Outcome of a CLS fit on a lag support `S`. Vectors and matrices are indexed
/// by `(a_i for i in S, mu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub lag_support: LagSupport,
    pub theta_hat: DVector<f64>,
    pub q_n: DMatrix<f64>,
    pub sigma2_hat: f64,
    pub info_hat: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Non-fatal warnings attached to a fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `sigma2_hat < 0`; it is returned unchanged.
    pub negative_sigma2: bool,
    /// Fitted coefficients sum to at least one.
    pub unstable_fit: bool,
    /// Some fitted coefficient lies outside `[0, 1]`.
    pub coefficient_out_of_range: bool,
    pub condition_number: f64,
}

impl EstimationResult {
    pub fn alpha_hat(&self) -> &[f64] {
        &self.theta_hat.as_slice()[..self.lag_support.len()]
    }

    pub fn mu_hat(&self) -> f64 {
        self.theta_hat[self.lag_support.len()]
    }

    /// Number of observations used.
    pub fn n(&self) -> usize {
        self.residuals.len()
    }
}

fn check_support(series: &ObservationSeries, support: &LagSupport) -> Result<()> {
    if support.max_lag() > series.order() {
        return Err(InarError::InitialLength {
            expected: support.max_lag(),
            got: series.order(),
        });
    }
    Ok(())
}

fn check_theta(theta: &DVector<f64>, support: &LagSupport) -> Result<()> {
    if theta.len() != support.dim() {
        return Err(InarError::DimensionMismatch(format!(
            "parameter vector has length {}, lag support needs {}",
            theta.len(),
            support.dim()
        )));
    }
    Ok(())
}

/// Fill `out` with the regressor `(X_{k-i} for i in S, 1)`.
#[inline]
pub(crate) fn fill_regressor(
    series: &ObservationSeries,
    k: usize,
    support: &LagSupport,
    out: &mut [f64],
) {
    for (slot, &lag) in out.iter_mut().zip(support.lags()) {
        *slot = series.lagged(k, lag) as f64;
    }
    out[support.len()] = 1.0;
}

pub fn regressor(series: &ObservationSeries, k: usize, support: &LagSupport) -> DVector<f64> {
    let mut z = vec![0.0; support.dim()];
    fill_regressor(series, k, support, &mut z);
    DVector::from_vec(z)
}

#[inline]
fn add_weighted_outer(acc: &mut DMatrix<f64>, z: &[f64], weight: f64) {
    let d = z.len();
    for j in 0..d {
        let wj = weight * z[j];
        for i in j..d {
            acc[(i, j)] += wj * z[i];
        }
    }
}

fn mirror_lower(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for j in 0..d {
        for i in j + 1..d {
            m[(j, i)] = m[(i, j)];
        }
    }
}

/// `Q_n` and `sum_k X_k z_k` over `k = 1..=n`.
pub fn design_sums(
    series: &ObservationSeries,
    support: &LagSupport,
) -> (DMatrix<f64>, DVector<f64>) {
    let d = support.dim();
    let mut q = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    let mut z = vec![0.0; d];
    for k in 1..=series.len() {
        fill_regressor(series, k, support, &mut z);
        add_weighted_outer(&mut q, &z, 1.0);
        let x = series.at(k as isize) as f64;
        for i in 0..d {
            b[i] += x * z[i];
        }
    }
    mirror_lower(&mut q);
    (q, b)
}

/// Conditional least squares estimate on the given lag support.
///
/// Fails with [`InarError::SingularDesign`] when `Q_n` has condition number
/// above [`CONDITION_CAP`], and with [`InarError::NotPositiveDefinite`] when
/// the estimated information matrix is not positive definite.
pub fn cls_estimate(series: &ObservationSeries, support: &LagSupport) -> Result<EstimationResult> {
    check_support(series, support)?;
    let n = series.len();
    if n <= support.dim() {
        return Err(InarError::InsufficientData {
            n,
            required: support.dim(),
        });
    }
    let (q_n, b) = design_sums(series, support);
    let condition_number = linalg::condition_number(&q_n);
    if condition_number.is_nan() || condition_number > CONDITION_CAP {
        return Err(InarError::SingularDesign { condition_number });
    }
    let theta_hat = match q_n.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => q_n
            .clone()
            .lu()
            .solve(&b)
            .ok_or(InarError::SingularDesign { condition_number })?,
    };
    let residuals = residuals(series, &theta_hat, support)?;
    let sigma2_hat = sigma2_estimate(series, &theta_hat, &residuals, support)?;
    let info_hat = information_matrix(series, &theta_hat, sigma2_hat, support)?;

    let alpha_hat = &theta_hat.as_slice()[..support.len()];
    let diagnostics = Diagnostics {
        negative_sigma2: sigma2_hat < 0.0,
        unstable_fit: alpha_hat.iter().sum::<f64>() >= 1.0,
        coefficient_out_of_range: alpha_hat.iter().any(|a| !(0.0..=1.0).contains(a)),
        condition_number,
    };
    if diagnostics.negative_sigma2 {
        warn!("estimated innovation variance is negative ({sigma2_hat})");
    }
    if diagnostics.unstable_fit {
        warn!("fitted coefficients sum to at least one");
    }

    if !linalg::is_positive_definite(&info_hat) {
        let (min_eigenvalue, max_eigenvalue) = linalg::symmetric_eigen_range(&info_hat);
        return Err(InarError::NotPositiveDefinite {
            min_eigenvalue,
            max_eigenvalue,
        });
    }

    Ok(EstimationResult {
        lag_support: support.clone(),
        theta_hat,
        q_n,
        sigma2_hat,
        info_hat,
        residuals,
        diagnostics,
    })
}

/// `M_k = X_k - sum_{i in S} a_i X_{k-i} - mu` for `k = 1..=n`.
pub fn residuals(
    series: &ObservationSeries,
    theta: &DVector<f64>,
    support: &LagSupport,
) -> Result<Vec<f64>> {
    check_support(series, support)?;
    check_theta(theta, support)?;
    let mu = theta[support.len()];
    Ok((1..=series.len())
        .map(|k| {
            let fitted: f64 = support
                .lags()
                .iter()
                .zip(theta.iter())
                .map(|(&lag, a)| a * series.lagged(k, lag) as f64)
                .sum();
            series.at(k as isize) as f64 - fitted - mu
        })
        .collect())
}

/// `sum_{i in S} a_i (1 - a_i) X_{k-i}`, the thinning part of the conditional
/// variance of `X_k`.
#[inline]
fn thinning_variance(
    series: &ObservationSeries,
    k: usize,
    theta: &DVector<f64>,
    support: &LagSupport,
) -> f64 {
    support
        .lags()
        .iter()
        .zip(theta.iter())
        .map(|(&lag, a)| a * (1.0 - a) * series.lagged(k, lag) as f64)
        .sum()
}

/// Innovation variance estimate
/// `(1/n) sum_k [M_k^2 - sum_i a_i (1 - a_i) X_{k-i}]`.
/// May be negative in small samples.
pub fn sigma2_estimate(
    series: &ObservationSeries,
    theta: &DVector<f64>,
    residuals: &[f64],
    support: &LagSupport,
) -> Result<f64> {
    check_support(series, support)?;
    check_theta(theta, support)?;
    if residuals.len() != series.len() {
        return Err(InarError::DimensionMismatch(format!(
            "{} residuals for {} observations",
            residuals.len(),
            series.len()
        )));
    }
    let total: f64 = residuals
        .iter()
        .enumerate()
        .map(|(idx, m)| m * m - thinning_variance(series, idx + 1, theta, support))
        .sum();
    Ok(total / series.len() as f64)
}

/// `I_n = sum_k (a2^T X_{k-1} + sigma2) z_k z_k^T` with `a2_i = a_i (1 - a_i)`.
pub fn information_matrix(
    series: &ObservationSeries,
    theta: &DVector<f64>,
    sigma2: f64,
    support: &LagSupport,
) -> Result<DMatrix<f64>> {
    check_support(series, support)?;
    check_theta(theta, support)?;
    let d = support.dim();
    let mut info = DMatrix::zeros(d, d);
    let mut z = vec![0.0; d];
    for k in 1..=series.len() {
        fill_regressor(series, k, support, &mut z);
        let w = thinning_variance(series, k, theta, support) + sigma2;
        add_weighted_outer(&mut info, &z, w);
    }
    mirror_lower(&mut info);
    Ok(info)
}
