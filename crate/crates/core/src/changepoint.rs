//! Change-point location estimators and the limiting quantities that govern
//! the CUSUM process when a single change is present.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{InarError, Result};
use crate::estimate::{cls_estimate, fill_regressor, EstimationResult};
use crate::linalg;
use crate::model::{moment_matrix_c, InarModel, LagSupport, ObservationSeries};

/// Which extremum of the partial sums locates the change. Downward changes
/// push the sums up (`ArgmaxSum`), upward changes push them down
/// (`ArgminSum`); `ArgmaxAbsSum` is direction-agnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanKind {
    ArgmaxSum,
    ArgminSum,
    ArgmaxAbsSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointEstimate {
    /// 1-based index in `1..=n`; the smallest index attaining the extremum.
    pub tau_hat: usize,
    pub kind: ScanKind,
    /// `S_k = sum_{j<=k} M_j w_j` for `k = 1..=n`.
    pub partial_sums: Vec<f64>,
    /// Lag `q` of the weights `X_{j-q}`, if any.
    pub weight_lag: Option<usize>,
}

/// Scan `S_k = sum_{j<=k} residuals_j * weights_j` and return the first index
/// attaining the extremum selected by `kind`.
pub fn changepoint_scan(
    residuals: &[f64],
    weights: &[f64],
    kind: ScanKind,
) -> Result<ChangePointEstimate> {
    if residuals.is_empty() {
        return Err(InarError::EmptyInput);
    }
    if residuals.len() != weights.len() {
        return Err(InarError::DimensionMismatch(format!(
            "{} residuals, {} weights",
            residuals.len(),
            weights.len()
        )));
    }
    let mut acc = 0.0;
    let partial_sums: Vec<f64> = residuals
        .iter()
        .zip(weights)
        .map(|(m, w)| {
            acc += m * w;
            acc
        })
        .collect();
    let score = |s: f64| match kind {
        ScanKind::ArgmaxSum => s,
        ScanKind::ArgminSum => -s,
        ScanKind::ArgmaxAbsSum => s.abs(),
    };
    let mut best = 0;
    for (idx, &s) in partial_sums.iter().enumerate().skip(1) {
        if score(s) > score(partial_sums[best]) {
            best = idx;
        }
    }
    Ok(ChangePointEstimate {
        tau_hat: best + 1,
        kind,
        partial_sums,
        weight_lag: None,
    })
}

/// Weights `X_{j-q}` for `j = 1..=n`.
pub fn lag_weights(series: &ObservationSeries, q: usize) -> Result<Vec<f64>> {
    if q == 0 || q > series.order() {
        return Err(InarError::InvalidLag {
            lag: q,
            order: series.order(),
        });
    }
    Ok((1..=series.len())
        .map(|j| series.lagged(j, q) as f64)
        .collect())
}

/// Locate the change from a fit: unweighted scan for the innovation mean, or
/// weighted by `X_{j-q}` for the coefficient at lag `q`.
pub fn estimate_changepoint(
    series: &ObservationSeries,
    fit: &EstimationResult,
    kind: ScanKind,
    weight_lag: Option<usize>,
) -> Result<ChangePointEstimate> {
    let weights = match weight_lag {
        Some(q) => lag_weights(series, q)?,
        None => vec![1.0; series.len()],
    };
    let mut est = changepoint_scan(&fit.residuals, &weights, kind)?;
    est.weight_lag = weight_lag;
    Ok(est)
}

fn check_pair(c_pre: &DMatrix<f64>, c_post: &DMatrix<f64>) -> Result<()> {
    if c_pre.shape() != c_post.shape() || !c_pre.is_square() {
        return Err(InarError::DimensionMismatch(format!(
            "moment matrices {:?} and {:?}",
            c_pre.shape(),
            c_post.shape()
        )));
    }
    Ok(())
}

/// `rho C' + (1 - rho) C''`.
pub fn q_tilde(rho: f64, c_pre: &DMatrix<f64>, c_post: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_pair(c_pre, c_post)?;
    Ok(c_pre * rho + c_post * (1.0 - rho))
}

fn invert(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition_number = linalg::condition_number(q);
    if condition_number.is_nan() || condition_number >= crate::estimate::CONDITION_CAP {
        return Err(InarError::SingularDesign { condition_number });
    }
    q.clone()
        .try_inverse()
        .ok_or(InarError::SingularDesign { condition_number })
}

/// Probability limit of the CLS estimate over a sample straddling a change:
/// `Q~^{-1} (rho C' theta' + (1 - rho) C'' theta'')`.
pub fn theta_tilde(
    rho: f64,
    theta_pre: &DVector<f64>,
    theta_post: &DVector<f64>,
    c_pre: &DMatrix<f64>,
    c_post: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let q = q_tilde(rho, c_pre, c_post)?;
    if theta_pre.len() != q.nrows() || theta_post.len() != q.nrows() {
        return Err(InarError::DimensionMismatch(format!(
            "parameter vectors of length {} and {} for {}x{} moments",
            theta_pre.len(),
            theta_post.len(),
            q.nrows(),
            q.ncols()
        )));
    }
    let rhs = c_pre * theta_pre * rho + c_post * theta_post * (1.0 - rho);
    let qi = invert(&q)?;
    Ok(qi * rhs)
}

/// `rho (1 - rho) delta e_i^T C'' Q~^{-1} C' e_i` for a change of size `delta`
/// in parameter `index` (1-based).
pub fn psi_component(
    rho: f64,
    index: usize,
    delta: f64,
    c_pre: &DMatrix<f64>,
    c_post: &DMatrix<f64>,
) -> Result<f64> {
    let q = q_tilde(rho, c_pre, c_post)?;
    if index == 0 || index > q.nrows() {
        return Err(InarError::DimensionMismatch(format!(
            "parameter index {index} outside 1..={}",
            q.nrows()
        )));
    }
    let qi = invert(&q)?;
    let i = index - 1;
    let kernel = c_post * &qi * c_pre;
    Ok(rho * (1.0 - rho) * delta * kernel[(i, i)])
}

/// Both orderings `e^T C'' Q~^{-1} C' e` and `e^T C' Q~^{-1} C'' e`.
pub fn psi_kernel_orderings(
    rho: f64,
    index: usize,
    c_pre: &DMatrix<f64>,
    c_post: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let qi = invert(&q_tilde(rho, c_pre, c_post)?)?;
    let i = index - 1;
    Ok((
        (c_post * &qi * c_pre)[(i, i)],
        (c_pre * &qi * c_post)[(i, i)],
    ))
}

/// Growth rate of `max_k sum_{j<=k} M_j` under a change in the innovation
/// mean from `mu_pre` to `mu_post`.
pub fn psi_mu(
    rho: f64,
    mu_pre: f64,
    mu_post: f64,
    c_pre: &DMatrix<f64>,
    c_post: &DMatrix<f64>,
) -> Result<f64> {
    check_pair(c_pre, c_post)?;
    psi_component(rho, c_pre.nrows(), mu_pre - mu_post, c_pre, c_post)
}

/// Growth rate of `max_k sum_{j<=k} M_j X_{j-q}` under a change in the
/// coefficient at lag `q`.
pub fn psi_alpha(
    rho: f64,
    q: usize,
    alpha_q_pre: f64,
    alpha_q_post: f64,
    c_pre: &DMatrix<f64>,
    c_post: &DMatrix<f64>,
) -> Result<f64> {
    check_pair(c_pre, c_post)?;
    if q == 0 || q + 1 > c_pre.nrows() {
        return Err(InarError::InvalidLag {
            lag: q,
            order: c_pre.nrows().saturating_sub(1),
        });
    }
    psi_component(rho, q, alpha_q_pre - alpha_q_post, c_pre, c_post)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentSource {
    /// Analytic stationary moments of known models.
    Analytic,
    /// Sample moments and segment fits around an estimated change point.
    PlugIn,
}

/// Limiting quantities for a single change.
#[derive(Debug, Clone, PartialEq)]
pub struct AlternativeQuantities {
    pub rho: f64,
    pub theta_pre: DVector<f64>,
    pub theta_post: DVector<f64>,
    pub c_pre: DMatrix<f64>,
    pub c_post: DMatrix<f64>,
    pub q_tilde: DMatrix<f64>,
    pub theta_tilde: DVector<f64>,
    /// Limit of `(1/n) sum_{j<=tau} M_j z_j`: `rho C' (theta' - theta~)`.
    /// Component `i` equals the `psi` of a change confined to parameter `i`.
    pub score_drift: DVector<f64>,
    pub source: MomentSource,
}

impl AlternativeQuantities {
    fn assemble(
        rho: f64,
        theta_pre: DVector<f64>,
        theta_post: DVector<f64>,
        c_pre: DMatrix<f64>,
        c_post: DMatrix<f64>,
        source: MomentSource,
    ) -> Result<Self> {
        let q_tilde = q_tilde(rho, &c_pre, &c_post)?;
        let theta_tilde = theta_tilde(rho, &theta_pre, &theta_post, &c_pre, &c_post)?;
        let score_drift = &c_pre * (&theta_pre - &theta_tilde) * rho;
        Ok(AlternativeQuantities {
            rho,
            theta_pre,
            theta_post,
            c_pre,
            c_post,
            q_tilde,
            theta_tilde,
            score_drift,
            source,
        })
    }

    /// From known pre- and post-change models via their stationary moments.
    pub fn from_models(rho: f64, pre: &InarModel, post: &InarModel) -> Result<Self> {
        if pre.order() != post.order() {
            return Err(InarError::DimensionMismatch(
                "models differ in order".into(),
            ));
        }
        let c_pre = moment_matrix_c(pre)?;
        let c_post = moment_matrix_c(post)?;
        Self::assemble(
            rho,
            pre.theta(),
            post.theta(),
            c_pre.matrix,
            c_post.matrix,
            MomentSource::Analytic,
        )
    }

    /// Data-only version: sample second moments of the regressors and CLS fits
    /// on `1..=tau` and `tau+1..=n`, with `rho = tau / n`.
    pub fn plug_in(series: &ObservationSeries, support: &LagSupport, tau: usize) -> Result<Self> {
        let n = series.len();
        if tau == 0 || tau >= n {
            return Err(InarError::InvalidConfig(format!(
                "change index {tau} not in 1..{n}"
            )));
        }
        let order = support.max_lag();
        let before = series.segment(1, tau, order)?;
        let after = series.segment(tau + 1, n, order)?;
        let fit_pre = cls_estimate(&before, support)?;
        let fit_post = cls_estimate(&after, support)?;
        Self::assemble(
            tau as f64 / n as f64,
            fit_pre.theta_hat,
            fit_post.theta_hat,
            sample_moment_matrix(&before, support),
            sample_moment_matrix(&after, support),
            MomentSource::PlugIn,
        )
    }

    /// `psi` for a change confined to parameter `index` (1-based).
    pub fn psi(&self, index: usize) -> Result<f64> {
        let delta = self.theta_pre[index - 1] - self.theta_post[index - 1];
        psi_component(self.rho, index, delta, &self.c_pre, &self.c_post)
    }
}

/// `(1/n) sum_k z_k z_k^T`.
pub fn sample_moment_matrix(series: &ObservationSeries, support: &LagSupport) -> DMatrix<f64> {
    let d = support.dim();
    let mut c = DMatrix::zeros(d, d);
    let mut z = vec![0.0; d];
    for k in 1..=series.len() {
        fill_regressor(series, k, support, &mut z);
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] += z[i] * z[j];
            }
        }
    }
    c / series.len() as f64
}
