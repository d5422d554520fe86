//! INAR(p) models, innovation laws, simulation and stationary moments.
//!
//! A process is driven by binomial thinning of the `p` most recent counts plus
//! an independent integer innovation:
//!
//! ```text
//! X_k = Bin(X_{k-1}, a_1) + ... + Bin(X_{k-p}, a_p) + e_k
//! ```
//!
//! Sparse (seasonal) models keep the full order `p` and fix the coefficients
//! off the lag support at zero.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{InarError, Result};
use crate::linalg;

const PMF_TOLERANCE: f64 = 1e-12;

/// Distribution of the innovations `e_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InnovationSpec {
    Poisson {
        mean: f64,
    },
    /// Parametrised by mean and variance; requires `variance > mean`.
    NegativeBinomial {
        mean: f64,
        variance: f64,
    },
    /// Point mass. The value must be a nonnegative integer.
    Degenerate {
        value: f64,
    },
    /// Explicit probabilities over `0..=K`.
    FinitePmf {
        probabilities: Vec<f64>,
    },
}

impl InnovationSpec {
    pub fn poisson(mean: f64) -> Result<Self> {
        let spec = InnovationSpec::Poisson { mean };
        spec.validate()?;
        Ok(spec)
    }

    pub fn negative_binomial(mean: f64, variance: f64) -> Result<Self> {
        let spec = InnovationSpec::NegativeBinomial { mean, variance };
        spec.validate()?;
        Ok(spec)
    }

    pub fn degenerate(value: f64) -> Result<Self> {
        let spec = InnovationSpec::Degenerate { value };
        spec.validate()?;
        Ok(spec)
    }

    pub fn finite_pmf(probabilities: Vec<f64>) -> Result<Self> {
        let spec = InnovationSpec::FinitePmf { probabilities };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(InarError::InvalidInnovation(m));
        match self {
            InnovationSpec::Poisson { mean } => {
                if !mean.is_finite() || *mean < 0.0 {
                    return bad(format!("poisson mean {mean} must be finite and >= 0"));
                }
            }
            InnovationSpec::NegativeBinomial { mean, variance } => {
                if !mean.is_finite() || *mean <= 0.0 {
                    return bad(format!("negative binomial mean {mean} must be > 0"));
                }
                if !variance.is_finite() || variance <= mean {
                    return bad(format!(
                        "negative binomial variance {variance} must exceed the mean {mean}"
                    ));
                }
            }
            InnovationSpec::Degenerate { value } => {
                if !value.is_finite() || *value < 0.0 || value.fract() != 0.0 {
                    return bad(format!(
                        "degenerate innovation value {value} must be a nonnegative integer"
                    ));
                }
            }
            InnovationSpec::FinitePmf { probabilities } => {
                if probabilities.is_empty() {
                    return bad("empty probability table".into());
                }
                if let Some(p) = probabilities.iter().find(|p| !p.is_finite() || **p < 0.0) {
                    return bad(format!("negative or non-finite mass {p}"));
                }
                let total: f64 = probabilities.iter().sum();
                if (total - 1.0).abs() > PMF_TOLERANCE {
                    return bad(format!("masses sum to {total}, not 1"));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            InnovationSpec::Poisson { mean } => *mean,
            InnovationSpec::NegativeBinomial { mean, .. } => *mean,
            InnovationSpec::Degenerate { value } => *value,
            InnovationSpec::FinitePmf { probabilities } => probabilities
                .iter()
                .enumerate()
                .map(|(k, p)| k as f64 * p)
                .sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            InnovationSpec::Poisson { mean } => *mean,
            InnovationSpec::NegativeBinomial { variance, .. } => *variance,
            InnovationSpec::Degenerate { .. } => 0.0,
            InnovationSpec::FinitePmf { probabilities } => {
                let m = self.mean();
                probabilities
                    .iter()
                    .enumerate()
                    .map(|(k, p)| (k as f64 - m).powi(2) * p)
                    .sum()
            }
        }
    }

    /// Same law with the mean replaced, keeping the family. Negative
    /// binomial keeps its variance-to-mean ratio; finite pmfs are rejected.
    pub fn with_mean(&self, mean: f64) -> Result<Self> {
        match self {
            InnovationSpec::Poisson { .. } => Self::poisson(mean),
            InnovationSpec::NegativeBinomial {
                mean: m0,
                variance: v0,
            } => Self::negative_binomial(mean, mean * v0 / m0),
            InnovationSpec::Degenerate { .. } => Self::degenerate(mean),
            InnovationSpec::FinitePmf { .. } => Err(InarError::InvalidInnovation(
                "cannot shift the mean of a finite pmf".into(),
            )),
        }
    }

    fn sampler(&self) -> InnovationSampler {
        match self {
            InnovationSpec::Poisson { mean } if *mean > 0.0 => {
                InnovationSampler::Poisson(Poisson::new(*mean).expect("validated mean"))
            }
            InnovationSpec::Poisson { .. } => InnovationSampler::Constant(0),
            InnovationSpec::NegativeBinomial { mean, variance } => {
                let excess = variance - mean;
                let shape = mean * mean / excess;
                let scale = excess / mean;
                InnovationSampler::GammaPoisson(
                    Gamma::new(shape, scale).expect("validated negative binomial"),
                )
            }
            InnovationSpec::Degenerate { value } => InnovationSampler::Constant(*value as u64),
            InnovationSpec::FinitePmf { probabilities } => {
                let mut acc = 0.0;
                let cumulative = probabilities
                    .iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect();
                InnovationSampler::Table(cumulative)
            }
        }
    }
}

#[derive(Debug, Clone)]
enum InnovationSampler {
    Constant(u64),
    Poisson(Poisson<f64>),
    GammaPoisson(Gamma<f64>),
    Table(Vec<f64>),
}

impl InnovationSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            InnovationSampler::Constant(v) => *v,
            InnovationSampler::Poisson(d) => d.sample(rng) as u64,
            InnovationSampler::GammaPoisson(g) => {
                let rate = g.sample(rng);
                if rate > 0.0 {
                    Poisson::new(rate)
                        .map(|d| d.sample(rng) as u64)
                        .unwrap_or(0)
                } else {
                    0
                }
            }
            InnovationSampler::Table(cumulative) => {
                let u: f64 = rng.random();
                let last = cumulative.len() - 1;
                cumulative.iter().position(|c| u < *c).unwrap_or(last) as u64
            }
        }
    }
}

/// Sorted, duplicate-free set of lags `i >= 1` entering the regression.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LagSupport(Vec<usize>);

impl LagSupport {
    pub fn new(lags: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut lags: Vec<usize> = lags.into_iter().collect();
        lags.sort_unstable();
        lags.dedup();
        if lags.is_empty() {
            return Err(InarError::InvalidConfig("lag support is empty".into()));
        }
        if lags[0] == 0 {
            return Err(InarError::InvalidConfig("lags start at 1".into()));
        }
        Ok(LagSupport(lags))
    }

    /// All lags `1..=p`.
    pub fn full(order: usize) -> Self {
        assert!(order >= 1, "order must be positive");
        LagSupport((1..=order).collect())
    }

    pub fn lags(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_lag(&self) -> usize {
        *self.0.last().expect("nonempty support")
    }

    /// Number of estimated parameters: one coefficient per lag plus the mean.
    pub fn dim(&self) -> usize {
        self.0.len() + 1
    }
}

/// A time-homogeneous INAR(p) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InarModel {
    coefficients: Vec<f64>,
    lag_support: LagSupport,
    innovation: InnovationSpec,
}

impl InarModel {
    /// Dense model: `coefficients[i - 1]` is the thinning probability at lag `i`.
    pub fn new(coefficients: Vec<f64>, innovation: InnovationSpec) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(InarError::InvalidConfig("order must be at least 1".into()));
        }
        let support = LagSupport::full(coefficients.len());
        Self::build(coefficients, support, innovation)
    }

    /// Model of order `order` with nonzero coefficients only at the given lags.
    pub fn sparse(
        order: usize,
        terms: &[(usize, f64)],
        innovation: InnovationSpec,
    ) -> Result<Self> {
        let mut coefficients = vec![0.0; order];
        for &(lag, value) in terms {
            if lag == 0 || lag > order {
                return Err(InarError::InvalidLag { lag, order });
            }
            coefficients[lag - 1] = value;
        }
        let support = LagSupport::new(terms.iter().map(|t| t.0))?;
        Self::build(coefficients, support, innovation)
    }

    fn build(
        coefficients: Vec<f64>,
        lag_support: LagSupport,
        innovation: InnovationSpec,
    ) -> Result<Self> {
        for (i, a) in coefficients.iter().enumerate() {
            if !(0.0..=1.0).contains(a) {
                return Err(InarError::InvalidCoefficient {
                    lag: i + 1,
                    value: *a,
                });
            }
        }
        innovation.validate()?;
        Ok(InarModel {
            coefficients,
            lag_support,
            innovation,
        })
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn lag_support(&self) -> &LagSupport {
        &self.lag_support
    }

    pub fn innovation(&self) -> &InnovationSpec {
        &self.innovation
    }

    pub fn mu(&self) -> f64 {
        self.innovation.mean()
    }

    pub fn sigma2(&self) -> f64 {
        self.innovation.variance()
    }

    pub fn coefficient_sum(&self) -> f64 {
        self.coefficients.iter().sum()
    }

    pub fn is_stable(&self) -> bool {
        self.coefficient_sum() < 1.0
    }

    /// Stability, positive innovation mean and non-degeneracy
    /// (some thinning or some innovation variance).
    pub fn satisfies_c0(&self) -> bool {
        let sum = self.coefficient_sum();
        self.is_stable() && self.mu() > 0.0 && (sum > 0.0 || self.sigma2() > 0.0)
    }

    /// Full parameter vector `(a_1, ..., a_p, mu)`.
    pub fn theta(&self) -> DVector<f64> {
        let p = self.order();
        DVector::from_fn(p + 1, |i, _| {
            if i < p {
                self.coefficients[i]
            } else {
                self.mu()
            }
        })
    }

    /// Same model with coefficient at `lag` replaced.
    pub fn with_coefficient(&self, lag: usize, value: f64) -> Result<Self> {
        if lag == 0 || lag > self.order() {
            return Err(InarError::InvalidLag {
                lag,
                order: self.order(),
            });
        }
        let mut coefficients = self.coefficients.clone();
        coefficients[lag - 1] = value;
        let support = if self.lag_support.lags().contains(&lag) || value == 0.0 {
            self.lag_support.clone()
        } else {
            LagSupport::new(self.lag_support.lags().iter().copied().chain([lag]))?
        };
        Self::build(coefficients, support, self.innovation.clone())
    }

    /// Same model with innovation mean replaced (family kept).
    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        Self::build(
            self.coefficients.clone(),
            self.lag_support.clone(),
            self.innovation.with_mean(mu)?,
        )
    }

    fn require_stable(&self) -> Result<()> {
        if self.is_stable() {
            Ok(())
        } else {
            Err(InarError::Unstable {
                sum: self.coefficient_sum(),
            })
        }
    }
}

/// Counts `X_{-p+1}, ..., X_0` (initial) followed by `X_1, ..., X_n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSeries {
    initial: Vec<u64>,
    values: Vec<u64>,
}

impl ObservationSeries {
    pub fn new(initial: Vec<u64>, values: Vec<u64>) -> Result<Self> {
        if values.is_empty() {
            return Err(InarError::EmptyInput);
        }
        Ok(ObservationSeries { initial, values })
    }

    /// Split a raw chronological record, taking the first `order` entries as
    /// initial values.
    pub fn from_raw(raw: &[u64], order: usize) -> Result<Self> {
        if raw.len() <= order {
            return Err(InarError::InsufficientData {
                n: raw.len(),
                required: order,
            });
        }
        Self::new(raw[..order].to_vec(), raw[order..].to_vec())
    }

    pub fn initial(&self) -> &[u64] {
        &self.initial
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    /// Number of observations after the initial values.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn order(&self) -> usize {
        self.initial.len()
    }

    /// `X_k` for `k` in `-p+1..=n`.
    #[inline]
    pub fn at(&self, k: isize) -> u64 {
        if k <= 0 {
            self.initial[(self.initial.len() as isize - 1 + k) as usize]
        } else {
            self.values[(k - 1) as usize]
        }
    }

    /// `X_{k-lag}` for `k` in `1..=n`.
    #[inline]
    pub fn lagged(&self, k: usize, lag: usize) -> u64 {
        self.at(k as isize - lag as isize)
    }

    /// Initial values followed by observations, as in the raw record.
    pub fn to_raw(&self) -> Vec<u64> {
        self.initial.iter().chain(&self.values).copied().collect()
    }

    /// Sub-series with observations `X_{start}..=X_{end}` (1-based, inclusive)
    /// and the `order` preceding counts as initial values.
    pub fn segment(&self, start: usize, end: usize, order: usize) -> Result<Self> {
        if start == 0 || end > self.len() || start > end {
            return Err(InarError::InvalidConfig(format!(
                "segment {start}..={end} outside 1..={}",
                self.len()
            )));
        }
        if start as isize - (order as isize) < 1 - self.order() as isize {
            return Err(InarError::InsufficientData {
                n: start + self.order() - 1,
                required: order,
            });
        }
        let initial = (1..=order)
            .rev()
            .map(|lag| self.at(start as isize - lag as isize))
            .collect();
        Self::new(initial, self.values[start - 1..end].to_vec())
    }
}

/// A single change in the parameters at `tau = max(floor(n * rho), 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSpec {
    pub rho: f64,
    pub pre: InarModel,
    pub post: InarModel,
}

impl ChangeSpec {
    pub fn new(rho: f64, pre: InarModel, post: InarModel) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(InarError::InvalidConfig(format!(
                "rho = {rho} not in (0, 1)"
            )));
        }
        if pre.order() != post.order() {
            return Err(InarError::DimensionMismatch(format!(
                "pre-change order {} differs from post-change order {}",
                pre.order(),
                post.order()
            )));
        }
        Ok(ChangeSpec { rho, pre, post })
    }

    pub fn tau(&self, n: usize) -> usize {
        ((n as f64 * self.rho).floor() as usize).max(1)
    }

    /// Both regimes stable with positive mean and non-degenerate.
    pub fn satisfies_ca(&self) -> bool {
        self.pre.satisfies_c0() && self.post.satisfies_c0()
    }
}

/// Seeded generator used for every simulation entry point.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for replica `index` of a run with master seed `seed`: the
/// ChaCha stream number is the replica index, so replicas never share draws.
pub fn replica_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Per-model state reused across steps.
struct Stepper<'a> {
    coefficients: &'a [f64],
    innovation: InnovationSampler,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a InarModel) -> Self {
        Stepper {
            coefficients: &model.coefficients,
            innovation: model.innovation.sampler(),
        }
    }

    /// `history` ends with the most recent count.
    fn step<R: Rng + ?Sized>(&self, history: &[u64], rng: &mut R) -> u64 {
        let len = history.len();
        let mut next = 0;
        for (i, &a) in self.coefficients.iter().enumerate() {
            let count = history[len - 1 - i];
            next += thin(count, a, rng);
        }
        next + self.innovation.sample(rng)
    }
}

#[inline]
fn thin<R: Rng + ?Sized>(count: u64, prob: f64, rng: &mut R) -> u64 {
    if count == 0 || prob == 0.0 {
        0
    } else if prob == 1.0 {
        count
    } else {
        Binomial::new(count, prob)
            .expect("validated coefficient")
            .sample(rng)
    }
}

fn check_initial(model: &InarModel, initial: &[u64]) -> Result<()> {
    if initial.len() != model.order() {
        return Err(InarError::InitialLength {
            expected: model.order(),
            got: initial.len(),
        });
    }
    Ok(())
}

/// Simulate `n` steps of `model` from the given initial values.
///
/// The draw order per step is fixed: one thinning per lag (lag 1 first),
/// then the innovation. Identical inputs reproduce identical series.
pub fn simulate(
    model: &InarModel,
    n: usize,
    initial: &[u64],
    seed: u64,
) -> Result<ObservationSeries> {
    simulate_with_rng(model, n, initial, &mut seeded_rng(seed))
}

pub fn simulate_with_rng<R: Rng + ?Sized>(
    model: &InarModel,
    n: usize,
    initial: &[u64],
    rng: &mut R,
) -> Result<ObservationSeries> {
    check_initial(model, initial)?;
    if n == 0 {
        return Err(InarError::EmptyInput);
    }
    let stepper = Stepper::new(model);
    let p = model.order();
    let mut all = Vec::with_capacity(p + n);
    all.extend_from_slice(initial);
    for _ in 0..n {
        let x = stepper.step(&all, rng);
        all.push(x);
    }
    let values = all.split_off(p);
    ObservationSeries::new(all, values)
}

/// Simulate with a regime switch: steps `1..=tau` follow `spec.pre`, steps
/// `tau+1..=n` follow `spec.post`. The state carries over the switch.
pub fn simulate_with_change(
    spec: &ChangeSpec,
    n: usize,
    initial: &[u64],
    seed: u64,
) -> Result<ObservationSeries> {
    simulate_with_change_rng(spec, n, initial, &mut seeded_rng(seed))
}

pub fn simulate_with_change_rng<R: Rng + ?Sized>(
    spec: &ChangeSpec,
    n: usize,
    initial: &[u64],
    rng: &mut R,
) -> Result<ObservationSeries> {
    check_initial(&spec.pre, initial)?;
    if n < 2 {
        return Err(InarError::InsufficientData { n, required: 1 });
    }
    let tau = spec.tau(n);
    let pre = Stepper::new(&spec.pre);
    let post = Stepper::new(&spec.post);
    let p = spec.pre.order();
    let mut all = Vec::with_capacity(p + n);
    all.extend_from_slice(initial);
    for k in 1..=n {
        let stepper = if k <= tau { &pre } else { &post };
        let x = stepper.step(&all, rng);
        all.push(x);
    }
    let values = all.split_off(p);
    ObservationSeries::new(all, values)
}

/// Burn-in length used to approximate a stationary start.
pub fn burn_in_length(order: usize) -> usize {
    500.max(50 * order)
}

/// Initial values approximately drawn from the stationary law: run a burn-in
/// from the rounded stationary mean (or zero for unstable models) and keep the
/// last `p` counts.
pub fn stationary_initial<R: Rng + ?Sized>(model: &InarModel, rng: &mut R) -> Vec<u64> {
    let p = model.order();
    let start = if model.is_stable() {
        (model.mu() / (1.0 - model.coefficient_sum())).round() as u64
    } else {
        0
    };
    let warm = simulate_with_rng(model, burn_in_length(p), &vec![start; p], rng)
        .expect("burn-in inputs are valid");
    let v = warm.values();
    v[v.len() - p..].to_vec()
}

/// `n` observations from an approximately stationary start.
pub fn simulate_stationary<R: Rng + ?Sized>(
    model: &InarModel,
    n: usize,
    rng: &mut R,
) -> Result<ObservationSeries> {
    let initial = stationary_initial(model, rng);
    simulate_with_rng(model, n, &initial, rng)
}

/// Change-point series whose initial values come from the pre-change regime.
pub fn simulate_change_stationary<R: Rng + ?Sized>(
    spec: &ChangeSpec,
    n: usize,
    rng: &mut R,
) -> Result<ObservationSeries> {
    let initial = stationary_initial(&spec.pre, rng);
    simulate_with_change_rng(spec, n, &initial, rng)
}

/// Companion matrix: first row holds the coefficients, ones on the
/// subdiagonal.
pub fn companion_matrix(model: &InarModel) -> DMatrix<f64> {
    let p = model.order();
    DMatrix::from_fn(p, p, |i, j| {
        if i == 0 {
            model.coefficients[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    })
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// First and second moments of the stationary state vector
/// `(X_0, X_{-1}, ..., X_{-p+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryMoments {
    pub mean: DVector<f64>,
    /// `E[X X^T]`, p x p.
    pub second: DMatrix<f64>,
}

/// Solve the stationary fixed points
///
/// ```text
/// m = A m + mu e1
/// S = A S A^T + (mu^2 + a2^T m + sigma^2) e1 e1^T + mu (A m e1^T + e1 m^T A^T)
/// ```
///
/// where `a2_i = a_i (1 - a_i)` is the conditional-variance loading.
pub fn stationary_moments(model: &InarModel) -> Result<StationaryMoments> {
    model.require_stable()?;
    let p = model.order();
    let a = companion_matrix(model);
    let mu = model.mu();
    let sigma2 = model.sigma2();
    let identity = DMatrix::<f64>::identity(p, p);

    let mut e1 = DVector::zeros(p);
    e1[0] = 1.0;
    let mean = (&identity - &a)
        .lu()
        .solve(&(&e1 * mu))
        .ok_or(InarError::Unstable {
            sum: model.coefficient_sum(),
        })?;

    let a2: f64 = model
        .coefficients
        .iter()
        .zip(mean.iter())
        .map(|(ai, mi)| ai * (1.0 - ai) * mi)
        .sum();
    let am = &a * &mean;
    let mut rhs = &am * e1.transpose() * mu + &e1 * am.transpose() * mu;
    rhs[(0, 0)] += mu * mu + a2 + sigma2;

    // vec(A S A^T) = (A kron A) vec(S) in column-major order.
    let kron = a.kronecker(&a);
    let system = DMatrix::<f64>::identity(p * p, p * p) - kron;
    let rhs_vec = DVector::from_column_slice(rhs.as_slice());
    let svec = system.lu().solve(&rhs_vec).ok_or(InarError::Unstable {
        sum: model.coefficient_sum(),
    })?;
    let second = DMatrix::from_column_slice(p, p, svec.as_slice());
    let second = (&second + second.transpose()) * 0.5;
    Ok(StationaryMoments { mean, second })
}

/// `E[(X;1)(X;1)^T]` under the stationary law.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    pub matrix: DMatrix<f64>,
    pub positive_definite: bool,
}

pub fn moment_matrix_c(model: &InarModel) -> Result<MomentMatrix> {
    let moments = stationary_moments(model)?;
    let p = model.order();
    let mut c = DMatrix::zeros(p + 1, p + 1);
    c.view_mut((0, 0), (p, p)).copy_from(&moments.second);
    for i in 0..p {
        c[(i, p)] = moments.mean[i];
        c[(p, i)] = moments.mean[i];
    }
    c[(p, p)] = 1.0;
    let positive_definite = linalg::is_positive_definite(&c);
    Ok(MomentMatrix {
        matrix: c,
        positive_definite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn poisson_ar1(alpha: f64, mu: f64) -> InarModel {
        InarModel::new(vec![alpha], InnovationSpec::poisson(mu).unwrap()).unwrap()
    }

    #[test]
    fn innovation_moments_match_families() {
        let pmf = InnovationSpec::finite_pmf(vec![0.2, 0.5, 0.3]).unwrap();
        assert_abs_diff_eq!(pmf.mean(), 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(pmf.variance(), 0.5 + 1.2 - 1.21, epsilon = 1e-12);
        let nb = InnovationSpec::negative_binomial(2.0, 5.0).unwrap();
        assert_eq!((nb.mean(), nb.variance()), (2.0, 5.0));
        assert_eq!(InnovationSpec::degenerate(3.0).unwrap().variance(), 0.0);
    }

    #[test]
    fn innovation_validation() {
        assert!(InnovationSpec::finite_pmf(vec![0.5, 0.4]).is_err());
        assert!(InnovationSpec::finite_pmf(vec![1.1, -0.1]).is_err());
        assert!(InnovationSpec::degenerate(1.5).is_err());
        assert!(InnovationSpec::negative_binomial(2.0, 1.0).is_err());
        assert!(InnovationSpec::poisson(-1.0).is_err());
    }

    #[test]
    fn coefficients_must_be_probabilities() {
        let e = InnovationSpec::poisson(1.0).unwrap();
        assert!(matches!(
            InarModel::new(vec![1.2], e.clone()),
            Err(InarError::InvalidCoefficient { lag: 1, .. })
        ));
        assert!(InarModel::new(vec![-0.1], e.clone()).is_err());
        assert!(InarModel::sparse(3, &[(4, 0.1)], e).is_err());
    }

    #[test]
    fn condition_c0_predicate() {
        assert!(poisson_ar1(0.3, 1.0).satisfies_c0());
        assert!(!poisson_ar1(0.3, 0.0).satisfies_c0());
        let degenerate =
            InarModel::new(vec![0.0], InnovationSpec::degenerate(2.0).unwrap()).unwrap();
        assert!(!degenerate.satisfies_c0());
        let unstable =
            InarModel::new(vec![0.6, 0.4], InnovationSpec::poisson(1.0).unwrap()).unwrap();
        assert!(!unstable.is_stable());
        assert!(!unstable.satisfies_c0());
    }

    #[test]
    fn constant_immigration_without_thinning() {
        let model = InarModel::new(vec![0.0], InnovationSpec::degenerate(3.0).unwrap()).unwrap();
        let s = simulate(&model, 4, &[5], 1).unwrap();
        assert_eq!(s.values(), &[3, 3, 3, 3]);
        assert_eq!(s.initial(), &[5]);
    }

    #[test]
    fn zero_is_absorbing_without_immigration() {
        let model =
            InarModel::new(vec![0.5, 0.3], InnovationSpec::degenerate(0.0).unwrap()).unwrap();
        let s = simulate(&model, 10, &[0, 0], 9).unwrap();
        assert!(s.values().iter().all(|&x| x == 0));
    }

    #[test]
    fn full_thinning_keeps_counts() {
        let model = InarModel::new(vec![1.0], InnovationSpec::degenerate(1.0).unwrap()).unwrap();
        let s = simulate(&model, 5, &[2], 0).unwrap();
        assert_eq!(s.values(), &[3, 4, 5, 6, 7]);
    }

    #[test]
    fn simulation_is_reproducible() {
        let model = poisson_ar1(0.4, 2.0);
        let a = simulate(&model, 500, &[3], 42).unwrap();
        let b = simulate(&model, 500, &[3], 42).unwrap();
        let c = simulate(&model, 500, &[3], 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn initial_length_is_checked() {
        let model = poisson_ar1(0.4, 2.0);
        assert!(matches!(
            simulate(&model, 5, &[1, 2], 0),
            Err(InarError::InitialLength {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn unstable_models_simulate() {
        let model = InarModel::new(vec![0.7, 0.5], InnovationSpec::poisson(1.0).unwrap()).unwrap();
        let s = simulate(&model, 50, &[1, 1], 3).unwrap();
        assert_eq!(s.len(), 50);
        assert!(stationary_moments(&model).is_err());
    }

    #[test]
    fn long_run_mean_matches_fixed_point() {
        let model = poisson_ar1(0.3, 0.94);
        let s = simulate(&model, 1_000_000, &[1], 2024).unwrap();
        let mean = s.values().iter().sum::<u64>() as f64 / s.len() as f64;
        assert!((mean - 0.94 / 0.7).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn change_without_change_matches_plain_simulation() {
        let model = poisson_ar1(0.3, 1.5);
        let spec = ChangeSpec::new(0.5, model.clone(), model.clone()).unwrap();
        let a = simulate_with_change(&spec, 200, &[2], 11).unwrap();
        let b = simulate(&model, 200, &[2], 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn change_index_arithmetic() {
        let pre = InarModel::new(vec![0.0], InnovationSpec::degenerate(2.0).unwrap()).unwrap();
        let post = InarModel::new(vec![0.0], InnovationSpec::degenerate(1.0).unwrap()).unwrap();
        let spec = ChangeSpec::new(0.5, pre, post).unwrap();
        assert_eq!(spec.tau(10), 5);
        assert_eq!(spec.tau(1), 1);
        let s = simulate_with_change(&spec, 10, &[0], 0).unwrap();
        assert_eq!(s.values(), &[2, 2, 2, 2, 2, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn post_change_mean() {
        let pre = poisson_ar1(0.3, 2.0);
        let post = poisson_ar1(0.3, 1.0);
        let spec = ChangeSpec::new(0.5, pre, post).unwrap();
        let s = simulate_with_change(&spec, 100_000, &[3], 5).unwrap();
        let second = &s.values()[50_000..];
        let mean = second.iter().sum::<u64>() as f64 / second.len() as f64;
        assert!((mean - 1.0 / 0.7).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn companion_layout() {
        let m = InarModel::new(vec![0.3], InnovationSpec::poisson(1.0).unwrap()).unwrap();
        assert_eq!(companion_matrix(&m), DMatrix::from_row_slice(1, 1, &[0.3]));
        let m = InarModel::new(vec![0.5, 0.2], InnovationSpec::poisson(1.0).unwrap()).unwrap();
        assert_eq!(
            companion_matrix(&m),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 1.0, 0.0])
        );
    }

    #[test]
    fn spectral_radius_at_unit_sum() {
        // roots of l^2 - 0.5 l - 0.5 are 1 and -0.5
        let m = InarModel::new(vec![0.5, 0.5], InnovationSpec::poisson(1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(spectral_radius(&companion_matrix(&m)), 1.0, epsilon = 1e-10);
        let m = InarModel::new(vec![0.5, 0.3], InnovationSpec::poisson(1.0).unwrap()).unwrap();
        assert!(spectral_radius(&companion_matrix(&m)) < 1.0);
    }

    #[test]
    fn stationary_mean_closed_form() {
        let m = stationary_moments(&poisson_ar1(0.3, 0.94)).unwrap();
        assert_abs_diff_eq!(m.mean[0], 0.94 / 0.7, epsilon = 1e-12);
        // Poisson(mu) INAR(1) is stationary Poisson(mu / (1 - a))
        let lam = 0.94 / 0.7;
        assert_abs_diff_eq!(m.second[(0, 0)], lam + lam * lam, epsilon = 1e-10);
    }

    #[test]
    fn iid_innovations_moments() {
        let model = InarModel::new(
            vec![0.0],
            InnovationSpec::negative_binomial(2.0, 5.0).unwrap(),
        )
        .unwrap();
        let m = stationary_moments(&model).unwrap();
        assert_abs_diff_eq!(m.mean[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.second[(0, 0)], 4.0 + 5.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_mean_identity_for_higher_order() {
        let model = InarModel::sparse(
            12,
            &[(1, 0.4), (12, 0.3)],
            InnovationSpec::poisson(3.0).unwrap(),
        )
        .unwrap();
        let m = stationary_moments(&model).unwrap();
        for v in m.mean.iter() {
            assert_abs_diff_eq!(*v, 3.0 / 0.3, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(m.second.clone(), m.second.transpose(), epsilon = 1e-10);
    }

    #[test]
    fn moment_matrix_degenerate_is_singular() {
        let model = InarModel::new(vec![0.0], InnovationSpec::degenerate(2.0).unwrap()).unwrap();
        let c = moment_matrix_c(&model).unwrap();
        assert_eq!(
            c.matrix,
            DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 1.0])
        );
        assert!(!c.positive_definite);
    }

    #[test]
    fn moment_matrix_poisson_iid() {
        let model = InarModel::new(vec![0.0], InnovationSpec::poisson(1.0).unwrap()).unwrap();
        let c = moment_matrix_c(&model).unwrap();
        assert_abs_diff_eq!(
            c.matrix,
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]),
            epsilon = 1e-12
        );
        assert!(c.positive_definite);
    }

    #[test]
    fn series_indexing_and_segments() {
        let s = ObservationSeries::from_raw(&[1, 2, 3, 4, 5, 6], 2).unwrap();
        assert_eq!(s.at(-1), 1);
        assert_eq!(s.at(0), 2);
        assert_eq!(s.at(1), 3);
        assert_eq!(s.lagged(1, 2), 1);
        assert_eq!(s.lagged(4, 1), 5);
        let seg = s.segment(3, 4, 1).unwrap();
        assert_eq!(seg.initial(), &[4]);
        assert_eq!(seg.values(), &[5, 6]);
        assert_eq!(s.to_raw(), vec![1, 2, 3, 4, 5, 6]);
        assert!(ObservationSeries::from_raw(&[1, 2], 2).is_err());
    }
}
