//! Retrospective change-point detection for stable INAR(p) count series.
//!
//! The pipeline is: fit the model by conditional least squares
//! ([`estimate::cls_estimate`]), build the normalised CUSUM process of the
//! fitted scores ([`cusum::cusum_path`]), compare its componentwise
//! functionals with Brownian-bridge critical values ([`cusum::run_test`]) and,
//! on rejection, locate the change with [`changepoint::estimate_changepoint`].
//!
//! [`montecarlo`] holds the simulation harness used to check the finite-sample
//! behaviour of all of the above.

pub mod changepoint;
pub mod cli;
pub mod cusum;
pub mod error;
pub mod estimate;
pub mod linalg;
pub mod model;
pub mod montecarlo;

pub use changepoint::{changepoint_scan, AlternativeQuantities, ChangePointEstimate, ScanKind};
pub use cusum::{run_test, CusumPath, Functional, TestConfig, TestKind, TestReport};
pub use error::{InarError, Result};
pub use estimate::{cls_estimate, EstimationResult};
pub use model::{ChangeSpec, InarModel, InnovationSpec, LagSupport, ObservationSeries};
pub use montecarlo::{Execution, ExperimentSpec, MonteCarloSummary};
