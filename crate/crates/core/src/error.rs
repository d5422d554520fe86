use thiserror::Error;

/// Errors raised across model construction, estimation and testing.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum InarError {
    #[error("coefficient alpha_{lag} = {value} is outside [0, 1]")]
    InvalidCoefficient { lag: usize, value: f64 },

    #[error("lag {lag} is outside 1..={order}")]
    InvalidLag { lag: usize, order: usize },

    #[error("invalid innovation law: {0}")]
    InvalidInnovation(String),

    #[error("model is not stable: sum of coefficients {sum} >= 1")]
    Unstable { sum: f64 },

    #[error("expected {expected} initial values, got {got}")]
    InitialLength { expected: usize, got: usize },

    #[error("series too short: n = {n}, need more than {required}")]
    InsufficientData { n: usize, required: usize },

    #[error("singular design: condition number of Q_n is {condition_number:e}")]
    SingularDesign { condition_number: f64 },

    #[error(
        "matrix is not positive definite (eigenvalues in [{min_eigenvalue:e}, {max_eigenvalue:e}])"
    )]
    NotPositiveDefinite {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for InarError {
    fn from(e: std::io::Error) -> Self {
        InarError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, InarError>;
