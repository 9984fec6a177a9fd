use thiserror::Error;

/// Errors raised by the grid, kernel, sampling and dynamics layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("cell index {index} out of range for {cells} cells")]
    CellOutOfRange { index: usize, cells: usize },

    #[error("cell {0} is empty; cannot remove or hop a particle from it")]
    EmptyCell(usize),

    #[error("matrix of order {order} exceeds the limit of {limit}")]
    MatrixTooLarge { order: usize, limit: usize },

    #[error("matrix entry ({row}, {col}) is not finite")]
    InvalidEntry { row: usize, col: usize },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("kernel matrix is not positive semidefinite: min eigenvalue {min_eigenvalue:e}, max {max_eigenvalue:e}")]
    NotPositiveSemidefinite { min_eigenvalue: f64, max_eigenvalue: f64 },

    #[error("covariance factorization failed: {0}")]
    FactorizationFailed(String),

    #[error("semimetric integrand {value:e} is below the clamp threshold")]
    NegativeSemimetric { value: f64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("negative intensity {value} at cell {cell}")]
    NegativeIntensity { cell: usize, value: f64 },

    #[error("closed-form weight used before validation for class {0}")]
    UnvalidatedFormula(String),

    #[error("closed-form weight validation failed: {0}")]
    ValidationFailed(String),

    #[error("weight method `{method}` not applicable: {reason}")]
    MethodNotApplicable { method: &'static str, reason: String },

    #[error("importance weights degenerate: effective sample size {ess:.1} < {min}")]
    DegenerateWeight { ess: f64, min: f64 },

    #[error("rate {rate:e} exceeds overflow guard {limit:e}")]
    RateOverflow { rate: f64, limit: f64 },

    #[error("truncated state space has {states} states (limit {limit})")]
    StateSpaceTooLarge { states: usize, limit: usize },

    #[error("scale {eps} leaves hop support {support} below grid spacing {spacing}")]
    UnresolvableScale { eps: f64, support: f64, spacing: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
