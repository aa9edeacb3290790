use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("non-numeric cell at row {row}, column `{column}`: {value:?}")]
    NonNumeric { row: usize, column: String, value: String },

    #[error("treatment not binary at row {row}")]
    NonBinaryTreatment { row: usize },

    #[error("degenerate treatment arm: {0}")]
    DegenerateArm(String),

    #[error("csv error at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("value outside the domain of the convex function: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("balance constraints are infeasible (constraint rank {rank} of {p}, residual {residual:e})")]
    Infeasible { rank: usize, p: usize, residual: f64 },

    #[error("degenerate fluctuation: the representer is zero on every unit")]
    DegenerateFluctuation,

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Infeasible { .. }
                | Error::DegenerateFluctuation
                | Error::Domain(_)
        )
    }
}
