use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("state {0} has no feasible action")]
    EmptyMask(usize),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("basis function {0} is identically non-positive after clamping")]
    DegenerateBasis(usize),

    #[error("exploitability {0:e} is negative beyond tolerance")]
    NegativeExploitability(f64),

    #[error("network file: {0}")]
    Network(String),

    #[error("reference file: {0}")]
    Reference(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } | Error::Network(_) | Error::Reference(_) | Error::Json(_) => {
                ErrorKind::Config
            }
            Error::Io(_) | Error::Csv(_) => ErrorKind::Io,
            _ => ErrorKind::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numeric,
    Io,
}
