use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("series too short: need at least {required} samples, got {actual}")]
    SeriesTooShort { required: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("free-run simulation produced a non-finite value at index {index}")]
    Diverged { index: usize },

    #[error("{}: line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{count} candidate terms exceed the cap of {cap}; lower the polynomial degree")]
    TooManyTerms { count: u128, cap: usize },

    #[error("every candidate term is numerically degenerate")]
    DegenerateCandidates,

    #[error("CPD normal equations singular in all {attempts} attempts")]
    SingularCpd { attempts: usize },

    #[error("residual is not finite at the initial point")]
    NonFiniteResidual,

    #[error("quantile bias grid has no analytic derivative; train with a frozen grid")]
    QuantileDerivative,

    #[error("Newton iteration failed to converge at step {step}")]
    NewtonFailed { step: usize },

    #[error("simulation blew up at step {step} (|y| = {value:e})")]
    BlowUp { step: usize, value: f64 },

    #[error("condition number of a zero matrix is undefined")]
    ZeroMatrix,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
