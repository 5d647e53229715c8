use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("subsample must contain at least one index")]
    EmptySubsample,

    #[error("data index {index} out of range for {len} data points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("kernel matrix is not positive definite (last jitter tried: {jitter:e})")]
    Factorization { jitter: f64 },

    #[error("log-intensity {value} at cell {cell} exceeds the overflow bound {bound}")]
    Overflow { cell: usize, value: f64, bound: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("quadrature did not converge: last two estimates {previous} and {last}")]
    QuadratureNonConvergence { previous: f64, last: f64 },

    #[error("quadrature grid does not cover the integrand: boundary mass {boundary_mass:e}")]
    Coverage { boundary_mass: f64 },

    #[error("every HMC proposal was rejected; try a smaller step size (current {step_size})")]
    HmcAllRejected { step_size: f64 },

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
