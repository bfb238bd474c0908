use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("hermite order {order} exceeds supported maximum {max}")]
    UnsupportedOrder { order: u32, max: u32 },

    #[error("invalid dictionary spec: {0}")]
    InvalidSpec(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("eigendecomposition unavailable (residual {residual:.3e})")]
    DecompositionUnavailable { residual: f64 },

    #[error("no feasible input plan: every candidate rollout produced non-finite states")]
    NoFeasiblePlan,

    #[error("config error on key {key}: {message}")]
    Config { key: String, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("schema error in {path}: {message}")]
    Schema { path: String, message: String },

    #[error("unknown estimator {0:?} (expected acd_edmd or sindy)")]
    UnknownEstimator(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
