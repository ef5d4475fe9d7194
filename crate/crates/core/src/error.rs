use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("linesearch stalled at outer iteration {k}: tau = {tau:e}, beta = {beta:e}")]
    LinesearchStall { k: usize, tau: f64, beta: f64 },

    #[error("step-size lower bound violated at iteration {k}: tau = {tau:e} < {bound:e}")]
    StepBound { k: usize, tau: f64, bound: f64 },

    #[error("dual variable outside the box [-{lambda}, {lambda}]: max |entry| = {max_abs}")]
    DualOutsideBox { lambda: f64, max_abs: f64 },

    #[error("oracle refuses instance of size {size} (cap {cap})")]
    OracleCap { size: usize, cap: usize },

    #[error("oracle failed: {0}")]
    Oracle(String),

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInstance(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }
}
