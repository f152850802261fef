use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("channel {channel} has zero variance")]
    ZeroVariance { channel: usize },

    #[error("state {state} has zero variance on the given input (unreachable state)")]
    UnreachableState { state: usize },

    #[error("simulation diverged at sample {sample}")]
    Divergence { sample: usize },

    #[error("ODE integration produced a non-finite state at sample {sample}; try a larger oversampling factor")]
    IntegrationBlowUp { sample: usize },

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("Jacobian of {rows}x{cols} exceeds the configured limit of {limit} entries")]
    JacobianTooLarge { rows: usize, cols: usize, limit: usize },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
