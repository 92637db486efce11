use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{stage}: non-finite value at epoch {epoch}: {detail}")]
    NonFinite {
        stage: &'static str,
        epoch: usize,
        detail: String,
    },

    #[error("solver error: {0}")]
    Solver(String),

    #[error("cannot merge to {target} regions: region set has {} disconnected components {components:?}", components.len())]
    Disconnected {
        target: usize,
        components: Vec<Vec<u64>>,
    },

    /// Remote encoder unreachable or timed out; safe to retry.
    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }
}
