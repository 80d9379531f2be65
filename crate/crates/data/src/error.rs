use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("power flow failed at step {step}: {source}")]
    PowerFlow {
        step: usize,
        #[source]
        source: dsse_grid::GridError,
    },
    #[error(transparent)]
    Grid(#[from] dsse_grid::GridError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("series of length {len} is shorter than the lookback {lookback}")]
    TooShort { len: usize, lookback: usize },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("channel count mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;
