use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error(transparent)]
    Tensor(#[from] dsse_tensor::TensorError),
    #[error(transparent)]
    Data(#[from] dsse_data::DataError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("token {0:?} is not in the prompt vocabulary")]
    OutOfVocabulary(String),
    #[error("channel count mismatch: model expects {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ForecastError> = std::result::Result<T, E>;
