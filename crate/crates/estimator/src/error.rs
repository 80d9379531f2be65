use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Tensor(#[from] dsse_tensor::TensorError),
    #[error(transparent)]
    Data(#[from] dsse_data::DataError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input width mismatch: model expects {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EstimatorError> = std::result::Result<T, E>;
