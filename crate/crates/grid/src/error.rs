use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid measurement descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e})")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GridError> = std::result::Result<T, E>;
