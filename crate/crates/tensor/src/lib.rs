//! Dense `f64` tensors, a reverse-mode autodiff tape, the Adam optimiser and
//! a binary parameter checkpoint format.

mod adam;
mod error;
pub mod gradcheck;
pub mod init;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Tape, Var, LAYER_NORM_EPS, REGISTERED_OPS};
pub use tensor::Tensor;
