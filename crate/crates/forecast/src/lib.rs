//! Forecasters that fill missing measurements from the preceding window:
//! last-observation persistence, an LSTM, and a decoder-only transformer with
//! an optional slot-filled text prompt.

mod data;
mod error;
mod lstm;
mod model;
mod persistence;
mod prompt;
mod train;
mod transformer;

pub use data::ForecastData;
pub use error::{ForecastError, Result};
pub use lstm::{Lstm, LstmConfig};
pub use model::{complete_frame, Forecaster, ForecasterKind};
pub use persistence::persistence_forecast;
pub use prompt::{PromptTemplate, Vocabulary, PAD};
pub use train::{evaluate_loss, train_forecaster, EpochRecord, ForecastTrainConfig, TrainHistory};
pub use transformer::{multi_head_attention, sinusoidal_positions, AttentionVars, Transformer, TransformerConfig};
