//! Neural distribution-grid state estimators: MLP, ProxLinear, ResNetD and
//! CNN-Prox trunks with magnitude and angle heads, trained separately, as a
//! joint output, or as two tasks under fixed or uncertainty-learned weights.

mod config;
mod error;
mod loss;
mod model;
mod net;
mod train;

pub use config::{Architecture, EstimatorConfig, Scheme, Task, TaskWeighting};
pub use error::{EstimatorError, Result};
pub use loss::{combined_loss, uwa_loss, uwa_value, TaskLosses, HUBER_DELTA};
pub use model::{BatchLosses, EstimationResult, Estimator};
pub use net::{proxlinear_block, Network};
pub use train::{train_estimator, EstimatorEpoch, EstimatorHistory, EstimatorTrainConfig};
