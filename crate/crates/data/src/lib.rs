//! Time series of grid measurements and states: synthesis, CSV exchange,
//! missing-value corruption, windowing, chronological splits and scaling.

mod corrupt;
mod dataset;
mod error;
pub mod io;
mod normalize;
mod synth;
mod window;

pub use corrupt::{corrupt_missing, corrupt_missing_with, missing_target, MissingMode};
pub use dataset::{Calendar, Season, TimeSeriesDataset, DEFAULT_START_UNIX, DEFAULT_STEP_SECONDS, STEPS_PER_DAY};
pub use error::{DataError, Result};
pub use io::{export_csv, ingest_csv};
pub use normalize::{denormalize, normalize, NormalizationStats, MIN_STD};
pub use synth::{daily_shape, solar_shape, synthesize_injections, synthesize_profiles, InjectionProfile, ProfileConfig};
pub use window::{make_windows, split, window_indices, SplitSpec, Window, WindowSpec};
