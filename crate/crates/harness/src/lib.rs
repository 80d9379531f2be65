//! Experiment orchestration: configuration, the stages of a run, the
//! forecast-then-estimate pipeline, metrics and summary tables.

pub mod config;
mod error;
pub mod metrics;
pub mod pipeline;
pub mod reproduce;
pub mod stages;
pub mod tables;

pub use config::{derive_seed, ratio_tag, ExperimentConfig, Overrides};
pub use error::{HarnessError, Result};
pub use metrics::{mae, median, rmse, AggregateRow, MetricsReport, MetricsRow};
pub use pipeline::{run_pipeline, PipelineOutcome};
pub use reproduce::{reproduce_all, Manifest, RunSummary, METRICS_FILE};
pub use tables::{build_tables, emit_tables, Table, TableFormat};
