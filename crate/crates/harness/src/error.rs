use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Grid(#[from] dsse_grid::GridError),
    #[error(transparent)]
    Data(#[from] dsse_data::DataError),
    #[error(transparent)]
    Forecast(#[from] dsse_forecast::ForecastError),
    #[error(transparent)]
    Estimator(#[from] dsse_estimator::EstimatorError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
