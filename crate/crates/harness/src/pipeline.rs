//! Evaluation of estimators and forecasters, and the forecast-then-estimate
//! pipeline: a frame with any missing entry is completed by a forecaster
//! before estimation, a complete frame goes to the estimator unchanged.

use std::path::Path;

use dsse_data::TimeSeriesDataset;
use dsse_estimator::{Architecture, EstimationResult, Estimator, Scheme};
use dsse_forecast::{complete_frame, Forecaster, ForecasterKind};
use dsse_grid::{MeasurementFrame, StateVector};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{mae, rmse, MetricsReport, MetricsRow};
use crate::stages::{load_corrupted, load_estimators, load_forecasters, load_seed_data, SeedData};

pub const IDEAL: &str = "ideal";
pub const REAL: &str = "real";

pub fn aided_source(kind: ForecasterKind) -> String {
    format!("{kind}_aided")
}

/// `(MAE, RMSE)` of magnitudes over all buses and of angles over non-slack buses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateErrors {
    pub magnitude: (f64, f64),
    pub angle: (f64, f64),
}

pub fn state_errors(est: &[EstimationResult], truth: &[StateVector], slack: usize) -> Result<StateErrors> {
    if est.len() != truth.len() {
        return Err(HarnessError::Metrics(format!("{} estimates for {} states", est.len(), truth.len())));
    }
    let (mut v, mut vh, mut t, mut th) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (e, s) in est.iter().zip(truth) {
        v.extend_from_slice(&s.v);
        vh.extend_from_slice(&e.v);
        for b in (0..s.len()).filter(|&b| b != slack) {
            t.push(s.theta[b]);
            th.push(e.theta[b]);
        }
    }
    Ok(StateErrors { magnitude: (mae(&v, &vh)?, rmse(&v, &vh)?), angle: (mae(&t, &th)?, rmse(&t, &th)?) })
}

pub struct RowLabel<'a> {
    pub experiment: &'a str,
    pub model: &'a str,
    pub scheme: &'a str,
    pub source: &'a str,
    pub ratio: f64,
    pub seed: u64,
}

fn row(l: &RowLabel, task: &str, (mae, rmse): (f64, f64)) -> MetricsRow {
    MetricsRow {
        experiment: l.experiment.into(),
        task: task.into(),
        model: l.model.into(),
        scheme: l.scheme.into(),
        source: l.source.into(),
        ratio: l.ratio,
        seed: l.seed,
        mae,
        rmse,
    }
}

pub fn state_rows(l: &RowLabel, e: &StateErrors) -> [MetricsRow; 2] {
    [row(l, "magnitude", e.magnitude), row(l, "angle", e.angle)]
}

/// Estimator comparisons on the ideal test split: models under the MTL
/// schemes, and one model under every scheme.
pub fn evaluate_estimators(
    cfg: &ExperimentConfig,
    data: &SeedData,
    estimators: &[(Architecture, Scheme, &Estimator)],
) -> Result<Vec<MetricsRow>> {
    let [_, _, test] = data.split(cfg, &data.ideal)?;
    let frames: Vec<&MeasurementFrame> = test.frames.iter().collect();
    let e = &cfg.estimator;
    let mut rows = Vec::new();
    for &(arch, scheme, model) in estimators {
        let in_mtl = e.architectures.contains(&arch) && e.mtl_schemes.contains(&scheme);
        let in_schemes = arch == e.scheme_architecture && e.schemes.contains(&scheme);
        if !(in_mtl || in_schemes) {
            continue;
        }
        let err = state_errors(&model.estimate_batch(&frames)?, &test.states, data.net.slack())?;
        for (experiment, wanted) in [("mtl", in_mtl), ("schemes", in_schemes)] {
            if wanted {
                let l = RowLabel {
                    experiment,
                    model: arch.as_str(),
                    scheme: scheme.as_str(),
                    source: IDEAL,
                    ratio: 0.0,
                    seed: data.seed,
                };
                rows.extend(state_rows(&l, &err));
            }
        }
    }
    Ok(rows)
}

/// Frames at `steps` with incomplete ones completed by `forecaster`, the
/// forecasts made, and how many times the forecaster was asked.
pub struct Aided {
    pub frames: Vec<MeasurementFrame>,
    /// `(step, forecast)` of every incomplete step.
    pub forecasts: Vec<(usize, Vec<f64>)>,
    pub invocations: usize,
}

pub fn aided_frames(forecaster: &Forecaster, ds: &TimeSeriesDataset, steps: &[usize]) -> Result<Aided> {
    let incomplete: Vec<usize> = steps.iter().copied().filter(|&t| !ds.frames[t].is_complete()).collect();
    let predicted = if incomplete.is_empty() { Vec::new() } else { forecaster.predict(ds, &incomplete)? };
    let forecasts: Vec<(usize, Vec<f64>)> = incomplete.into_iter().zip(predicted).collect();
    let mut next = forecasts.iter().peekable();
    let frames = steps
        .iter()
        .map(|&t| match next.peek() {
            Some((s, f)) if *s == t => {
                next.next();
                complete_frame(&ds.frames[t], f)
            }
            _ => ds.frames[t].clone(),
        })
        .collect();
    Ok(Aided { frames, invocations: forecasts.len(), forecasts })
}

/// Forecast error over the missing cells of `forecasts`, against `ideal` values.
pub fn forecast_errors(
    corrupted: &TimeSeriesDataset,
    ideal: &TimeSeriesDataset,
    forecasts: &[(usize, Vec<f64>)],
) -> Result<Option<(f64, f64)>> {
    let (mut y, mut yh) = (Vec::new(), Vec::new());
    for (t, f) in forecasts {
        let frame = &corrupted.frames[*t];
        for c in (0..frame.len()).filter(|&c| !frame.mask[c]) {
            y.push(ideal.frames[*t].values[c]);
            yh.push(f[c]);
        }
    }
    if y.is_empty() {
        return Ok(None);
    }
    Ok(Some((mae(&y, &yh)?, rmse(&y, &yh)?)))
}

pub struct PipelineOutcome {
    pub rows: Vec<MetricsRow>,
    /// Forecaster calls per kind.
    pub invocations: Vec<(ForecasterKind, usize)>,
    /// Test steps evaluated and how many of them were incomplete.
    pub steps: usize,
    pub incomplete: usize,
}

/// Forecasting and estimation rows for one (seed, missing ratio) cell over
/// the test steps that have a full window.
pub fn pipeline_cell(
    cfg: &ExperimentConfig,
    data: &SeedData,
    corrupted: &TimeSeriesDataset,
    ratio: f64,
    forecasters: &[Forecaster],
    estimators: &[(Architecture, &Estimator)],
) -> Result<PipelineOutcome> {
    let [_, _, ideal_test] = data.split(cfg, &data.ideal)?;
    let [_, _, test] = data.split(cfg, corrupted)?;
    let steps: Vec<usize> = (cfg.data.lookback - 1..test.len()).collect();
    let truth: Vec<StateVector> = steps.iter().map(|&t| ideal_test.states[t].clone()).collect();
    let mut sources: Vec<(String, Vec<MeasurementFrame>)> = vec![
        (IDEAL.into(), steps.iter().map(|&t| ideal_test.frames[t].clone()).collect()),
        (REAL.into(), steps.iter().map(|&t| test.frames[t].clone()).collect()),
    ];
    let mut rows = Vec::new();
    let mut invocations = Vec::new();
    for f in forecasters {
        let kind = f.kind();
        let aided = aided_frames(f, &test, &steps)?;
        if let Some(err) = forecast_errors(&test, &ideal_test, &aided.forecasts)? {
            let l = RowLabel {
                experiment: "forecasting",
                model: kind.as_str(),
                scheme: "-",
                source: "test",
                ratio,
                seed: data.seed,
            };
            rows.push(row(&l, "measurement", err));
        }
        invocations.push((kind, aided.invocations));
        sources.push((aided_source(kind), aided.frames));
    }
    let scheme = cfg.estimator.pipeline_scheme.as_str();
    for &(arch, model) in estimators {
        for (source, frames) in &sources {
            let refs: Vec<&MeasurementFrame> = frames.iter().collect();
            let err = state_errors(&model.estimate_batch(&refs)?, &truth, data.net.slack())?;
            let l = RowLabel { experiment: "pipeline", model: arch.as_str(), scheme, source, ratio, seed: data.seed };
            rows.extend(state_rows(&l, &err));
        }
    }
    let incomplete = steps.iter().filter(|&&t| !test.frames[t].is_complete()).count();
    Ok(PipelineOutcome { rows, invocations, steps: steps.len(), incomplete })
}

/// Runs the pipeline for every seed and ratio from artifacts saved under `out`.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for &seed in &cfg.seeds {
        let data = load_seed_data(out, seed)?;
        let est = load_estimators(cfg, out, seed)?;
        let chosen: Vec<(Architecture, &Estimator)> = est
            .iter()
            .filter(|(a, s, _)| cfg.estimator.architectures.contains(a) && *s == cfg.estimator.pipeline_scheme)
            .map(|(a, _, m)| (*a, m))
            .collect();
        for &ratio in &cfg.data.missing_ratios {
            let corrupted = load_corrupted(&data, out, ratio)?;
            let forecasters = load_forecasters(cfg, out, seed, ratio)?;
            report.extend(pipeline_cell(cfg, &data, &corrupted, ratio, &forecasters, &chosen)?.rows);
        }
    }
    report.validate()?;
    Ok(report)
}
