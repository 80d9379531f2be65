use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use dsse_estimator::{Architecture, Estimator, EstimatorHistory, Scheme};
use dsse_forecast::{ForecasterKind, TrainHistory};
use serde::Serialize;

use crate::config::{ratio_tag, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::metrics::MetricsReport;
use crate::pipeline::{evaluate_estimators, pipeline_cell};
use crate::stages::{
    corrupt, generate, save_corrupted, save_estimators, save_forecasters, save_seed_data, seed_dir,
    train_estimators, train_forecasters, write_stamp,
};
use crate::tables::{emit_tables, TableFormat};

pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Debug, Serialize)]
pub struct StageTiming {
    /// `seed<s>/<stage>[/ratio<r>]`.
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub versions: BTreeMap<String, String>,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub status: String,
    pub metric_scope: String,
    pub stages: Vec<StageTiming>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))?;
        fs::write(dir.join("manifest.toml"), text)?;
        Ok(())
    }
}

pub fn versions() -> BTreeMap<String, String> {
    let v = env!("CARGO_PKG_VERSION").to_string();
    ["dsse-tensor", "dsse-grid", "dsse-data", "dsse-forecast", "dsse-estimator", "dsse-harness"]
        .into_iter()
        .map(|c| (c.to_string(), v.clone()))
        .collect()
}

pub struct ForecasterRecord {
    pub seed: u64,
    pub ratio: f64,
    pub kind: ForecasterKind,
    pub history: TrainHistory,
    pub seconds: f64,
}

pub struct EstimatorRecord {
    pub seed: u64,
    pub architecture: Architecture,
    pub scheme: Scheme,
    pub history: EstimatorHistory,
    pub seconds: f64,
}

pub struct InvocationRecord {
    pub seed: u64,
    pub ratio: f64,
    pub kind: ForecasterKind,
    pub count: usize,
    /// Evaluated test steps.
    pub steps: usize,
    /// Complete test frames, which must never reach a forecaster.
    pub complete_frames: usize,
}

pub struct RunSummary {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub report: MetricsReport,
    pub timings: Vec<StageTiming>,
    pub forecasters: Vec<ForecasterRecord>,
    pub estimators: Vec<EstimatorRecord>,
    pub invocations: Vec<InvocationRecord>,
    pub wall_seconds: f64,
}

impl RunSummary {
    /// Summed seconds of stages whose name contains `pattern`.
    pub fn seconds(&self, pattern: &str) -> f64 {
        self.timings.iter().filter(|t| t.stage.contains(pattern)).map(|t| t.seconds).sum()
    }
}

struct Timer(Vec<StageTiming>);

impl Timer {
    fn run<T>(&mut self, stage: String, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f().map_err(|e| HarnessError::Stage { stage: stage.clone(), source: Box::new(e) })?;
        log::info!("{stage}: {:.1}s", t0.elapsed().as_secs_f64());
        self.0.push(StageTiming { stage, seconds: t0.elapsed().as_secs_f64() });
        Ok(out)
    }
}

/// Data generation, corruption, forecaster and estimator training and both
/// evaluations for every seed, writing all artifacts under `cfg.out_dir`.
/// On failure the metrics gathered so far and a manifest with the error are
/// still written.
pub fn reproduce_all(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    let hash = cfg.hash()?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let t0 = Instant::now();
    let mut summary = RunSummary {
        out_dir: out.clone(),
        config_hash: hash.clone(),
        report: MetricsReport::default(),
        timings: Vec::new(),
        forecasters: Vec::new(),
        estimators: Vec::new(),
        invocations: Vec::new(),
        wall_seconds: 0.0,
    };
    let mut timer = Timer(Vec::new());
    let result = run_stages(cfg, &out, &hash, &mut timer, &mut summary);
    summary.timings = timer.0;
    summary.wall_seconds = t0.elapsed().as_secs_f64();
    let finish = summary.report.write_csv(out.join(METRICS_FILE));
    let manifest = Manifest {
        config_hash: hash,
        seeds: cfg.seeds.clone(),
        versions: versions(),
        started_unix,
        wall_seconds: summary.wall_seconds,
        status: match &result {
            Ok(()) => "complete".into(),
            Err(e) => format!("failed: {e}"),
        },
        metric_scope: "magnitude over all buses, angle over non-slack buses, forecasts over missing cells".into(),
        stages: summary.timings.clone(),
    };
    manifest.write(&out)?;
    result?;
    finish?;
    summary.report.validate()?;
    for format in [TableFormat::Csv, TableFormat::Text] {
        emit_tables(&summary.report, out.join("tables"), format)?;
    }
    Ok(summary)
}

fn run_stages(
    cfg: &ExperimentConfig,
    out: &Path,
    hash: &str,
    timer: &mut Timer,
    summary: &mut RunSummary,
) -> Result<()> {
    for &seed in &cfg.seeds {
        let s = format!("seed{seed}");
        write_stamp(&seed_dir(out, seed), hash, seed)?;
        let data = timer.run(format!("{s}/generate"), || {
            let d = generate(cfg, seed)?;
            save_seed_data(&d, out)?;
            Ok(d)
        })?;

        let trained = timer.run(format!("{s}/train_estimators"), || {
            let t = train_estimators(cfg, &data)?;
            save_estimators(&t, out, seed)?;
            Ok(t)
        })?;
        let refs: Vec<(Architecture, Scheme, &Estimator)> =
            trained.iter().map(|t| (t.architecture, t.scheme, &t.model)).collect();
        let rows = timer.run(format!("{s}/evaluate"), || evaluate_estimators(cfg, &data, &refs))?;
        summary.report.extend(rows);
        let chosen: Vec<(Architecture, &Estimator)> = trained
            .iter()
            .filter(|t| cfg.estimator.architectures.contains(&t.architecture) && t.scheme == cfg.estimator.pipeline_scheme)
            .map(|t| (t.architecture, &t.model))
            .collect();

        for &ratio in &cfg.data.missing_ratios {
            let r = ratio_tag(ratio);
            let corrupted = timer.run(format!("{s}/corrupt/{r}"), || {
                let c = corrupt(cfg, &data, ratio)?;
                save_corrupted(&c, out, seed, ratio)?;
                Ok(c)
            })?;
            let forecasters = timer.run(format!("{s}/train_forecasters/{r}"), || {
                let f = train_forecasters(cfg, &data, &corrupted, ratio)?;
                save_forecasters(&f, out, seed, ratio)?;
                Ok(f)
            })?;
            let models: Vec<_> = forecasters.iter().map(|f| f.model.clone()).collect();
            let outcome =
                timer.run(format!("{s}/pipeline/{r}"), || pipeline_cell(cfg, &data, &corrupted, ratio, &models, &chosen))?;
            summary.report.extend(outcome.rows);
            for (kind, count) in outcome.invocations {
                summary.invocations.push(InvocationRecord {
                    seed,
                    ratio,
                    kind,
                    count,
                    steps: outcome.steps,
                    complete_frames: outcome.steps - outcome.incomplete,
                });
            }
            for f in forecasters {
                summary.forecasters.push(ForecasterRecord {
                    seed,
                    ratio,
                    kind: f.model.kind(),
                    history: f.history,
                    seconds: f.seconds,
                });
            }
            // Flush per cell so an interrupted run keeps what it finished.
            summary.report.write_csv(out.join(METRICS_FILE))?;
        }
        for t in trained {
            summary.estimators.push(EstimatorRecord {
                seed,
                architecture: t.architecture,
                scheme: t.scheme,
                history: t.history,
                seconds: t.seconds,
            });
        }
    }
    Ok(())
}
