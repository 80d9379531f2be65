use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dsse_estimator::{Architecture, Estimator, Scheme};
use dsse_harness::stages::{
    corrupt, generate, load_corrupted, load_estimators, load_seed_data, save_corrupted, save_estimators,
    save_forecasters, save_seed_data, seed_dir, train_estimators, train_forecasters, write_stamp,
};
use dsse_harness::{emit_tables, reproduce_all, run_pipeline, ExperimentConfig, MetricsReport, Overrides, TableFormat};

/// Forecast-then-estimate experiments for distribution system state estimation.
#[derive(Parser)]
#[command(name = "dsse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment TOML; built-in defaults are used without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, replacing `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides { seed: self.seed, out: self.out.clone() })?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the feeder and synthesize its ideal measurement series.
    Generate(Common),
    /// Mask generated measurements at every configured missing ratio.
    Corrupt(Common),
    /// Train the forecasters on every corrupted series.
    TrainForecaster(Common),
    /// Train every planned estimator on ideal measurements.
    TrainEstimator(Common),
    /// Compare trained estimators on the ideal test split.
    Evaluate(Common),
    /// Run forecast-then-estimate over the corrupted test splits.
    Pipeline(Common),
    /// Run every stage and write metrics, tables and a manifest.
    ReproduceAll(Common),
}

fn write_report(report: &MetricsReport, out: &Path, name: &str) -> Result<()> {
    report.validate()?;
    report.write_csv(out.join(format!("{name}.csv")))?;
    for f in [TableFormat::Csv, TableFormat::Text] {
        emit_tables(report, out.join(format!("tables_{name}")), f)?;
    }
    println!("wrote {}", out.join(format!("{name}.csv")).display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(c) => {
            let cfg = c.load()?;
            let hash = cfg.hash()?;
            for &seed in &cfg.seeds {
                write_stamp(&seed_dir(&cfg.out_dir, seed), &hash, seed)?;
                save_seed_data(&generate(&cfg, seed)?, &cfg.out_dir)?;
            }
        }
        Command::Corrupt(c) => {
            let cfg = c.load()?;
            for &seed in &cfg.seeds {
                let data = load_seed_data(&cfg.out_dir, seed)?;
                for &ratio in &cfg.data.missing_ratios {
                    save_corrupted(&corrupt(&cfg, &data, ratio)?, &cfg.out_dir, seed, ratio)?;
                }
            }
        }
        Command::TrainForecaster(c) => {
            let cfg = c.load()?;
            for &seed in &cfg.seeds {
                let data = load_seed_data(&cfg.out_dir, seed)?;
                for &ratio in &cfg.data.missing_ratios {
                    let corrupted = load_corrupted(&data, &cfg.out_dir, ratio)?;
                    let trained = train_forecasters(&cfg, &data, &corrupted, ratio)?;
                    save_forecasters(&trained, &cfg.out_dir, seed, ratio)?;
                }
            }
        }
        Command::TrainEstimator(c) => {
            let cfg = c.load()?;
            for &seed in &cfg.seeds {
                let data = load_seed_data(&cfg.out_dir, seed)?;
                save_estimators(&train_estimators(&cfg, &data)?, &cfg.out_dir, seed)?;
            }
        }
        Command::Evaluate(c) => {
            let cfg = c.load()?;
            let mut report = MetricsReport::default();
            for &seed in &cfg.seeds {
                let data = load_seed_data(&cfg.out_dir, seed)?;
                let est = load_estimators(&cfg, &cfg.out_dir, seed)?;
                let refs: Vec<(Architecture, Scheme, &Estimator)> = est.iter().map(|(a, s, m)| (*a, *s, m)).collect();
                report.extend(dsse_harness::pipeline::evaluate_estimators(&cfg, &data, &refs)?);
            }
            write_report(&report, &cfg.out_dir, "evaluate")?;
        }
        Command::Pipeline(c) => {
            let cfg = c.load()?;
            let report = run_pipeline(&cfg, &cfg.out_dir)?;
            write_report(&report, &cfg.out_dir, "pipeline")?;
        }
        Command::ReproduceAll(c) => {
            let cfg = c.load()?;
            let s = reproduce_all(&cfg)?;
            println!("{} rows in {:.1}s, config {}", s.report.rows.len(), s.wall_seconds, s.config_hash);
            println!("wrote {}", s.out_dir.display());
        }
    }
    Ok(())
}
