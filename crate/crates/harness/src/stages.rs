//! Individual stages of a run and the on-disk artifacts they exchange.
//!
//! Layout under the output directory, per seed:
//!
//! ```text
//! seed<s>/stamp.toml network.toml descriptors.csv measurements.csv states.csv
//! seed<s>/ratio<r>/measurements.csv states.csv descriptors.csv
//! seed<s>/ratio<r>/forecasters/<kind>.toml <kind>.params <kind>_history.csv
//! seed<s>/estimators/<arch>_<scheme>.toml .net<i>.params _history.csv _uwa.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dsse_data::{
    corrupt_missing_with, export_csv, ingest_csv, split, synthesize_profiles, NormalizationStats, ProfileConfig,
    TimeSeriesDataset,
};
use dsse_estimator::{train_estimator, Architecture, Estimator, EstimatorHistory, Scheme};
use dsse_forecast::{train_forecaster, Forecaster, ForecasterKind, PromptTemplate, TrainHistory};
use dsse_grid::io::{load_descriptors_for, load_network, save_network};
use dsse_grid::{generate_feeder, place_sensors, ImpedanceRanges, Network};
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, ratio_tag, ExperimentConfig};
use crate::error::{HarnessError, Result};

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed{seed}"))
}

pub fn ratio_dir(out: &Path, seed: u64, ratio: f64) -> PathBuf {
    seed_dir(out, seed).join(ratio_tag(ratio))
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(HarnessError::MissingArtifact(path))
    }
}

/// Ground truth of one seed: the feeder and its ideal measurement series.
#[derive(Clone, Debug)]
pub struct SeedData {
    pub seed: u64,
    pub net: Network,
    pub ideal: TimeSeriesDataset,
}

impl SeedData {
    /// Chronological train/validation/test split; every segment holds a full window.
    pub fn split(&self, cfg: &ExperimentConfig, ds: &TimeSeriesDataset) -> Result<[TimeSeriesDataset; 3]> {
        let (a, b, c) = split(ds, &cfg.split(), cfg.data.lookback)?;
        Ok([a, b, c])
    }
}

#[derive(Serialize, Deserialize)]
struct Stamp {
    config_hash: String,
    seed: u64,
}

pub fn write_stamp(dir: &Path, config_hash: &str, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = toml::to_string(&Stamp { config_hash: config_hash.into(), seed })
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    fs::write(dir.join("stamp.toml"), text)?;
    Ok(())
}

pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let net = match &cfg.network.path {
        Some(p) => load_network(p)?,
        None => generate_feeder(cfg.network.buses, derive_seed(seed, "feeder"), &ImpedanceRanges::default())?,
    };
    let ideal = match &cfg.data.dataset {
        Some(dir) => {
            let ds = ingest_csv(dir.join("measurements.csv"), dir.join("states.csv"), dir.join("descriptors.csv"))?;
            dsse_grid::validate_descriptors(&net, &ds.descriptors)?;
            if ds.bus_count() != net.bus_count() {
                return Err(HarnessError::Config(format!(
                    "dataset has {} buses, network {}",
                    ds.bus_count(),
                    net.bus_count()
                )));
            }
            ds
        }
        None => {
            let descriptors = match &cfg.network.descriptors {
                Some(p) => load_descriptors_for(&net, p)?,
                None => place_sensors(&net, cfg.network.sensor_fraction, derive_seed(seed, "sensors"))?,
            };
            let profile =
                ProfileConfig { measurement_noise: cfg.data.noise, convention: cfg.convention()?, ..Default::default() };
            synthesize_profiles(&net, &descriptors, cfg.data.steps, derive_seed(seed, "profiles"), &profile)?
        }
    };
    Ok(SeedData { seed, net, ideal })
}

pub fn save_seed_data(data: &SeedData, out: &Path) -> Result<()> {
    let dir = seed_dir(out, data.seed);
    fs::create_dir_all(&dir)?;
    save_network(&data.net, dir.join("network.toml"))?;
    export_csv(&data.ideal, dir.join("measurements.csv"), dir.join("states.csv"), dir.join("descriptors.csv"))?;
    Ok(())
}

pub fn load_seed_data(out: &Path, seed: u64) -> Result<SeedData> {
    let dir = seed_dir(out, seed);
    let net = load_network(require(dir.join("network.toml"))?)?;
    let ideal = ingest_csv(
        require(dir.join("measurements.csv"))?,
        require(dir.join("states.csv"))?,
        require(dir.join("descriptors.csv"))?,
    )?;
    Ok(SeedData { seed, net, ideal })
}

/// Masks the whole series, so every split sees the same missing ratio.
pub fn corrupt(cfg: &ExperimentConfig, data: &SeedData, ratio: f64) -> Result<TimeSeriesDataset> {
    let seed = derive_seed(data.seed, &format!("corrupt:{}", ratio_tag(ratio)));
    Ok(corrupt_missing_with(&data.ideal, ratio, seed, cfg.missing_mode()?)?)
}

pub fn save_corrupted(ds: &TimeSeriesDataset, out: &Path, seed: u64, ratio: f64) -> Result<()> {
    let dir = ratio_dir(out, seed, ratio);
    fs::create_dir_all(&dir)?;
    export_csv(ds, dir.join("measurements.csv"), dir.join("states.csv"), dir.join("descriptors.csv"))?;
    Ok(())
}

/// Masks read back from disk over the ideal values of `data` (the corrupted
/// files hold no values for missing cells).
pub fn load_corrupted(data: &SeedData, out: &Path, ratio: f64) -> Result<TimeSeriesDataset> {
    let dir = ratio_dir(out, data.seed, ratio);
    let read = ingest_csv(
        require(dir.join("measurements.csv"))?,
        require(dir.join("states.csv"))?,
        require(dir.join("descriptors.csv"))?,
    )?;
    if read.len() != data.ideal.len() || read.channel_count() != data.ideal.channel_count() {
        return Err(HarnessError::Config(format!("{} does not match the generated data", dir.display())));
    }
    let mut ds = data.ideal.clone();
    for (f, r) in ds.frames.iter_mut().zip(&read.frames) {
        f.mask.clone_from(&r.mask);
    }
    Ok(ds)
}

pub struct TrainedForecaster {
    pub model: Forecaster,
    pub history: TrainHistory,
    pub seconds: f64,
}

pub fn train_forecasters(
    cfg: &ExperimentConfig,
    data: &SeedData,
    corrupted: &TimeSeriesDataset,
    ratio: f64,
) -> Result<Vec<TrainedForecaster>> {
    let [train, val, _] = data.split(cfg, corrupted)?;
    let stats = NormalizationStats::fit_measurements(&train);
    let k = cfg.data.lookback;
    let mut out = Vec::new();
    for &kind in &cfg.forecaster.variants {
        let seed = derive_seed(data.seed, &format!("forecaster:{kind}:{}", ratio_tag(ratio)));
        let mut model = match kind {
            ForecasterKind::Persistence => Forecaster::persistence(stats.clone(), k),
            ForecasterKind::Recurrent => Forecaster::recurrent(stats.clone(), cfg.lstm_config(), seed)?,
            ForecasterKind::Transformer => {
                let tc = cfg.transformer_config();
                let template =
                    (tc.prompt_len > 0).then(|| PromptTemplate::from_training(data.net.name(), &train, tc.prompt_len));
                Forecaster::transformer(stats.clone(), tc, template, seed)?
            }
        };
        let t0 = Instant::now();
        let history = train_forecaster(&mut model, &train, &val, &cfg.forecast_train_config(seed))?;
        let seconds = t0.elapsed().as_secs_f64();
        log::info!("seed {} {} {kind}: best epoch {} in {seconds:.1}s", data.seed, ratio_tag(ratio), history.best_epoch);
        out.push(TrainedForecaster { model, history, seconds });
    }
    Ok(out)
}

pub fn save_forecasters(list: &[TrainedForecaster], out: &Path, seed: u64, ratio: f64) -> Result<()> {
    let dir = ratio_dir(out, seed, ratio).join("forecasters");
    for f in list {
        let kind = f.model.kind().as_str();
        f.model.save(&dir, kind)?;
        if !f.history.records.is_empty() {
            f.history.write_csv(dir.join(format!("{kind}_history.csv")))?;
        }
    }
    Ok(())
}

pub fn load_forecasters(cfg: &ExperimentConfig, out: &Path, seed: u64, ratio: f64) -> Result<Vec<Forecaster>> {
    let dir = ratio_dir(out, seed, ratio).join("forecasters");
    cfg.forecaster
        .variants
        .iter()
        .map(|kind| {
            require(dir.join(format!("{kind}.toml")))?;
            Ok(Forecaster::load(&dir, kind.as_str())?)
        })
        .collect()
}

pub fn estimator_stem(arch: Architecture, scheme: Scheme) -> String {
    format!("{}_{}", arch.as_str(), scheme.as_str())
}

pub struct TrainedEstimator {
    pub architecture: Architecture,
    pub scheme: Scheme,
    pub model: Estimator,
    pub history: EstimatorHistory,
    pub seconds: f64,
}

/// Every planned estimator, trained on ideal measurements. Schemes of one
/// architecture share initialization and batch order seeds.
pub fn train_estimators(cfg: &ExperimentConfig, data: &SeedData) -> Result<Vec<TrainedEstimator>> {
    let [train, val, _] = data.split(cfg, &data.ideal)?;
    let mut out = Vec::new();
    for (arch, scheme) in cfg.estimator_plan() {
        let seed = derive_seed(data.seed, &format!("estimator:{}", arch.as_str()));
        let mut model =
            Estimator::new(cfg.estimator_config(arch), cfg.weighting(scheme), &train, data.net.slack(), seed)?;
        let t0 = Instant::now();
        let history = train_estimator(&mut model, &train, &val, &cfg.estimator_train_config(seed))?;
        let seconds = t0.elapsed().as_secs_f64();
        log::info!(
            "seed {} {}: best epochs {:?} in {seconds:.1}s",
            data.seed,
            estimator_stem(arch, scheme),
            history.best_epochs
        );
        out.push(TrainedEstimator { architecture: arch, scheme, model, history, seconds });
    }
    Ok(out)
}

pub fn save_estimators(list: &[TrainedEstimator], out: &Path, seed: u64) -> Result<()> {
    let dir = seed_dir(out, seed).join("estimators");
    for e in list {
        let stem = estimator_stem(e.architecture, e.scheme);
        e.model.save(&dir, &stem)?;
        e.history.write_csv(dir.join(format!("{stem}_history.csv")))?;
        e.history.write_uwa_csv(dir.join(format!("{stem}_uwa.csv")))?;
    }
    Ok(())
}

pub fn load_estimators(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<Vec<(Architecture, Scheme, Estimator)>> {
    let dir = seed_dir(out, seed).join("estimators");
    cfg.estimator_plan()
        .into_iter()
        .map(|(a, s)| {
            let stem = estimator_stem(a, s);
            require(dir.join(format!("{stem}.toml")))?;
            Ok((a, s, Estimator::load(&dir, &stem)?))
        })
        .collect()
}
