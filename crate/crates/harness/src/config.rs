//! Experiment configuration. One TOML file; command-line flags override file
//! values, which override the built-in defaults.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use dsse_data::{MissingMode, SplitSpec};
use dsse_estimator::{Architecture, EstimatorConfig, EstimatorTrainConfig, Scheme, TaskWeighting};
use dsse_forecast::{ForecastTrainConfig, ForecasterKind, LstmConfig, TransformerConfig};
use dsse_grid::InjectionConvention;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Every run is repeated per seed; reports aggregate the median.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub network: NetworkSection,
    pub data: DataSection,
    pub forecaster: ForecasterSection,
    pub estimator: EstimatorSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs/default"),
            network: NetworkSection::default(),
            data: DataSection::default(),
            forecaster: ForecasterSection::default(),
            estimator: EstimatorSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Size of the synthetic feeder; ignored when `path` is set.
    pub buses: usize,
    /// Network TOML to use instead of a synthetic feeder.
    pub path: Option<PathBuf>,
    /// Fraction of buses with a measurement device.
    pub sensor_fraction: f64,
    /// Descriptor CSV to use instead of seeded sensor placement.
    pub descriptors: Option<PathBuf>,
    /// `physical` or `as_printed`.
    pub injection_convention: String,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            buses: 15,
            path: None,
            sensor_fraction: 0.6,
            descriptors: None,
            injection_convention: "physical".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub steps: usize,
    pub missing_ratios: Vec<f64>,
    /// Forecaster window length `k`.
    pub lookback: usize,
    pub split: SplitSection,
    /// `iid` or `burst`.
    pub missing_mode: String,
    /// Mean run length for `burst`.
    pub burst_length: f64,
    /// Relative std of additive measurement noise; 0 keeps measurements ideal.
    pub noise: f64,
    /// Directory holding `measurements.csv`, `states.csv` and
    /// `descriptors.csv` to use instead of synthesis. Needs `network.path`.
    pub dataset: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            steps: 3000,
            missing_ratios: vec![0.1, 0.3, 0.5],
            lookback: 96,
            split: SplitSection::default(),
            missing_mode: "iid".into(),
            burst_length: 8.0,
            noise: 0.0,
            dataset: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self { train: s.train, val: s.val, test: s.test }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterSection {
    pub variants: Vec<ForecasterKind>,
    /// Prepend the text prompt to the transformer input.
    pub prompt: bool,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_width: usize,
    pub prompt_len: usize,
    pub lstm_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub stride: usize,
    pub dense: bool,
    pub dense_tail: usize,
}

impl Default for ForecasterSection {
    fn default() -> Self {
        let t = TransformerConfig::default();
        let tr = ForecastTrainConfig::default();
        Self {
            variants: ForecasterKind::ALL.to_vec(),
            prompt: true,
            d_model: t.d_model,
            heads: t.heads,
            layers: t.layers,
            ff_width: t.ff_width,
            prompt_len: t.prompt_len,
            lstm_hidden: LstmConfig::default().hidden,
            epochs: tr.epochs,
            batch_size: tr.batch_size,
            learning_rate: tr.learning_rate,
            stride: tr.stride,
            dense: tr.dense,
            dense_tail: tr.dense_tail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    /// Models compared under `mtl_schemes`, and used in the pipeline.
    pub architectures: Vec<Architecture>,
    pub mtl_schemes: Vec<Scheme>,
    /// Model compared under every scheme of `schemes`.
    pub scheme_architecture: Architecture,
    pub schemes: Vec<Scheme>,
    /// Scheme of the estimators fed by the pipeline.
    pub pipeline_scheme: Scheme,
    pub width: usize,
    pub depth: usize,
    pub head_width: usize,
    pub conv_channels: usize,
    pub conv_width: usize,
    /// Fixed task weights of uniform scaling.
    pub lambda: [f64; 2],
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let e = EstimatorConfig::default();
        let t = EstimatorTrainConfig::default();
        Self {
            architectures: Architecture::ALL.to_vec(),
            mtl_schemes: vec![Scheme::Stl, Scheme::Uwa],
            scheme_architecture: Architecture::CnnProx,
            schemes: Scheme::ALL.to_vec(),
            pipeline_scheme: Scheme::Uwa,
            width: e.width,
            depth: e.depth,
            head_width: e.head_width,
            conv_channels: e.conv_channels,
            conv_width: e.conv_width,
            lambda: TaskWeighting::new(Scheme::UniformScaling).lambda,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
        }
    }
}

/// Command-line values that replace file values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    /// Replaces the whole seed list.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses a file; relative paths inside it are taken from its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.network.path, &mut self.network.descriptors, &mut self.data.dataset]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seeds = vec![s];
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("duplicate seeds".into());
        }
        for p in [&self.network.path, &self.network.descriptors, &self.data.dataset].into_iter().flatten() {
            if !p.exists() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        if self.data.dataset.is_some() && self.network.path.is_none() {
            return bad("an ingested dataset needs network.path".into());
        }
        if self.network.path.is_none() && self.network.buses < 2 {
            return bad("a feeder needs at least 2 buses".into());
        }
        if !(self.network.sensor_fraction > 0.0 && self.network.sensor_fraction <= 1.0) {
            return bad(format!("sensor_fraction {} outside (0, 1]", self.network.sensor_fraction));
        }
        self.convention()?;
        self.missing_mode()?;
        if self.data.missing_ratios.is_empty() {
            return bad("missing_ratios is empty".into());
        }
        for &r in &self.data.missing_ratios {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("missing ratio {r} outside [0, 1]"));
            }
        }
        let tags: BTreeSet<String> = self.data.missing_ratios.iter().map(|&r| ratio_tag(r)).collect();
        if tags.len() != self.data.missing_ratios.len() {
            return bad("missing ratios must differ in the first two decimals".into());
        }
        if self.data.lookback == 0 || self.data.steps == 0 {
            return bad("lookback and steps must be positive".into());
        }
        if !(self.data.noise >= 0.0 && self.data.noise.is_finite()) {
            return bad(format!("noise {} must be nonnegative", self.data.noise));
        }
        self.split().validate()?;
        self.transformer_config().validate()?;
        let e = &self.estimator;
        if e.architectures.is_empty() {
            return bad("no estimator architectures".into());
        }
        for a in &e.architectures {
            self.estimator_config(*a).validate()?;
        }
        self.estimator_config(e.scheme_architecture).validate()?;
        TaskWeighting { scheme: Scheme::UniformScaling, lambda: e.lambda }.validate()?;
        let f = &self.forecaster;
        if f.epochs > 0 && (f.batch_size == 0 || f.stride == 0 || !(f.learning_rate > 0.0)) {
            return bad("forecaster batch_size, stride and learning_rate must be positive".into());
        }
        if e.batch_size == 0 || !(e.learning_rate > 0.0) {
            return bad("estimator batch_size and learning_rate must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization, without the output directory.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes())))
    }

    pub fn convention(&self) -> Result<InjectionConvention> {
        Ok(self.network.injection_convention.parse()?)
    }

    pub fn missing_mode(&self) -> Result<MissingMode> {
        match self.data.missing_mode.as_str() {
            "iid" => Ok(MissingMode::Iid),
            "burst" => Ok(MissingMode::Burst { mean_length: self.data.burst_length }),
            other => Err(HarnessError::Config(format!("unknown missing mode {other:?}"))),
        }
    }

    pub fn split(&self) -> SplitSpec {
        let s = self.data.split;
        SplitSpec { train: s.train, val: s.val, test: s.test }
    }

    pub fn transformer_config(&self) -> TransformerConfig {
        let f = &self.forecaster;
        TransformerConfig {
            d_model: f.d_model,
            heads: f.heads,
            layers: f.layers,
            ff_width: f.ff_width,
            lookback: self.data.lookback,
            prompt_len: if f.prompt { f.prompt_len } else { 0 },
        }
    }

    pub fn lstm_config(&self) -> LstmConfig {
        LstmConfig { hidden: self.forecaster.lstm_hidden, lookback: self.data.lookback }
    }

    pub fn forecast_train_config(&self, seed: u64) -> ForecastTrainConfig {
        let f = &self.forecaster;
        ForecastTrainConfig {
            epochs: f.epochs,
            batch_size: f.batch_size,
            learning_rate: f.learning_rate,
            stride: f.stride,
            dense: f.dense,
            dense_tail: f.dense_tail,
            seed,
        }
    }

    pub fn estimator_config(&self, architecture: Architecture) -> EstimatorConfig {
        let e = &self.estimator;
        EstimatorConfig {
            architecture,
            width: e.width,
            depth: e.depth,
            head_width: e.head_width,
            conv_channels: e.conv_channels,
            conv_width: e.conv_width,
        }
    }

    pub fn weighting(&self, scheme: Scheme) -> TaskWeighting {
        TaskWeighting { scheme, lambda: self.estimator.lambda }
    }

    pub fn estimator_train_config(&self, seed: u64) -> EstimatorTrainConfig {
        let e = &self.estimator;
        EstimatorTrainConfig { epochs: e.epochs, batch_size: e.batch_size, learning_rate: e.learning_rate, seed }
    }

    /// Every (architecture, scheme) pair some experiment needs, without repeats.
    pub fn estimator_plan(&self) -> Vec<(Architecture, Scheme)> {
        let e = &self.estimator;
        let mut plan = Vec::new();
        let mut push = |p: (Architecture, Scheme)| {
            if !plan.contains(&p) {
                plan.push(p);
            }
        };
        for &a in &e.architectures {
            for &s in &e.mtl_schemes {
                push((a, s));
            }
        }
        for &s in &e.schemes {
            push((e.scheme_architecture, s));
        }
        for &a in &e.architectures {
            push((a, e.pipeline_scheme));
        }
        plan
    }
}

/// Directory-name form of a missing ratio.
pub fn ratio_tag(ratio: f64) -> String {
    format!("ratio{ratio:.2}")
}

/// Independent seed for one named random stream of a run.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let d = Sha256::digest(format!("{seed}:{stream}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
