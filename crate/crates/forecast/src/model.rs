use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use dsse_data::{window_indices, NormalizationStats, TimeSeriesDataset, Window, WindowSpec};
use dsse_grid::MeasurementFrame;
use dsse_tensor::{ParamStore, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::data::ForecastData;
use crate::error::{ForecastError, Result};
use crate::lstm::{Lstm, LstmConfig};
use crate::persistence::persistence_forecast;
use crate::prompt::PromptTemplate;
use crate::transformer::{Transformer, TransformerConfig};

/// Windows per inference batch.
const INFER_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecasterKind {
    Persistence,
    Recurrent,
    Transformer,
}

impl ForecasterKind {
    pub const ALL: [ForecasterKind; 3] = [Self::Persistence, Self::Recurrent, Self::Transformer];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Persistence => "persistence",
            Self::Recurrent => "recurrent",
            Self::Transformer => "transformer",
        }
    }
}

impl fmt::Display for ForecasterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ForecasterKind {
    type Err = ForecastError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "persistence" => Ok(Self::Persistence),
            "recurrent" | "lstm" => Ok(Self::Recurrent),
            "transformer" | "decoder_transformer" => Ok(Self::Transformer),
            other => Err(ForecastError::Config(format!("unknown forecaster {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
enum Net {
    None,
    Lstm(Lstm),
    Transformer(Transformer),
}

/// A forecaster together with the measurement scaling it was trained under.
#[derive(Clone, Debug)]
pub struct Forecaster {
    pub stats: NormalizationStats,
    lookback: usize,
    net: Net,
}

impl Forecaster {
    pub fn persistence(stats: NormalizationStats, lookback: usize) -> Self {
        Self { stats, lookback, net: Net::None }
    }

    pub fn recurrent(stats: NormalizationStats, cfg: LstmConfig, seed: u64) -> Result<Self> {
        let lookback = cfg.lookback;
        let net = Lstm::new(cfg, stats.width(), seed)?;
        Ok(Self { stats, lookback, net: Net::Lstm(net) })
    }

    pub fn transformer(
        stats: NormalizationStats,
        cfg: TransformerConfig,
        template: Option<PromptTemplate>,
        seed: u64,
    ) -> Result<Self> {
        let lookback = cfg.lookback;
        let net = Transformer::new(cfg, stats.width(), template, seed)?;
        Ok(Self { stats, lookback, net: Net::Transformer(net) })
    }

    pub fn kind(&self) -> ForecasterKind {
        match self.net {
            Net::None => ForecasterKind::Persistence,
            Net::Lstm(_) => ForecasterKind::Recurrent,
            Net::Transformer(_) => ForecasterKind::Transformer,
        }
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn channels(&self) -> usize {
        self.stats.width()
    }

    pub fn as_transformer(&self) -> Option<&Transformer> {
        match &self.net {
            Net::Transformer(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_transformer_mut(&mut self) -> Option<&mut Transformer> {
        match &mut self.net {
            Net::Transformer(t) => Some(t),
            _ => None,
        }
    }

    pub fn params(&self) -> Option<&ParamStore> {
        match &self.net {
            Net::None => None,
            Net::Lstm(m) => Some(&m.params),
            Net::Transformer(m) => Some(&m.params),
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ParamStore> {
        match &mut self.net {
            Net::None => None,
            Net::Lstm(m) => Some(&mut m.params),
            Net::Transformer(m) => Some(&mut m.params),
        }
    }

    /// Standardized predictions on a tape; see the per-model `forward`.
    pub fn forward(&self, tape: &mut Tape, data: &ForecastData, windows: &[Window], dense: bool) -> Result<Var> {
        match &self.net {
            Net::None => Err(ForecastError::Config("persistence has no differentiable forward".into())),
            Net::Lstm(m) => m.forward(tape, data, windows, dense),
            Net::Transformer(m) => m.forward(tape, data, windows, dense),
        }
    }

    /// Raw-unit forecasts of the frames at `steps`, each from the window of
    /// `lookback` frames ending there. Every step must be `≥ lookback − 1`.
    pub fn predict(&self, ds: &TimeSeriesDataset, steps: &[usize]) -> Result<Vec<Vec<f64>>> {
        if ds.channel_count() != self.channels() {
            return Err(ForecastError::ChannelMismatch { expected: self.channels(), got: ds.channel_count() });
        }
        let k = self.lookback;
        let windows: Vec<Window> = steps
            .iter()
            .map(|&t| {
                if t + 1 < k || t >= ds.len() {
                    Err(ForecastError::Config(format!("step {t} has no full window of {k} in {} steps", ds.len())))
                } else {
                    Ok(Window { start: t + 1 - k, target: t })
                }
            })
            .collect::<Result<_>>()?;
        if let Net::None = self.net {
            return Ok(windows
                .iter()
                .map(|w| persistence_forecast(&ds.frames[w.steps()], &self.stats.mean))
                .collect());
        }
        // Only the windows' steps matter, but standardizing the whole series is cheap.
        let data = ForecastData::new(ds, &self.stats)?;
        let m = self.channels();
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(INFER_BATCH) {
            let mut tape = Tape::inference();
            let y = self.forward(&mut tape, &data, chunk, false)?;
            for row in tape.value(y).data().chunks(m) {
                let mut r = row.to_vec();
                self.stats.invert(&mut r)?;
                out.push(r);
            }
        }
        Ok(out)
    }

    /// Completes frame `t` of `ds`: observed entries pass through, missing ones
    /// take the forecast from the window ending at `t`.
    pub fn forecast_impute(&self, ds: &TimeSeriesDataset, t: usize) -> Result<MeasurementFrame> {
        let f = self.predict(ds, &[t])?;
        Ok(complete_frame(&ds.frames[t], &f[0]))
    }

    /// Windows of this model's lookback over a series.
    pub fn windows(&self, len: usize, stride: usize) -> Result<Vec<Window>> {
        Ok(window_indices(len, WindowSpec::new(self.lookback, stride)?)?)
    }

    /// Writes `<stem>.params` (tensor checkpoint) and `<stem>.toml` (configuration).
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut side = Sidecar {
            kind: self.kind(),
            lookback: self.lookback,
            mean: self.stats.mean.clone(),
            std: self.stats.std.clone(),
            lstm: None,
            transformer: None,
            prompt: None,
            rendered_prompt: None,
        };
        match &self.net {
            Net::None => {}
            Net::Lstm(m) => side.lstm = Some(m.cfg.clone()),
            Net::Transformer(m) => {
                side.transformer = Some(m.cfg.clone());
                if let Some(t) = &m.template {
                    side.rendered_prompt =
                        Some(t.render(&dsse_data::Calendar::from_unix(dsse_data::DEFAULT_START_UNIX)).join(" "));
                }
                side.prompt = m.template.clone();
            }
        }
        let text = toml::to_string(&side).map_err(|e| ForecastError::Checkpoint(e.to_string()))?;
        fs::write(dir.join(format!("{stem}.toml")), text)?;
        if let Some(p) = self.params() {
            p.save(dir.join(format!("{stem}.params")))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(format!("{stem}.toml")))?;
        let side: Sidecar = toml::from_str(&text).map_err(|e| ForecastError::Checkpoint(e.to_string()))?;
        let stats = NormalizationStats { mean: side.mean, std: side.std };
        let mut model = match side.kind {
            ForecasterKind::Persistence => return Ok(Self::persistence(stats, side.lookback)),
            ForecasterKind::Recurrent => {
                let cfg = side.lstm.ok_or_else(|| ForecastError::Checkpoint("missing [lstm] table".into()))?;
                Self::recurrent(stats, cfg, 0)?
            }
            ForecasterKind::Transformer => {
                let cfg = side
                    .transformer
                    .ok_or_else(|| ForecastError::Checkpoint("missing [transformer] table".into()))?;
                Self::transformer(stats, cfg, side.prompt, 0)?
            }
        };
        let saved = ParamStore::load(dir.join(format!("{stem}.params")))?;
        model.params_mut().expect("trainable kinds").load_values_from(&saved)?;
        Ok(model)
    }
}

/// Observed entries of `frame` with missing ones replaced by `forecast`; the mask becomes all true.
pub fn complete_frame(frame: &MeasurementFrame, forecast: &[f64]) -> MeasurementFrame {
    let values = frame
        .values
        .iter()
        .zip(&frame.mask)
        .zip(forecast)
        .map(|((&v, &m), &f)| if m { v } else { f })
        .collect();
    MeasurementFrame::observed(values)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    kind: ForecasterKind,
    lookback: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    lstm: Option<LstmConfig>,
    transformer: Option<TransformerConfig>,
    prompt: Option<PromptTemplate>,
    rendered_prompt: Option<String>,
}
