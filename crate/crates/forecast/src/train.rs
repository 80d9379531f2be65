use std::io::Write;
use std::path::Path;

use dsse_data::{TimeSeriesDataset, Window};
use dsse_tensor::{AdamConfig, AdamState, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ForecastData;
use crate::error::{ForecastError, Result};
use crate::model::Forecaster;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Step between consecutive training windows.
    pub stride: usize,
    /// Supervise every measurement position instead of only the last one.
    pub dense: bool,
    /// Only the last this-many positions of each window are supervised in
    /// dense mode (the earliest positions see almost no history).
    pub dense_tail: usize,
    pub seed: u64,
}

impl Default for ForecastTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            learning_rate: 3e-3,
            stride: 8,
            dense: true,
            dense_tail: 48,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Epoch 0 is the untrained model.
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "epoch,train_loss,val_loss")?;
        for r in &self.records {
            writeln!(f, "{},{},{}", r.epoch, r.train_loss, r.val_loss)?;
        }
        Ok(())
    }
}

/// Rows of the prediction tensor kept by the loss, and the matching targets.
fn batch_targets(data: &ForecastData, windows: &[Window], dense: bool, tail: usize, k: usize) -> (Option<Vec<usize>>, Vec<f64>) {
    if !dense {
        return (None, data.stack_last_targets(windows));
    }
    let tail = tail.clamp(1, k);
    if tail == k {
        return (None, data.stack_all_targets(windows));
    }
    let rows: Vec<usize> = (0..windows.len()).flat_map(|i| (k - tail..k).map(move |j| i * k + j)).collect();
    let targets = windows
        .iter()
        .flat_map(|w| (w.target + 1 - tail..=w.target).flat_map(|t| data.target(t).iter().copied()))
        .collect();
    (Some(rows), targets)
}

fn batch_loss(
    model: &Forecaster,
    tape: &mut Tape,
    data: &ForecastData,
    windows: &[Window],
    dense: bool,
    tail: usize,
) -> Result<dsse_tensor::Var> {
    let m = model.channels();
    let pred = model.forward(tape, data, windows, dense)?;
    let (rows, targets) = batch_targets(data, windows, dense, tail, model.lookback());
    let pred = match rows {
        Some(r) => tape.gather_rows(pred, &r)?,
        None => pred,
    };
    let n = targets.len() / m;
    let target = tape.constant(Tensor::new(vec![n, m], targets)?);
    Ok(tape.mse(pred, target)?)
}

/// Mean last-position MSE (standardized units) over `windows`.
pub fn evaluate_loss(model: &Forecaster, data: &ForecastData, windows: &[Window]) -> Result<f64> {
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in windows.chunks(64) {
        let mut tape = Tape::inference();
        let loss = batch_loss(model, &mut tape, data, chunk, false, 1)?;
        total += tape.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Adam on minibatches of corrupted training windows against ideal targets.
/// The returned model holds the parameters of the epoch with the lowest
/// validation loss (epoch 0 = untrained). Persistence is returned unchanged.
pub fn train_forecaster(
    model: &mut Forecaster,
    train: &TimeSeriesDataset,
    val: &TimeSeriesDataset,
    cfg: &ForecastTrainConfig,
) -> Result<TrainHistory> {
    if model.params().is_none() {
        return Ok(TrainHistory::default());
    }
    if cfg.batch_size == 0 || cfg.stride == 0 || !(cfg.learning_rate > 0.0) {
        return Err(ForecastError::Config("batch_size, stride and learning_rate must be positive".into()));
    }
    let tr = ForecastData::new(train, &model.stats)?;
    let va = ForecastData::new(val, &model.stats)?;
    let mut train_windows = model.windows(tr.len(), cfg.stride)?;
    let val_windows = model.windows(va.len(), 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(cfg.learning_rate), model.params().expect("checked"));

    let initial_train = {
        let mut acc = 0.0;
        for chunk in train_windows.chunks(cfg.batch_size) {
            let mut tape = Tape::inference();
            let l = batch_loss(model, &mut tape, &tr, chunk, cfg.dense, cfg.dense_tail)?;
            acc += tape.value(l).data()[0] * chunk.len() as f64;
        }
        acc / train_windows.len() as f64
    };
    let mut history = TrainHistory {
        records: vec![EpochRecord { epoch: 0, train_loss: initial_train, val_loss: evaluate_loss(model, &va, &val_windows)? }],
        best_epoch: 0,
    };
    let mut best = (history.records[0].val_loss, model.params().expect("checked").clone());

    for epoch in 1..=cfg.epochs {
        train_windows.shuffle(&mut rng);
        let mut acc = 0.0;
        for chunk in train_windows.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let loss = batch_loss(model, &mut tape, &tr, chunk, cfg.dense, cfg.dense_tail)?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(ForecastError::Diverged { epoch, loss: lv });
            }
            acc += lv * chunk.len() as f64;
            tape.backward(loss)?;
            let params = model.params_mut().expect("checked");
            tape.accumulate_grads(params);
            adam.step(params)?;
            params.zero_grad();
        }
        let train_loss = acc / train_windows.len() as f64;
        let val_loss = evaluate_loss(model, &va, &val_windows)?;
        if !val_loss.is_finite() {
            return Err(ForecastError::Diverged { epoch, loss: val_loss });
        }
        log::debug!("forecaster epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        history.records.push(EpochRecord { epoch, train_loss, val_loss });
        if val_loss < best.0 {
            best = (val_loss, model.params().expect("checked").clone());
            history.best_epoch = epoch;
        }
    }
    *model.params_mut().expect("checked") = best.1;
    Ok(history)
}
