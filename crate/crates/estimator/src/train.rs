use std::io::Write;
use std::path::Path;

use dsse_data::TimeSeriesDataset;
use dsse_tensor::{AdamConfig, AdamState, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Scheme;
use crate::error::{EstimatorError, Result};
use crate::model::Estimator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EstimatorTrainConfig {
    fn default() -> Self {
        Self { epochs: 40, batch_size: 32, learning_rate: 1e-3, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorEpoch {
    pub epoch: usize,
    /// Mean combined training loss.
    pub train_loss: f64,
    pub val_magnitude: f64,
    pub val_angle: f64,
    /// UWA log-variances at the end of the epoch.
    pub s: Option<(f64, f64)>,
}

impl EstimatorEpoch {
    /// Selection metric: unweighted sum of the task losses.
    pub fn val_total(&self) -> f64 {
        self.val_magnitude + self.val_angle
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimatorHistory {
    /// Epoch 0 is the untrained model.
    pub records: Vec<EstimatorEpoch>,
    /// Selected epoch of each network (two under STL).
    pub best_epochs: Vec<usize>,
}

impl EstimatorHistory {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "epoch,train_loss,val_magnitude,val_angle")?;
        for r in &self.records {
            writeln!(f, "{},{},{},{}", r.epoch, r.train_loss, r.val_magnitude, r.val_angle)?;
        }
        Ok(())
    }

    /// `epoch,s1,s2,sigma1,sigma2`; nothing is written without UWA.
    pub fn write_uwa_csv(&self, path: impl AsRef<Path>) -> Result<bool> {
        if self.records.iter().all(|r| r.s.is_none()) {
            return Ok(false);
        }
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "epoch,s1,s2,sigma1,sigma2")?;
        for r in &self.records {
            if let Some((s1, s2)) = r.s {
                writeln!(f, "{},{},{},{},{}", r.epoch, s1, s2, (0.5 * s1).exp(), (0.5 * s2).exp())?;
            }
        }
        Ok(true)
    }
}

struct Encoded {
    x: Vec<f64>,
    y: Vec<f64>,
    rows: usize,
    xw: usize,
    yw: usize,
}

impl Encoded {
    fn new(model: &Estimator, ds: &TimeSeriesDataset) -> Result<Self> {
        let frames: Vec<_> = ds.frames.iter().collect();
        let states: Vec<_> = ds.states.iter().collect();
        let x = model.encode(&frames)?;
        let y = model.encode_states(&states)?;
        Ok(Self { rows: ds.len(), xw: x.shape()[1], yw: y.shape()[1], x: x.into_data(), y: y.into_data() })
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let x = idx.iter().flat_map(|&i| self.x[i * self.xw..(i + 1) * self.xw].iter().copied()).collect();
        let y = idx.iter().flat_map(|&i| self.y[i * self.yw..(i + 1) * self.yw].iter().copied()).collect();
        Ok((Tensor::new(vec![idx.len(), self.xw], x)?, Tensor::new(vec![idx.len(), self.yw], y)?))
    }
}

/// Mean `(magnitude, angle, combined)` losses over a dataset.
fn evaluate(model: &Estimator, data: &Encoded) -> Result<(f64, f64, f64)> {
    let all: Vec<usize> = (0..data.rows).collect();
    let mut acc = (0.0, 0.0, 0.0);
    for chunk in all.chunks(256) {
        let (x, y) = data.batch(chunk)?;
        let mut tape = Tape::inference();
        let xv = tape.constant(x);
        let l = model.losses(&mut tape, xv, &y)?;
        let w = chunk.len() as f64;
        acc.0 += tape.value(l.magnitude).data()[0] * w;
        acc.1 += tape.value(l.angle).data()[0] * w;
        acc.2 += tape.value(l.total).data()[0] * w;
    }
    let n = data.rows.max(1) as f64;
    Ok((acc.0 / n, acc.1 / n, acc.2 / n))
}

/// Adam on minibatches of `train`; each network keeps the parameters of its
/// best validation epoch (own task loss under STL, summed task losses otherwise).
pub fn train_estimator(
    model: &mut Estimator,
    train: &TimeSeriesDataset,
    val: &TimeSeriesDataset,
    cfg: &EstimatorTrainConfig,
) -> Result<EstimatorHistory> {
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(EstimatorError::Config("batch_size and learning_rate must be positive".into()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(EstimatorError::Config("training and validation sets must be non-empty".into()));
    }
    let tr = Encoded::new(model, train)?;
    let va = Encoded::new(model, val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam_cfg = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut adams: Vec<AdamState> = model.nets.iter().map(|n| AdamState::new(adam_cfg.clone(), &n.params)).collect();
    let stl = model.weighting.scheme == Scheme::Stl;
    // Selection score of each network for an epoch record.
    let score = |r: &EstimatorEpoch, net: usize| match (stl, net) {
        (true, 0) => r.val_magnitude,
        (true, _) => r.val_angle,
        _ => r.val_total(),
    };

    let (vm, vt, _) = evaluate(model, &va)?;
    let (_, _, t0) = evaluate(model, &tr)?;
    let first = EstimatorEpoch { epoch: 0, train_loss: t0, val_magnitude: vm, val_angle: vt, s: model.log_variances() };
    let mut best: Vec<(f64, usize, ParamStore)> =
        model.nets.iter().enumerate().map(|(i, n)| (score(&first, i), 0, n.params.clone())).collect();
    let mut history = EstimatorHistory { records: vec![first], best_epochs: vec![0; model.nets.len()] };

    let mut order: Vec<usize> = (0..tr.rows).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = tr.batch(chunk)?;
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let l = model.losses(&mut tape, xv, &y)?;
            let lv = tape.value(l.total).data()[0];
            if !lv.is_finite() {
                return Err(EstimatorError::Diverged { epoch, loss: lv });
            }
            acc += lv * chunk.len() as f64;
            tape.backward(l.total)?;
            for (net, adam) in model.nets.iter_mut().zip(&mut adams) {
                tape.accumulate_grads(&mut net.params);
                adam.step(&mut net.params)?;
                net.params.zero_grad();
            }
        }
        let (vm, vt, _) = evaluate(model, &va)?;
        if !(vm + vt).is_finite() {
            return Err(EstimatorError::Diverged { epoch, loss: vm + vt });
        }
        let rec = EstimatorEpoch {
            epoch,
            train_loss: acc / tr.rows as f64,
            val_magnitude: vm,
            val_angle: vt,
            s: model.log_variances(),
        };
        log::debug!("estimator epoch {epoch}: train {:.5} val {:.5}/{:.5}", rec.train_loss, vm, vt);
        for (i, b) in best.iter_mut().enumerate() {
            let sc = score(&rec, i);
            if sc < b.0 {
                *b = (sc, epoch, model.nets[i].params.clone());
            }
        }
        history.records.push(rec);
    }
    for (i, (_, epoch, params)) in best.into_iter().enumerate() {
        model.nets[i].params = params;
        history.best_epochs[i] = epoch;
    }
    Ok(history)
}
