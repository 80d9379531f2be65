use std::fs;
use std::path::Path;

use dsse_data::{NormalizationStats, TimeSeriesDataset};
use dsse_grid::{MeasurementFrame, StateVector};
use dsse_tensor::{ParamStore, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::{EstimatorConfig, Scheme, Task, TaskWeighting};
use crate::error::{EstimatorError, Result};
use crate::loss::{combined_loss, TaskLosses, HUBER_DELTA};
use crate::net::Network;

const INFER_BATCH: usize = 256;

/// Estimated state in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimationResult {
    /// Voltage magnitudes (pu).
    pub v: Vec<f64>,
    /// Voltage angles (rad); the slack entry is exactly 0.
    pub theta: Vec<f64>,
    /// `(σ₁, σ₂)` of the magnitude and angle tasks under UWA.
    pub sigma: Option<(f64, f64)>,
}

impl EstimationResult {
    pub fn to_state(&self) -> StateVector {
        StateVector { v: self.v.clone(), theta: self.theta.clone() }
    }
}

/// Per-task losses of one batch on a tape.
pub struct BatchLosses {
    pub magnitude: Var,
    pub angle: Var,
    pub total: Var,
}

/// A trained (or trainable) estimator: networks, loss weighting and the
/// scalings of its inputs and targets.
#[derive(Clone, Debug)]
pub struct Estimator {
    pub cfg: EstimatorConfig,
    pub weighting: TaskWeighting,
    pub meas_stats: NormalizationStats,
    /// Over `[V, θ]`, width `2n`.
    pub state_stats: NormalizationStats,
    pub slack: usize,
    /// STL: `[magnitude, angle]`; otherwise a single network.
    pub nets: Vec<Network>,
}

impl Estimator {
    /// Fresh model with scalings fitted on `train` (measurements over observed cells).
    pub fn new(
        cfg: EstimatorConfig,
        weighting: TaskWeighting,
        train: &TimeSeriesDataset,
        slack: usize,
        seed: u64,
    ) -> Result<Self> {
        let meas = NormalizationStats::fit_measurements(train);
        let states = NormalizationStats::fit_states(train);
        Self::with_stats(cfg, weighting, meas, states, slack, seed)
    }

    pub fn with_stats(
        cfg: EstimatorConfig,
        weighting: TaskWeighting,
        meas_stats: NormalizationStats,
        state_stats: NormalizationStats,
        slack: usize,
        seed: u64,
    ) -> Result<Self> {
        weighting.validate()?;
        let n = state_stats.width() / 2;
        if n == 0 || state_stats.width() % 2 != 0 || slack >= n {
            return Err(EstimatorError::Config(format!(
                "state width {} and slack {slack} are inconsistent",
                state_stats.width()
            )));
        }
        let m = meas_stats.width();
        let nets = match weighting.scheme {
            Scheme::Stl => vec![
                Network::new(cfg.clone(), m, vec![n], seed)?,
                Network::new(cfg.clone(), m, vec![n], seed.wrapping_add(1))?,
            ],
            Scheme::Mix => vec![Network::new(cfg.clone(), m, vec![2 * n], seed)?],
            Scheme::UniformScaling | Scheme::Uwa => vec![Network::new(cfg.clone(), m, vec![n, n], seed)?],
        };
        let mut model = Self { cfg, weighting, meas_stats, state_stats, slack, nets };
        if weighting.scheme == Scheme::Uwa {
            model.nets[0].params.add("uwa.s1", Tensor::scalar(0.0));
            model.nets[0].params.add("uwa.s2", Tensor::scalar(0.0));
        }
        Ok(model)
    }

    pub fn buses(&self) -> usize {
        self.state_stats.width() / 2
    }

    pub fn channels(&self) -> usize {
        self.meas_stats.width()
    }

    /// Current `(s₁, s₂)` under UWA.
    pub fn log_variances(&self) -> Option<(f64, f64)> {
        let p = &self.nets[0].params;
        let s1 = p.by_name("uwa.s1")?.value.data()[0];
        let s2 = p.by_name("uwa.s2")?.value.data()[0];
        Some((s1, s2))
    }

    /// `[frames, 2m]`: standardized values with missing cells taken as raw
    /// zero, then the mask bits.
    pub fn encode(&self, frames: &[&MeasurementFrame]) -> Result<Tensor> {
        let m = self.channels();
        let mut out = Vec::with_capacity(frames.len() * 2 * m);
        for f in frames {
            if f.len() != m {
                return Err(EstimatorError::WidthMismatch { expected: m, got: f.len() });
            }
            let mut z = f.zero_filled();
            self.meas_stats.apply(&mut z)?;
            out.extend_from_slice(&z);
            out.extend(f.mask.iter().map(|&o| if o { 1.0 } else { 0.0 }));
        }
        Ok(Tensor::new(vec![frames.len(), 2 * m], out)?)
    }

    /// Standardized `[V, θ]` targets, `[states, 2n]`.
    pub fn encode_states(&self, states: &[&StateVector]) -> Result<Tensor> {
        let n = self.buses();
        let mut out = Vec::with_capacity(states.len() * 2 * n);
        for s in states {
            if s.len() != n {
                return Err(EstimatorError::WidthMismatch { expected: n, got: s.len() });
            }
            let mut x = s.to_vec();
            self.state_stats.apply(&mut x)?;
            out.extend(x);
        }
        Ok(Tensor::new(vec![states.len(), 2 * n], out)?)
    }

    fn angle_columns(&self) -> Vec<usize> {
        (0..self.buses()).filter(|&b| b != self.slack).collect()
    }

    /// Standardized magnitude and angle outputs, each `[batch, n]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let n = self.buses();
        match self.weighting.scheme {
            Scheme::Stl => {
                let v = self.nets[0].forward(tape, x)?[0];
                let t = self.nets[1].forward(tape, x)?[0];
                Ok((v, t))
            }
            Scheme::Mix => {
                let y = self.nets[0].forward(tape, x)?[0];
                Ok((tape.slice_cols(y, 0, n)?, tape.slice_cols(y, n, n)?))
            }
            Scheme::UniformScaling | Scheme::Uwa => {
                let out = self.nets[0].forward(tape, x)?;
                Ok((out[0], out[1]))
            }
        }
    }

    /// Huber task losses against standardized targets `[batch, 2n]`, and
    /// the scheme's combined training loss. The slack angle is excluded.
    pub fn losses(&self, tape: &mut Tape, x: Var, targets: &Tensor) -> Result<BatchLosses> {
        let n = self.buses();
        let (v, t) = self.forward(tape, x)?;
        let cols = self.angle_columns();
        let tv = tape.constant(targets.clone());
        let v_target = tape.slice_cols(tv, 0, n)?;
        let t_all = tape.slice_cols(tv, n, n)?;
        let t_target = tape.gather_cols(t_all, &cols)?;
        let t = tape.gather_cols(t, &cols)?;
        let magnitude = tape.huber(v, v_target, HUBER_DELTA)?;
        let angle = tape.huber(t, t_target, HUBER_DELTA)?;
        let w = &self.weighting;
        let total = match w.scheme {
            Scheme::Stl => {
                let a = combined_loss(tape, w, TaskLosses::Single(Task::Magnitude, magnitude))?;
                let b = combined_loss(tape, w, TaskLosses::Single(Task::Angle, angle))?;
                tape.add(a, b)?
            }
            Scheme::Mix => {
                let pred = tape.concat_cols(&[v, t])?;
                let target = tape.concat_cols(&[v_target, t_target])?;
                let joint = tape.huber(pred, target, HUBER_DELTA)?;
                combined_loss(tape, w, TaskLosses::Joint(joint))?
            }
            Scheme::UniformScaling => combined_loss(tape, w, TaskLosses::Pair { l1: magnitude, l2: angle, s: None })?,
            Scheme::Uwa => {
                let p = &self.nets[0].params;
                let ids = (p.id("uwa.s1"), p.id("uwa.s2"));
                let (Some(i1), Some(i2)) = ids else {
                    return Err(EstimatorError::Config("uwa model lacks log-variance parameters".into()));
                };
                let s = (tape.param(p, i1), tape.param(p, i2));
                combined_loss(tape, w, TaskLosses::Pair { l1: magnitude, l2: angle, s: Some(s) })?
            }
        };
        Ok(BatchLosses { magnitude, angle, total })
    }

    /// State estimates for each frame.
    pub fn estimate_batch(&self, frames: &[&MeasurementFrame]) -> Result<Vec<EstimationResult>> {
        let n = self.buses();
        let sigma = self.log_variances().map(|(s1, s2)| ((0.5 * s1).exp(), (0.5 * s2).exp()));
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(INFER_BATCH) {
            let mut tape = Tape::inference();
            let x = tape.constant(self.encode(chunk)?);
            let (v, t) = self.forward(&mut tape, x)?;
            let (vv, tv) = (tape.value(v).data(), tape.value(t).data());
            for i in 0..chunk.len() {
                let mut x: Vec<f64> = vv[i * n..(i + 1) * n].iter().chain(&tv[i * n..(i + 1) * n]).copied().collect();
                self.state_stats.invert(&mut x)?;
                let mut theta = x.split_off(n);
                theta[self.slack] = 0.0;
                out.push(EstimationResult { v: x, theta, sigma });
            }
        }
        Ok(out)
    }

    pub fn estimate(&self, frame: &MeasurementFrame) -> Result<EstimationResult> {
        Ok(self.estimate_batch(&[frame])?.remove(0))
    }

    /// Writes `<stem>.toml` and one `<stem>.net<i>.params` per network.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let side = Sidecar {
            config: self.cfg.clone(),
            weighting: self.weighting,
            slack: self.slack,
            meas_mean: self.meas_stats.mean.clone(),
            meas_std: self.meas_stats.std.clone(),
            state_mean: self.state_stats.mean.clone(),
            state_std: self.state_stats.std.clone(),
        };
        let text = toml::to_string(&side).map_err(|e| EstimatorError::Checkpoint(e.to_string()))?;
        fs::write(dir.join(format!("{stem}.toml")), text)?;
        for (i, net) in self.nets.iter().enumerate() {
            net.params.save(dir.join(format!("{stem}.net{i}.params")))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(format!("{stem}.toml")))?;
        let side: Sidecar = toml::from_str(&text).map_err(|e| EstimatorError::Checkpoint(e.to_string()))?;
        let meas = NormalizationStats { mean: side.meas_mean, std: side.meas_std };
        let states = NormalizationStats { mean: side.state_mean, std: side.state_std };
        let mut model = Self::with_stats(side.config, side.weighting, meas, states, side.slack, 0)?;
        for (i, net) in model.nets.iter_mut().enumerate() {
            let saved = ParamStore::load(dir.join(format!("{stem}.net{i}.params")))?;
            net.params.load_values_from(&saved)?;
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: EstimatorConfig,
    weighting: TaskWeighting,
    slack: usize,
    meas_mean: Vec<f64>,
    meas_std: Vec<f64>,
    state_mean: Vec<f64>,
    state_std: Vec<f64>,
}
