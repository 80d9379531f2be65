use dsse_data::{Calendar, NormalizationStats, TimeSeriesDataset, Window};

use crate::error::{ForecastError, Result};

/// Model-ready view of a (possibly corrupted) dataset.
///
/// Each step becomes `2m` inputs: standardized values with missing cells set
/// to zero, followed by the mask bits. Targets are the standardized ideal values.
#[derive(Clone, Debug)]
pub struct ForecastData {
    channels: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    pub calendar: Vec<Calendar>,
}

impl ForecastData {
    pub fn new(ds: &TimeSeriesDataset, stats: &NormalizationStats) -> Result<Self> {
        let m = ds.channel_count();
        if stats.width() != m {
            return Err(ForecastError::ChannelMismatch { expected: stats.width(), got: m });
        }
        let mut inputs = Vec::with_capacity(ds.len() * 2 * m);
        let mut targets = Vec::with_capacity(ds.len() * m);
        for f in &ds.frames {
            let mut z = f.values.clone();
            stats.apply(&mut z)?;
            targets.extend_from_slice(&z);
            inputs.extend(z.iter().zip(&f.mask).map(|(&v, &o)| if o { v } else { 0.0 }));
            inputs.extend(f.mask.iter().map(|&o| if o { 1.0 } else { 0.0 }));
        }
        let calendar = (0..ds.len()).map(|t| ds.calendar(t)).collect();
        Ok(Self { channels: m, inputs, targets, calendar })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.calendar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calendar.is_empty()
    }

    /// `2m` inputs of step `t`.
    pub fn input(&self, t: usize) -> &[f64] {
        let w = 2 * self.channels;
        &self.inputs[t * w..(t + 1) * w]
    }

    pub fn target(&self, t: usize) -> &[f64] {
        let m = self.channels;
        &self.targets[t * m..(t + 1) * m]
    }

    /// Row-major `[windows·k, 2m]` input block.
    pub fn stack_inputs(&self, windows: &[Window]) -> Vec<f64> {
        windows.iter().flat_map(|w| w.steps().flat_map(|t| self.input(t).iter().copied())).collect()
    }

    /// Targets for every step of every window, `[windows·k, m]`.
    pub fn stack_all_targets(&self, windows: &[Window]) -> Vec<f64> {
        windows.iter().flat_map(|w| w.steps().flat_map(|t| self.target(t).iter().copied())).collect()
    }

    /// Targets at window ends, `[windows, m]`.
    pub fn stack_last_targets(&self, windows: &[Window]) -> Vec<f64> {
        windows.iter().flat_map(|w| self.target(w.target).iter().copied()).collect()
    }
}
