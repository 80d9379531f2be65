use std::ops::Range;

use crate::dataset::TimeSeriesDataset;
use crate::error::{DataError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub lookback: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(lookback: usize, stride: usize) -> Result<Self> {
        if lookback == 0 || stride == 0 {
            return Err(DataError::InvalidArgument(format!(
                "lookback {lookback} and stride {stride} must be positive"
            )));
        }
        Ok(Self { lookback, stride })
    }
}

/// Steps `start..=target` of a series; the target frame is the last input step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub target: usize,
}

impl Window {
    pub fn steps(&self) -> Range<usize> {
        self.start..self.target + 1
    }
}

/// Windows over a series of `len` steps. The first target is `lookback − 1`.
pub fn window_indices(len: usize, spec: WindowSpec) -> Result<Vec<Window>> {
    if len < spec.lookback {
        return Err(DataError::TooShort { len, lookback: spec.lookback });
    }
    Ok((spec.lookback - 1..len)
        .step_by(spec.stride)
        .map(|target| Window { start: target + 1 - spec.lookback, target })
        .collect())
}

pub fn make_windows(ds: &TimeSeriesDataset, spec: WindowSpec) -> Result<Vec<Window>> {
    window_indices(ds.len(), spec)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.5, val: 0.1, test: 0.4 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&f| !(f >= 0.0 && f.is_finite())) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidArgument(format!(
                "split fractions {parts:?} must be nonnegative and sum to 1"
            )));
        }
        Ok(())
    }

    /// Contiguous `train, val, test` ranges covering `0..len`.
    pub fn ranges(&self, len: usize) -> Result<[Range<usize>; 3]> {
        self.validate()?;
        let a = ((self.train * len as f64).round() as usize).min(len);
        let b = (((self.train + self.val) * len as f64).round() as usize).clamp(a, len);
        Ok([0..a, a..b, b..len])
    }
}

/// Chronological split. Every non-empty segment must hold at least `min_len` steps.
pub fn split(
    ds: &TimeSeriesDataset,
    spec: &SplitSpec,
    min_len: usize,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset, TimeSeriesDataset)> {
    let [tr, va, te] = spec.ranges(ds.len())?;
    for r in [&tr, &va, &te] {
        if !r.is_empty() && r.len() < min_len {
            return Err(DataError::TooShort { len: r.len(), lookback: min_len });
        }
    }
    Ok((ds.slice(tr), ds.slice(va), ds.slice(te)))
}
