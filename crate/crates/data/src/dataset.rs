use chrono::{DateTime, Datelike, Timelike, Utc};
use dsse_grid::{MeasurementDescriptor, MeasurementFrame, StateVector};

use crate::error::{DataError, Result};

/// 2024-01-01 00:00 UTC, a Monday.
pub const DEFAULT_START_UNIX: i64 = 1_704_067_200;
/// Fifteen minutes.
pub const DEFAULT_STEP_SECONDS: i64 = 900;
pub const STEPS_PER_DAY: usize = 96;

/// Measurement frames and true states on a uniform time grid.
///
/// Corruption only clears mask bits: `frames[t].values` always hold the ideal
/// measurement so evaluation can compare against it. Consumers that model a
/// real sensor stream must go through [`MeasurementFrame::zero_filled`].
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    pub start_unix: i64,
    pub step_seconds: i64,
    pub descriptors: Vec<MeasurementDescriptor>,
    pub frames: Vec<MeasurementFrame>,
    pub states: Vec<StateVector>,
}

impl TimeSeriesDataset {
    pub fn new(
        descriptors: Vec<MeasurementDescriptor>,
        frames: Vec<MeasurementFrame>,
        states: Vec<StateVector>,
    ) -> Result<Self> {
        let ds = Self {
            start_unix: DEFAULT_START_UNIX,
            step_seconds: DEFAULT_STEP_SECONDS,
            descriptors,
            frames,
            states,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.states.len() {
            return Err(DataError::InvalidArgument(format!(
                "{} frames but {} states",
                self.frames.len(),
                self.states.len()
            )));
        }
        if self.step_seconds <= 0 {
            return Err(DataError::InvalidArgument(format!("step of {} s", self.step_seconds)));
        }
        let m = self.descriptors.len();
        for (t, f) in self.frames.iter().enumerate() {
            if f.values.len() != m || f.mask.len() != m {
                return Err(DataError::InvalidArgument(format!(
                    "frame {t} has {} values and {} mask bits, expected {m}",
                    f.values.len(),
                    f.mask.len()
                )));
            }
        }
        if let Some(first) = self.states.first() {
            let n = first.len();
            if let Some(t) = self.states.iter().position(|s| s.v.len() != n || s.theta.len() != n) {
                return Err(DataError::InvalidArgument(format!("state {t} has a different bus count")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn channel_count(&self) -> usize {
        self.descriptors.len()
    }

    pub fn bus_count(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn timestamp(&self, t: usize) -> i64 {
        self.start_unix + t as i64 * self.step_seconds
    }

    pub fn calendar(&self, t: usize) -> Calendar {
        Calendar::from_unix(self.timestamp(t))
    }

    /// Steps `range`, keeping the absolute start time.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            start_unix: self.timestamp(range.start),
            step_seconds: self.step_seconds,
            descriptors: self.descriptors.clone(),
            frames: self.frames[range.clone()].to_vec(),
            states: self.states[range].to_vec(),
        }
    }

    /// Same data with every mask bit set.
    pub fn ideal(&self) -> Self {
        let mut out = self.clone();
        for f in &mut out.frames {
            f.mask.iter_mut().for_each(|m| *m = true);
        }
        out
    }

    pub fn missing_count(&self) -> usize {
        self.frames.iter().map(|f| f.missing_count()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

impl Season {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Winter => "winter",
            Self::Spring => "spring",
            Self::Summer => "summer",
            Self::Autumn => "autumn",
        }
    }
}

/// Calendar fields of a UTC timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Calendar {
    /// Monday = 0.
    pub weekday: u32,
    pub hour: u32,
    pub minute: u32,
    pub month: u32,
}

impl Calendar {
    pub fn from_unix(secs: i64) -> Self {
        let dt: DateTime<Utc> = DateTime::from_timestamp(secs, 0).unwrap_or_default();
        Self {
            weekday: dt.weekday().num_days_from_monday(),
            hour: dt.hour(),
            minute: dt.minute(),
            month: dt.month(),
        }
    }

    pub fn is_weekend(&self) -> bool {
        self.weekday >= 5
    }

    /// Fractional hour of day.
    pub fn hour_of_day(&self) -> f64 {
        self.hour as f64 + self.minute as f64 / 60.0
    }

    pub fn season(&self) -> Season {
        match self.month {
            12 | 1 | 2 => Season::Winter,
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            _ => Season::Autumn,
        }
    }

    pub fn weekday_name(&self) -> &'static str {
        ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"][self.weekday as usize]
    }
}
