use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::TimeSeriesDataset;
use crate::error::{DataError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum MissingMode {
    /// Cells drawn uniformly without replacement over all (time, channel) pairs.
    #[default]
    Iid,
    /// Contiguous per-channel runs with geometric lengths of the given mean.
    Burst { mean_length: f64 },
}

/// Number of cells masked for a ratio over `total` entries.
pub fn missing_target(total: usize, ratio: f64) -> usize {
    ((ratio * total as f64).round() as usize).min(total)
}

/// Clears mask bits on exactly `round(ratio · T · m)` cells. Values are kept so
/// evaluation can still see the ideal measurement; entries already missing
/// stay missing and count toward the total.
pub fn corrupt_missing(ds: &TimeSeriesDataset, ratio: f64, seed: u64) -> Result<TimeSeriesDataset> {
    corrupt_missing_with(ds, ratio, seed, MissingMode::Iid)
}

pub fn corrupt_missing_with(
    ds: &TimeSeriesDataset,
    ratio: f64,
    seed: u64,
    mode: MissingMode,
) -> Result<TimeSeriesDataset> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(DataError::InvalidArgument(format!("missing ratio {ratio} outside [0, 1]")));
    }
    let m = ds.channel_count();
    let total = ds.len() * m;
    let target = missing_target(total, ratio);
    let mut out = ds.clone();
    let already = ds.missing_count();
    if target <= already || total == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Cell index = t * m + channel.
    let open: Vec<usize> = (0..total).filter(|&c| ds.frames[c / m].mask[c % m]).collect();
    let need = target - already;
    match mode {
        MissingMode::Iid => {
            for k in sample(&mut rng, open.len(), need) {
                let c = open[k];
                out.frames[c / m].mask[c % m] = false;
            }
        }
        MissingMode::Burst { mean_length } => {
            if !(mean_length >= 1.0 && mean_length.is_finite()) {
                return Err(DataError::InvalidArgument(format!("burst mean length {mean_length}")));
            }
            let stop = 1.0 / mean_length;
            let mut masked = 0;
            while masked < need {
                let c = open[rng.random_range(0..open.len())];
                let (mut t, ch) = (c / m, c % m);
                loop {
                    let cell = &mut out.frames[t].mask[ch];
                    if *cell {
                        *cell = false;
                        masked += 1;
                    }
                    t += 1;
                    if masked == need || t == ds.len() || rng.random::<f64>() < stop {
                        break;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dsse_grid::{MeasurementDescriptor, MeasurementFrame, StateVector};

    fn dataset(channels: usize, steps: usize) -> TimeSeriesDataset {
        let d: Vec<MeasurementDescriptor> = (0..channels).map(|i| format!("p_inj:{i}").parse().unwrap()).collect();
        let frames = (0..steps)
            .map(|t| MeasurementFrame::observed((0..channels).map(|c| (t * channels + c) as f64).collect()))
            .collect();
        let states = vec![StateVector::flat(2, 1.0); steps];
        TimeSeriesDataset::new(d, frames, states).unwrap()
    }

    #[test]
    fn extreme_ratios() {
        let ds = dataset(4, 10);
        assert_eq!(corrupt_missing(&ds, 0.0, 1).unwrap(), ds);
        let all = corrupt_missing(&ds, 1.0, 1).unwrap();
        assert_eq!(all.missing_count(), 40);
        assert!(corrupt_missing(&ds, 1.5, 1).is_err());
    }

    #[test]
    fn exact_count_and_values_kept() {
        let ds = dataset(10, 100);
        for mode in [MissingMode::Iid, MissingMode::Burst { mean_length: 6.0 }] {
            let c = corrupt_missing_with(&ds, 0.3, 7, mode).unwrap();
            assert_eq!(c.missing_count(), 300);
            for (a, b) in c.frames.iter().zip(&ds.frames) {
                assert_eq!(a.values, b.values);
            }
            assert_eq!(c, corrupt_missing_with(&ds, 0.3, 7, mode).unwrap());
        }
    }

    #[test]
    fn bursts_are_longer_than_iid_runs() {
        let ds = dataset(5, 400);
        let runs = |c: &TimeSeriesDataset| {
            let mut starts = 0;
            for ch in 0..5 {
                for t in 0..c.len() {
                    if !c.frames[t].mask[ch] && (t == 0 || c.frames[t - 1].mask[ch]) {
                        starts += 1;
                    }
                }
            }
            c.missing_count() as f64 / starts as f64
        };
        let iid = corrupt_missing(&ds, 0.2, 3).unwrap();
        let burst = corrupt_missing_with(&ds, 0.2, 3, MissingMode::Burst { mean_length: 8.0 }).unwrap();
        assert!(runs(&burst) > 2.0 * runs(&iid));
    }
}
