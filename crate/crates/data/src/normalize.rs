use crate::dataset::TimeSeriesDataset;
use crate::error::{DataError, Result};

/// Below this a channel is treated as constant and left unscaled.
pub const MIN_STD: f64 = 1e-12;

/// Per-channel affine standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Population mean/std per column over entries where `observed(row, col)` holds.
    pub fn fit_with<'a>(
        width: usize,
        rows: impl IntoIterator<Item = &'a [f64]>,
        observed: impl Fn(usize, usize) -> bool,
    ) -> Self {
        let mut sum = vec![0.0; width];
        let mut count = vec![0usize; width];
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for (r, row) in rows.iter().enumerate() {
            for c in 0..width {
                if observed(r, c) {
                    sum[c] += row[c];
                    count[c] += 1;
                }
            }
        }
        let mean: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
            .collect();
        let mut sq = vec![0.0; width];
        for (r, row) in rows.iter().enumerate() {
            for c in 0..width {
                if observed(r, c) {
                    sq[c] += (row[c] - mean[c]).powi(2);
                }
            }
        }
        let std = (0..width)
            .map(|c| {
                let s = if count[c] > 0 { (sq[c] / count[c] as f64).sqrt() } else { 0.0 };
                if s < MIN_STD {
                    log::warn!("channel {c} is constant over the fitting data; using std 1");
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn fit_rows<'a>(width: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        Self::fit_with(width, rows, |_, _| true)
    }

    /// Measurement statistics over observed cells only.
    pub fn fit_measurements(ds: &TimeSeriesDataset) -> Self {
        Self::fit_with(ds.channel_count(), ds.frames.iter().map(|f| f.values.as_slice()), |r, c| {
            ds.frames[r].mask[c]
        })
    }

    /// Statistics of `[V, θ]` state vectors.
    pub fn fit_states(ds: &TimeSeriesDataset) -> Self {
        let rows: Vec<Vec<f64>> = ds.states.iter().map(|s| s.to_vec()).collect();
        Self::fit_rows(2 * ds.bus_count(), rows.iter().map(|r| r.as_slice()))
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, got: usize) -> Result<()> {
        if got != self.width() {
            return Err(DataError::ChannelMismatch { expected: self.width(), got });
        }
        Ok(())
    }

    pub fn apply(&self, x: &mut [f64]) -> Result<()> {
        self.check(x.len())?;
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
        Ok(())
    }

    pub fn invert(&self, x: &mut [f64]) -> Result<()> {
        self.check(x.len())?;
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
        Ok(())
    }

    /// Restricts to the given columns.
    pub fn select(&self, cols: &[usize]) -> Self {
        Self {
            mean: cols.iter().map(|&c| self.mean[c]).collect(),
            std: cols.iter().map(|&c| self.std[c]).collect(),
        }
    }
}

/// Standardizes every frame's values (hidden ones included). Masks are untouched.
pub fn normalize(ds: &TimeSeriesDataset, stats: &NormalizationStats) -> Result<TimeSeriesDataset> {
    let mut out = ds.clone();
    for f in &mut out.frames {
        stats.apply(&mut f.values)?;
    }
    Ok(out)
}

pub fn denormalize(ds: &TimeSeriesDataset, stats: &NormalizationStats) -> Result<TimeSeriesDataset> {
    let mut out = ds.clone();
    for f in &mut out.frames {
        stats.invert(&mut f.values)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_falls_back_to_unit_std() {
        let rows = [vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 3.0]];
        let s = NormalizationStats::fit_rows(2, rows.iter().map(|r| r.as_slice()));
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.mean, vec![3.0, 2.0]);
        assert!((s.std[1] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let mut x = vec![3.0, 4.0];
        s.apply(&mut x).unwrap();
        assert_eq!(x[0], 0.0);
        assert!(s.apply(&mut [1.0]).is_err());
    }

    #[test]
    fn masked_cells_do_not_enter_the_fit() {
        let rows = [vec![1.0], vec![100.0], vec![3.0]];
        let s = NormalizationStats::fit_with(1, rows.iter().map(|r| r.as_slice()), |r, _| r != 1);
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.std, vec![1.0]);
    }
}
