use dsse_grid::MeasurementFrame;

/// Per channel, the most recent observed value in `window` (last frame
/// included), falling back to `fallback` when the channel is never observed.
pub fn persistence_forecast(window: &[MeasurementFrame], fallback: &[f64]) -> Vec<f64> {
    let m = fallback.len();
    (0..m)
        .map(|c| {
            window
                .iter()
                .rev()
                .find(|f| f.mask[c])
                .map_or(fallback[c], |f| f.values[c])
        })
        .collect()
}
