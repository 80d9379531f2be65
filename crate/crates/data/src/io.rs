//! CSV exchange format.
//!
//! Measurements: header of descriptor ids (optionally preceded by a
//! `timestamp` column of unix seconds), one row per step, missing cells as
//! `NaN` or empty. States: `V_0..V_{n-1}, theta_0..theta_{n-1}`.
//! Descriptors: `kind,location` rows in column order.

use std::path::Path;

use dsse_grid::{MeasurementDescriptor, MeasurementFrame, StateVector};

use crate::dataset::{TimeSeriesDataset, DEFAULT_START_UNIX, DEFAULT_STEP_SECONDS};
use crate::error::{DataError, Result};

const TIMESTAMP: &str = "timestamp";

fn fmt_err(path: &Path, msg: impl Into<String>) -> DataError {
    DataError::Format { path: path.display().to_string(), msg: msg.into() }
}

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    fmt_err(path, e.to_string())
}

pub fn export_csv(
    ds: &TimeSeriesDataset,
    measurements: impl AsRef<Path>,
    states: impl AsRef<Path>,
    descriptors: impl AsRef<Path>,
) -> Result<()> {
    let mp = measurements.as_ref();
    let mut w = csv::Writer::from_path(mp).map_err(|e| csv_err(mp, e))?;
    let mut header = vec![TIMESTAMP.to_string()];
    header.extend(ds.descriptors.iter().map(|d| d.id()));
    w.write_record(&header).map_err(|e| csv_err(mp, e))?;
    for (t, f) in ds.frames.iter().enumerate() {
        let mut row = vec![ds.timestamp(t).to_string()];
        row.extend(
            f.values
                .iter()
                .zip(&f.mask)
                .map(|(v, &m)| if m { v.to_string() } else { "NaN".to_string() }),
        );
        w.write_record(&row).map_err(|e| csv_err(mp, e))?;
    }
    w.flush()?;

    let sp = states.as_ref();
    let mut w = csv::Writer::from_path(sp).map_err(|e| csv_err(sp, e))?;
    let n = ds.bus_count();
    let header: Vec<String> = (0..n).map(|i| format!("V_{i}")).chain((0..n).map(|i| format!("theta_{i}"))).collect();
    w.write_record(&header).map_err(|e| csv_err(sp, e))?;
    for s in &ds.states {
        w.write_record(s.to_vec().iter().map(|v| v.to_string())).map_err(|e| csv_err(sp, e))?;
    }
    w.flush()?;

    dsse_grid::io::save_descriptors(&ds.descriptors, descriptors)?;
    Ok(())
}

fn parse_cell(path: &Path, row: usize, cell: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| fmt_err(path, format!("row {row}: cannot parse {cell:?}")))?;
    if !v.is_finite() {
        return Err(fmt_err(path, format!("row {row}: non-finite value {cell:?}")));
    }
    Ok(Some(v))
}

/// Reads a dataset. Missing cells become `mask = false` with value 0.
pub fn ingest_csv(
    measurements: impl AsRef<Path>,
    states: impl AsRef<Path>,
    descriptors: impl AsRef<Path>,
) -> Result<TimeSeriesDataset> {
    let descriptors: Vec<MeasurementDescriptor> = dsse_grid::io::load_descriptors(descriptors)?;
    let m = descriptors.len();

    let mp = measurements.as_ref();
    let mut r = csv::Reader::from_path(mp).map_err(|e| csv_err(mp, e))?;
    let header = r.headers().map_err(|e| csv_err(mp, e))?.clone();
    let has_time = header.get(0) == Some(TIMESTAMP);
    let offset = usize::from(has_time);
    if header.len() != m + offset {
        return Err(fmt_err(mp, format!("{} data columns for {m} descriptors", header.len() - offset)));
    }
    for (k, d) in descriptors.iter().enumerate() {
        if header[k + offset].trim() != d.id() {
            return Err(fmt_err(mp, format!("column {k} is {:?}, expected {}", &header[k + offset], d.id())));
        }
    }
    let mut frames = Vec::new();
    let mut stamps = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(mp, e))?;
        if has_time {
            let ts: i64 = rec[0]
                .trim()
                .parse()
                .map_err(|_| fmt_err(mp, format!("row {row}: bad timestamp {:?}", &rec[0])))?;
            stamps.push(ts);
        }
        let mut values = Vec::with_capacity(m);
        let mut mask = Vec::with_capacity(m);
        for cell in rec.iter().skip(offset) {
            let v = parse_cell(mp, row, cell)?;
            values.push(v.unwrap_or(0.0));
            mask.push(v.is_some());
        }
        frames.push(MeasurementFrame { values, mask });
    }

    let sp = states.as_ref();
    let mut r = csv::Reader::from_path(sp).map_err(|e| csv_err(sp, e))?;
    let width = r.headers().map_err(|e| csv_err(sp, e))?.len();
    if width % 2 != 0 {
        return Err(fmt_err(sp, format!("odd column count {width}")));
    }
    let mut state_rows = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(sp, e))?;
        let vals = rec
            .iter()
            .map(|c| parse_cell(sp, row, c)?.ok_or_else(|| fmt_err(sp, format!("row {row}: missing state value"))))
            .collect::<Result<Vec<f64>>>()?;
        state_rows.push(StateVector::from_slice(&vals)?);
    }
    if state_rows.len() != frames.len() {
        return Err(fmt_err(sp, format!("{} state rows for {} measurement rows", state_rows.len(), frames.len())));
    }

    let mut ds = TimeSeriesDataset::new(descriptors, frames, state_rows)?;
    ds.start_unix = DEFAULT_START_UNIX;
    ds.step_seconds = DEFAULT_STEP_SECONDS;
    if let Some(&first) = stamps.first() {
        ds.start_unix = first;
        if stamps.len() > 1 {
            let step = stamps[1] - first;
            if step <= 0 || stamps.windows(2).any(|w| w[1] - w[0] != step) {
                return Err(fmt_err(mp, "timestamps are not uniformly spaced"));
            }
            ds.step_seconds = step;
        }
    }
    Ok(ds)
}
