use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(HarnessError::Metrics("empty input".into()));
    }
    if y.len() != yhat.len() {
        return Err(HarnessError::Metrics(format!("length {} against {}", y.len(), yhat.len())));
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok((y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt())
}

/// One evaluated cell of an experiment for a single seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// `forecasting`, `mtl`, `schemes` or `pipeline`.
    pub experiment: String,
    /// `measurement`, `magnitude` or `angle`.
    pub task: String,
    pub model: String,
    pub scheme: String,
    /// Where the estimator input came from (`ideal`, `real`, `<forecaster>_aided`).
    pub source: String,
    pub ratio: f64,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
}

impl MetricsRow {
    fn key(&self) -> RowKey {
        RowKey {
            experiment: self.experiment.clone(),
            task: self.task.clone(),
            model: self.model.clone(),
            scheme: self.scheme.clone(),
            source: self.source.clone(),
            ratio: self.ratio.to_bits(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct RowKey {
    experiment: String,
    task: String,
    model: String,
    scheme: String,
    source: String,
    ratio: u64,
}

/// Median of one experiment cell over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub experiment: String,
    pub task: String,
    pub model: String,
    pub scheme: String,
    pub source: String,
    pub ratio: f64,
    pub mae: f64,
    pub rmse: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl MetricsReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = MetricsRow>) {
        self.rows.extend(rows);
    }

    /// Finite entries with MAE not above RMSE (up to rounding).
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if !(r.mae.is_finite() && r.rmse.is_finite() && r.ratio.is_finite()) {
                return Err(HarnessError::Metrics(format!("non-finite entry {r:?}")));
            }
            if r.mae > r.rmse * (1.0 + 1e-12) {
                return Err(HarnessError::Metrics(format!("MAE above RMSE in {r:?}")));
            }
        }
        Ok(())
    }

    /// Rows of one experiment cell, in report order.
    pub fn select<'a>(&'a self, pred: impl Fn(&MetricsRow) -> bool + 'a) -> impl Iterator<Item = &'a MetricsRow> + 'a {
        self.rows.iter().filter(move |r| pred(r))
    }

    /// Median over seeds per cell; cells keep the order of their first row.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut order: Vec<RowKey> = Vec::new();
        let mut groups: BTreeMap<RowKey, (Vec<f64>, Vec<f64>, &MetricsRow)> = BTreeMap::new();
        for r in &self.rows {
            let k = r.key();
            let g = groups.entry(k.clone()).or_insert_with(|| {
                order.push(k);
                (Vec::new(), Vec::new(), r)
            });
            g.0.push(r.mae);
            g.1.push(r.rmse);
        }
        order
            .iter()
            .map(|k| {
                let (m, s, r) = &groups[k];
                AggregateRow {
                    experiment: r.experiment.clone(),
                    task: r.task.clone(),
                    model: r.model.clone(),
                    scheme: r.scheme.clone(),
                    source: r.source.clone(),
                    ratio: r.ratio,
                    mae: median(m).expect("group is non-empty"),
                    rmse: median(s).expect("group is non-empty"),
                    seeds: m.len(),
                }
            })
            .collect()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["experiment", "task", "model", "scheme", "source", "ratio", "seed", "mae", "rmse"])?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, seed: u64, mae: f64, rmse: f64) -> MetricsRow {
        MetricsRow {
            experiment: "mtl".into(),
            task: "angle".into(),
            model: model.into(),
            scheme: "uwa".into(),
            source: "ideal".into(),
            ratio: 0.0,
            seed,
            mae,
            rmse,
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn aggregate_groups_by_cell_in_first_seen_order() {
        let rep = MetricsReport {
            rows: vec![row("b", 0, 1.0, 2.0), row("a", 0, 5.0, 6.0), row("b", 1, 3.0, 4.0), row("b", 2, 2.0, 9.0)],
        };
        let agg = rep.aggregate();
        assert_eq!(agg.len(), 2);
        assert_eq!((agg[0].model.as_str(), agg[0].mae, agg[0].rmse, agg[0].seeds), ("b", 2.0, 4.0, 3));
        assert_eq!(agg[1].model, "a");
    }

    #[test]
    fn validation_catches_bad_rows() {
        assert!(MetricsReport { rows: vec![row("a", 0, 2.0, 1.0)] }.validate().is_err());
        assert!(MetricsReport { rows: vec![row("a", 0, f64::NAN, 1.0)] }.validate().is_err());
        assert!(MetricsReport { rows: vec![row("a", 0, 1.0, 1.0)] }.validate().is_ok());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rep = MetricsReport { rows: vec![row("a", 3, 0.1 + 0.2, std::f64::consts::PI), row("b", 4, 1e-7, 2.5e-7)] };
        rep.write_csv(&p).unwrap();
        assert_eq!(MetricsReport::read_csv(&p).unwrap(), rep);
    }
}
