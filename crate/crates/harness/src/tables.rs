//! Summary tables over the seed medians of a report: forecasting error per
//! missing ratio, STL against MTL per model, the loss-weighting schemes, and
//! estimation error per input source.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::metrics::{AggregateRow, MetricsReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    /// Space-aligned columns for reading in a terminal.
    Text,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Text => "txt",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub const TABLE_NAMES: [&str; 4] = ["forecasting", "mtl", "schemes", "sources"];

fn fmt_value(v: f64) -> String {
    format!("{v:.4e}")
}

/// Pivot: one row per (row key, metric), one column per column key.
fn pivot(
    name: &str,
    key_names: &[&str],
    rows: &[&AggregateRow],
    row_key: impl Fn(&AggregateRow) -> Vec<String>,
    col_key: impl Fn(&AggregateRow) -> String,
    col_rank: impl Fn(&AggregateRow) -> usize,
) -> Table {
    let mut rkeys: Vec<Vec<String>> = Vec::new();
    let mut ckeys: Vec<(usize, String)> = Vec::new();
    for r in rows {
        let k = row_key(r);
        if !rkeys.contains(&k) {
            rkeys.push(k);
        }
        let c = (col_rank(r), col_key(r));
        if !ckeys.contains(&c) {
            ckeys.push(c);
        }
    }
    // Stable: first-seen order within a rank.
    ckeys.sort_by_key(|c| c.0);
    let ckeys: Vec<String> = ckeys.into_iter().map(|c| c.1).collect();
    let mut header: Vec<String> = key_names.iter().map(|s| s.to_string()).collect();
    header.push("metric".into());
    header.extend(ckeys.iter().cloned());
    let mut out = Vec::new();
    for k in &rkeys {
        for (metric, get) in [("MAE", (|r: &AggregateRow| r.mae) as fn(&AggregateRow) -> f64), ("RMSE", |r| r.rmse)] {
            let mut line = k.clone();
            line.push(metric.into());
            for c in &ckeys {
                let cell = rows.iter().find(|r| &row_key(r) == k && &col_key(r) == c);
                line.push(cell.map_or_else(|| "-".into(), |r| fmt_value(get(r))));
            }
            out.push(line);
        }
    }
    Table { name: name.into(), header, rows: out }
}

/// The four summary tables, possibly with no rows.
pub fn build_tables(report: &MetricsReport) -> Vec<Table> {
    let agg = report.aggregate();
    let of = |e: &str| agg.iter().filter(|r| r.experiment == e).collect::<Vec<_>>();
    vec![
        pivot(
            "forecasting",
            &["model"],
            &of("forecasting"),
            |r| vec![r.model.clone()],
            |r| format!("{:.2}", r.ratio),
            |_| 0,
        ),
        pivot(
            "mtl",
            &["model"],
            &of("mtl"),
            |r| vec![r.model.clone()],
            |r| format!("{}_{}", r.task, r.scheme),
            |r| usize::from(r.task != "magnitude"),
        ),
        pivot(
            "schemes",
            &["model", "task"],
            &of("schemes"),
            |r| vec![r.model.clone(), r.task.clone()],
            |r| r.scheme.clone(),
            |_| 0,
        ),
        pivot(
            "sources",
            &["ratio", "task", "model"],
            &of("pipeline"),
            |r| vec![format!("{:.2}", r.ratio), r.task.clone(), r.model.clone()],
            |r| r.source.clone(),
            |_| 0,
        ),
    ]
}

impl Table {
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_text(&self) -> String {
        let cols = self.header.len();
        let width: Vec<usize> = (0..cols)
            .map(|c| self.rows.iter().map(|r| r[c].len()).chain([self.header[c].len()]).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        let mut line = |cells: &[String]| {
            let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(s, "{}", parts.join("  ").trim_end());
        };
        line(&self.header);
        line(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
        for r in &self.rows {
            line(r);
        }
        s
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| Ok(rec?.iter().map(String::from).collect()))
            .collect::<Result<Vec<Vec<String>>>>()?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self { name, header, rows })
    }
}

/// Writes `<dir>/<table>.<ext>` for every table; fails without writing on an
/// empty report.
pub fn emit_tables(report: &MetricsReport, dir: impl AsRef<Path>, format: TableFormat) -> Result<Vec<PathBuf>> {
    if report.is_empty() {
        return Err(HarnessError::Metrics("cannot emit tables for an empty report".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in build_tables(report) {
        let p = dir.join(format!("{}.{}", t.name, format.extension()));
        let body = match format {
            TableFormat::Csv => t.to_csv_string()?,
            TableFormat::Text => t.to_text(),
        };
        fs::write(&p, body)?;
        written.push(p);
    }
    Ok(written)
}
