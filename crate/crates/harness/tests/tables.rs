use dsse_harness::tables::TABLE_NAMES;
use dsse_harness::{build_tables, emit_tables, MetricsReport, MetricsRow, Table, TableFormat};

fn row(experiment: &str, task: &str, model: &str, scheme: &str, source: &str, ratio: f64, mae: f64) -> MetricsRow {
    MetricsRow {
        experiment: experiment.into(),
        task: task.into(),
        model: model.into(),
        scheme: scheme.into(),
        source: source.into(),
        ratio,
        seed: 0,
        mae,
        rmse: 2.0 * mae,
    }
}

#[test]
fn empty_report_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tables");
    assert!(emit_tables(&MetricsReport::default(), &out, TableFormat::Csv).is_err());
    assert!(!out.exists());
}

#[test]
fn single_row_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = MetricsReport::default();
    r.extend([row("forecasting", "measurement", "transformer", "-", "test", 0.5, 0.125)]);
    let written = emit_tables(&r, dir.path(), TableFormat::Csv).unwrap();
    assert_eq!(written.len(), TABLE_NAMES.len());
    let t = Table::read_csv(dir.path().join("forecasting.csv")).unwrap();
    assert_eq!(t.header, ["model", "metric", "0.50"]);
    assert_eq!(t.rows, [["transformer", "MAE", "1.2500e-1"], ["transformer", "RMSE", "2.5000e-1"]]);
    let empty = Table::read_csv(dir.path().join("mtl.csv")).unwrap();
    assert!(empty.rows.is_empty());
}

#[test]
fn missing_cells_show_a_dash() {
    let mut r = MetricsReport::default();
    r.extend([
        row("schemes", "angle", "cnn_prox", "uwa", "ideal", 0.0, 1.0),
        row("schemes", "magnitude", "cnn_prox", "stl", "ideal", 0.0, 1.0),
    ]);
    let t = build_tables(&r).into_iter().find(|t| t.name == "schemes").unwrap();
    assert_eq!(t.header, ["model", "task", "metric", "uwa", "stl"]);
    assert_eq!(t.rows[0], ["cnn_prox", "angle", "MAE", "1.0000e0", "-"]);
}

#[test]
fn mtl_table_puts_magnitude_first() {
    let mut r = MetricsReport::default();
    r.extend([
        row("mtl", "angle", "mlp", "stl", "ideal", 0.0, 1.0),
        row("mtl", "magnitude", "mlp", "stl", "ideal", 0.0, 1.0),
        row("mtl", "angle", "mlp", "uwa", "ideal", 0.0, 1.0),
        row("mtl", "magnitude", "mlp", "uwa", "ideal", 0.0, 1.0),
    ]);
    let t = build_tables(&r).into_iter().find(|t| t.name == "mtl").unwrap();
    assert_eq!(t.header, ["model", "metric", "magnitude_stl", "magnitude_uwa", "angle_stl", "angle_uwa"]);
}

#[test]
fn output_is_deterministic() {
    let mut r = MetricsReport::default();
    for (i, ratio) in [0.1, 0.3, 0.5].into_iter().enumerate() {
        r.extend([row("pipeline", "angle", "cnn_prox", "uwa", "real", ratio, 0.1 * i as f64 + 0.01)]);
    }
    for format in [TableFormat::Csv, TableFormat::Text] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let pa = emit_tables(&r, a.path(), format).unwrap();
        let pb = emit_tables(&r, b.path(), format).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }
}

#[test]
fn text_columns_align() {
    let mut r = MetricsReport::default();
    r.extend([row("forecasting", "measurement", "persistence", "-", "test", 0.1, 0.5)]);
    let t = build_tables(&r).remove(0).to_text();
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0].find("metric"), lines[2].find("MAE"));
}
