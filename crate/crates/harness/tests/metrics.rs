use dsse_harness::{mae, median, rmse, MetricsReport, MetricsRow};
use proptest::prelude::*;

fn row(model: &str, seed: u64, mae: f64, rmse: f64) -> MetricsRow {
    MetricsRow {
        experiment: "forecasting".into(),
        task: "measurement".into(),
        model: model.into(),
        scheme: "-".into(),
        source: "test".into(),
        ratio: 0.5,
        seed,
        mae,
        rmse,
    }
}

#[test]
fn hand_computed_errors() {
    assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(mae(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
    assert_eq!(rmse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
    assert_eq!(mae(&[0.0, 0.0], &[0.0, 2.0]).unwrap(), 1.0);
    assert_eq!(rmse(&[0.0, 0.0], &[0.0, 2.0]).unwrap(), 2f64.sqrt());
    assert_eq!(rmse(&[3.0], &[0.0]).unwrap(), 3.0);
}

#[test]
fn empty_or_mismatched_input_is_an_error() {
    assert!(mae(&[], &[]).is_err());
    assert!(rmse(&[], &[]).is_err());
    assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    assert!(rmse(&[1.0, 2.0], &[1.0]).is_err());
}

#[test]
fn median_of_odd_and_even_counts() {
    assert_eq!(median(&[]), None);
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
}

#[test]
fn aggregate_takes_medians_per_cell() {
    let mut r = MetricsReport::default();
    r.extend([row("a", 0, 1.0, 2.0), row("a", 1, 3.0, 4.0), row("a", 2, 2.0, 9.0), row("b", 0, 0.5, 0.5)]);
    let agg = r.aggregate();
    assert_eq!(agg.len(), 2);
    assert_eq!((agg[0].model.as_str(), agg[0].mae, agg[0].rmse, agg[0].seeds), ("a", 2.0, 4.0, 3));
    assert_eq!((agg[1].model.as_str(), agg[1].seeds), ("b", 1));
}

#[test]
fn validate_rejects_bad_rows() {
    let mut r = MetricsReport::default();
    r.extend([row("a", 0, 1.0, 2.0)]);
    assert!(r.validate().is_ok());
    r.extend([row("a", 1, f64::NAN, 1.0)]);
    assert!(r.validate().is_err());
    let mut r = MetricsReport::default();
    r.extend([row("a", 0, 2.0, 1.0)]);
    assert!(r.validate().is_err());
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = MetricsReport::default();
    r.extend([row("a", 0, 0.1, 0.2), row("b", 1, 1e-9, 3.5e-7)]);
    let p = dir.path().join("m.csv");
    r.write_csv(&p).unwrap();
    assert_eq!(MetricsReport::read_csv(&p).unwrap(), r);
}

proptest! {
    #[test]
    fn mae_never_exceeds_rmse(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..64)) {
        let (y, yh): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (m, r) = (mae(&y, &yh).unwrap(), rmse(&y, &yh).unwrap());
        prop_assert!(m >= 0.0);
        prop_assert!(m <= r * (1.0 + 1e-12));
    }

    #[test]
    fn errors_are_symmetric(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..64)) {
        let (y, yh): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert_eq!(mae(&y, &yh).unwrap(), mae(&yh, &y).unwrap());
        prop_assert_eq!(rmse(&y, &yh).unwrap(), rmse(&yh, &y).unwrap());
    }

    #[test]
    fn median_lies_within_range(v in prop::collection::vec(-1e6f64..1e6, 1..32)) {
        let m = median(&v).unwrap();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= m && m <= hi);
    }
}
