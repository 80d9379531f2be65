use dsse_data::{
    corrupt_missing, denormalize, export_csv, ingest_csv, make_windows, normalize, split, synthesize_injections,
    synthesize_profiles, NormalizationStats, ProfileConfig, SplitSpec, TimeSeriesDataset, WindowSpec,
};
use dsse_grid::{generate_feeder, place_sensors, MeasurementKind, Network};
use proptest::prelude::*;

fn feeder() -> Network {
    generate_feeder(15, 3, &Default::default()).unwrap()
}

fn dataset(steps: usize, seed: u64) -> TimeSeriesDataset {
    let net = feeder();
    let d = place_sensors(&net, 0.6, 1).unwrap();
    synthesize_profiles(&net, &d, steps, seed, &ProfileConfig::default()).unwrap()
}

#[test]
fn zero_load_single_step_is_flat() {
    let net = feeder();
    let d = place_sensors(&net, 1.0, 0).unwrap();
    let cfg = ProfileConfig { load_scale: 0.0, ..Default::default() };
    let ds = synthesize_profiles(&net, &d, 1, 0, &cfg).unwrap();
    assert!(ds.states[0].v.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    assert!(ds.states[0].theta.iter().all(|&t| t.abs() < 1e-12));
    assert!(ds.frames[0].values.iter().all(|&v| v.abs() < 1e-12));
}

#[test]
fn synthesis_is_bit_deterministic() {
    assert_eq!(dataset(200, 9), dataset(200, 9));
    assert_ne!(dataset(200, 9), dataset(200, 10));
}

fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let cov: f64 = (0..n - lag).map(|t| (x[t] - mean) * (x[t + lag] - mean)).sum();
    cov / var
}

#[test]
fn daily_peaks_recur_at_lag_96() {
    let net = feeder();
    let profile = synthesize_injections(&net, 96 * 14, 4, &ProfileConfig::default()).unwrap();
    let bus = (1..15).find(|b| !profile.generator_buses.contains(b)).unwrap();
    let demand: Vec<f64> = profile.p.iter().map(|p| -p[bus]).collect();
    let day = autocorrelation(&demand, 96);
    let half = autocorrelation(&demand, 48);
    assert!(day > 0.6, "lag-96 autocorrelation {day}");
    assert!(day > half + 0.5, "lag-96 {day} vs lag-48 {half}");
    for d in 1..13 {
        let peak = |k: usize| {
            (k * 96..(k + 1) * 96).max_by(|&a, &b| demand[a].partial_cmp(&demand[b]).unwrap()).unwrap() % 96
        };
        assert!(peak(d).abs_diff(peak(0)) <= 12, "day {d} peaks at {} vs {}", peak(d), peak(0));
    }
}

#[test]
fn csv_round_trip() {
    let ds = dataset(50, 2);
    let dir = tempfile::tempdir().unwrap();
    let (m, s, d) = (dir.path().join("m.csv"), dir.path().join("s.csv"), dir.path().join("d.csv"));
    export_csv(&ds, &m, &s, &d).unwrap();
    assert_eq!(ingest_csv(&m, &s, &d).unwrap(), ds);

    let c = corrupt_missing(&ds, 0.2, 5).unwrap();
    export_csv(&c, &m, &s, &d).unwrap();
    let back = ingest_csv(&m, &s, &d).unwrap();
    for (a, b) in back.frames.iter().zip(&c.frames) {
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.values, b.zero_filled());
    }
    assert_eq!(back.states, c.states);
}

#[test]
fn csv_ingest_errors_and_nan_cells() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    std::fs::write(p("d.csv"), "kind,location\np_inj,0\nq_inj,0\n").unwrap();
    std::fs::write(p("s.csv"), "V_0,V_1,theta_0,theta_1\n1,0.99,0,-0.01\n1,0.98,0,-0.02\n").unwrap();

    std::fs::write(p("m.csv"), "p_inj:0,q_inj:0\n0.5,NaN\n,0.25\n").unwrap();
    let ds = ingest_csv(p("m.csv"), p("s.csv"), p("d.csv")).unwrap();
    assert_eq!(ds.frames[0].mask, vec![true, false]);
    assert_eq!(ds.frames[1].mask, vec![false, true]);
    assert_eq!(ds.frames[1].values, vec![0.0, 0.25]);

    std::fs::write(p("m.csv"), "p_inj:0,q_inj:0\n0.5,0.1\n0.25\n").unwrap();
    assert!(ingest_csv(p("m.csv"), p("s.csv"), p("d.csv")).is_err(), "ragged row");
    std::fs::write(p("m.csv"), "p_inj:0,q_inj:0\n0.5,abc\n0.1,0.2\n").unwrap();
    assert!(ingest_csv(p("m.csv"), p("s.csv"), p("d.csv")).is_err(), "bad number");
    std::fs::write(p("m.csv"), "p_inj:0\n0.5\n0.1\n").unwrap();
    assert!(ingest_csv(p("m.csv"), p("s.csv"), p("d.csv")).is_err(), "column mismatch");
    std::fs::write(p("m.csv"), "p_inj:0,q_inj:0\n0.5,0.1\n").unwrap();
    assert!(ingest_csv(p("m.csv"), p("s.csv"), p("d.csv")).is_err(), "row count mismatch");
}

#[test]
fn windows_target_ideal_frames() {
    let ds = dataset(120, 1);
    let c = corrupt_missing(&ds, 0.5, 1).unwrap();
    let w = make_windows(&c, WindowSpec::new(96, 1).unwrap()).unwrap();
    assert_eq!(w.len(), 25);
    for win in &w {
        assert_eq!(win.steps().last(), Some(win.target));
        assert_eq!(c.frames[win.target].values, ds.frames[win.target].values);
    }
}

#[test]
fn split_fractions_and_minimum_length() {
    let ds = dataset(100, 1);
    let (tr, va, te) = split(&ds, &SplitSpec::default(), 1).unwrap();
    assert_eq!((tr.len(), va.len(), te.len()), (50, 10, 40));
    assert_eq!(te.start_unix, ds.timestamp(60));
    assert_eq!(va.frames[0], ds.frames[50]);
    assert!(split(&ds, &SplitSpec::default(), 20).is_err());
    let (tr, va, te) = split(&ds, &SplitSpec { train: 1.0, val: 0.0, test: 0.0 }, 96).unwrap();
    assert_eq!((tr.len(), va.len(), te.len()), (100, 0, 0));
}

#[test]
fn normalization_round_trip_and_training_moments() {
    let ds = corrupt_missing(&dataset(300, 6), 0.3, 2).unwrap();
    let (tr, _, te) = split(&ds, &SplitSpec::default(), 1).unwrap();
    let stats = NormalizationStats::fit_measurements(&tr);
    let back = denormalize(&normalize(&te, &stats).unwrap(), &stats).unwrap();
    for (a, b) in back.frames.iter().zip(&te.frames) {
        assert_eq!(a.mask, b.mask);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    let n = normalize(&tr, &stats).unwrap();
    let moments = NormalizationStats::fit_measurements(&n);
    for c in 0..n.channel_count() {
        assert!(moments.mean[c].abs() < 1e-9, "channel {c} mean {}", moments.mean[c]);
        assert!((moments.std[c] - 1.0).abs() < 1e-9, "channel {c} std {}", moments.std[c]);
    }
}

#[test]
fn constant_channel_is_left_in_place() {
    let net = feeder();
    let d = place_sensors(&net, 1.0, 0).unwrap();
    let ds = synthesize_profiles(&net, &d, 20, 0, &ProfileConfig::default()).unwrap();
    // Slack angle is identically zero; its injection is not, so use states.
    let s = NormalizationStats::fit_states(&ds);
    assert_eq!(s.std[15 + net.slack()], 1.0);
    assert_eq!(s.mean[15 + net.slack()], 0.0);
    assert!(d.iter().any(|x| x.kind == MeasurementKind::PInj));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn corruption_count_and_preservation(ratio in 0.0f64..=1.0, seed in 0u64..500) {
        let ds = dataset(40, 0);
        let c = corrupt_missing(&ds, ratio, seed).unwrap();
        let total = ds.len() * ds.channel_count();
        prop_assert_eq!(c.missing_count(), (ratio * total as f64).round() as usize);
        for (a, b) in c.frames.iter().zip(&ds.frames) {
            for ((x, y), &m) in a.values.iter().zip(&b.values).zip(&a.mask) {
                if m {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn splits_are_chronological_and_exhaustive(len in 1usize..500, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (train, val) = (a, (1.0 - a) * b);
        let spec = SplitSpec { train, val, test: 1.0 - train - val };
        let [r0, r1, r2] = spec.ranges(len).unwrap();
        prop_assert_eq!(r0.start, 0);
        prop_assert_eq!(r0.end, r1.start);
        prop_assert_eq!(r1.end, r2.start);
        prop_assert_eq!(r2.end, len);
    }
}
