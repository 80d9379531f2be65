use dsse_data::{synthesize_profiles, ProfileConfig, TimeSeriesDataset};
use dsse_estimator::*;
use dsse_grid::{generate_feeder, place_sensors, MeasurementFrame};
use dsse_tensor::{Tape, Tensor, Var};
use proptest::prelude::*;

fn scalar(tape: &mut Tape, v: f64) -> Var {
    tape.leaf(Tensor::scalar(v), true)
}

fn uwa_at(l1: f64, l2: f64, s1: f64, s2: f64) -> f64 {
    let mut tape = Tape::new();
    let vars = [l1, l2, s1, s2].map(|v| scalar(&mut tape, v));
    let l = uwa_loss(&mut tape, vars[0], vars[1], vars[2], vars[3]).unwrap();
    tape.value(l).item().unwrap()
}

#[test]
fn uwa_closed_form_examples() {
    assert!((uwa_at(2.0, 4.0, 0.0, 0.0) - 3.0).abs() < 1e-12);
    assert!((uwa_at(1.0, 2.0, 0.5f64.ln(), 2f64.ln()) - 1.5).abs() < 1e-12);
}

#[test]
fn uwa_slope_in_s1_at_origin() {
    let mut tape = Tape::new();
    let (l1, l2, s1, s2) = (scalar(&mut tape, 2.0), scalar(&mut tape, 1.0), scalar(&mut tape, 0.0), scalar(&mut tape, 0.0));
    let l = uwa_loss(&mut tape, l1, l2, s1, s2).unwrap();
    tape.backward(l).unwrap();
    let h = 1e-6;
    let fd = (uwa_value(2.0, 1.0, h, 0.0) - uwa_value(2.0, 1.0, -h, 0.0)) / (2.0 * h);
    assert!((fd + 0.5).abs() < 1e-8);
    assert!((tape.grad(s1).unwrap()[0] + 0.5).abs() < 1e-12);
}

#[test]
fn scheme_combinations() {
    let mut tape = Tape::new();
    let (a, b) = (scalar(&mut tape, 0.3), scalar(&mut tape, 0.7));
    let us = combined_loss(&mut tape, &TaskWeighting::uniform(1.0, 1.0), TaskLosses::Pair { l1: a, l2: b, s: None }).unwrap();
    assert!((tape.value(us).item().unwrap() - 1.0).abs() < 1e-15);
    let stl = combined_loss(&mut tape, &TaskWeighting::new(Scheme::Stl), TaskLosses::Single(Task::Magnitude, a)).unwrap();
    assert_eq!(tape.value(stl).item().unwrap(), 0.3);

    for (l1, l2) in [(0.3, 0.7), (2.0, 4.0), (1e-3, 17.5)] {
        let (x, y) = (scalar(&mut tape, l1), scalar(&mut tape, l2));
        let (s1, s2) = (scalar(&mut tape, 0.0), scalar(&mut tape, 0.0));
        let u = combined_loss(&mut tape, &TaskWeighting::new(Scheme::Uwa), TaskLosses::Pair { l1: x, l2: y, s: Some((s1, s2)) }).unwrap();
        let half = combined_loss(&mut tape, &TaskWeighting::uniform(0.5, 0.5), TaskLosses::Pair { l1: x, l2: y, s: None }).unwrap();
        assert_eq!(tape.value(u).item().unwrap(), tape.value(half).item().unwrap());
        assert_eq!(uwa_value(l1, l2, 0.0, 0.0), 0.5 * l1 + 0.5 * l2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uwa_gradient_identity(l1 in 0.0f64..5.0, l2 in 0.0f64..5.0, s1 in -3.0f64..3.0, s2 in -3.0f64..3.0) {
        let mut tape = Tape::new();
        let vars = [l1, l2, s1, s2].map(|v| scalar(&mut tape, v));
        let l = uwa_loss(&mut tape, vars[0], vars[1], vars[2], vars[3]).unwrap();
        tape.backward(l).unwrap();
        let h = 1e-6;
        for (i, (s, li)) in [(s1, l1), (s2, l2)].into_iter().enumerate() {
            let want = -0.5 * (-s).exp() * li + 0.5;
            prop_assert!((tape.grad(vars[2 + i]).unwrap()[0] - want).abs() < 1e-12);
            let fd = if i == 0 {
                (uwa_value(l1, l2, s1 + h, s2) - uwa_value(l1, l2, s1 - h, s2)) / (2.0 * h)
            } else {
                (uwa_value(l1, l2, s1, s2 + h) - uwa_value(l1, l2, s1, s2 - h)) / (2.0 * h)
            };
            prop_assert!((fd - want).abs() < 1e-6);
        }
    }

    #[test]
    fn raising_s_lowers_the_task_multiplier(s in -5.0f64..5.0, ds in 1e-3f64..3.0, l in 0.1f64..10.0) {
        // The multiplier on L1 is the slope of the loss in L1.
        let slope = |s: f64| uwa_value(l + 1.0, 1.0, s, 0.0) - uwa_value(l, 1.0, s, 0.0);
        prop_assert!(slope(s + ds) < slope(s));
    }
}

#[test]
fn proxlinear_block_cases() {
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5]).unwrap(), true);
    let zeros = tape.constant(Tensor::zeros(&[3, 4]));
    let zb = tape.constant(Tensor::zeros(&[4]));
    let y = proxlinear_block(&mut tape, None, z, zeros, zb).unwrap();
    assert!(tape.value(y).data().iter().all(|v| *v == 0.0));

    let wz = tape.constant(Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 - 5.0) * 0.1).collect()).unwrap());
    let b = tape.constant(Tensor::vector(vec![0.1, -0.2, 0.3, 0.0]));
    let x = tape.constant(Tensor::full(&[2, 4], 3.0));
    let wu = tape.constant(Tensor::zeros(&[4, 4]));
    let with_state = proxlinear_block(&mut tape, Some((x, wu)), z, wz, b).unwrap();
    let plain = tape.linear(z, wz, b).unwrap();
    let plain = tape.relu(plain).unwrap();
    assert_eq!(tape.value(with_state), tape.value(plain));

    // Three stacked blocks: z reaches every block output.
    let wu = tape.constant(Tensor::new(vec![4, 4], (0..16).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.2).collect()).unwrap());
    let bias = tape.constant(Tensor::full(&[4], 1.0));
    let mut state = None;
    for k in 0..3 {
        let out = proxlinear_block(&mut tape, state.map(|s| (s, wu)), z, wz, bias).unwrap();
        let total = tape.sum(out).unwrap();
        tape.zero_grad();
        tape.backward(total).unwrap();
        assert!(tape.grad(z).unwrap().iter().any(|g| *g != 0.0), "block {k} ignores z");
        state = Some(out);
    }
}

fn desk(buses: usize, steps: usize, seed: u64) -> (TimeSeriesDataset, usize) {
    let net = generate_feeder(buses, seed, &Default::default()).unwrap();
    let d = place_sensors(&net, 0.6, seed).unwrap();
    (synthesize_profiles(&net, &d, steps, seed, &ProfileConfig::default()).unwrap(), net.slack())
}

fn small(arch: Architecture) -> EstimatorConfig {
    EstimatorConfig { width: 16, depth: 2, head_width: 8, conv_channels: 3, ..EstimatorConfig::new(arch) }
}

#[test]
fn estimates_have_bus_lengths_and_zero_slack_angle() {
    let (ds, slack) = desk(6, 40, 1);
    for arch in Architecture::ALL {
        for scheme in Scheme::ALL {
            let m = Estimator::new(small(arch), TaskWeighting::new(scheme), &ds, slack, 3).unwrap();
            let r = m.estimate(&ds.frames[5]).unwrap();
            assert_eq!((r.v.len(), r.theta.len()), (6, 6));
            assert!(r.v.iter().chain(&r.theta).all(|v| v.is_finite()));
            assert_eq!(r.theta[slack], 0.0);
            assert_eq!(r.sigma.is_some(), scheme == Scheme::Uwa);
            assert_eq!(m.estimate(&ds.frames[5]).unwrap(), r);
            let short = MeasurementFrame::observed(vec![0.0; 3]);
            assert!(matches!(m.estimate(&short), Err(EstimatorError::WidthMismatch { .. })));
        }
    }
}

#[test]
fn values_behind_the_mask_are_ignored() {
    let (ds, slack) = desk(6, 20, 2);
    let m = Estimator::new(small(Architecture::CnnProx), TaskWeighting::new(Scheme::Uwa), &ds, slack, 1).unwrap();
    let mut a = ds.frames[3].clone();
    a.mask[0] = false;
    a.mask[4] = false;
    let mut b = a.clone();
    b.values[0] = 123.0;
    b.values[4] = -7.5;
    assert_eq!(m.estimate(&a).unwrap(), m.estimate(&b).unwrap());
}

#[test]
fn stl_tasks_are_isolated() {
    let (ds, slack) = desk(6, 20, 3);
    let mut m = Estimator::new(small(Architecture::CnnProx), TaskWeighting::new(Scheme::Stl), &ds, slack, 1).unwrap();
    let frames: Vec<_> = ds.frames.iter().collect();
    let states: Vec<_> = ds.states.iter().collect();
    let (x, y) = (m.encode(&frames).unwrap(), m.encode_states(&states).unwrap());

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let l = m.losses(&mut tape, xv, &y).unwrap();
    tape.backward(l.magnitude).unwrap();
    let mut angle_net = m.nets[1].params.clone();
    tape.accumulate_grads(&mut angle_net);
    assert!(angle_net.iter().all(|(_, p)| p.grad.iter().all(|g| *g == 0.0)));
    let mut mag_net = m.nets[0].params.clone();
    tape.accumulate_grads(&mut mag_net);
    assert!(mag_net.iter().any(|(_, p)| p.grad.iter().any(|g| *g != 0.0)));

    let before: Vec<Vec<f64>> = m.estimate_batch(&frames).unwrap().into_iter().map(|r| r.v).collect();
    for p in m.nets[1].params.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += 0.3);
    }
    let after: Vec<Vec<f64>> = m.estimate_batch(&frames).unwrap().into_iter().map(|r| r.v).collect();
    assert_eq!(before, after);
}

#[test]
fn zero_epochs_keep_the_initial_model() {
    let (ds, slack) = desk(6, 60, 4);
    let (tr, va) = (ds.slice(0..40), ds.slice(40..60));
    let mut m = Estimator::new(small(Architecture::Mlp), TaskWeighting::new(Scheme::Uwa), &tr, slack, 1).unwrap();
    let init = m.clone();
    let h = train_estimator(&mut m, &tr, &va, &EstimatorTrainConfig { epochs: 0, ..Default::default() }).unwrap();
    assert_eq!(h.records.len(), 1);
    assert_eq!(h.best_epochs, vec![0]);
    assert_eq!(m.estimate(&va.frames[0]).unwrap(), init.estimate(&va.frames[0]).unwrap());
}

#[test]
fn seeded_training_reduces_validation_loss_and_moves_log_variances() {
    let (ds, slack) = desk(8, 600, 5);
    let (tr, va) = (ds.slice(0..300), ds.slice(300..360));
    let cfg = EstimatorTrainConfig { epochs: 25, batch_size: 32, learning_rate: 1e-3, seed: 5 };
    let mut m = Estimator::new(EstimatorConfig::new(Architecture::CnnProx), TaskWeighting::new(Scheme::Uwa), &tr, slack, 5).unwrap();
    let h = train_estimator(&mut m, &tr, &va, &cfg).unwrap();
    let init = h.records[0].val_total();
    let best = h.records[h.best_epochs[0]].val_total();
    assert!(best * 5.0 < init, "validation {init} -> {best}");
    let (s1, s2) = h.records.last().unwrap().s.unwrap();
    assert!(s1.abs() > 0.0 && s2.abs() > 0.0);
    assert_eq!(m.log_variances(), h.records[h.best_epochs[0]].s);
}

#[test]
fn training_selects_each_stl_network_on_its_own_task() {
    let (ds, slack) = desk(6, 200, 6);
    let (tr, va) = (ds.slice(0..150), ds.slice(150..200));
    let mut m = Estimator::new(small(Architecture::ProxLinear), TaskWeighting::new(Scheme::Stl), &tr, slack, 2).unwrap();
    let h = train_estimator(&mut m, &tr, &va, &EstimatorTrainConfig { epochs: 6, learning_rate: 1e-2, ..Default::default() }).unwrap();
    let argmin = |f: fn(&EstimatorEpoch) -> f64| {
        h.records.iter().min_by(|a, b| f(a).total_cmp(&f(b))).unwrap().epoch
    };
    assert_eq!(h.best_epochs, vec![argmin(|r| r.val_magnitude), argmin(|r| r.val_angle)]);
}

#[test]
fn training_is_bit_reproducible() {
    let (ds, slack) = desk(6, 120, 7);
    let (tr, va) = (ds.slice(0..80), ds.slice(80..120));
    let run = || {
        let mut m = Estimator::new(small(Architecture::ResNetD), TaskWeighting::new(Scheme::Uwa), &tr, slack, 3).unwrap();
        let h = train_estimator(&mut m, &tr, &va, &EstimatorTrainConfig { epochs: 3, ..Default::default() }).unwrap();
        (h, m.estimate(&va.frames[7]).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoints_and_histories_round_trip() {
    let (ds, slack) = desk(6, 80, 8);
    let (tr, va) = (ds.slice(0..60), ds.slice(60..80));
    let dir = tempfile::tempdir().unwrap();
    for scheme in Scheme::ALL {
        let mut m = Estimator::new(small(Architecture::CnnProx), TaskWeighting::new(scheme), &tr, slack, 4).unwrap();
        let h = train_estimator(&mut m, &tr, &va, &EstimatorTrainConfig { epochs: 2, ..Default::default() }).unwrap();
        m.save(dir.path(), scheme.as_str()).unwrap();
        let back = Estimator::load(dir.path(), scheme.as_str()).unwrap();
        let frames: Vec<_> = va.frames.iter().collect();
        assert_eq!(back.estimate_batch(&frames).unwrap(), m.estimate_batch(&frames).unwrap());

        let path = dir.path().join(format!("{scheme}.history.csv"));
        h.write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 4);
        let s_path = dir.path().join(format!("{scheme}.s.csv"));
        assert_eq!(h.write_uwa_csv(&s_path).unwrap(), scheme == Scheme::Uwa);
        if scheme == Scheme::Uwa {
            let text = std::fs::read_to_string(&s_path).unwrap();
            assert!(text.starts_with("epoch,s1,s2,sigma1,sigma2\n0,0,0,1,1\n"));
        }
    }
}

#[test]
fn names_parse() {
    for a in Architecture::ALL {
        assert_eq!(a.as_str().parse::<Architecture>().unwrap(), a);
    }
    for s in Scheme::ALL {
        assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
    }
    assert_eq!("US".parse::<Scheme>().unwrap(), Scheme::UniformScaling);
    assert!("gnn".parse::<Architecture>().is_err());
    assert!(TaskWeighting::uniform(0.0, 1.0).validate().is_err());
}
