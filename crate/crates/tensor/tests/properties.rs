use dsse_tensor::gradcheck::op_gradient_suite;
use dsse_tensor::{Tape, Tensor, REGISTERED_OPS};
use proptest::prelude::*;

fn row_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 1..12)
}

fn ln(x: &[f64], eps: f64) -> Vec<f64> {
    let d = x.len();
    let mut t = Tape::new();
    let xv = t.constant(Tensor::vector(x.to_vec()));
    let g = t.constant(Tensor::full(&[d], 1.0));
    let b = t.constant(Tensor::zeros(&[d]));
    let y = t.layer_norm_eps(xv, g, b, eps).unwrap();
    t.value(y).data().to_vec()
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(row in row_strategy(), shift in -100.0f64..100.0) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(row.clone()));
        let shifted = t.constant(Tensor::vector(row.iter().map(|v| v + shift).collect()));
        let a = t.softmax(x, 0).unwrap();
        let b = t.softmax(shifted, 0).unwrap();
        let (a, b) = (t.value(a).data(), t.value(b).data());
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.iter().all(|&p| p >= 0.0));
        for (p, q) in a.iter().zip(b) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(row in prop::collection::vec(-50.0f64..50.0, 2..12)) {
        let (_, var_in) = moments(&row);
        prop_assume!(var_in > 1e-6);
        let (mean, var) = moments(&ln(&row, 0.0));
        prop_assert!(mean.abs() < 1e-10);
        prop_assert!((var - 1.0).abs() < 1e-8);

        let eps = dsse_tensor::LAYER_NORM_EPS;
        let (mean, var) = moments(&ln(&row, eps));
        prop_assert!(mean.abs() < 1e-10);
        prop_assert!((var - var_in / (var_in + eps)).abs() < 1e-10);
    }

    #[test]
    fn forward_and_backward_are_deterministic(seed in 0u64..10_000) {
        use rand::SeedableRng;
        let run = || {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let w = dsse_tensor::init::normal(&mut rng, &[4, 3], 1.0);
            let x = dsse_tensor::init::normal(&mut rng, &[5, 4], 1.0);
            let mut t = Tape::new();
            let (w, x) = (t.leaf(w, true), t.leaf(x, true));
            let h = t.matmul(x, w).unwrap();
            let h = t.gelu(h).unwrap();
            let h = t.softmax(h, 1).unwrap();
            let loss = t.sum(h).unwrap();
            let loss = t.square(loss).unwrap();
            t.backward(loss).unwrap();
            (t.value(loss).data().to_vec(), t.grad(w).unwrap().to_vec(), t.grad(x).unwrap().to_vec())
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(a.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn every_op_passes_gradient_check_on_100_cases() {
    let reports = op_gradient_suite(100, 2024).unwrap();
    assert_eq!(reports.len(), REGISTERED_OPS.len());
    for r in &reports {
        assert_eq!(r.cases, 100);
        assert!(r.max_rel_error < 1e-4, "{}: {:.3e}", r.op, r.max_rel_error);
    }
}

#[test]
fn gradients_route_only_to_their_own_store() {
    use dsse_tensor::{ParamStore, Tape, Tensor};
    let mut a = ParamStore::new();
    let mut b = ParamStore::new();
    let ia = a.add("w", Tensor::vector(vec![1.0, 2.0]));
    let ib = b.add("w", Tensor::vector(vec![3.0, 4.0]));
    let mut tape = Tape::new();
    let va = tape.param(&a, ia);
    let vb = tape.param(&b, ib);
    let vb = tape.scale(vb, 10.0).unwrap();
    let s = tape.add(va, vb).unwrap();
    let loss = tape.sum(s).unwrap();
    tape.backward(loss).unwrap();
    let mut a_copy = a.clone();
    tape.accumulate_grads(&mut a);
    tape.accumulate_grads(&mut b);
    tape.accumulate_grads(&mut a_copy);
    assert_eq!(a.get(ia).grad, vec![1.0, 1.0]);
    assert_eq!(b.get(ib).grad, vec![10.0, 10.0]);
    assert_eq!(a_copy.get(ia).grad, vec![1.0, 1.0]);
}
