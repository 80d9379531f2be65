//! Central finite-difference checks of tape gradients.
//!
//! The numerical side only ever evaluates forward values, so it stays
//! independent of the backward rules it is checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Builds a scalar from tape leaves created for each input tensor.
pub type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// Relative error `‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)` over
/// every input element. Returns 0 when both gradients vanish.
pub fn check_gradients(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>, h: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<f64> = vars
        .iter()
        .zip(inputs)
        .flat_map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let o = build(&mut t, &vs)?;
        Ok(t.value(o).data()[0])
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work = inputs.to_vec();
    for ti in 0..work.len() {
        for k in 0..work[ti].numel() {
            let orig = work[ti].data()[k];
            work[ti].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[ti].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[ti].data_mut()[k] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let denom = norm(&analytic) + norm(&numeric);
    if denom < 1e-12 {
        return Ok(0.0);
    }
    Ok(norm(&diff) / denom)
}

/// One randomised instance of an operation under test.
pub struct OpCase {
    pub inputs: Vec<Tensor>,
    pub build: Builder,
}

#[derive(Clone, Debug)]
pub struct OpReport {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_error: f64,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape, 0.1, 2.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Wraps `f` so that the checked scalar is `Σ f(x) ⊙ R` with a fixed random `R`,
/// exercising every output component.
fn projected(seed: u64, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Builder {
    Box::new(move |tape: &mut Tape, vars: &[Var]| {
        let out = f(tape, vars)?;
        let shape = tape.shape(out).to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rand_tensor(&mut rng, &shape, -1.0, 1.0);
        let r = tape.constant(r);
        let prod = tape.mul(out, r)?;
        tape.sum(prod)
    })
}

/// A random instance of the named op, or `None` if the name is not registered.
pub fn sample_case(op: &str, rng: &mut ChaCha8Rng) -> Option<OpCase> {
    let seed: u64 = rng.random();
    let (inputs, f): (Vec<Tensor>, Builder) = match op {
        "add" | "sub" | "mul" => {
            let rows = dim(rng, 1, 4);
            let cols = dim(rng, 1, 4);
            let a = rand_tensor(rng, &[rows, cols], -2.0, 2.0);
            let b = match rng.random_range(0..4) {
                0 => rand_tensor(rng, &[cols], -2.0, 2.0),
                1 => rand_tensor(rng, &[], -2.0, 2.0),
                _ => rand_tensor(rng, &[rows, cols], -2.0, 2.0),
            };
            let swap = rng.random_bool(0.3);
            let name = op.to_string();
            let inputs = if swap { vec![b, a] } else { vec![a, b] };
            (
                inputs,
                projected(seed, move |t, v| match name.as_str() {
                    "add" => t.add(v[0], v[1]),
                    "sub" => t.sub(v[0], v[1]),
                    _ => t.mul(v[0], v[1]),
                }),
            )
        }
        "scale" => {
            let c = rng.random_range(-3.0..3.0);
            let shape = [dim(rng, 1, 5)];
            let x = rand_tensor(rng, &shape, -2.0, 2.0);
            (vec![x], projected(seed, move |t, v| t.scale(v[0], c)))
        }
        "add_scalar" => {
            let c = rng.random_range(-3.0..3.0);
            let shape = [dim(rng, 1, 5)];
            let x = rand_tensor(rng, &shape, -2.0, 2.0);
            (vec![x], projected(seed, move |t, v| t.add_scalar(v[0], c)))
        }
        "relu" | "gelu" | "square" | "sigmoid" | "tanh" | "exp" => {
            let shape = [dim(rng, 1, 3), dim(rng, 1, 4)];
            let x = if op == "relu" {
                away_from_zero(rng, &shape)
            } else {
                rand_tensor(rng, &shape, -2.5, 2.5)
            };
            let name = op.to_string();
            (
                vec![x],
                projected(seed, move |t, v| match name.as_str() {
                    "relu" => t.relu(v[0]),
                    "gelu" => t.gelu(v[0]),
                    "square" => t.square(v[0]),
                    "sigmoid" => t.sigmoid(v[0]),
                    "tanh" => t.tanh(v[0]),
                    _ => t.exp(v[0]),
                }),
            )
        }
        "matmul" => {
            let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
            let a = rand_tensor(rng, &[m, k], -1.0, 1.0);
            let b = rand_tensor(rng, &[k, n], -1.0, 1.0);
            (vec![a, b], projected(seed, |t, v| t.matmul(v[0], v[1])))
        }
        "transpose" => {
            let shape = [dim(rng, 1, 4), dim(rng, 1, 4)];
            let x = rand_tensor(rng, &shape, -1.0, 1.0);
            (vec![x], projected(seed, |t, v| t.transpose(v[0])))
        }
        "batch_matmul" => {
            let (g, m, k, n) = (dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
            let trans_b = rng.random_bool(0.5);
            let a = rand_tensor(rng, &[g, m, k], -1.0, 1.0);
            let b = if trans_b {
                rand_tensor(rng, &[g, n, k], -1.0, 1.0)
            } else {
                rand_tensor(rng, &[g, k, n], -1.0, 1.0)
            };
            (vec![a, b], projected(seed, move |t, v| t.batch_matmul(v[0], v[1], trans_b)))
        }
        "softmax" => {
            let shape = [dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 3)];
            let axis = rng.random_range(0..3);
            let x = rand_tensor(rng, &shape, -2.0, 2.0);
            (vec![x], projected(seed, move |t, v| t.softmax(v[0], axis)))
        }
        "causal_softmax" => {
            let l = dim(rng, 1, 5);
            let shape = [dim(rng, 1, 3), l, l];
            let x = rand_tensor(rng, &shape, -2.0, 2.0);
            (vec![x], projected(seed, |t, v| t.causal_softmax(v[0])))
        }
        "layer_norm" => {
            let (r, d) = (dim(rng, 1, 4), dim(rng, 2, 6));
            let x = rand_tensor(rng, &[r, d], -2.0, 2.0);
            let g = rand_tensor(rng, &[d], 0.5, 1.5);
            let b = rand_tensor(rng, &[d], -0.5, 0.5);
            (vec![x, g, b], projected(seed, |t, v| t.layer_norm(v[0], v[1], v[2])))
        }
        "conv1d" => {
            let (c, l, o) = (dim(rng, 1, 3), dim(rng, 3, 7), dim(rng, 1, 3));
            let padding = rng.random_range(0..=2);
            let w = dim(rng, 1, 3.min(l + 2 * padding));
            let batched = rng.random_bool(0.5);
            let x = if batched {
                let shape = [dim(rng, 1, 3), c, l];
                rand_tensor(rng, &shape, -1.0, 1.0)
            } else {
                rand_tensor(rng, &[c, l], -1.0, 1.0)
            };
            let k = rand_tensor(rng, &[o, c, w], -1.0, 1.0);
            let b = rand_tensor(rng, &[o], -1.0, 1.0);
            (
                vec![x, k, b],
                projected(seed, move |t, v| t.conv1d(v[0], v[1], Some(v[2]), padding)),
            )
        }
        "mse" => {
            let shape = [dim(rng, 1, 3), dim(rng, 1, 4)];
            let a = rand_tensor(rng, &shape, -2.0, 2.0);
            let b = rand_tensor(rng, &shape, -2.0, 2.0);
            (vec![a, b], projected(seed, |t, v| t.mse(v[0], v[1])))
        }
        "huber" => {
            let n = dim(rng, 1, 8);
            let delta = rng.random_range(0.5..1.5);
            let target = rand_tensor(rng, &[n], -1.0, 1.0);
            // residual magnitudes kept at least 0.05 away from the kink at delta
            let mut pred = target.clone();
            for p in pred.data_mut() {
                let mag = if rng.random_bool(0.5) {
                    rng.random_range(0.0..delta - 0.05)
                } else {
                    rng.random_range(delta + 0.05..delta + 2.0)
                };
                *p += if rng.random_bool(0.5) { mag } else { -mag };
            }
            (vec![pred, target], projected(seed, move |t, v| t.huber(v[0], v[1], delta)))
        }
        "sum" | "mean" => {
            let shape = [dim(rng, 1, 3), dim(rng, 1, 4)];
            let x = rand_tensor(rng, &shape, -2.0, 2.0);
            let is_sum = op == "sum";
            (
                vec![x],
                projected(seed, move |t, v| if is_sum { t.sum(v[0]) } else { t.mean(v[0]) }),
            )
        }
        "reshape" => {
            let (a, b) = (dim(rng, 1, 3), dim(rng, 1, 4));
            let x = rand_tensor(rng, &[a, b], -2.0, 2.0);
            (vec![x], projected(seed, move |t, v| t.reshape(v[0], &[b, a])))
        }
        "slice_cols" | "slice_rows" => {
            let (r, c) = (dim(rng, 1, 4), dim(rng, 1, 5));
            let x = rand_tensor(rng, &[r, c], -2.0, 2.0);
            let extent = if op == "slice_cols" { c } else { r };
            let start = rng.random_range(0..extent);
            let len = rng.random_range(1..=extent - start);
            let cols = op == "slice_cols";
            (
                vec![x],
                projected(seed, move |t, v| {
                    if cols {
                        t.slice_cols(v[0], start, len)
                    } else {
                        t.slice_rows(v[0], start, len)
                    }
                }),
            )
        }
        "concat_cols" | "concat_rows" => {
            let shared = dim(rng, 1, 3);
            let parts = dim(rng, 1, 3);
            let cols = op == "concat_cols";
            let inputs: Vec<Tensor> = (0..parts)
                .map(|_| {
                    let own = dim(rng, 1, 3);
                    let shape = if cols { [shared, own] } else { [own, shared] };
                    rand_tensor(rng, &shape, -2.0, 2.0)
                })
                .collect();
            (
                inputs,
                projected(seed, move |t, v| if cols { t.concat_cols(v) } else { t.concat_rows(v) }),
            )
        }
        "gather_rows" | "gather_cols" => {
            let (r, c) = (dim(rng, 1, 4), dim(rng, 1, 4));
            let x = rand_tensor(rng, &[r, c], -2.0, 2.0);
            let rows = op == "gather_rows";
            let extent = if rows { r } else { c };
            let idx: Vec<usize> = (0..dim(rng, 1, 6)).map(|_| rng.random_range(0..extent)).collect();
            (
                vec![x],
                projected(seed, move |t, v| {
                    if rows {
                        t.gather_rows(v[0], &idx)
                    } else {
                        t.gather_cols(v[0], &idx)
                    }
                }),
            )
        }
        "split_heads" => {
            let (b, l, h, dk) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3));
            let x = rand_tensor(rng, &[b * l, h * dk], -2.0, 2.0);
            (vec![x], projected(seed, move |t, v| t.split_heads(v[0], b, h)))
        }
        "merge_heads" => {
            let (b, l, h, dk) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3));
            let x = rand_tensor(rng, &[b * h, l, dk], -2.0, 2.0);
            (vec![x], projected(seed, move |t, v| t.merge_heads(v[0], b, h)))
        }
        _ => return None,
    };
    Some(OpCase { inputs, build: f })
}

/// Runs `cases` random finite-difference checks for every registered op.
pub fn op_gradient_suite(cases: usize, seed: u64) -> Result<Vec<OpReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    for &op in crate::REGISTERED_OPS {
        let mut max_rel_error: f64 = 0.0;
        for _ in 0..cases {
            let case = sample_case(op, &mut rng).unwrap_or_else(|| panic!("no sampler for registered op {op}"));
            let err = check_gradients(&case.inputs, &*case.build, DEFAULT_STEP)?;
            max_rel_error = max_rel_error.max(err);
        }
        reports.push(OpReport {
            op,
            cases,
            max_rel_error,
        });
    }
    Ok(reports)
}
