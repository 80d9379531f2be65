//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its forward value. Nodes only
//! reference earlier nodes, so the tape is topologically ordered by
//! construction and `backward` is a single reverse sweep.

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Names of every differentiable operation the tape can record.
pub const REGISTERED_OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "relu",
    "gelu",
    "square",
    "sigmoid",
    "tanh",
    "exp",
    "matmul",
    "transpose",
    "softmax",
    "causal_softmax",
    "layer_norm",
    "conv1d",
    "mse",
    "huber",
    "sum",
    "mean",
    "reshape",
    "slice_cols",
    "concat_cols",
    "slice_rows",
    "concat_rows",
    "gather_rows",
    "gather_cols",
    "split_heads",
    "merge_heads",
    "batch_matmul",
];

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug)]
enum Broadcast {
    Same,
    /// Right operand repeats across the leading dims of the left.
    Rhs,
    /// Left operand repeats across the leading dims of the right.
    Lhs,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Gelu(Var),
    Square(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        padding: usize,
    },
    Mse(Var, Var),
    Huber {
        pred: Var,
        target: Var,
        delta: f64,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        indices: Vec<usize>,
    },
    GatherCols {
        x: Var,
        indices: Vec<usize>,
    },
    SplitHeads {
        x: Var,
        batch: usize,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        batch: usize,
        heads: usize,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records a forward computation and replays it backwards.
///
/// Forward and backward are single-threaded; a tape is not shared across threads.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(u64, ParamId, Var)>,
    grads: Option<Vec<Option<Vec<f64>>>>,
    no_grad: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose parameters enter as constants; nothing is differentiable.
    pub fn inference() -> Self {
        Self {
            no_grad: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: requires_grad && !self.no_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Places a parameter on the tape and remembers the binding so that
    /// [`Tape::accumulate_grads`] can route its gradient back.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.leaf(p.value.clone(), p.requires_grad);
        if self.nodes[v.0].requires_grad {
            self.bindings.push((store.key(), id, v));
        }
        v
    }

    /// Adds this tape's gradients into the `grad` buffers of parameters bound from `store`.
    pub fn accumulate_grads(&self, store: &mut ParamStore) {
        let Some(grads) = &self.grads else { return };
        for &(key, id, v) in &self.bindings {
            if key != store.key() {
                continue;
            }
            if let Some(g) = &grads[v.0] {
                let p = store.get_mut(id);
                for (dst, src) in p.grad.iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
    }

    /// Discards gradients so that `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads = None;
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    // ---------------------------------------------------------------- elementwise

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Vec<usize>, Broadcast)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let is_suffix = |long: &[usize], short: &[usize]| {
            short.len() <= long.len() && long[long.len() - short.len()..] == *short
        };
        if sa == sb {
            Ok((sa.to_vec(), Broadcast::Same))
        } else if self.val(b).numel() == 1 || is_suffix(sa, sb) {
            Ok((sa.to_vec(), Broadcast::Rhs))
        } else if self.val(a).numel() == 1 || is_suffix(sb, sa) {
            Ok((sb.to_vec(), Broadcast::Lhs))
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Var, Var, Broadcast) -> Op,
    ) -> Result<Var> {
        let (shape, bc) = self.broadcast(name, a, b)?;
        let (da, db) = (self.val(a).data(), self.val(b).data());
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = match bc {
            Broadcast::Same => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Rhs => (0..numel).map(|i| f(da[i], db[i % db.len()])).collect(),
            Broadcast::Lhs => (0..numel).map(|i| f(da[i % da.len()], db[i])).collect(),
        };
        let value = Tensor::new(shape, data)?;
        self.push(name, value, &[a, b], make(a, b, bc))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |a, b, _| Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |a, b, _| Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.val(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())?;
        self.push(name, value, &[x], op)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, gelu, Op::Gelu(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, Op::Square(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    // ---------------------------------------------------------------- linear algebra

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.val(a).dims2("matmul")?;
        let (k2, n) = self.val(b).dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(self.val(a).data(), false, self.val(b).data(), false, &mut out, m, k, n);
        self.push("matmul", Tensor::matrix(m, n, out)?, &[a, b], Op::MatMul(a, b))
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.val(x).dims2("transpose")?;
        let data = transposed(self.val(x).data(), r, c);
        self.push("transpose", Tensor::matrix(c, r, data)?, &[x], Op::Transpose(x))
    }

    /// Batched product over the leading dim: `[g,m,k]·[g,k,n]`, or `[g,m,k]·[g,n,k]ᵀ` when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || TensorError::ShapeMismatch {
            op: "batch_matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (&[g, m, k], &[g2, b1, b2]) = (&sa[..], &sb[..]) else {
            return Err(mismatch());
        };
        let (kb, n) = if trans_b { (b2, b1) } else { (b1, b2) };
        if g != g2 || k != kb {
            return Err(mismatch());
        }
        let (da, db) = (self.val(a).data(), self.val(b).data());
        let mut out = vec![0.0; g * m * n];
        for gi in 0..g {
            let ab = &da[gi * m * k..(gi + 1) * m * k];
            let bb = &db[gi * k * n..(gi + 1) * k * n];
            let ob = &mut out[gi * m * n..(gi + 1) * m * n];
            gemm(ab, false, bb, trans_b, ob, m, k, n);
        }
        let value = Tensor::new(vec![g, m, n], out)?;
        self.push("batch_matmul", value, &[a, b], Op::BatchMatMul { a, b, trans_b })
    }

    // ---------------------------------------------------------------- normalisation

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let len = shape[axis];
        if len == 0 {
            return Err(TensorError::EmptyAxis { op: "softmax" });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.val(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let max = (0..len).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[at(k)] /= total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push("softmax", value, &[x], Op::Softmax { x, outer, len, inner })
    }

    /// Row softmax over the last axis of `[..., L, L]` scores where row `i`
    /// only sees columns `j <= i`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let r = shape.len();
        if r < 2 || shape[r - 1] != shape[r - 2] {
            return Err(TensorError::InvalidShape {
                op: "causal_softmax",
                reason: format!("expected [..., L, L], got {shape:?}"),
            });
        }
        let len = shape[r - 1];
        if len == 0 {
            return Err(TensorError::EmptyAxis { op: "causal_softmax" });
        }
        let src = self.val(x).data();
        let mut out = vec![0.0; src.len()];
        for (row_idx, (row, dst)) in src.chunks(len).zip(out.chunks_mut(len)).enumerate() {
            let visible = row_idx % len + 1;
            let max = row[..visible].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..visible {
                let e = (row[k] - max).exp();
                dst[k] = e;
                total += e;
            }
            dst[..visible].iter_mut().for_each(|v| *v /= total);
        }
        let outer = src.len() / len;
        let value = Tensor::new(shape, out)?;
        self.push(
            "causal_softmax",
            value,
            &[x],
            Op::Softmax {
                x,
                outer,
                len,
                inner: 1,
            },
        )
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        self.layer_norm_eps(x, gain, bias, LAYER_NORM_EPS)
    }

    /// Normalises each row over the last dim: `(x - mean) / sqrt(var + eps) * gain + bias`.
    pub fn layer_norm_eps(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| TensorError::InvalidShape {
            op: "layer_norm",
            reason: "rank-0 input".into(),
        })?;
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        if d == 0 {
            return Err(TensorError::EmptyAxis { op: "layer_norm" });
        }
        let src = self.val(x).data();
        let (g, b) = (self.val(gain).data(), self.val(bias).data());
        let rows = src.len() / d;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for k in 0..d {
                let h = if rs.is_finite() { (row[k] - mean) * rs } else { 0.0 };
                xhat[r * d + k] = h;
                out[r * d + k] = h * g[k] + b[k];
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(
            "layer_norm",
            value,
            &[x, gain, bias],
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    // ---------------------------------------------------------------- convolution

    /// 1-D cross-correlation with zero padding.
    ///
    /// `x` is `[channels, length]` or `[batch, channels, length]`, `kernel` is
    /// `[out_channels, channels, width]`, `bias` (optional) is `[out_channels]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Option<Var>, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, c, l, batched) = match xs[..] {
            [c, l] => (1, c, l, false),
            [b, c, l] => (b, c, l, true),
            _ => {
                return Err(TensorError::InvalidShape {
                    op: "conv1d",
                    reason: format!("input must be rank 2 or 3, got {xs:?}"),
                })
            }
        };
        let ks = self.shape(kernel).to_vec();
        let [o, kc, w] = ks[..] else {
            return Err(TensorError::InvalidShape {
                op: "conv1d",
                reason: format!("kernel must be [out, in, width], got {ks:?}"),
            });
        };
        if kc != c {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: xs,
                rhs: ks,
            });
        }
        if w == 0 || w > l + 2 * padding {
            return Err(TensorError::InvalidShape {
                op: "conv1d",
                reason: format!("kernel width {w} exceeds padded length {}", l + 2 * padding),
            });
        }
        if let Some(bv) = bias {
            if self.shape(bv) != [o] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv1d",
                    lhs: vec![o],
                    rhs: self.shape(bv).to_vec(),
                });
            }
        }
        let lo = l + 2 * padding - w + 1;
        let xd = self.val(x).data();
        let kd = self.val(kernel).data();
        let bd = bias.map(|bv| self.val(bv).data());
        let mut out = vec![0.0; batch * o * lo];
        for bi in 0..batch {
            for oc in 0..o {
                let dst = &mut out[(bi * o + oc) * lo..(bi * o + oc + 1) * lo];
                if let Some(bd) = bd {
                    dst.iter_mut().for_each(|v| *v = bd[oc]);
                }
                for ic in 0..c {
                    let src = &xd[(bi * c + ic) * l..(bi * c + ic + 1) * l];
                    for k in 0..w {
                        let kv = kd[(oc * c + ic) * w + k];
                        // output t reads padded index t + k, i.e. source t + k - padding
                        let t_lo = padding.saturating_sub(k);
                        let t_hi = (l + padding).saturating_sub(k).min(lo);
                        for t in t_lo..t_hi {
                            dst[t] += kv * src[t + k - padding];
                        }
                    }
                }
            }
        }
        let shape = if batched { vec![batch, o, lo] } else { vec![o, lo] };
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        self.push(
            "conv1d",
            value,
            &inputs,
            Op::Conv1d {
                x,
                kernel,
                bias,
                padding,
            },
        )
    }

    // ---------------------------------------------------------------- losses & reductions

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// Mean squared error.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        let (p, t) = (self.val(pred).data(), self.val(target).data());
        let n = p.len().max(1) as f64;
        let loss = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        self.push("mse", Tensor::scalar(loss), &[pred, target], Op::Mse(pred, target))
    }

    /// Mean Huber loss: `r²/2` for `|r| <= delta`, `delta(|r| - delta/2)` beyond.
    pub fn huber(&mut self, pred: Var, target: Var, delta: f64) -> Result<Var> {
        self.same_shape("huber", pred, target)?;
        let (p, t) = (self.val(pred).data(), self.val(target).data());
        let n = p.len().max(1) as f64;
        let loss = p
            .iter()
            .zip(t)
            .map(|(a, b)| {
                let r = (a - b).abs();
                if r <= delta {
                    0.5 * r * r
                } else {
                    delta * (r - 0.5 * delta)
                }
            })
            .sum::<f64>()
            / n;
        self.push(
            "huber",
            Tensor::scalar(loss),
            &[pred, target],
            Op::Huber {
                pred,
                target,
                delta,
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.val(x).data();
        if d.is_empty() {
            return Err(TensorError::EmptyAxis { op: "mean" });
        }
        let m = d.iter().sum::<f64>() / d.len() as f64;
        self.push("mean", Tensor::scalar(m), &[x], Op::Mean(x))
    }

    // ---------------------------------------------------------------- shape plumbing

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.val(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", value, &[x], Op::Reshape(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.val(x).dims2("slice_cols")?;
        if start + len > c {
            return Err(TensorError::InvalidShape {
                op: "slice_cols",
                reason: format!("columns {start}..{} out of {c}", start + len),
            });
        }
        let d = self.val(x).data();
        let data: Vec<f64> = (0..r).flat_map(|i| d[i * c + start..i * c + start + len].iter().copied()).collect();
        self.push("slice_cols", Tensor::matrix(r, len, data)?, &[x], Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mut rows = None;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.val(p).dims2("concat_cols")?;
            if *rows.get_or_insert(r) != r {
                return Err(TensorError::InvalidShape {
                    op: "concat_cols",
                    reason: "row counts differ".into(),
                });
            }
            total += c;
        }
        let rows = rows.unwrap_or(0);
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.val(p).row(i));
            }
        }
        self.push("concat_cols", Tensor::matrix(rows, total, data)?, parts, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.val(x).dims2("slice_rows")?;
        if start + len > r {
            return Err(TensorError::InvalidShape {
                op: "slice_rows",
                reason: format!("rows {start}..{} out of {r}", start + len),
            });
        }
        let data = self.val(x).data()[start * c..(start + len) * c].to_vec();
        self.push("slice_rows", Tensor::matrix(len, c, data)?, &[x], Op::SliceRows { x, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mut cols = None;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.val(p).dims2("concat_rows")?;
            if *cols.get_or_insert(c) != c {
                return Err(TensorError::InvalidShape {
                    op: "concat_rows",
                    reason: "column counts differ".into(),
                });
            }
            rows += r;
        }
        let data: Vec<f64> = parts.iter().flat_map(|&p| self.val(p).data().iter().copied()).collect();
        self.push(
            "concat_rows",
            Tensor::matrix(rows, cols.unwrap_or(0), data)?,
            parts,
            Op::ConcatRows(parts.to_vec()),
        )
    }

    /// Selects rows by index (repeats allowed); also serves as an embedding lookup.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.val(x).dims2("gather_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(TensorError::InvalidShape {
                op: "gather_rows",
                reason: format!("row {bad} out of {r}"),
            });
        }
        let data: Vec<f64> = indices.iter().flat_map(|&i| self.val(x).row(i).iter().copied()).collect();
        self.push(
            "gather_rows",
            Tensor::matrix(indices.len(), c, data)?,
            &[x],
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
        )
    }

    pub fn gather_cols(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.val(x).dims2("gather_cols")?;
        if let Some(&bad) = indices.iter().find(|&&j| j >= c) {
            return Err(TensorError::InvalidShape {
                op: "gather_cols",
                reason: format!("column {bad} out of {c}"),
            });
        }
        let d = self.val(x).data();
        let data: Vec<f64> = (0..r).flat_map(|i| indices.iter().map(move |&j| d[i * c + j])).collect();
        self.push(
            "gather_cols",
            Tensor::matrix(r, indices.len(), data)?,
            &[x],
            Op::GatherCols {
                x,
                indices: indices.to_vec(),
            },
        )
    }

    /// `[batch·L, heads·dk]` → `[batch·heads, L, dk]`.
    pub fn split_heads(&mut self, x: Var, batch: usize, heads: usize) -> Result<Var> {
        let (rows, d) = self.val(x).dims2("split_heads")?;
        if batch == 0 || heads == 0 || rows % batch != 0 || d % heads != 0 {
            return Err(TensorError::InvalidShape {
                op: "split_heads",
                reason: format!("[{rows}, {d}] does not split into {batch} sequences × {heads} heads"),
            });
        }
        let (l, dk) = (rows / batch, d / heads);
        let src = self.val(x).data();
        let mut out = vec![0.0; src.len()];
        for b in 0..batch {
            for h in 0..heads {
                for t in 0..l {
                    let s = (b * l + t) * d + h * dk;
                    let o = ((b * heads + h) * l + t) * dk;
                    out[o..o + dk].copy_from_slice(&src[s..s + dk]);
                }
            }
        }
        let value = Tensor::new(vec![batch * heads, l, dk], out)?;
        self.push("split_heads", value, &[x], Op::SplitHeads { x, batch, heads })
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var, batch: usize, heads: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [g, l, dk] = shape[..] else {
            return Err(TensorError::InvalidShape {
                op: "merge_heads",
                reason: format!("expected rank 3, got {shape:?}"),
            });
        };
        if batch == 0 || heads == 0 || g != batch * heads {
            return Err(TensorError::InvalidShape {
                op: "merge_heads",
                reason: format!("{g} groups is not {batch} × {heads}"),
            });
        }
        let d = heads * dk;
        let src = self.val(x).data();
        let mut out = vec![0.0; src.len()];
        for b in 0..batch {
            for h in 0..heads {
                for t in 0..l {
                    let s = ((b * heads + h) * l + t) * dk;
                    let o = (b * l + t) * d + h * dk;
                    out[o..o + dk].copy_from_slice(&src[s..s + dk]);
                }
            }
        }
        let value = Tensor::matrix(batch * l, d, out)?;
        self.push("merge_heads", value, &[x], Op::MergeHeads { x, batch, heads })
    }

    // ---------------------------------------------------------------- backward

    /// Populates gradients of the scalar `loss` with respect to every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(TensorError::BackwardTwice);
        }
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            backprop(&self.nodes, idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += op(a) · op(b)` for row-major buffers, where `op(a)` is `[m, k]` and
/// `op(b)` is `[k, n]`; `ta`/`tb` mean the buffer holds the transpose.
#[allow(clippy::too_many_arguments)]
fn gemm(a: &[f64], ta: bool, b: &[f64], tb: bool, out: &mut [f64], m: usize, k: usize, n: usize) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold at least the m·k, k·n and m·n elements addressed
    // by these strides, and `out` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn transposed(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

/// Mutable gradient buffer for `v`, allocated on first touch; `None` when `v` needs no gradient.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
}

/// Accumulates `g` (of the broadcast output shape) into the possibly-smaller operand gradient.
fn acc_broadcast(dst: &mut [f64], g: &[f64], coeff: impl Fn(usize) -> f64) {
    let n = dst.len();
    for (i, &gv) in g.iter().enumerate() {
        dst[i % n] += gv * coeff(i);
    }
}

fn backprop(nodes: &[Node], idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[idx];
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                acc_broadcast(ga, g, |_| 1.0);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                acc_broadcast(gb, g, |_| 1.0);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                acc_broadcast(ga, g, |_| 1.0);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                acc_broadcast(gb, g, |_| -1.0);
            }
        }
        Op::Mul(a, b, bc) => {
            let (da, db) = (val(*a), val(*b));
            let (at, bt): (Box<dyn Fn(usize) -> f64>, Box<dyn Fn(usize) -> f64>) = match bc {
                Broadcast::Same => (Box::new(|i| da[i]), Box::new(|i| db[i])),
                Broadcast::Rhs => (Box::new(|i| da[i]), Box::new(|i| db[i % db.len()])),
                Broadcast::Lhs => (Box::new(|i| da[i % da.len()]), Box::new(|i| db[i])),
            };
            if let Some(ga) = slot(nodes, grads, *a) {
                acc_broadcast(ga, g, &bt);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                acc_broadcast(gb, g, &at);
            }
        }
        Op::Scale(x, c) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(d, gv)| *d += c * gv);
            }
        }
        Op::AddScalar(x) | Op::Reshape(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
            }
        }
        Op::Relu(x) | Op::Gelu(x) | Op::Square(x) => {
            let xv = val(*x);
            let deriv: fn(f64) -> f64 = match node.op {
                Op::Relu(_) => |v| if v > 0.0 { 1.0 } else { 0.0 },
                Op::Gelu(_) => gelu_grad,
                _ => |v| 2.0 * v,
            };
            if let Some(gx) = slot(nodes, grads, *x) {
                for ((d, gv), &v) in gx.iter_mut().zip(g).zip(xv) {
                    *d += gv * deriv(v);
                }
            }
        }
        Op::Sigmoid(x) | Op::Tanh(x) | Op::Exp(x) => {
            let y = node.value.data();
            let deriv: fn(f64) -> f64 = match node.op {
                Op::Sigmoid(_) => |y| y * (1.0 - y),
                Op::Tanh(_) => |y| 1.0 - y * y,
                _ => |y| y,
            };
            if let Some(gx) = slot(nodes, grads, *x) {
                for ((d, gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                    *d += gv * deriv(yv);
                }
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
            let n = nodes[b.0].value.shape()[1];
            let (da, db) = (val(*a), val(*b));
            if let Some(ga) = slot(nodes, grads, *a) {
                gemm(g, false, db, true, ga, m, n, k);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gemm(da, true, g, false, gb, k, m, n);
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
            if let Some(gx) = slot(nodes, grads, *x) {
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::BatchMatMul { a, b, trans_b } => {
            let sa = nodes[a.0].value.shape();
            let (groups, m, k) = (sa[0], sa[1], sa[2]);
            let n = node.value.shape()[2];
            let (da, db) = (val(*a), val(*b));
            if let Some(ga) = slot(nodes, grads, *a) {
                for gi in 0..groups {
                    let gg = &g[gi * m * n..(gi + 1) * m * n];
                    let bb = &db[gi * k * n..(gi + 1) * k * n];
                    let dst = &mut ga[gi * m * k..(gi + 1) * m * k];
                    // b is [n, k] under trans_b: ga = g · b, else g · bᵀ
                    gemm(gg, false, bb, !*trans_b, dst, m, n, k);
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for gi in 0..groups {
                    let gg = &g[gi * m * n..(gi + 1) * m * n];
                    let ab = &da[gi * m * k..(gi + 1) * m * k];
                    let dst = &mut gb[gi * k * n..(gi + 1) * k * n];
                    if *trans_b {
                        // gb[n, k] = gᵀ · a
                        gemm(gg, true, ab, false, dst, n, m, k);
                    } else {
                        gemm(ab, true, gg, false, dst, k, m, n);
                    }
                }
            }
        }
        Op::Softmax { x, outer, len, inner } => {
            let y = node.value.data();
            if let Some(gx) = slot(nodes, grads, *x) {
                for o in 0..*outer {
                    for i in 0..*inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let dot: f64 = (0..*len).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..*len {
                            gx[at(k)] += y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let d = nodes[gain.0].value.numel();
            let gv = val(*gain);
            if let Some(gg) = slot(nodes, grads, *gain) {
                for (r, gr) in g.chunks(d).enumerate() {
                    for k in 0..d {
                        gg[k] += gr[k] * xhat[r * d + k];
                    }
                }
            }
            if let Some(gb) = slot(nodes, grads, *bias) {
                for gr in g.chunks(d) {
                    gb.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                }
            }
            if let Some(gx) = slot(nodes, grads, *x) {
                let inv_d = 1.0 / d as f64;
                for (r, gr) in g.chunks(d).enumerate() {
                    let rs = rstd[r];
                    if !rs.is_finite() {
                        continue;
                    }
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for k in 0..d {
                        let dxh = gr[k] * gv[k];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[k];
                    }
                    for k in 0..d {
                        let dxh = gr[k] * gv[k];
                        gx[r * d + k] += rs * (dxh - inv_d * sum_dxh - xh[k] * inv_d * sum_dxh_xh);
                    }
                }
            }
        }
        Op::Conv1d {
            x,
            kernel,
            bias,
            padding,
        } => {
            let xs = nodes[x.0].value.shape();
            let (batch, c, l) = match xs[..] {
                [c, l] => (1, c, l),
                [b, c, l] => (b, c, l),
                _ => unreachable!(),
            };
            let ks = nodes[kernel.0].value.shape();
            let (o, w) = (ks[0], ks[2]);
            let lo = l + 2 * padding - w + 1;
            let (xd, kd) = (val(*x), val(*kernel));
            let range = |k: usize| (padding.saturating_sub(k), (l + padding).saturating_sub(k).min(lo));
            if let Some(gb) = bias.and_then(|bv| slot(nodes, grads, bv)) {
                for bi in 0..batch {
                    for oc in 0..o {
                        gb[oc] += g[(bi * o + oc) * lo..(bi * o + oc + 1) * lo].iter().sum::<f64>();
                    }
                }
            }
            if let Some(gk) = slot(nodes, grads, *kernel) {
                for bi in 0..batch {
                    for oc in 0..o {
                        let gr = &g[(bi * o + oc) * lo..(bi * o + oc + 1) * lo];
                        for ic in 0..c {
                            let src = &xd[(bi * c + ic) * l..(bi * c + ic + 1) * l];
                            for k in 0..w {
                                let (t0, t1) = range(k);
                                let s: f64 = (t0..t1).map(|t| gr[t] * src[t + k - padding]).sum();
                                gk[(oc * c + ic) * w + k] += s;
                            }
                        }
                    }
                }
            }
            if let Some(gx) = slot(nodes, grads, *x) {
                for bi in 0..batch {
                    for oc in 0..o {
                        let gr = &g[(bi * o + oc) * lo..(bi * o + oc + 1) * lo];
                        for ic in 0..c {
                            let dst = &mut gx[(bi * c + ic) * l..(bi * c + ic + 1) * l];
                            for k in 0..w {
                                let kv = kd[(oc * c + ic) * w + k];
                                let (t0, t1) = range(k);
                                for t in t0..t1 {
                                    dst[t + k - padding] += kv * gr[t];
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::Mse(p, t) => {
            let (pd, td) = (val(*p), val(*t));
            let scale = 2.0 * g[0] / pd.len().max(1) as f64;
            if let Some(gp) = slot(nodes, grads, *p) {
                for i in 0..pd.len() {
                    gp[i] += scale * (pd[i] - td[i]);
                }
            }
            if let Some(gt) = slot(nodes, grads, *t) {
                for i in 0..pd.len() {
                    gt[i] -= scale * (pd[i] - td[i]);
                }
            }
        }
        Op::Huber { pred, target, delta } => {
            let (pd, td) = (val(*pred), val(*target));
            let scale = g[0] / pd.len().max(1) as f64;
            let d = |i: usize| scale * (pd[i] - td[i]).clamp(-delta, *delta);
            if let Some(gp) = slot(nodes, grads, *pred) {
                for i in 0..pd.len() {
                    gp[i] += d(i);
                }
            }
            if let Some(gt) = slot(nodes, grads, *target) {
                for i in 0..pd.len() {
                    gt[i] -= d(i);
                }
            }
        }
        Op::Sum(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let s = g[0] / gx.len() as f64;
                gx.iter_mut().for_each(|d| *d += s);
            }
        }
        Op::SliceCols { x, start } => {
            let c = nodes[x.0].value.shape()[1];
            let len = node.value.shape()[1];
            if let Some(gx) = slot(nodes, grads, *x) {
                for (i, gr) in g.chunks(len.max(1)).enumerate().take(node.value.shape()[0]) {
                    for (j, gv) in gr.iter().enumerate() {
                        gx[i * c + start + j] += gv;
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = node.value.shape()[1];
            let mut offset = 0;
            for &p in parts {
                let c = nodes[p.0].value.shape()[1];
                if let Some(gp) = slot(nodes, grads, p) {
                    for (i, dst) in gp.chunks_mut(c.max(1)).enumerate() {
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d += g[i * total + offset + j];
                        }
                    }
                }
                offset += c;
            }
        }
        Op::SliceRows { x, start } => {
            let c = node.value.shape()[1];
            if let Some(gx) = slot(nodes, grads, *x) {
                for (d, gv) in gx[start * c..start * c + g.len()].iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p.0].value.numel();
                if let Some(gp) = slot(nodes, grads, p) {
                    gp.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, gv)| *d += gv);
                }
                offset += n;
            }
        }
        Op::GatherRows { x, indices } => {
            let c = node.value.shape()[1];
            if let Some(gx) = slot(nodes, grads, *x) {
                for (r, &src) in indices.iter().enumerate() {
                    for j in 0..c {
                        gx[src * c + j] += g[r * c + j];
                    }
                }
            }
        }
        Op::GatherCols { x, indices } => {
            let c = nodes[x.0].value.shape()[1];
            let n = indices.len();
            if let Some(gx) = slot(nodes, grads, *x) {
                for i in 0..node.value.shape()[0] {
                    for (jj, &j) in indices.iter().enumerate() {
                        gx[i * c + j] += g[i * n + jj];
                    }
                }
            }
        }
        Op::SplitHeads { x, batch, heads } => {
            let s = node.value.shape();
            let (l, dk) = (s[1], s[2]);
            let d = heads * dk;
            if let Some(gx) = slot(nodes, grads, *x) {
                for b in 0..*batch {
                    for h in 0..*heads {
                        for t in 0..l {
                            let xi = (b * l + t) * d + h * dk;
                            let oi = ((b * heads + h) * l + t) * dk;
                            for k in 0..dk {
                                gx[xi + k] += g[oi + k];
                            }
                        }
                    }
                }
            }
        }
        Op::MergeHeads { x, batch, heads } => {
            let s = nodes[x.0].value.shape();
            let (l, dk) = (s[1], s[2]);
            let d = heads * dk;
            if let Some(gx) = slot(nodes, grads, *x) {
                for b in 0..*batch {
                    for h in 0..*heads {
                        for t in 0..l {
                            let xi = ((b * heads + h) * l + t) * dk;
                            let oi = (b * l + t) * d + h * dk;
                            for k in 0..dk {
                                gx[xi + k] += g[oi + k];
                            }
                        }
                    }
                }
            }
        }
    }
}
