use super::kernels::{self, gemm};
use super::{Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Conv1dSame {
        x: Var,
        w: Var,
        bias: Var,
        cols: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var, Vec<f64>),
    Relu(Var),
    GroupMeanRows(Var, usize),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        heads: usize,
        probs: Tensor,
    },
    Sum(Var),
    Mean(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    NormalizeRows(Var, Vec<f64>),
    RowNorms(Var),
    ClampLog(Var, f64),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// A computation graph recorded in topological order.
///
/// Nodes are appended as operations are applied, so every node's inputs
/// precede it. [`Graph::backward`] walks the nodes once in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`; zero when `var` does not reach the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    /// Borrowing variant of [`Gradients::get`]; `None` when unreachable.
    pub fn get_ref(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(TensorError::Rank {
            op,
            expected: 2,
            shape: other.to_vec(),
        }),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input tensor. Gradients are only tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(op, value, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` vector to every row of `x[..×n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.last_dim();
        if tb.len() != n {
            return Err(mismatch("add_bias", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(Op::AddBias(x, bias), value, &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::Scale(x, factor), value, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_2d("matmul", ta)?;
        let (k2, n) = require_2d("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), value, &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let (r, c) = require_2d("transpose", tx)?;
        let value = Tensor::new(vec![c, r], kernels::transpose(r, c, tx.data()))?;
        Ok(self.push(Op::Transpose(x), value, &[x]))
    }

    /// Stride-1 cross-correlation with "same" zero padding: `(k-1)/2` on the
    /// left, the remainder on the right. `x` is `C_in×T`, `w` is
    /// `C_out×C_in×k`, output is `C_out×T`.
    pub fn conv1d_same(&mut self, x: Var, w: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(bias));
        let (c_in, t_len) = require_2d("conv1d_same", tx)?;
        let (c_out, wc, k) = match tw.shape() {
            [o, c, k] => (*o, *c, *k),
            other => {
                return Err(TensorError::Rank {
                    op: "conv1d_same",
                    expected: 3,
                    shape: other.to_vec(),
                })
            }
        };
        if wc != c_in {
            return Err(mismatch("conv1d_same", tx, tw));
        }
        if tb.len() != c_out {
            return Err(mismatch("conv1d_same", tw, tb));
        }
        if k > t_len {
            return Err(TensorError::InvalidConfig(format!(
                "conv kernel {k} longer than sequence {t_len}"
            )));
        }
        let cols = im2col(tx.data(), c_in, t_len, k);
        let ck = c_in * k;
        // out[C_out×T] = W[C_out×ck] · cols[T×ck]^T
        let mut out = vec![0.0; c_out * t_len];
        gemm(c_out, ck, t_len, tw.data(), false, &cols, true, &mut out, false);
        for (o, row) in out.chunks_mut(t_len).enumerate() {
            let b = tb.data()[o];
            row.iter_mut().for_each(|v| *v += b);
        }
        let value = Tensor::new(vec![c_out, t_len], out)?;
        Ok(self.push(Op::Conv1dSame { x, w, bias, cols }, value, &[x, w, bias]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.last_dim();
        let mut out = vec![0.0; tx.len()];
        for (src, dst) in tx.data().chunks(n).zip(out.chunks_mut(n)) {
            kernels::softmax_into(src, dst);
        }
        let value = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        self.push(Op::Softmax(x), value, &[x])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.last_dim();
        let mut out = vec![0.0; tx.len()];
        for (src, dst) in tx.data().chunks(n).zip(out.chunks_mut(n)) {
            let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + src.iter().map(|&v| kernels::exp(v - max)).sum::<f64>().ln();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s - lse;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        self.push(Op::LogSoftmax(x), value, &[x])
    }

    /// Layer normalization over the last axis (population variance).
    pub fn layernorm(
        &mut self,
        x: Var,
        gain: Var,
        shift: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let (tx, tg, ts) = (self.value(x), self.value(gain), self.value(shift));
        let d = tx.last_dim();
        if tg.len() != d || ts.len() != d {
            return Err(mismatch("layernorm", tx, tg));
        }
        let rows = tx.len() / d;
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let src = &tx.data()[r * d..(r + 1) * d];
            let mean = src.iter().sum::<f64>() / d as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (src[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * tg.data()[j] + ts.data()[j];
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
            value,
            &[x, gain, shift],
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let t: Vec<f64> = tx.data().iter().map(|&v| kernels::gelu_tanh(v)).collect();
        let data = tx.data().iter().zip(&t).map(|(&v, &t)| 0.5 * v * (1.0 + t)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::Gelu(x, t), value, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// `ln(max(x, floor))` elementwise.
    pub fn clamp_log(&mut self, x: Var, floor: f64) -> Var {
        self.map(x, |v| v.max(floor).ln(), Op::ClampLog(x, floor))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| f(*v)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(op, value, &[x])
    }

    /// Mean over rows of a matrix: `[m×n] -> [1×n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        self.group_mean_rows(x, 1)
    }

    /// Splits the rows into `groups` equal consecutive blocks and averages
    /// each: `[g·m×n] -> [g×n]`.
    pub fn group_mean_rows(&mut self, x: Var, groups: usize) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let (rows, n) = require_2d("group_mean_rows", tx)?;
        if groups == 0 || rows % groups != 0 {
            return Err(TensorError::InvalidConfig(format!(
                "group_mean_rows: {rows} rows do not split into {groups} groups"
            )));
        }
        let m = rows / groups;
        let mut out = vec![0.0; groups * n];
        for (r, row) in tx.data().chunks(n).enumerate() {
            let o = &mut out[(r / m) * n..(r / m + 1) * n];
            for (o, v) in o.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let value = Tensor::new(vec![groups, n], out)?;
        Ok(self.push(Op::GroupMeanRows(x, groups), value, &[x]))
    }

    /// Scaled dot-product attention over `groups` independent sequences and
    /// `heads` column blocks. `q`, `k`, `v` are `[groups·T × d]`, with rows of
    /// sequence `s` at `s·T..(s+1)·T` and head `h` in columns `h·d/heads..`.
    /// Returns the concatenated head outputs `[groups·T × d]`; the attention
    /// weights are available through [`Graph::attention_weights`].
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        heads: usize,
    ) -> Result<Var, TensorError> {
        let (rows, d) = require_2d("attention", self.value(q))?;
        for other in [k, v] {
            if self.value(other).shape() != self.value(q).shape() {
                return Err(mismatch("attention", self.value(q), self.value(other)));
            }
        }
        if groups == 0 || heads == 0 || rows % groups != 0 || d % heads != 0 {
            return Err(TensorError::InvalidConfig(format!(
                "attention: [{rows}×{d}] does not split into {groups} sequences and {heads} heads"
            )));
        }
        let (t, dh) = (rows / groups, d / heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; groups * heads * t * t];
        let mut out = vec![0.0; rows * d];
        let mut scores = vec![0.0; t * t];
        for s in 0..groups {
            for h in 0..heads {
                let off = s * t * d + h * dh;
                kernels::gemm_strided(
                    (t, dh, t),
                    &qd[off..],
                    (d, 1),
                    &kd[off..],
                    (1, d),
                    &mut scores,
                    t,
                    false,
                );
                let p = &mut probs[(s * heads + h) * t * t..(s * heads + h + 1) * t * t];
                for (sr, pr) in scores.chunks_mut(t).zip(p.chunks_mut(t)) {
                    sr.iter_mut().for_each(|x| *x *= scale);
                    kernels::softmax_into(sr, pr);
                }
                kernels::gemm_strided((t, t, dh), p, (t, 1), &vd[off..], (d, 1), &mut out[off..], d, false);
            }
        }
        let value = Tensor::new(vec![rows, d], out)?;
        let probs = Tensor::new(vec![groups * heads * t, t], probs)?;
        Ok(self.push(
            Op::Attention {
                q,
                k,
                v,
                groups,
                heads,
                probs,
            },
            value,
            &[q, k, v],
        ))
    }

    /// Attention weights of an [`attention`](Self::attention) node as
    /// `[groups·heads·T × T]`, rows of sequence `s`, head `h` starting at
    /// `(s·heads + h)·T`.
    pub fn attention_weights(&self, v: Var) -> Option<&Tensor> {
        match &self.nodes.get(v.0)?.op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(total), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mean = tx.data().iter().sum::<f64>() / tx.len() as f64;
        self.push(Op::Mean(x), Tensor::scalar(mean), &[x])
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let (m, n) = require_2d("slice_cols", tx)?;
        if start >= end || end > n {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                index: end,
                len: n,
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for row in tx.data().chunks(n) {
            out.extend_from_slice(&row[start..end]);
        }
        let value = Tensor::new(vec![m, w], out)?;
        Ok(self.push(Op::SliceCols(x, start), value, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::EmptyInput("concat_cols"))?;
        let (m, _) = require_2d("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = require_2d("concat_cols", self.value(p))?;
            if pm != m {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(vec![m, total], out)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value, parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::EmptyInput("concat_rows"))?;
        let (_, n) = require_2d("concat_rows", self.value(first))?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = require_2d("concat_rows", self.value(p))?;
            if pn != n {
                return Err(mismatch("concat_rows", self.value(first), self.value(p)));
            }
            rows += pm;
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, n], out)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value, parts))
    }

    /// Gathers rows by index (repeats allowed).
    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let (m, n) = require_2d("select_rows", tx)?;
        if indices.is_empty() {
            return Err(TensorError::EmptyInput("select_rows"));
        }
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(TensorError::OutOfRange {
                    op: "select_rows",
                    index: i,
                    len: m,
                });
            }
            out.extend_from_slice(&tx.data()[i * n..(i + 1) * n]);
        }
        let value = Tensor::new(vec![indices.len(), n], out)?;
        Ok(self.push(Op::SelectRows(x, indices.to_vec()), value, &[x]))
    }

    /// Scales each row to unit L2 norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let (_, n) = require_2d("normalize_rows", tx)?;
        let mut norms = Vec::new();
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(Op::NormalizeRows(x, norms), value, &[x]))
    }

    /// L2 norm of each row: `[m×n] -> [m×1]`.
    pub fn row_norms(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let (m, n) = require_2d("row_norms", tx)?;
        let out = tx
            .data()
            .chunks(n)
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Tensor::new(vec![m, 1], out)?;
        Ok(self.push(Op::RowNorms(x), value, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(x), value, &[x]))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            for (input, contribution) in self.local_grads(node, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<f64>| {
            Tensor::new(val(v).shape().to_vec(), data).expect("gradient shape")
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, like(*b, gd.iter().map(|v| -v).collect()))],
            Op::Mul(a, b) => {
                let da = gd.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect();
                let db = gd.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect();
                vec![(*a, like(*a, da)), (*b, like(*b, db))]
            }
            Op::AddBias(x, bias) => {
                let n = val(*bias).len();
                let mut db = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![(*x, g.clone()), (*bias, like(*bias, db))]
            }
            Op::Scale(x, f) => vec![(*x, like(*x, gd.iter().map(|v| v * f).collect()))],
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, gd, false, tb.data(), true, &mut da, false);
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, ta.data(), true, gd, false, &mut db, false);
                vec![(*a, like(*a, da)), (*b, like(*b, db))]
            }
            Op::Transpose(x) => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                vec![(*x, like(*x, kernels::transpose(r, c, gd)))]
            }
            Op::Conv1dSame { x, w, bias, cols } => {
                let (tx, tw) = (val(*x), val(*w));
                let (c_in, t_len) = (tx.shape()[0], tx.shape()[1]);
                let (c_out, k) = (tw.shape()[0], tw.shape()[2]);
                let ck = c_in * k;
                let mut dw = vec![0.0; c_out * ck];
                gemm(c_out, t_len, ck, gd, false, cols, false, &mut dw, false);
                let mut dcols = vec![0.0; t_len * ck];
                gemm(t_len, c_out, ck, gd, true, tw.data(), false, &mut dcols, false);
                let dx = col2im(&dcols, c_in, t_len, k);
                let db = gd.chunks(t_len).map(|row| row.iter().sum()).collect();
                vec![(*x, like(*x, dx)), (*w, like(*w, dw)), (*bias, like(*bias, db))]
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = node.value.last_dim();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(n).zip(gd.chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(*x, like(*x, dx))]
            }
            Op::LogSoftmax(x) => {
                let y = node.value.data();
                let n = node.value.last_dim();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(n).zip(gd.chunks(n)).zip(dx.chunks_mut(n)) {
                    let total: f64 = gr.iter().sum();
                    for j in 0..n {
                        dr[j] = gr[j] - kernels::exp(yr[j]) * total;
                    }
                }
                vec![(*x, like(*x, dx))]
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let d = val(*gain).len();
                let gain_v = val(*gain).data();
                let mut dx = vec![0.0; xhat.len()];
                let mut dgain = vec![0.0; d];
                let mut dshift = vec![0.0; d];
                for (r, inv) in inv_std.iter().enumerate() {
                    let gr = &gd[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..d {
                        let dh = gr[j] * gain_v[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                        dgain[j] += gr[j] * hr[j];
                        dshift[j] += gr[j];
                    }
                    let scale = inv / d as f64;
                    for j in 0..d {
                        let dh = gr[j] * gain_v[j];
                        dx[r * d + j] = scale * (d as f64 * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                vec![
                    (*x, like(*x, dx)),
                    (*gain, like(*gain, dgain)),
                    (*shift, like(*shift, dshift)),
                ]
            }
            Op::Gelu(x, t) => {
                let dx = gd
                    .iter()
                    .zip(val(*x).data())
                    .zip(t)
                    .map(|((g, &v), &t)| g * kernels::gelu_grad_with(v, t))
                    .collect();
                vec![(*x, like(*x, dx))]
            }
            Op::Relu(x) => {
                let dx = gd
                    .iter()
                    .zip(val(*x).data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*x, like(*x, dx))]
            }
            Op::ClampLog(x, floor) => {
                let dx = gd
                    .iter()
                    .zip(val(*x).data())
                    .map(|(g, v)| if v > floor { g / v } else { 0.0 })
                    .collect();
                vec![(*x, like(*x, dx))]
            }
            Op::GroupMeanRows(x, groups) => {
                let tx = val(*x);
                let n = tx.shape()[1];
                let m = tx.shape()[0] / groups;
                let dx = gd
                    .chunks(n)
                    .flat_map(|gr| (0..m).flat_map(move |_| gr.iter().map(move |v| v / m as f64)))
                    .collect();
                vec![(*x, like(*x, dx))]
            }
            Op::Attention {
                q,
                k,
                v,
                groups,
                heads,
                probs,
            } => {
                let (qd, kd, vd) = (val(*q).data(), val(*k).data(), val(*v).data());
                let (rows, d) = (g.shape()[0], g.shape()[1]);
                let (t, dh) = (rows / groups, d / heads);
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = vec![0.0; rows * d];
                let mut dk = vec![0.0; rows * d];
                let mut dv = vec![0.0; rows * d];
                let mut dp = vec![0.0; t * t];
                for s in 0..*groups {
                    for h in 0..*heads {
                        let off = s * t * d + h * dh;
                        let p = &probs.data()[(s * heads + h) * t * t..(s * heads + h + 1) * t * t];
                        // dV = Pᵀ dO
                        kernels::gemm_strided((t, t, dh), p, (1, t), &gd[off..], (d, 1), &mut dv[off..], d, false);
                        // dP = dO Vᵀ
                        kernels::gemm_strided((t, dh, t), &gd[off..], (d, 1), &vd[off..], (1, d), &mut dp, t, false);
                        for (dr, pr) in dp.chunks_mut(t).zip(p.chunks(t)) {
                            let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                            for (x, &y) in dr.iter_mut().zip(pr) {
                                *x = scale * y * (*x - dot);
                            }
                        }
                        // dQ = dS K, dK = dSᵀ Q
                        kernels::gemm_strided((t, t, dh), &dp, (t, 1), &kd[off..], (d, 1), &mut dq[off..], d, false);
                        kernels::gemm_strided((t, t, dh), &dp, (1, t), &qd[off..], (d, 1), &mut dk[off..], d, false);
                    }
                }
                vec![(*q, like(*q, dq)), (*k, like(*k, dk)), (*v, like(*v, dv))]
            }
            Op::Sum(x) => vec![(*x, Tensor::filled(val(*x).shape(), gd[0]))],
            Op::Mean(x) => {
                let n = val(*x).len() as f64;
                vec![(*x, Tensor::filled(val(*x).shape(), gd[0] / n))]
            }
            Op::SliceCols(x, start) => {
                let tx = val(*x);
                let n = tx.shape()[1];
                let w = g.shape()[1];
                let mut dx = vec![0.0; tx.len()];
                for (dr, gr) in dx.chunks_mut(n).zip(gd.chunks(w)) {
                    dr[*start..start + w].copy_from_slice(gr);
                }
                vec![(*x, like(*x, dx))]
            }
            Op::ConcatCols(parts) => {
                let total = g.shape()[1];
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let w = val(p).shape()[1];
                    let dp = gd
                        .chunks(total)
                        .flat_map(|row| row[offset..offset + w].iter().copied())
                        .collect();
                    out.push((p, like(p, dp)));
                    offset += w;
                }
                out
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let len = val(p).len();
                    out.push((p, like(p, gd[offset..offset + len].to_vec())));
                    offset += len;
                }
                out
            }
            Op::SelectRows(x, indices) => {
                let tx = val(*x);
                let n = tx.shape()[1];
                let mut dx = vec![0.0; tx.len()];
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..n {
                        dx[i * n + j] += gd[k * n + j];
                    }
                }
                vec![(*x, like(*x, dx))]
            }
            Op::NormalizeRows(x, norms) => {
                let y = node.value.data();
                let n = node.value.last_dim();
                let mut dx = vec![0.0; y.len()];
                for (r, norm) in norms.iter().enumerate() {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &gd[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] = (gr[j] - yr[j] * dot) / norm;
                    }
                }
                vec![(*x, like(*x, dx))]
            }
            Op::RowNorms(x) => {
                let tx = val(*x);
                let n = tx.shape()[1];
                let norms = node.value.data();
                let mut dx = vec![0.0; tx.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    if norm > 0.0 {
                        for j in 0..n {
                            dx[r * n + j] = gd[r] * tx.data()[r * n + j] / norm;
                        }
                    }
                }
                vec![(*x, like(*x, dx))]
            }
            Op::Reshape(x) => vec![(*x, like(*x, gd.to_vec()))],
        }
    }
}

/// `cols[t][c*k + j] = x[c][t + j - pad_left]`, zero outside the sequence.
fn im2col(x: &[f64], c_in: usize, t_len: usize, k: usize) -> Vec<f64> {
    let pad_left = (k - 1) / 2;
    let ck = c_in * k;
    let mut cols = vec![0.0; t_len * ck];
    for t in 0..t_len {
        for c in 0..c_in {
            for j in 0..k {
                let src = t + j;
                if src >= pad_left && src - pad_left < t_len {
                    cols[t * ck + c * k + j] = x[c * t_len + src - pad_left];
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], c_in: usize, t_len: usize, k: usize) -> Vec<f64> {
    let pad_left = (k - 1) / 2;
    let ck = c_in * k;
    let mut dx = vec![0.0; c_in * t_len];
    for t in 0..t_len {
        for c in 0..c_in {
            for j in 0..k {
                let src = t + j;
                if src >= pad_left && src - pad_left < t_len {
                    dx[c * t_len + src - pad_left] += dcols[t * ck + c * k + j];
                }
            }
        }
    }
    dx
}
