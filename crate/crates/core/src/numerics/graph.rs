//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value; `backward` walks the
//! tape once in reverse, which is a valid topological order because inputs
//! always precede the nodes that consume them.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::params::ParamSet;
use crate::numerics::tensor::{matmul_at_raw, matmul_bt_raw, matmul_raw, softmax_row_inplace};
use crate::numerics::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MaxPoolRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    BceWithLogits(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients for every node of one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, g: &Graph, v: Var) -> Option<Tensor> {
        self.grads
            .get(v.0)
            .and_then(Option::as_ref)
            .map(|d| Tensor::new(g.nodes[v.0].value.shape().to_vec(), d.clone()).expect("grad shape"))
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rc(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Free leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a named parameter; repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))?;
        let v = self.push(p.value.clone(), Op::Param, p.trainable);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.rc(a), self.rc(b));
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), ng))
    }

    /// `A·Bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (n, k2)) = (self.rc(a), self.rc(b));
        if k != k2 {
            return Err(Error::dim("matmul_bt", self.shape(a), self.shape(b)));
        }
        let out = matmul_bt_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulBt(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose();
        let ng = self.any_grad(&[a]);
        Ok(self.push(t, Op::Transpose(a), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let ng = self.any_grad(&[a, b]);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.rc(a);
        if self.value(bias).len() != n {
            return Err(Error::dim("add_row", self.shape(a), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let ng = self.any_grad(&[a, bias]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::AddRow(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        let ng = self.any_grad(&[a]);
        self.push(t, Op::Scale(a, c), ng)
    }

    /// Multiplies every entry of `a` by the single entry of `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::dim("scale_by", self.shape(a), self.shape(s)));
        }
        let c = self.value(s).item();
        let t = self.value(a).map(|x| x * c);
        let ng = self.any_grad(&[a, s]);
        Ok(self.push(t, Op::ScaleBy(a, s), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        let ng = self.any_grad(&[a]);
        self.push(t, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        let ng = self.any_grad(&[a]);
        self.push(t, Op::Sigmoid(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericInput { op: "softmax_rows" });
        }
        let mut out = v.clone();
        let c = out.cols();
        for row in out.data_mut().chunks_mut(c) {
            softmax_row_inplace(row);
        }
        let ng = self.any_grad(&[a]);
        Ok(self.push(out, Op::SoftmaxRows(a), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::dim("concat_rows", self.shape(first), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let ng = self.any_grad(parts);
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.rc(a);
        if len == 0 || start + len > m {
            return Err(Error::dim("slice_rows", self.shape(a), &[start, len]));
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let ng = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(len, n, data)?, Op::SliceRows(a, start), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.rc(a);
        if len == 0 || start + len > n {
            return Err(Error::dim("slice_cols", self.shape(a), &[start, len]));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let ng = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(m, len, data)?, Op::SliceCols(a, start), ng))
    }

    /// Column-wise max over rows: `m×n → 1×n`. Ties go to the first row.
    pub fn max_pool_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.rc(a);
        let src = self.value(a).data();
        let mut arg = vec![0usize; n];
        let mut out = src[..n].to_vec();
        for i in 1..m {
            for j in 0..n {
                let v = src[i * n + j];
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        let ng = self.any_grad(&[a]);
        self.push(Tensor::matrix(1, n, out).expect("n>0"), Op::MaxPoolRows(a, arg), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Mean of squared differences over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::dim("mse", self.shape(a), self.shape(b)));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let s = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / va.len() as f64;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b), ng))
    }

    /// Summed binary cross-entropy of `logits` against constant 0/1 `labels`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != labels.len() {
            return Err(Error::dim("bce_with_logits", z.shape(), &[labels.len()]));
        }
        let s = z
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| bce_logit(z, y))
            .sum();
        let ng = self.any_grad(&[logits]);
        Ok(self.push(Tensor::scalar(s), Op::BceWithLogits(logits, labels.to_vec()), ng))
    }

    /// `softmax(Q·Kᵀ/√d)·V` on the tape.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let d = self.value(q).cols();
        if d != self.value(k).cols() {
            return Err(Error::dim("scaled_dot_attention", self.shape(q), self.shape(k)));
        }
        if self.value(k).rows() != self.value(v).rows() {
            return Err(Error::dim("scaled_dot_attention", self.shape(k), self.shape(v)));
        }
        let scores = self.matmul_bt(q, k)?;
        let scores = self.scale(scores, 1.0 / (d as f64).sqrt());
        let weights = self.softmax_rows(scores)?;
        self.matmul(weights, v)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(dout) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &dout, &mut grads);
            }
            grads[idx] = Some(dout);
        }
        Ok(Gradients { grads })
    }

    /// Writes `∂loss/∂p` into every trainable parameter of `params`; frozen ones keep no grad.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        let grads = self.gradients(loss)?;
        params.zero_grads();
        for (name, &v) in &self.params {
            let Some(d) = grads.grads.get(v.0).and_then(Option::as_ref) else { continue };
            if let Some(p) = params.get_mut(name) {
                if let Some(g) = p.grad.as_mut() {
                    for (gi, di) in g.data_mut().iter_mut().zip(d) {
                        *gi += di;
                    }
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, dout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(g) => g.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        let rc = |v: Var| self.rc(v);
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (rc(*a), rc(*b));
                if self.nodes[a.0].needs_grad {
                    acc(*a, matmul_bt_raw(dout, val(*b), m, n, k));
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, matmul_at_raw(val(*a), dout, m, k, n));
                }
            }
            Op::MatMulBt(a, b) => {
                let ((m, k), (n, _)) = (rc(*a), rc(*b));
                if self.nodes[a.0].needs_grad {
                    acc(*a, matmul_raw(dout, val(*b), m, n, k));
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, matmul_at_raw(dout, val(*a), m, n, k));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = rc(*a);
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        d[i * n + j] = dout[j * m + i];
                    }
                }
                acc(*a, d);
            }
            Op::Add(a, b) => {
                acc(*a, dout.to_vec());
                acc(*b, dout.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, dout.to_vec());
                acc(*b, dout.iter().map(|x| -x).collect());
            }
            Op::AddRow(a, b) => {
                acc(*a, dout.to_vec());
                let n = rc(*a).1;
                let mut db = vec![0.0; n];
                for row in dout.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(s, r)| *s += r);
                }
                acc(*b, db);
            }
            Op::Mul(a, b) => {
                acc(*a, dout.iter().zip(val(*b)).map(|(d, x)| d * x).collect());
                acc(*b, dout.iter().zip(val(*a)).map(|(d, x)| d * x).collect());
            }
            Op::Scale(a, c) => acc(*a, dout.iter().map(|d| d * c).collect()),
            Op::ScaleBy(a, s) => {
                let c = val(*s)[0];
                acc(*a, dout.iter().map(|d| d * c).collect());
                let ds = dout.iter().zip(val(*a)).map(|(d, x)| d * x).sum();
                acc(*s, vec![ds]);
            }
            Op::Tanh(a) => acc(*a, dout.iter().zip(y).map(|(d, t)| d * (1.0 - t * t)).collect()),
            Op::Sigmoid(a) => acc(*a, dout.iter().zip(y).map(|(d, s)| d * s * (1.0 - s)).collect()),
            Op::SoftmaxRows(a) => {
                let n = rc(*a).1;
                let mut d = vec![0.0; y.len()];
                for ((drow, yrow), orow) in dout.chunks(n).zip(y.chunks(n)).zip(d.chunks_mut(n)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(g, p)| g * p).sum();
                    for ((o, g), p) in orow.iter_mut().zip(drow).zip(yrow) {
                        *o = p * (g - dot);
                    }
                }
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    acc(*p, dout[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let n = rc(*a).1;
                let mut d = vec![0.0; val(*a).len()];
                d[start * n..start * n + dout.len()].copy_from_slice(dout);
                acc(*a, d);
            }
            Op::SliceCols(a, start) => {
                let (m, n) = rc(*a);
                let len = dout.len() / m;
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    d[i * n + start..i * n + start + len].copy_from_slice(&dout[i * len..(i + 1) * len]);
                }
                acc(*a, d);
            }
            Op::MaxPoolRows(a, arg) => {
                let n = rc(*a).1;
                let mut d = vec![0.0; val(*a).len()];
                for (j, &i) in arg.iter().enumerate() {
                    d[i * n + j] = dout[j];
                }
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, vec![dout[0]; val(*a).len()]),
            Op::Mean(a) => {
                let n = val(*a).len();
                acc(*a, vec![dout[0] / n as f64; n]);
            }
            Op::Mse(a, b) => {
                let n = val(*a).len() as f64;
                let da: Vec<f64> = val(*a)
                    .iter()
                    .zip(val(*b))
                    .map(|(x, t)| 2.0 * (x - t) / n * dout[0])
                    .collect();
                acc(*b, da.iter().map(|x| -x).collect());
                acc(*a, da);
            }
            Op::BceWithLogits(z, labels) => {
                let dz = val(*z)
                    .iter()
                    .zip(labels)
                    .map(|(&z, &t)| (sigmoid(z) - t) * dout[0])
                    .collect();
                acc(*z, dz);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-[y·ln σ(z) + (1-y)·ln(1-σ(z))]` in a form that stays finite for large `|z|`.
pub fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}
