//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] borrows a [`ParameterStore`] read-only, records every operation
//! applied to its variables and, on [`Tape::backward`], walks the record in
//! reverse to produce [`Gradients`]. Parameters used several times receive the
//! sum of their path gradients. Tapes are cheap; build one per example.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParameterStore};
use crate::tensor::{broadcast_repeats, gemm, log_sum_exp, sigmoid, softmax_into, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-12;
/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs in
/// the weighted cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    IndexRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    SoftmaxRows(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
    WeightedBce {
        logit: Var,
        /// dL/dlogit, precomputed in the forward pass.
        slope: f64,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let t = (c * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; repeated calls return the same variable.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name)?;
        Ok(self.param(id))
    }

    fn mat_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(shape_err(op, s, &[]));
        }
        Ok((s[0], s[1]))
    }

    /// `a [m,k] · b [k,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims("matmul", a)?;
        let (k2, n) = self.mat_dims("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), (k, 1), self.value(b).data(), (n, 1), &mut out, false);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `a [m,k] · b[n,k]ᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims("matmul_nt", a)?;
        let (n, k2) = self.mat_dims("matmul_nt", b)?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), (k, 1), self.value(b).data(), (1, k), &mut out, false);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), &[a, b]))
    }

    /// Elementwise sum; `b` broadcasts over `a` when its shape is a suffix of `a`'s.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        broadcast_repeats("add", va.shape(), vb.shape())?;
        let bl = vb.len();
        let data: Vec<f64> = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + vb.data()[i % bl])
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        broadcast_repeats("mul", va.shape(), vb.shape())?;
        let bl = vb.len();
        let data: Vec<f64> = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * vb.data()[i % bl])
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let va = self.value(a);
        let t = Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| x * c).collect())
            .expect("same shape");
        self.push(t, Op::Scale(a, c), &[a])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let t = Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| gelu(x)).collect())
            .expect("same shape");
        self.push(t, Op::Gelu(a), &[a])
    }

    /// Row-wise layer normalisation with learned gain and bias over the last axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let vx = self.value(x);
        let (rows, cols) = vx.as_matrix_dims();
        if self.shape(gain) != [cols] || self.shape(bias) != [cols] {
            return Err(shape_err("layer_norm", vx.shape(), self.shape(gain)));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normed = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                let n = (row[c] - mean) * inv;
                normed[r * cols + c] = n;
                out[r * cols + c] = n * g[c] + b[c];
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Gathers rows of a matrix (embedding lookup when `a` is a table).
    pub fn index_rows(&mut self, a: Var, ids: &[usize], table: &str) -> Result<Var> {
        let va = self.value(a);
        let (rows, cols) = self.mat_dims("index_rows", a)?;
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::Bounds {
                    table: table.to_string(),
                    index: id,
                    len: rows,
                });
            }
            out.extend_from_slice(va.row(id));
        }
        let t = Tensor::new(vec![ids.len(), cols], out)?;
        Ok(self.push(t, Op::IndexRows(a, ids.to_vec()), &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.mat_dims("concat_rows", parts[0])?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.mat_dims("concat_rows", p)?;
            if c != cols {
                return Err(shape_err("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.mat_dims("concat_cols", parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.mat_dims("concat_cols", p)?;
            if r != rows {
                return Err(shape_err("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(v.row(r));
            }
            offset += w;
        }
        let t = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.mat_dims("slice_cols", x)?;
        if start + len > cols {
            return Err(shape_err("slice_cols", self.shape(x), &[start, len]));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v.row(r)[start..start + len]);
        }
        let t = Tensor::new(vec![rows, len], out)?;
        Ok(self.push(t, Op::SliceCols { x, start }, &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ids: Vec<usize> = (start..start + len).collect();
        self.index_rows(x, &ids, "slice_rows")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Softmax over the last axis. Entries with `keep == false` get weight
    /// zero (equivalent to a −∞ logit). `keep` is either one flag per column,
    /// shared by all rows, or one flag per element.
    pub fn softmax_rows(&mut self, x: Var, keep: Option<&[bool]>) -> Result<Var> {
        let v = self.value(x);
        let (rows, cols) = v.as_matrix_dims();
        if let Some(k) = keep {
            if k.len() != cols && k.len() != rows * cols {
                return Err(shape_err("softmax_rows", v.shape(), &[k.len()]));
            }
        }
        let row_keep = |r: usize| {
            keep.map(|k| if k.len() == cols { k } else { &k[r * cols..(r + 1) * cols] })
        };
        for r in 0..rows {
            if row_keep(r).is_some_and(|k| !k.iter().any(|&b| b)) {
                return Err(Error::Contract(format!("softmax row {r} has every entry masked")));
            }
        }
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            softmax_into(v.row(r), row_keep(r), &mut out[r * cols..(r + 1) * cols]);
        }
        let t = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(t, Op::SoftmaxRows(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean over rows of `-log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let (rows, cols) = self.mat_dims("cross_entropy", logits)?;
        if rows != targets.len() || rows == 0 {
            return Err(shape_err("cross_entropy", v.shape(), &[targets.len()]));
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(Error::Contract(format!("cross-entropy target {t} >= {cols} classes")));
            }
            let row = v.row(r);
            total += log_sum_exp(row) - row[t];
        }
        let out = Tensor::scalar(total / rows as f64);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// `-m·y·log σ(s) − n·(1−y)·log(1−σ(s))` for a single logit `s`. When
    /// `clamp` is set, σ(s) is clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`;
    /// otherwise the stable softplus form is used.
    pub fn weighted_bce(&mut self, logit: Var, label: bool, pos_weight: f64, neg_weight: f64, clamp: bool) -> Result<Var> {
        let v = self.value(logit);
        if v.len() != 1 {
            return Err(shape_err("weighted_bce", v.shape(), &[1]));
        }
        let s = v.item();
        let (loss, slope) = if clamp {
            let p = sigmoid(s);
            let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if label {
                (-pos_weight * pc.ln(), if clamped { 0.0 } else { -pos_weight * (1.0 - p) })
            } else {
                (-neg_weight * (1.0 - pc).ln(), if clamped { 0.0 } else { neg_weight * p })
            }
        } else if label {
            (pos_weight * softplus(-s), -pos_weight * sigmoid(-s))
        } else {
            (neg_weight * softplus(s), neg_weight * sigmoid(s))
        };
        Ok(self.push(Tensor::scalar(loss), Op::WeightedBce { logit, slope }, &[logit]))
    }

    /// Inverted dropout: zeroes entries with probability `rate` and rescales
    /// the survivors. Identity when `rate == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let shape = self.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, m)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::Contract("backward called before any forward operation".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut out = Gradients::empty(self.store.len());
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) -> Result<()> {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(slot) => slot.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => out.add(*id, g),
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).as_matrix_dims();
                let n = self.value(*b).as_matrix_dims().1;
                if needs(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), (n, 1), self.value(*b).data(), (1, n), &mut da, false);
                    send(*a, Tensor::new(vec![m, k], da)?);
                }
                if needs(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), (1, k), g.data(), (n, 1), &mut db, false);
                    send(*b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.value(*a).as_matrix_dims();
                let n = self.value(*b).as_matrix_dims().0;
                if needs(*a) {
                    // dA = dC · B
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), (n, 1), self.value(*b).data(), (k, 1), &mut da, false);
                    send(*a, Tensor::new(vec![m, k], da)?);
                }
                if needs(*b) {
                    // dB = dCᵀ · A
                    let mut db = vec![0.0; n * k];
                    gemm(n, m, k, g.data(), (1, n), self.value(*a).data(), (k, 1), &mut db, false);
                    send(*b, Tensor::new(vec![n, k], db)?);
                }
            }
            Op::Add(a, b) => {
                if needs(*b) {
                    let vb = self.value(*b);
                    let bl = vb.len();
                    let mut db = vec![0.0; bl];
                    for (i, x) in g.data().iter().enumerate() {
                        db[i % bl] += x;
                    }
                    send(*b, Tensor::new(vb.shape().to_vec(), db)?);
                }
                if needs(*a) {
                    send(*a, g);
                }
            }
            Op::Mul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let bl = vb.len();
                if needs(*b) {
                    let mut db = vec![0.0; bl];
                    for (i, (x, y)) in g.data().iter().zip(va.data()).enumerate() {
                        db[i % bl] += x * y;
                    }
                    send(*b, Tensor::new(vb.shape().to_vec(), db)?);
                }
                if needs(*a) {
                    let da: Vec<f64> = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, x)| x * vb.data()[i % bl])
                        .collect();
                    send(*a, Tensor::new(va.shape().to_vec(), da)?);
                }
            }
            Op::Scale(a, c) => {
                let mut g = g;
                g.data_mut().iter_mut().for_each(|x| *x *= c);
                send(*a, g);
            }
            Op::Gelu(a) => {
                let va = self.value(*a);
                let mut g = g;
                for (x, v) in g.data_mut().iter_mut().zip(va.data()) {
                    *x *= gelu_grad(*v);
                }
                send(*a, g);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let (rows, cols) = g.as_matrix_dims();
                let gv = self.value(*gain).data();
                if needs(*gain) || needs(*bias) {
                    let mut dg = vec![0.0; cols];
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            let d = g.data()[r * cols + c];
                            dg[c] += d * normed[r * cols + c];
                            db[c] += d;
                        }
                    }
                    if needs(*gain) {
                        send(*gain, Tensor::vector(dg));
                    }
                    if needs(*bias) {
                        send(*bias, Tensor::vector(db));
                    }
                }
                if needs(*x) {
                    let mut dx = vec![0.0; rows * cols];
                    let mut dn = vec![0.0; cols];
                    for r in 0..rows {
                        let mut mean_dn = 0.0;
                        let mut mean_dn_n = 0.0;
                        for c in 0..cols {
                            dn[c] = g.data()[r * cols + c] * gv[c];
                            mean_dn += dn[c];
                            mean_dn_n += dn[c] * normed[r * cols + c];
                        }
                        mean_dn /= cols as f64;
                        mean_dn_n /= cols as f64;
                        for c in 0..cols {
                            dx[r * cols + c] =
                                inv_std[r] * (dn[c] - mean_dn - normed[r * cols + c] * mean_dn_n);
                        }
                    }
                    send(*x, Tensor::new(g.shape().to_vec(), dx)?);
                }
            }
            Op::IndexRows(a, ids) => {
                let va = self.value(*a);
                let (_, cols) = va.as_matrix_dims();
                let mut da = Tensor::zeros(va.shape());
                let d = da.data_mut();
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..cols {
                        d[id * cols + c] += g.data()[r * cols + c];
                    }
                }
                send(*a, da);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if needs(p) {
                        let shape = self.shape(p).to_vec();
                        send(p, Tensor::new(shape, g.data()[offset..offset + len].to_vec())?);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g.as_matrix_dims();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).as_matrix_dims().1;
                    if needs(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        send(p, Tensor::new(vec![rows, w], d)?);
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let vx = self.value(*x);
                let (rows, cols) = vx.as_matrix_dims();
                let w = g.as_matrix_dims().1;
                let mut dx = Tensor::zeros(vx.shape());
                let d = dx.data_mut();
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                }
                send(*x, dx);
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                send(*x, g.reshape(shape)?);
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.as_ref().expect("softmax output stored");
                let (rows, cols) = y.as_matrix_dims();
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                send(*x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::Sum(x) => {
                let shape = self.shape(*x).to_vec();
                send(*x, Tensor::full(&shape, g.item()));
            }
            Op::CrossEntropy { logits, targets } => {
                let v = self.value(*logits);
                let (rows, cols) = v.as_matrix_dims();
                let scale = g.item() / rows as f64;
                let mut d = vec![0.0; rows * cols];
                for (r, &t) in targets.iter().enumerate() {
                    softmax_into(v.row(r), None, &mut d[r * cols..(r + 1) * cols]);
                    d[r * cols + t] -= 1.0;
                    d[r * cols..(r + 1) * cols].iter_mut().for_each(|x| *x *= scale);
                }
                send(*logits, Tensor::new(v.shape().to_vec(), d)?);
            }
            Op::WeightedBce { logit, slope } => {
                let shape = self.shape(*logit).to_vec();
                send(*logit, Tensor::full(&shape, g.item() * slope));
            }
        }
        Ok(())
    }
}
