//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every primitive applied during one forward pass.
//! Parameters are pulled in from a borrowed [`ParamStore`] on first use, so a
//! graph lives for exactly one batch; [`Graph::backward`] hands back owned
//! [`Gradients`] that are accumulated into the store after the graph is gone.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Norm below which a vector cannot be projected onto the unit sphere.
pub const NORM_FLOOR: f64 = 1e-12;
/// Probability clamp applied before the logarithms of the BCE loss.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
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

#[derive(Debug)]
enum Op {
    Constant,
    Variable,
    Param(ParamId),
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Act(NodeId, Activation),
    Softmax(NodeId),
    Add(NodeId, NodeId),
    AddRows(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Concat(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    WeightedRowSum {
        weights: NodeId,
        rows: NodeId,
    },
    GatherColumns {
        source: NodeId,
        columns: Vec<usize>,
    },
    Conv {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
    },
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Normalize {
        x: NodeId,
        norm: f64,
    },
    Reshape(NodeId),
    Bce {
        pred: NodeId,
        labels: Vec<f64>,
    },
    Contrastive {
        z: NodeId,
        temperature: f64,
    },
    Sum(Vec<NodeId>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'a> {
    store: Option<&'a ParamStore>,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    /// A graph with no parameter store; only constants and variables.
    pub fn detached() -> Graph<'static> {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::Evaluation(format!("{op:?} produced a non-finite value")));
        }
        let requires_grad = match op {
            Op::Variable | Op::Param(_) => true,
            Op::Constant => false,
            _ => inputs.iter().any(|&i| self.needs(i)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Data that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A free input whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Variable,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let store = self.store.expect("graph has no parameter store");
        let value = store.value(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            requires_grad: true,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, node);
        node
    }

    /// `x · Wᵀ + b` for `x` of shape `[in]` or `[n, in]` and `W` of shape `[out, in]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.len() > 2 || xs[xs.len() - 1] != ws[1] {
            return Err(Error::dim("affine", &xs, &ws));
        }
        let (out, inp) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(Error::dim("affine bias", self.shape(b), &[out]));
            }
        }
        let rows = if xs.len() == 2 { xs[0] } else { 1 };
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut y = vec![0.0; rows * out];
        for r in 0..rows {
            let xr = &xv[r * inp..(r + 1) * inp];
            for o in 0..out {
                let wr = &wv[o * inp..(o + 1) * inp];
                y[r * out + o] = dot(xr, wr);
            }
        }
        if let Some(b) = b {
            let bv = self.value(b).data();
            for r in 0..rows {
                for o in 0..out {
                    y[r * out + o] += bv[o];
                }
            }
        }
        let shape = if xs.len() == 2 { vec![rows, out] } else { vec![out] };
        let inputs: Vec<NodeId> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(Tensor::new(shape, y)?, Op::Affine { x, w, b }, &inputs)
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> Result<NodeId> {
        let y = self.value(x).map(|v| kind.apply(v));
        self.push(y, Op::Act(x, kind), &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(x, Activation::Sigmoid)
    }

    /// Max-shifted softmax over a rank-1 tensor.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        if self.shape(x).len() != 1 {
            return Err(Error::Domain(format!(
                "softmax expects a vector, got shape {:?}",
                self.shape(x)
            )));
        }
        let y = softmax_values(self.value(x).data());
        let n = y.len();
        self.push(Tensor::new(vec![n], y)?, Op::Softmax(x), &[x])
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let y = self.zip_with(a, b, |x, y| x + y)?;
        self.push(y, Op::Add(a, b), &[a, b])
    }

    /// Adds the vector `b` (`[m]`) to every row of `x` (`[n, m]`).
    pub fn add_rows(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 2 || bs != [xs[1]] {
            return Err(Error::dim("add_rows", &xs, &bs));
        }
        let bv = self.value(b).data();
        let mut y = self.value(x).clone();
        for row in y.data_mut().chunks_mut(xs[1]) {
            for (v, &bi) in row.iter_mut().zip(bv) {
                *v += bi;
            }
        }
        self.push(y, Op::AddRows(x, b), &[x, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let y = self.zip_with(a, b, |x, y| x - y)?;
        self.push(y, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let y = self.zip_with(a, b, |x, y| x * y)?;
        self.push(y, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let y = self.value(x).map(|v| v * factor);
        self.push(y, Op::Scale(x, factor), &[x])
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Domain("sum of zero terms".into()))?;
        let mut acc = self.value(first).clone();
        for &p in &parts[1..] {
            self.same_shape("sum", first, p)?;
            for (a, v) in acc.data_mut().iter_mut().zip(self.value(p).data()) {
                *a += v;
            }
        }
        self.push(acc, Op::Sum(parts.to_vec()), parts)
    }

    /// Concatenation of rank-1 nodes.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Domain("concat of zero parts".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::dim("concat", self.shape(p), &[0]));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let n = data.len();
        self.push(Tensor::new(vec![n], data)?, Op::Concat(parts.to_vec()), parts)
    }

    /// Stacks equal-length vectors into an `[n, m]` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::Domain("stack of zero rows".into()))?;
        let m = self.value(first).len();
        let mut data = Vec::with_capacity(m * rows.len());
        for &r in rows {
            if self.shape(r) != [m] {
                return Err(Error::dim("stack_rows", self.shape(r), &[m]));
            }
            data.extend_from_slice(self.value(r).data());
        }
        self.push(
            Tensor::new(vec![rows.len(), m], data)?,
            Op::StackRows(rows.to_vec()),
            rows,
        )
    }

    /// `weightsᵀ · rows` for weights `[n]` and rows `[n, m]`.
    pub fn weighted_row_sum(&mut self, weights: NodeId, rows: NodeId) -> Result<NodeId> {
        let ws = self.shape(weights).to_vec();
        let rs = self.shape(rows).to_vec();
        if ws.len() != 1 || rs.len() != 2 || ws[0] != rs[0] {
            return Err(Error::dim("weighted_row_sum", &ws, &rs));
        }
        let m = rs[1];
        let w = self.value(weights).data();
        let r = self.value(rows).data();
        let mut y = vec![0.0; m];
        for (i, &wi) in w.iter().enumerate() {
            for (yj, &rij) in y.iter_mut().zip(&r[i * m..(i + 1) * m]) {
                *yj += wi * rij;
            }
        }
        self.push(
            Tensor::new(vec![m], y)?,
            Op::WeightedRowSum { weights, rows },
            &[weights, rows],
        )
    }

    /// Selects columns of a `[d, c]` matrix as rows of a `[len, d]` result.
    pub fn gather_columns(&mut self, source: NodeId, columns: &[usize]) -> Result<NodeId> {
        let s = self.shape(source).to_vec();
        if s.len() != 2 || columns.is_empty() {
            return Err(Error::dim("gather_columns", &s, &[columns.len()]));
        }
        let (d, c) = (s[0], s[1]);
        if let Some(&bad) = columns.iter().find(|&&j| j >= c) {
            return Err(Error::Vocabulary(format!("column {bad} out of range for {c}")));
        }
        let v = self.value(source).data();
        let mut y = Vec::with_capacity(columns.len() * d);
        for &j in columns {
            y.extend((0..d).map(|i| v[i * c + j]));
        }
        self.push(
            Tensor::new(vec![columns.len(), d], y)?,
            Op::GatherColumns {
                source,
                columns: columns.to_vec(),
            },
            &[source],
        )
    }

    /// Independent zero-padded "same" convolutions, one per input channel.
    ///
    /// `input` is `[T, C]` (channel `c` is column `c`), `kernels` is
    /// `[C, F, K]` with odd `K`, `bias` is `[C, F]`; the result is `[C, F, T]`.
    pub fn conv_per_channel(&mut self, input: NodeId, kernels: NodeId, bias: NodeId) -> Result<NodeId> {
        let is = self.shape(input).to_vec();
        let ks = self.shape(kernels).to_vec();
        let bs = self.shape(bias).to_vec();
        if is.len() != 2 || ks.len() != 3 || ks[0] != is[1] || bs != [ks[0], ks[1]] {
            return Err(Error::dim("conv_per_channel", &is, &ks));
        }
        let (t_len, channels) = (is[0], is[1]);
        let (filters, width) = (ks[1], ks[2]);
        if width % 2 == 0 {
            return Err(Error::Domain(format!("kernel width {width} is not odd")));
        }
        let pad = width / 2;
        if width > t_len + 2 * pad {
            return Err(Error::Domain(format!(
                "kernel width {width} exceeds padded length {}",
                t_len + 2 * pad
            )));
        }
        let x = self.value(input).data();
        let k = self.value(kernels).data();
        let b = self.value(bias).data();
        let mut y = vec![0.0; channels * filters * t_len];
        let mut column = vec![0.0; t_len];
        for c in 0..channels {
            let mut nonzero = false;
            for t in 0..t_len {
                column[t] = x[t * channels + c];
                nonzero |= column[t] != 0.0;
            }
            for f in 0..filters {
                let cf = c * filters + f;
                let out = &mut y[cf * t_len..(cf + 1) * t_len];
                out.fill(b[cf]);
                if !nonzero {
                    continue;
                }
                let ker = &k[cf * width..(cf + 1) * width];
                for (t, o) in out.iter_mut().enumerate() {
                    for (kk, &kv) in ker.iter().enumerate() {
                        let src = t + kk;
                        if src >= pad && src - pad < t_len {
                            *o += kv * column[src - pad];
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![channels, filters, t_len], y)?,
            Op::Conv {
                input,
                kernels,
                bias,
            },
            &[input, kernels, bias],
        )
    }

    /// Maximum over the last axis; ties resolve to the first index.
    pub fn max_pool_last(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        let t_len = *s.last().unwrap();
        let rows = self.value(x).len() / t_len;
        let v = self.value(x).data();
        let mut y = Vec::with_capacity(rows);
        let mut argmax = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &v[r * t_len..(r + 1) * t_len];
            let mut best = 0;
            for (i, &val) in row.iter().enumerate().skip(1) {
                if val > row[best] {
                    best = i;
                }
            }
            argmax.push(best);
            y.push(row[best]);
        }
        let shape = if s.len() == 1 { vec![1] } else { s[..s.len() - 1].to_vec() };
        self.push(Tensor::new(shape, y)?, Op::MaxPool { x, argmax }, &[x])
    }

    pub fn normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let norm = self.value(x).norm();
        if norm.is_nan() || norm < NORM_FLOOR {
            return Err(Error::DegenerateVector {
                norm,
                floor: NORM_FLOOR,
            });
        }
        let y = self.value(x).map(|v| v / norm);
        self.push(y, Op::Normalize { x, norm }, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let y = self.value(x).reshape(shape)?;
        self.push(y, Op::Reshape(x), &[x])
    }

    /// Mean binary cross-entropy of probabilities `pred` (rank 1) against 0/1 labels.
    pub fn bce(&mut self, pred: NodeId, labels: &[f64]) -> Result<NodeId> {
        let p = self.value(pred);
        if labels.is_empty() {
            return Err(Error::Domain("BCE over an empty batch".into()));
        }
        if p.len() != labels.len() {
            return Err(Error::dim("bce", p.shape(), &[labels.len()]));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Domain("BCE labels must be 0 or 1".into()));
        }
        let loss = bce_value(p.data(), labels);
        self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                labels: labels.to_vec(),
            },
            &[pred],
        )
    }

    /// Two-view contrastive loss over `z` of shape `[2B, p]`, rows ordered
    /// `(f_1, v_1, f_2, v_2, ...)`. Unaveraged sum over all `2B` anchors.
    pub fn contrastive(&mut self, z: NodeId, temperature: f64) -> Result<NodeId> {
        let s = self.shape(z).to_vec();
        if s.len() != 2 || s[0] < 2 || s[0] % 2 != 0 {
            return Err(Error::dim("contrastive", &s, &[2, 0]));
        }
        if !(temperature > 0.0) {
            return Err(Error::Domain(format!("temperature {temperature}")));
        }
        let (loss, _) = contrastive_forward(self.value(z).data(), s[0], s[1], temperature);
        self.push(Tensor::scalar(loss), Op::Contrastive { z, temperature }, &[z])
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Domain(format!(
                "backward from non-scalar node of shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Variable => out.leaves.push((NodeId(i), gy)),
                Op::Param(id) => out.entries.push((*id, gy)),
                op => self.backprop_op(op, &node.value, &gy, &mut grads),
            }
        }
        out.entries.sort_by_key(|(id, _)| *id);
        out.leaves.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn backprop_op(&self, op: &Op, y: &Tensor, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Constant | Op::Variable | Op::Param(_) => unreachable!(),
            Op::Affine { x, w, b } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let ws = self.shape(*w);
                let (out, inp) = (ws[0], ws[1]);
                let rows = xv.len() / inp;
                if self.needs(*x) {
                    let gx = slot(grads, *x, xv.len());
                    for r in 0..rows {
                        for o in 0..out {
                            let g = gy[r * out + o];
                            if g == 0.0 {
                                continue;
                            }
                            axpy(&mut gx[r * inp..(r + 1) * inp], g, &wv[o * inp..(o + 1) * inp]);
                        }
                    }
                }
                if self.needs(*w) {
                    let gw = slot(grads, *w, wv.len());
                    for r in 0..rows {
                        let xr = &xv[r * inp..(r + 1) * inp];
                        for o in 0..out {
                            let g = gy[r * out + o];
                            if g == 0.0 {
                                continue;
                            }
                            axpy(&mut gw[o * inp..(o + 1) * inp], g, xr);
                        }
                    }
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let gb = slot(grads, *b, out);
                        for r in 0..rows {
                            for o in 0..out {
                                gb[o] += gy[r * out + o];
                            }
                        }
                    }
                }
            }
            Op::Act(x, kind) => {
                let xv = self.value(*x).data();
                let gx = slot(grads, *x, xv.len());
                for i in 0..xv.len() {
                    gx[i] += gy[i] * kind.derivative(xv[i], y.data()[i]);
                }
            }
            Op::Softmax(x) => {
                let yv = y.data();
                let inner: f64 = yv.iter().zip(gy).map(|(a, b)| a * b).sum();
                let gx = slot(grads, *x, yv.len());
                for i in 0..yv.len() {
                    gx[i] += yv[i] * (gy[i] - inner);
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, self.needs(*a), *a, gy, 1.0);
                accumulate(grads, self.needs(*b), *b, gy, 1.0);
            }
            Op::AddRows(x, b) => {
                accumulate(grads, self.needs(*x), *x, gy, 1.0);
                if self.needs(*b) {
                    let m = self.value(*b).len();
                    let gb = slot(grads, *b, m);
                    for row in gy.chunks(m) {
                        for (g, &v) in gb.iter_mut().zip(row) {
                            *g += v;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                accumulate(grads, self.needs(*a), *a, gy, 1.0);
                accumulate(grads, self.needs(*b), *b, gy, -1.0);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    let ga = slot(grads, *a, bv.len());
                    for i in 0..bv.len() {
                        ga[i] += gy[i] * bv[i];
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    let gb = slot(grads, *b, av.len());
                    for i in 0..av.len() {
                        gb[i] += gy[i] * av[i];
                    }
                }
            }
            Op::Scale(x, factor) => accumulate(grads, true, *x, gy, *factor),
            Op::Sum(parts) => {
                for &p in parts {
                    accumulate(grads, self.needs(p), p, gy, 1.0);
                }
            }
            Op::Concat(parts) | Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    accumulate(grads, self.needs(p), p, &gy[offset..offset + n], 1.0);
                    offset += n;
                }
            }
            Op::WeightedRowSum { weights, rows } => {
                let w = self.value(*weights).data();
                let r = self.value(*rows).data();
                let m = gy.len();
                if self.needs(*weights) {
                    let gw = slot(grads, *weights, w.len());
                    for i in 0..w.len() {
                        gw[i] += dot(&r[i * m..(i + 1) * m], gy);
                    }
                }
                if self.needs(*rows) {
                    let gr = slot(grads, *rows, r.len());
                    for i in 0..w.len() {
                        axpy(&mut gr[i * m..(i + 1) * m], w[i], gy);
                    }
                }
            }
            Op::GatherColumns { source, columns } => {
                let c = self.shape(*source)[1];
                let d = self.shape(*source)[0];
                let gs = slot(grads, *source, c * d);
                for (r, &j) in columns.iter().enumerate() {
                    for i in 0..d {
                        gs[i * c + j] += gy[r * d + i];
                    }
                }
            }
            Op::Conv {
                input,
                kernels,
                bias,
            } => self.backprop_conv(*input, *kernels, *bias, gy, grads),
            Op::MaxPool { x, argmax } => {
                let t_len = self.value(*x).last_dim();
                let gx = slot(grads, *x, self.value(*x).len());
                for (r, &a) in argmax.iter().enumerate() {
                    gx[r * t_len + a] += gy[r];
                }
            }
            Op::Normalize { x, norm } => {
                let yv = y.data();
                let inner = dot(yv, gy);
                let gx = slot(grads, *x, yv.len());
                for i in 0..yv.len() {
                    gx[i] += (gy[i] - yv[i] * inner) / norm;
                }
            }
            Op::Reshape(x) => accumulate(grads, true, *x, gy, 1.0),
            Op::Bce { pred, labels } => {
                let p = self.value(*pred).data();
                let n = labels.len() as f64;
                let gp = slot(grads, *pred, p.len());
                for i in 0..p.len() {
                    if p[i] <= BCE_CLAMP || p[i] >= 1.0 - BCE_CLAMP {
                        continue;
                    }
                    let yv = labels[i];
                    gp[i] += gy[0] * (-yv / p[i] + (1.0 - yv) / (1.0 - p[i])) / n;
                }
            }
            Op::Contrastive { z, temperature } => {
                let s = self.shape(*z);
                let (rows, dim) = (s[0], s[1]);
                let zv = self.value(*z).data();
                let (_, gz) = contrastive_forward(zv, rows, dim, *temperature);
                accumulate(grads, true, *z, &gz, gy[0]);
            }
        }
    }

    fn backprop_conv(
        &self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        gy: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let ks = self.shape(kernels).to_vec();
        let (channels, filters, width) = (ks[0], ks[1], ks[2]);
        let t_len = self.shape(input)[0];
        let pad = width / 2;
        let x = self.value(input).data();
        let k = self.value(kernels).data();
        if self.needs(bias) {
            let gb = slot(grads, bias, channels * filters);
            for (cf, g) in gb.iter_mut().enumerate() {
                *g += gy[cf * t_len..(cf + 1) * t_len].iter().sum::<f64>();
            }
        }
        let need_k = self.needs(kernels);
        let need_x = self.needs(input);
        if !need_k && !need_x {
            return;
        }
        let mut gk_buf = if need_k { grads[kernels.0].take() } else { None };
        if need_k && gk_buf.is_none() {
            gk_buf = Some(vec![0.0; k.len()]);
        }
        let mut gx_buf = if need_x { grads[input.0].take() } else { None };
        if need_x && gx_buf.is_none() {
            gx_buf = Some(vec![0.0; x.len()]);
        }
        for c in 0..channels {
            let nonzero = (0..t_len).any(|t| x[t * channels + c] != 0.0);
            for f in 0..filters {
                let cf = c * filters + f;
                let g = &gy[cf * t_len..(cf + 1) * t_len];
                for t in 0..t_len {
                    if g[t] == 0.0 {
                        continue;
                    }
                    for kk in 0..width {
                        let src = t + kk;
                        if src < pad || src - pad >= t_len {
                            continue;
                        }
                        let xi = (src - pad) * channels + c;
                        if let Some(gk) = gk_buf.as_mut() {
                            if nonzero {
                                gk[cf * width + kk] += g[t] * x[xi];
                            }
                        }
                        if let Some(gx) = gx_buf.as_mut() {
                            gx[xi] += g[t] * k[cf * width + kk];
                        }
                    }
                }
            }
        }
        if let Some(gk) = gk_buf {
            grads[kernels.0] = Some(gk);
        }
        if let Some(gx) = gx_buf {
            grads[input.0] = Some(gx);
        }
    }
}

/// Gradients produced by one backward pass: per parameter, and per
/// [`Graph::variable`] leaf.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) entries: Vec<(ParamId, Vec<f64>)>,
    pub(crate) leaves: Vec<(NodeId, Vec<f64>)>,
}

impl Gradients {
    pub fn from_entries(entries: Vec<(ParamId, Vec<f64>)>) -> Self {
        Self {
            entries,
            leaves: Vec::new(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn leaf(&self, id: NodeId) -> Option<&[f64]> {
        self.leaves
            .iter()
            .find(|(n, _)| *n == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.entries.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(grads: &mut [Option<Vec<f64>>], needed: bool, id: NodeId, g: &[f64], factor: f64) {
    if !needed {
        return;
    }
    let s = slot(grads, id, g.len());
    axpy(s, factor, g);
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut y: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = y.iter().sum();
    for v in &mut y {
        *v /= total;
    }
    y
}

pub(crate) fn bce_value(p: &[f64], labels: &[f64]) -> f64 {
    let total: f64 = p
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let q = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
        })
        .sum();
    total / labels.len() as f64
}

/// Loss and gradient of the paired-view contrastive objective.
///
/// Row `a` is paired with row `a ^ 1`. For every anchor `a` the loss term is
/// `-s(a, a^1) + log Σ_{j≠a} exp(s(a, j))` with `s(i, j) = z_i·z_j / τ`.
fn contrastive_forward(z: &[f64], rows: usize, dim: usize, tau: f64) -> (f64, Vec<f64>) {
    let row = |i: usize| &z[i * dim..(i + 1) * dim];
    let mut sim = vec![0.0; rows * rows];
    for i in 0..rows {
        for j in i..rows {
            let s = dot(row(i), row(j)) / tau;
            sim[i * rows + j] = s;
            sim[j * rows + i] = s;
        }
    }
    let mut loss = 0.0;
    // probs[a][j] = softmax over j≠a of sim[a][j]
    let mut probs = vec![0.0; rows * rows];
    for a in 0..rows {
        let srow = &sim[a * rows..(a + 1) * rows];
        let max = (0..rows)
            .filter(|&j| j != a)
            .map(|j| srow[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in (0..rows).filter(|&j| j != a) {
            let e = (srow[j] - max).exp();
            probs[a * rows + j] = e;
            denom += e;
        }
        for j in 0..rows {
            probs[a * rows + j] /= denom;
        }
        loss += -srow[a ^ 1] + max + denom.ln();
    }
    let mut grad = vec![0.0; rows * dim];
    for a in 0..rows {
        let ga = &mut grad[a * dim..(a + 1) * dim];
        axpy(ga, -2.0 / tau, row(a ^ 1));
        for j in (0..rows).filter(|&j| j != a) {
            let w = (probs[a * rows + j] + probs[j * rows + a]) / tau;
            axpy(ga, w, row(j));
        }
    }
    (loss, grad)
}
