use std::collections::HashMap;

use super::{Result, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Value(pub(crate) usize);

/// Gradients keyed by leaf handle after a backward pass.
pub struct GradMap {
    grads: HashMap<usize, Tensor>,
}

impl GradMap {
    pub fn get(&self, v: Value) -> Option<&Tensor> {
        self.grads.get(&v.0)
    }
}

/// Operation record; stores parent ids plus whatever backward needs
/// beyond the parents' and the output's stored tensors.
#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    AddScalar { a: usize },
    Matmul { a: usize, b: usize },
    Transpose { a: usize },
    Reshape { a: usize },
    Relu { a: usize },
    Gelu { a: usize },
    Sin { a: usize },
    Cos { a: usize },
    Log { a: usize },
    SumAll { a: usize },
    MeanAll { a: usize },
    MeanAxis0 { a: usize },
    L2NormalizeRows { a: usize, norms: Vec<f64> },
    LayerNormRows { a: usize, inv_std: Vec<f64> },
    MaskedSoftmax { a: usize, mask: Vec<bool> },
    CrossEntropyMasked { a: usize, mask: Vec<bool>, target: usize },
    ConcatLast { a: usize, b: usize },
    Pick { a: usize, index: usize },
    PickRange { a: usize, start: usize, len: usize },
}

pub(crate) struct Node {
    pub tensor: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Dynamic reverse-mode tape. Build, compute a scalar loss, call
/// [`Graph::backward`] once, then discard.
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    /// Register a leaf tensor. Only `requires_grad` leaves receive
    /// gradients from [`Graph::backward`].
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Value {
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Constant input (never receives a gradient).
    pub fn constant(&mut self, t: Tensor) -> Value {
        self.leaf(t, false)
    }

    pub fn tensor(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub(crate) fn push(&mut self, t: Tensor, op: Op, requires_grad: bool) -> Value {
        self.nodes.push(Node {
            tensor: t,
            op,
            requires_grad,
        });
        Value(self.nodes.len() - 1)
    }

    pub(crate) fn rg(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    /// Commit an op output: reject non-finite values, inherit requires_grad
    /// from the parents referenced by `op`.
    pub(crate) fn commit(&mut self, name: &'static str, t: Tensor, op: Op) -> Result<Value> {
        if !t.data().iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires = op_parents(&op).iter().any(|&p| self.rg(p));
        Ok(self.push(t, op, requires))
    }

    /// Reverse pass from a scalar loss. Visits each node exactly once in
    /// reverse topological (= insertion) order.
    pub fn backward(&mut self, loss: Value) -> Result<GradMap> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        self.backward_done = true;
        let loss_t = self.tensor(loss);
        if loss_t.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_t.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            self.accumulate(id, &g, &mut grads);
        }

        let mut out = HashMap::new();
        for (id, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[id].requires_grad && matches!(self.nodes[id].op, Op::Leaf) {
                    out.insert(id, Tensor::new(self.nodes[id].tensor.shape().to_vec(), g)?);
                }
            }
        }
        Ok(GradMap { grads: out })
    }

    fn add_into(&self, grads: &mut [Option<Vec<f64>>], id: usize, contrib: &[f64]) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let slot = grads[id].get_or_insert_with(|| vec![0.0; self.nodes[id].tensor.numel()]);
        for (s, c) in slot.iter_mut().zip(contrib) {
            *s += *c;
        }
    }

    /// Accumulate `contrib` (shaped like node `dst`'s output with possible
    /// extra leading axes on the source side) into dst, summing over the
    /// leading broadcast axes.
    fn add_into_broadcast(&self, grads: &mut [Option<Vec<f64>>], dst: usize, contrib: &[f64]) {
        if !self.nodes[dst].requires_grad {
            return;
        }
        let n = self.nodes[dst].tensor.numel();
        let slot = grads[dst].get_or_insert_with(|| vec![0.0; n]);
        for (i, c) in contrib.iter().enumerate() {
            slot[i % n] += *c;
        }
    }

    fn accumulate(&self, id: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let out = &self.nodes[id].tensor;
        match &self.nodes[id].op {
            Op::Leaf => unreachable!(),
            Op::Add { a, b } => {
                self.add_into(grads, *a, g);
                self.add_into_broadcast(grads, *b, g);
            }
            Op::Sub { a, b } => {
                self.add_into(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.add_into_broadcast(grads, *b, &neg);
            }
            Op::Mul { a, b } => {
                let ta = self.nodes[*a].tensor.data();
                let tb = self.nodes[*b].tensor.data();
                let nb = tb.len();
                let ga: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * tb[i % nb]).collect();
                self.add_into(grads, *a, &ga);
                let gb: Vec<f64> = g.iter().zip(ta).map(|(v, x)| v * x).collect();
                self.add_into_broadcast(grads, *b, &gb);
            }
            Op::Scale { a, c } => {
                let ga: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.add_into(grads, *a, &ga);
            }
            Op::AddScalar { a } => self.add_into(grads, *a, g),
            Op::Matmul { a, b } => {
                let ta = &self.nodes[*a].tensor;
                let tb = &self.nodes[*b].tensor;
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                // gA = g @ B^T
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gv = g[i * n + j];
                        if gv != 0.0 {
                            for p in 0..k {
                                ga[i * k + p] += gv * tb.data()[p * n + j];
                            }
                        }
                    }
                }
                self.add_into(grads, *a, &ga);
                // gB = A^T @ g
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = ta.data()[i * k + p];
                        if av != 0.0 {
                            for j in 0..n {
                                gb[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                }
                self.add_into(grads, *b, &gb);
            }
            Op::Transpose { a } => {
                let sa = self.nodes[*a].tensor.shape();
                let (m, n) = (sa[0], sa[1]);
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = g[j * m + i];
                    }
                }
                self.add_into(grads, *a, &ga);
            }
            Op::Reshape { a } => self.add_into(grads, *a, g),
            Op::Relu { a } => {
                let ta = self.nodes[*a].tensor.data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(ta)
                    .map(|(v, x)| if *x > 0.0 { *v } else { 0.0 })
                    .collect();
                self.add_into(grads, *a, &ga);
            }
            Op::Gelu { a } => {
                let ta = self.nodes[*a].tensor.data();
                let ga: Vec<f64> = g.iter().zip(ta).map(|(v, x)| v * gelu_grad(*x)).collect();
                self.add_into(grads, *a, &ga);
            }
            Op::Sin { a } => {
                let ta = self.nodes[*a].tensor.data();
                let ga: Vec<f64> = g.iter().zip(ta).map(|(v, x)| v * x.cos()).collect();
                self.add_into(grads, *a, &ga);
            }
            Op::Cos { a } => {
                let ta = self.nodes[*a].tensor.data();
                let ga: Vec<f64> = g.iter().zip(ta).map(|(v, x)| -v * x.sin()).collect();
                self.add_into(grads, *a, &ga);
            }
            Op::Log { a } => {
                let ta = self.nodes[*a].tensor.data();
                let ga: Vec<f64> = g.iter().zip(ta).map(|(v, x)| v / x).collect();
                self.add_into(grads, *a, &ga);
            }
            Op::SumAll { a } => {
                let n = self.nodes[*a].tensor.numel();
                let ga = vec![g[0]; n];
                self.add_into(grads, *a, &ga);
            }
            Op::MeanAll { a } => {
                let n = self.nodes[*a].tensor.numel();
                let ga = vec![g[0] / n as f64; n];
                self.add_into(grads, *a, &ga);
            }
            Op::MeanAxis0 { a } => {
                let sa = self.nodes[*a].tensor.shape();
                let rows = sa[0];
                let cols: usize = sa[1..].iter().product();
                let mut ga = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        ga[r * cols + c] = g[c] / rows as f64;
                    }
                }
                self.add_into(grads, *a, &ga);
            }
            Op::L2NormalizeRows { a, norms } => {
                let y = out.data();
                let cols = *out.shape().last().unwrap();
                let rows = out.numel() / cols;
                let mut ga = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        ga[r * cols + c] = (gr[c] - yr[c] * dot) / norms[r];
                    }
                }
                self.add_into(grads, *a, &ga);
            }
            Op::LayerNormRows { a, inv_std } => {
                let y = out.data();
                let cols = *out.shape().last().unwrap();
                let rows = out.numel() / cols;
                let mut ga = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mg: f64 = gr.iter().sum::<f64>() / cols as f64;
                    let mgy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    for c in 0..cols {
                        ga[r * cols + c] = inv_std[r] * (gr[c] - mg - yr[c] * mgy);
                    }
                }
                self.add_into(grads, *a, &ga);
            }
            Op::MaskedSoftmax { a, mask } => {
                let y = out.data();
                let cols = *out.shape().last().unwrap();
                let rows = out.numel() / cols;
                let mut ga = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = (0..cols)
                        .filter(|c| mask[*c])
                        .map(|c| yr[c] * gr[c])
                        .sum();
                    for c in 0..cols {
                        if mask[c] {
                            ga[r * cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                }
                self.add_into(grads, *a, &ga);
            }
            Op::CrossEntropyMasked { a, mask, target } => {
                let x = self.nodes[*a].tensor.data();
                let n = x.len();
                let max = (0..n)
                    .filter(|i| mask[*i])
                    .map(|i| x[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..n)
                    .filter(|i| mask[*i])
                    .map(|i| (x[i] - max).exp())
                    .sum();
                let mut ga = vec![0.0; n];
                for i in 0..n {
                    if mask[i] {
                        let p = (x[i] - max).exp() / z;
                        ga[i] = g[0] * (p - if i == *target { 1.0 } else { 0.0 });
                    }
                }
                self.add_into(grads, *a, &ga);
            }
            Op::ConcatLast { a, b } => {
                let ca = *self.nodes[*a].tensor.shape().last().unwrap();
                let cb = *self.nodes[*b].tensor.shape().last().unwrap();
                let rows = out.numel() / (ca + cb);
                let mut ga = vec![0.0; rows * ca];
                let mut gb = vec![0.0; rows * cb];
                for r in 0..rows {
                    ga[r * ca..(r + 1) * ca]
                        .copy_from_slice(&g[r * (ca + cb)..r * (ca + cb) + ca]);
                    gb[r * cb..(r + 1) * cb]
                        .copy_from_slice(&g[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                }
                self.add_into(grads, *a, &ga);
                self.add_into(grads, *b, &gb);
            }
            Op::Pick { a, index } => {
                let n = self.nodes[*a].tensor.numel();
                let mut ga = vec![0.0; n];
                ga[*index] = g[0];
                self.add_into(grads, *a, &ga);
            }
            Op::PickRange { a, start, len } => {
                let n = self.nodes[*a].tensor.numel();
                let mut ga = vec![0.0; n];
                ga[*start..start + len].copy_from_slice(g);
                self.add_into(grads, *a, &ga);
            }
        }
    }
}

fn op_parents(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::Add { a, b }
        | Op::Sub { a, b }
        | Op::Mul { a, b }
        | Op::Matmul { a, b }
        | Op::ConcatLast { a, b } => vec![*a, *b],
        Op::Scale { a, .. }
        | Op::AddScalar { a }
        | Op::Transpose { a }
        | Op::Reshape { a }
        | Op::Relu { a }
        | Op::Gelu { a }
        | Op::Sin { a }
        | Op::Cos { a }
        | Op::Log { a }
        | Op::SumAll { a }
        | Op::MeanAll { a }
        | Op::MeanAxis0 { a }
        | Op::L2NormalizeRows { a, .. }
        | Op::LayerNormRows { a, .. }
        | Op::MaskedSoftmax { a, .. }
        | Op::CrossEntropyMasked { a, .. }
        | Op::Pick { a, .. }
        | Op::PickRange { a, .. } => vec![*a],
    }
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_A: f64 = 0.044715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
