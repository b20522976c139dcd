//! Reverse-mode differentiation over a flat, append-only tape.
//!
//! Every value lives in a node on the [`Tape`]. Leaves are created with
//! [`Tape::leaf`] (differentiable) or [`Tape::constant`] (no gradient is
//! propagated into them). Primitives are appended with [`Tape::record`] or
//! one of the typed helpers, and [`Tape::backward`] replays the local adjoint
//! rules in reverse order. The tape is not consumed, so backward may be called
//! any number of times.

use super::{DiffError, Tensor};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The fixed primitive set. Parameters that are not differentiable (index
/// targets, masks, scale factors) are carried inside the variant.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// Elementwise sum. The right operand may also be a vector matching the
    /// left operand's last axis, in which case it is broadcast over rows.
    Add,
    /// Elementwise difference, same broadcasting rule as `Add`.
    Sub,
    /// Elementwise product of equally shaped operands.
    Mul,
    /// Multiplication by a fixed scalar.
    Scale(f64),
    /// `[m, k] x [k, n] -> [m, n]`.
    MatMul,
    /// Row gather from a `[vocab, dim]` table.
    Embedding(Vec<usize>),
    Relu,
    Tanh,
    /// Log-sum-exp over the last axis; drops that axis (rank-1 input gives `[1]`).
    LogSumExp,
    /// Per-row `logsumexp(x_r) - x_r[target_r]` for `[rows, classes]` logits.
    SoftmaxCrossEntropy(Vec<usize>),
    /// `sum(mask * x) / sum(mask)`, producing a one-element tensor.
    MaskedMean(Vec<f64>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "subtract",
            Primitive::Mul => "multiply",
            Primitive::Scale(_) => "scale",
            Primitive::MatMul => "matmul",
            Primitive::Embedding(_) => "embedding",
            Primitive::Relu => "relu",
            Primitive::Tanh => "tanh",
            Primitive::LogSumExp => "logsumexp",
            Primitive::SoftmaxCrossEntropy(_) => "softmax_cross_entropy",
            Primitive::MaskedMean(_) => "masked_mean",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::MatMul => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Option<(Primitive, Vec<Var>)>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints keyed by node. Nodes that do not require a gradient, or that the
/// output does not depend on, report zeros.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zero-filled when nothing flowed into it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match self.get(var) {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, None, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, None, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Option<(Primitive, Vec<Var>)>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `op` on `inputs` and appends the result.
    pub fn record(&mut self, op: Primitive, inputs: &[Var]) -> Result<Var, DiffError> {
        if inputs.len() != op.arity() {
            return Err(DiffError::Arity {
                op: op.name(),
                expected: op.arity(),
                got: inputs.len(),
            });
        }
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(DiffError::UnknownVar(bad.0));
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = forward(&op, &values)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(out, Some((op, inputs.to_vec())), requires_grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.record(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.record(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.record(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, DiffError> {
        self.record(Primitive::Scale(factor), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.record(Primitive::MatMul, &[a, b])
    }

    pub fn embedding(&mut self, table: Var, ids: Vec<usize>) -> Result<Var, DiffError> {
        self.record(Primitive::Embedding(ids), &[table])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        self.record(Primitive::Relu, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        self.record(Primitive::Tanh, &[a])
    }

    pub fn logsumexp(&mut self, a: Var) -> Result<Var, DiffError> {
        self.record(Primitive::LogSumExp, &[a])
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var, DiffError> {
        self.record(Primitive::SoftmaxCrossEntropy(targets), &[logits])
    }

    pub fn masked_mean(&mut self, a: Var, mask: Vec<f64>) -> Result<Var, DiffError> {
        self.record(Primitive::MaskedMean(mask), &[a])
    }

    /// Gradient of the one-element `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients, DiffError> {
        let out_node = self.nodes.get(output.0).ok_or(DiffError::UnknownVar(output.0))?;
        if out_node.value.len() != 1 {
            return Err(DiffError::NonScalarOutput(out_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::from_parts(out_node.value.shape().to_vec(), vec![1.0]));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let Some((op, inputs)) = &node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else { continue };
            let operands: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let local = adjoint(op, &operands, &needs, &node.value, &upstream);
            grads[idx] = Some(upstream);
            for (input, g) in inputs.iter().zip(local) {
                let Some(g) = g else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        grads.resize(self.nodes.len(), None);
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[idx] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn mismatch(op: &Primitive, operands: &[&Tensor]) -> DiffError {
    DiffError::ShapeMismatch {
        op: op.name(),
        shapes: operands.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

/// Whether `b` is combined with `a` elementwise or as a row-broadcast bias.
fn broadcast_kind(a: &Tensor, b: &Tensor) -> Option<bool> {
    if a.shape() == b.shape() {
        Some(false)
    } else if b.rank() == 1 && a.rank() >= 2 && a.last_dim() == b.len() {
        Some(true)
    } else {
        None
    }
}

fn lse(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn forward(op: &Primitive, x: &[&Tensor]) -> Result<Tensor, DiffError> {
    let out = match op {
        Primitive::Add | Primitive::Sub => {
            let (a, b) = (x[0], x[1]);
            let broadcast = broadcast_kind(a, b).ok_or_else(|| mismatch(op, x))?;
            let sign = if matches!(op, Primitive::Add) { 1.0 } else { -1.0 };
            let n = b.len();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &av)| {
                    let bv = if broadcast { b.data()[i % n] } else { b.data()[i] };
                    av + sign * bv
                })
                .collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        }
        Primitive::Mul => {
            let (a, b) = (x[0], x[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op, x));
            }
            let data = a.data().iter().zip(b.data()).map(|(p, q)| p * q).collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        }
        Primitive::Scale(c) => Tensor::from_parts(x[0].shape().to_vec(), x[0].data().iter().map(|v| v * c).collect()),
        Primitive::MatMul => {
            let (a, b) = (x[0], x[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(mismatch(op, x));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor::from_parts(vec![m, n], matmul(a.data(), b.data(), m, k, n))
        }
        Primitive::Embedding(ids) => {
            let table = x[0];
            if table.rank() != 2 || ids.is_empty() {
                return Err(mismatch(op, x));
            }
            let (vocab, dim) = (table.shape()[0], table.shape()[1]);
            let mut data = Vec::with_capacity(ids.len() * dim);
            for &id in ids {
                if id >= vocab {
                    return Err(DiffError::IndexOutOfRange {
                        op: op.name(),
                        index: id,
                        bound: vocab,
                    });
                }
                data.extend_from_slice(&table.data()[id * dim..(id + 1) * dim]);
            }
            Tensor::from_parts(vec![ids.len(), dim], data)
        }
        Primitive::Relu => Tensor::from_parts(x[0].shape().to_vec(), x[0].data().iter().map(|v| v.max(0.0)).collect()),
        Primitive::Tanh => Tensor::from_parts(x[0].shape().to_vec(), x[0].data().iter().map(|v| v.tanh()).collect()),
        Primitive::LogSumExp => {
            let a = x[0];
            let n = a.last_dim();
            let data: Vec<f64> = a.data().chunks(n).map(lse).collect();
            let shape = if a.rank() == 1 {
                vec![1]
            } else {
                a.shape()[..a.rank() - 1].to_vec()
            };
            Tensor::from_parts(shape, data)
        }
        Primitive::SoftmaxCrossEntropy(targets) => {
            let a = x[0];
            if a.rank() != 2 || a.shape()[0] != targets.len() {
                return Err(mismatch(op, x));
            }
            let classes = a.shape()[1];
            let mut data = Vec::with_capacity(targets.len());
            for (row, &t) in a.data().chunks(classes).zip(targets) {
                if t >= classes {
                    return Err(DiffError::IndexOutOfRange {
                        op: op.name(),
                        index: t,
                        bound: classes,
                    });
                }
                data.push(lse(row) - row[t]);
            }
            Tensor::from_parts(vec![targets.len()], data)
        }
        Primitive::MaskedMean(mask) => {
            let a = x[0];
            if mask.len() != a.len() {
                return Err(DiffError::ShapeMismatch {
                    op: op.name(),
                    shapes: vec![a.shape().to_vec(), vec![mask.len()]],
                });
            }
            let total: f64 = mask.iter().sum();
            if total <= 0.0 {
                return Err(DiffError::EmptyMask);
            }
            let s: f64 = a.data().iter().zip(mask).map(|(v, m)| v * m).sum();
            Tensor::scalar(s / total)
        }
    };
    Ok(out)
}

/// Local vector-Jacobian products, one per operand; `None` where the operand
/// does not need a gradient.
fn adjoint(op: &Primitive, x: &[&Tensor], needs: &[bool], out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
    let mut local = match op {
        Primitive::Add | Primitive::Sub => {
            let (a, b) = (x[0], x[1]);
            let da = g.clone();
            let sign = if matches!(op, Primitive::Add) { 1.0 } else { -1.0 };
            let db = if a.shape() == b.shape() {
                Tensor::from_parts(b.shape().to_vec(), g.data().iter().map(|v| sign * v).collect())
            } else {
                let n = b.len();
                let mut acc = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (s, v) in acc.iter_mut().zip(row) {
                        *s += sign * v;
                    }
                }
                Tensor::from_parts(b.shape().to_vec(), acc)
            };
            vec![da, db]
        }
        Primitive::Mul => {
            let (a, b) = (x[0], x[1]);
            let da = g.data().iter().zip(b.data()).map(|(u, v)| u * v).collect();
            let db = g.data().iter().zip(a.data()).map(|(u, v)| u * v).collect();
            vec![
                Tensor::from_parts(a.shape().to_vec(), da),
                Tensor::from_parts(b.shape().to_vec(), db),
            ]
        }
        Primitive::Scale(c) => {
            vec![Tensor::from_parts(
                x[0].shape().to_vec(),
                g.data().iter().map(|v| v * c).collect(),
            )]
        }
        Primitive::MatMul => {
            let (a, b) = (x[0], x[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            // dA = G B^T, dB = A^T G
            let mut da = vec![0.0; if needs[0] { m * k } else { 0 }];
            for i in 0..m * usize::from(needs[0]) {
                let grow = &g.data()[i * n..(i + 1) * n];
                for p in 0..k {
                    let brow = &b.data()[p * n..(p + 1) * n];
                    da[i * k + p] = grow.iter().zip(brow).map(|(u, v)| u * v).sum();
                }
            }
            let mut db = vec![0.0; if needs[1] { k * n } else { 0 }];
            for i in 0..m * usize::from(needs[1]) {
                let grow = &g.data()[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a.data()[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let dst = &mut db[p * n..(p + 1) * n];
                    for (d, u) in dst.iter_mut().zip(grow) {
                        *d += av * u;
                    }
                }
            }
            return vec![
                needs[0].then(|| Tensor::from_parts(a.shape().to_vec(), da)),
                needs[1].then(|| Tensor::from_parts(b.shape().to_vec(), db)),
            ];
        }
        Primitive::Embedding(ids) => {
            let table = x[0];
            let dim = table.shape()[1];
            let mut dt = vec![0.0; table.len()];
            for (row, &id) in g.data().chunks(dim).zip(ids) {
                for (d, u) in dt[id * dim..(id + 1) * dim].iter_mut().zip(row) {
                    *d += u;
                }
            }
            vec![Tensor::from_parts(table.shape().to_vec(), dt)]
        }
        Primitive::Relu => {
            let d = x[0]
                .data()
                .iter()
                .zip(g.data())
                .map(|(v, u)| if *v > 0.0 { *u } else { 0.0 })
                .collect();
            vec![Tensor::from_parts(x[0].shape().to_vec(), d)]
        }
        Primitive::Tanh => {
            let d = out
                .data()
                .iter()
                .zip(g.data())
                .map(|(y, u)| u * (1.0 - y * y))
                .collect();
            vec![Tensor::from_parts(x[0].shape().to_vec(), d)]
        }
        Primitive::LogSumExp => {
            let a = x[0];
            let n = a.last_dim();
            let mut d = Vec::with_capacity(a.len());
            for ((row, l), u) in a.data().chunks(n).zip(out.data()).zip(g.data()) {
                d.extend(row.iter().map(|v| u * (v - l).exp()));
            }
            vec![Tensor::from_parts(a.shape().to_vec(), d)]
        }
        Primitive::SoftmaxCrossEntropy(targets) => {
            let a = x[0];
            let classes = a.shape()[1];
            let mut d = Vec::with_capacity(a.len());
            for ((row, &t), u) in a.data().chunks(classes).zip(targets).zip(g.data()) {
                let l = lse(row);
                d.extend(row.iter().enumerate().map(|(j, v)| {
                    let p = (v - l).exp();
                    u * (p - if j == t { 1.0 } else { 0.0 })
                }));
            }
            vec![Tensor::from_parts(a.shape().to_vec(), d)]
        }
        Primitive::MaskedMean(mask) => {
            let total: f64 = mask.iter().sum();
            let u = g.data()[0];
            let d = mask.iter().map(|m| u * m / total).collect();
            vec![Tensor::from_parts(x[0].shape().to_vec(), d)]
        }
    };
    local.drain(..).zip(needs).map(|(t, &need)| need.then_some(t)).collect()
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let dst = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (d, bv) in dst.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *d += av * bv;
            }
        }
    }
    out
}
