//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records operations as they are built (define-by-run), holding
//! each node's forward value. Nodes are appended in topological order, so the
//! backward pass is a single reverse sweep. The op set is the minimum needed
//! for fully-connected classifiers with vector-quantized bottlenecks:
//! `matmul`, `add`, `relu`, `softmax`, `cross_entropy`, `squared_l2`,
//! `slice`, `concat`, plus `stop_gradient` and a straight-through node for
//! gradients across non-differentiable quantization.
//!
//! Everything is `f64`; forward evaluation is deterministic and every op
//! rejects non-finite outputs.

pub mod gradcheck;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf { trainable: bool },
    Add { lhs: NodeId, rhs: NodeId, row_broadcast: bool },
    Sub { lhs: NodeId, rhs: NodeId },
    Mul { lhs: NodeId, rhs: NodeId },
    Scale { src: NodeId, factor: f64 },
    MatMul { lhs: NodeId, rhs: NodeId },
    Relu { src: NodeId },
    Softmax { src: NodeId },
    CrossEntropy { logits: NodeId, labels: Vec<usize> },
    SquaredL2 { src: NodeId },
    Sum { src: NodeId },
    Slice { src: NodeId, start: usize, len: usize },
    Concat { parts: Vec<NodeId> },
    Reshape { src: NodeId },
    GatherRows { src: NodeId, indices: Vec<usize> },
    StopGradient { src: NodeId },
    StraightThrough { grad_path: NodeId },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::MatMul { .. } => "matmul",
            Op::Relu { .. } => "relu",
            Op::Softmax { .. } => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SquaredL2 { .. } => "squared_l2",
            Op::Sum { .. } => "sum",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Reshape { .. } => "reshape",
            Op::GatherRows { .. } => "gather_rows",
            Op::StopGradient { .. } => "stop_gradient",
            Op::StraightThrough { .. } => "straight_through",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// A gradient graph: ordered operation records with their forward values.
///
/// Rebuilt per batch; parents always precede children, so the node list is
/// its own topological order.
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every parameter node.
///
/// Non-parameter leaves carry no entry.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Node ids that received a gradient.
    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.grads.iter().enumerate().filter(|(_, g)| g.is_some()).map(|(i, _)| NodeId(i))
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// A constant leaf: no gradient is reported for it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { trainable: false }, value)
    }

    /// A trainable leaf: `backward` reports its gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { trainable: true }, value)
    }

    fn checked(&mut self, op: Op) -> Result<NodeId> {
        let value = eval_op(&op, &|id: NodeId| &self.nodes[id.0].value)?;
        Ok(self.push(op, value))
    }

    /// Element-wise sum. `rhs` may also be a 1-D vector matching the column
    /// count of a 2-D `lhs`; it is then added to every row.
    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (ls, rs) = (self.value(lhs).shape(), self.value(rhs).shape());
        let row_broadcast = ls.len() == 2 && rs.len() == 1 && rs[0] == ls[1];
        if !row_broadcast && ls != rs {
            return Err(shape_mismatch("add", ls, rs));
        }
        self.checked(Op::Add { lhs, rhs, row_broadcast })
    }

    pub fn sub(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (ls, rs) = (self.value(lhs).shape(), self.value(rhs).shape());
        if ls != rs {
            return Err(shape_mismatch("sub", ls, rs));
        }
        self.checked(Op::Sub { lhs, rhs })
    }

    /// Element-wise product of same-shape tensors.
    pub fn mul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (ls, rs) = (self.value(lhs).shape(), self.value(rhs).shape());
        if ls != rs {
            return Err(shape_mismatch("mul", ls, rs));
        }
        self.checked(Op::Mul { lhs, rhs })
    }

    pub fn scale(&mut self, src: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(Error::Numeric(format!("scale by non-finite {factor}")));
        }
        self.checked(Op::Scale { src, factor })
    }

    /// `[m,k] x [k,n] -> [m,n]` matrix product.
    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (ls, rs) = (self.value(lhs).shape(), self.value(rhs).shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(shape_mismatch("matmul", ls, rs));
        }
        self.checked(Op::MatMul { lhs, rhs })
    }

    pub fn relu(&mut self, src: NodeId) -> Result<NodeId> {
        self.checked(Op::Relu { src })
    }

    /// Row-wise softmax of a 1-D or 2-D tensor, computed with
    /// max-subtraction.
    pub fn softmax(&mut self, src: NodeId) -> Result<NodeId> {
        let rank = self.value(src).rank();
        if rank == 0 || rank > 2 {
            return Err(Error::Contract(format!(
                "softmax expects a 1-D or 2-D tensor, got shape {:?}",
                self.value(src).shape()
            )));
        }
        self.checked(Op::Softmax { src })
    }

    /// Mean over rows of `-log softmax(logits_row)[label_row]`.
    ///
    /// `logits` is `[C]` with one label or `[B, C]` with `B` labels.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let t = self.value(logits);
        let (rows, cols) = match t.rank() {
            1 => (1, t.shape()[0]),
            2 => (t.shape()[0], t.shape()[1]),
            _ => {
                return Err(Error::Contract(format!(
                    "cross_entropy expects 1-D or 2-D logits, got shape {:?}",
                    t.shape()
                )))
            }
        };
        if labels.len() != rows {
            return Err(Error::Contract(format!(
                "cross_entropy got {} labels for {rows} logit rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::Contract(format!(
                "cross_entropy label {bad} out of range for {cols} classes"
            )));
        }
        self.checked(Op::CrossEntropy { logits, labels: labels.to_vec() })
    }

    /// Sum of squares of all elements, as a scalar.
    pub fn squared_l2(&mut self, src: NodeId) -> Result<NodeId> {
        self.checked(Op::SquaredL2 { src })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, src: NodeId) -> Result<NodeId> {
        self.checked(Op::Sum { src })
    }

    /// `len` elements of the flattened source starting at `start`, as 1-D.
    pub fn slice(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let numel = self.value(src).numel();
        if start + len > numel {
            return Err(Error::Contract(format!(
                "slice [{start}, {}) out of range for {numel} elements",
                start + len
            )));
        }
        self.checked(Op::Slice { src, start, len })
    }

    /// Flattens every part and joins them into one 1-D tensor.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        self.checked(Op::Concat { parts: parts.to_vec() })
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, src: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(src).numel() {
            return Err(Error::Contract(format!(
                "reshape to {:?} ({numel} values) from {} values",
                shape,
                self.value(src).numel()
            )));
        }
        let value = self.value(src).reshaped(shape)?;
        Ok(self.push(Op::Reshape { src }, value))
    }

    /// Selects rows of a 2-D `[K, D]` source: output `[indices.len(), D]`.
    ///
    /// The backward pass scatter-adds into the selected rows, so rows never
    /// gathered receive exactly zero gradient.
    pub fn gather_rows(&mut self, src: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = self.value(src);
        if t.rank() != 2 {
            return Err(Error::Contract(format!(
                "gather_rows expects a 2-D source, got shape {:?}",
                t.shape()
            )));
        }
        let k = t.shape()[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::Contract(format!(
                "gather_rows index {bad} out of range for {k} rows"
            )));
        }
        self.checked(Op::GatherRows { src, indices: indices.to_vec() })
    }

    /// Identity forward, zero gradient to every ancestor.
    pub fn stop_gradient(&mut self, src: NodeId) -> NodeId {
        let value = self.value(src).clone();
        self.push(Op::StopGradient { src }, value)
    }

    /// Forward value is exactly `value`; the backward pass hands the incoming
    /// gradient to `grad_path` unchanged. This is the straight-through node:
    /// `grad_path + stop_gradient(value - grad_path)` with a bit-exact
    /// forward.
    pub fn straight_through(&mut self, grad_path: NodeId, value: Tensor) -> Result<NodeId> {
        if self.value(grad_path).shape() != value.shape() {
            return Err(shape_mismatch(
                "straight_through",
                self.value(grad_path).shape(),
                value.shape(),
            ));
        }
        Ok(self.push(Op::StraightThrough { grad_path }, value))
    }

    /// Reverse sweep from a scalar `loss` node.
    ///
    /// Returns the gradient of the loss for every parameter node; constant
    /// leaves get no entry.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "loss node must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at node {i} ({}), flat index {bad}",
                    self.nodes[i].op.name()
                )));
            }
            self.accumulate_parents(i, &g, &mut grads);
            // Keep only entries that still matter: parameters.
            if matches!(self.nodes[i].op, Op::Leaf { trainable: true }) {
                grads[i] = Some(g);
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|values| {
                    let shape = self.nodes[i].value.shape().to_vec();
                    Tensor::new(shape, values).expect("gradient checked finite")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate_parents(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut bump = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.numel()]);
            f(slot);
        };
        let val = |id: NodeId| self.nodes[id.0].value.values();

        match &self.nodes[i].op {
            Op::Leaf { .. } | Op::StopGradient { .. } => {}
            Op::Add { lhs, rhs, row_broadcast } => {
                bump(*lhs, &mut |d| add_assign(d, g));
                if *row_broadcast {
                    let cols = self.nodes[rhs.0].value.numel();
                    bump(*rhs, &mut |d| {
                        for (j, gv) in g.iter().enumerate() {
                            d[j % cols] += gv;
                        }
                    });
                } else {
                    bump(*rhs, &mut |d| add_assign(d, g));
                }
            }
            Op::Sub { lhs, rhs } => {
                bump(*lhs, &mut |d| add_assign(d, g));
                bump(*rhs, &mut |d| {
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv -= gv;
                    }
                });
            }
            Op::Mul { lhs, rhs } => {
                let (lv, rv) = (val(*lhs), val(*rhs));
                bump(*lhs, &mut |d| {
                    for ((dv, gv), rv) in d.iter_mut().zip(g).zip(rv) {
                        *dv += gv * rv;
                    }
                });
                bump(*rhs, &mut |d| {
                    for ((dv, gv), lv) in d.iter_mut().zip(g).zip(lv) {
                        *dv += gv * lv;
                    }
                });
            }
            Op::Scale { src, factor } => {
                bump(*src, &mut |d| {
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv += factor * gv;
                    }
                });
            }
            Op::MatMul { lhs, rhs } => {
                let a = &self.nodes[lhs.0].value;
                let b = &self.nodes[rhs.0].value;
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let (av, bv) = (a.values(), b.values());
                bump(*lhs, &mut |d| {
                    // dA = g . B^T
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                d[i * k + p] += gij * bv[p * n + j];
                            }
                        }
                    }
                });
                bump(*rhs, &mut |d| {
                    // dB = A^T . g
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                d[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Relu { src } => {
                let sv = val(*src);
                bump(*src, &mut |d| {
                    for ((dv, gv), s) in d.iter_mut().zip(g).zip(sv) {
                        if *s > 0.0 {
                            *dv += gv;
                        }
                    }
                });
            }
            Op::Softmax { src } => {
                let y = &self.nodes[i].value;
                let cols = y.cols();
                let yv = y.values();
                bump(*src, &mut |d| {
                    for r in 0..y.rows() {
                        let (ys, gs) =
                            (&yv[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                        for c in 0..cols {
                            d[r * cols + c] += ys[c] * (gs[c] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels } => {
                let gs = g[0];
                let t = &self.nodes[logits.0].value;
                let (rows, cols) = (t.rows(), t.cols());
                let tv = t.values();
                let inv_rows = 1.0 / rows as f64;
                bump(*logits, &mut |d| {
                    for r in 0..rows {
                        let row = &tv[r * cols..(r + 1) * cols];
                        let p = softmax_row(row);
                        for c in 0..cols {
                            let indicator = if c == labels[r] { 1.0 } else { 0.0 };
                            d[r * cols + c] += gs * inv_rows * (p[c] - indicator);
                        }
                    }
                });
            }
            Op::SquaredL2 { src } => {
                let gs = g[0];
                let sv = val(*src);
                bump(*src, &mut |d| {
                    for (dv, s) in d.iter_mut().zip(sv) {
                        *dv += 2.0 * s * gs;
                    }
                });
            }
            Op::Sum { src } => {
                let gs = g[0];
                bump(*src, &mut |d| {
                    for dv in d.iter_mut() {
                        *dv += gs;
                    }
                });
            }
            Op::Slice { src, start, .. } => {
                bump(*src, &mut |d| {
                    for (j, gv) in g.iter().enumerate() {
                        d[start + j] += gv;
                    }
                });
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for part in parts {
                    let n = self.nodes[part.0].value.numel();
                    let seg = &g[offset..offset + n];
                    bump(*part, &mut |d| add_assign(d, seg));
                    offset += n;
                }
            }
            Op::Reshape { src } => {
                bump(*src, &mut |d| add_assign(d, g));
            }
            Op::GatherRows { src, indices } => {
                let d_cols = self.nodes[src.0].value.shape()[1];
                bump(*src, &mut |d| {
                    for (row, &idx) in indices.iter().enumerate() {
                        for c in 0..d_cols {
                            d[idx * d_cols + c] += g[row * d_cols + c];
                        }
                    }
                });
            }
            Op::StraightThrough { grad_path } => {
                bump(*grad_path, &mut |d| add_assign(d, g));
            }
        }
    }

    /// Re-evaluates the graph forward with some leaf values replaced,
    /// returning the value at `target`.
    ///
    /// `stop_gradient` nodes are frozen at their recorded values and
    /// straight-through nodes keep their recorded offset, so the replayed
    /// function is exactly the one the backward pass differentiates. This is
    /// the probe used by [`gradcheck`].
    pub fn replay(&self, target: NodeId, overrides: &[(NodeId, Tensor)]) -> Result<Tensor> {
        let mut computed: Vec<Tensor> = Vec::with_capacity(target.0 + 1);
        for i in 0..=target.0 {
            let node = &self.nodes[i];
            let value = match &node.op {
                Op::Leaf { .. } => overrides
                    .iter()
                    .find(|(id, _)| id.0 == i)
                    .map(|(_, t)| t.clone())
                    .unwrap_or_else(|| node.value.clone()),
                // Frozen: a stop-gradient operand is a constant of the
                // differentiated function, held at its recorded value.
                Op::StopGradient { src } => self.nodes[src.0].value.clone(),
                Op::StraightThrough { grad_path } => {
                    let base = self.nodes[grad_path.0].value.values();
                    let new = computed[grad_path.0].values();
                    let out: Vec<f64> = node
                        .value
                        .values()
                        .iter()
                        .zip(new.iter().zip(base))
                        .map(|(v, (n, b))| v + (n - b))
                        .collect();
                    Tensor::new(node.value.shape().to_vec(), out)?
                }
                Op::Reshape { src } => computed[src.0].reshaped(node.value.shape().to_vec())?,
                op => eval_op(op, &|id: NodeId| &computed[id.0])?,
            };
            computed.push(value);
        }
        Ok(computed.pop().expect("target computed"))
    }

    fn is_param(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf { trainable: true })
    }

    /// All parameter nodes, in insertion order.
    pub fn params(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).map(NodeId).filter(|id| self.is_param(*id)).collect()
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn shape_mismatch(op: &str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Contract(format!("{op}: shape mismatch between {lhs:?} and {rhs:?}"))
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Forward evaluation for every arithmetic op, shared between graph
/// construction and [`Tape::replay`].
fn eval_op<'a>(op: &Op, value_of: &dyn Fn(NodeId) -> &'a Tensor) -> Result<Tensor> {
    let out = match op {
        Op::Leaf { .. }
        | Op::StopGradient { .. }
        | Op::StraightThrough { .. }
        | Op::Reshape { .. } => {
            unreachable!("{} handled by caller", op.name())
        }
        Op::Add { lhs, rhs, row_broadcast } => {
            let (a, b) = (value_of(*lhs), value_of(*rhs));
            let values = if *row_broadcast {
                let cols = b.numel();
                a.values().iter().enumerate().map(|(i, v)| v + b.values()[i % cols]).collect()
            } else {
                a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect()
            };
            Tensor::new(a.shape().to_vec(), values)
        }
        Op::Sub { lhs, rhs } => {
            let (a, b) = (value_of(*lhs), value_of(*rhs));
            let values = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
            Tensor::new(a.shape().to_vec(), values)
        }
        Op::Mul { lhs, rhs } => {
            let (a, b) = (value_of(*lhs), value_of(*rhs));
            let values = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
            Tensor::new(a.shape().to_vec(), values)
        }
        Op::Scale { src, factor } => {
            let a = value_of(*src);
            Tensor::new(a.shape().to_vec(), a.values().iter().map(|v| v * factor).collect())
        }
        Op::MatMul { lhs, rhs } => {
            let (a, b) = (value_of(*lhs), value_of(*rhs));
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let (av, bv) = (a.values(), b.values());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, b) in orow.iter_mut().zip(brow) {
                        *o += aip * b;
                    }
                }
            }
            Tensor::new(vec![m, n], out)
        }
        Op::Relu { src } => {
            let a = value_of(*src);
            Tensor::new(a.shape().to_vec(), a.values().iter().map(|v| v.max(0.0)).collect())
        }
        Op::Softmax { src } => {
            let a = value_of(*src);
            let cols = a.cols();
            let mut values = Vec::with_capacity(a.numel());
            for r in 0..a.rows() {
                values.extend(softmax_row(a.row(r)));
            }
            let _ = cols;
            Tensor::new(a.shape().to_vec(), values)
        }
        Op::CrossEntropy { logits, labels } => {
            let t = value_of(*logits);
            let mut total = 0.0;
            for (r, &label) in labels.iter().enumerate() {
                let row = t.row(r);
                total += log_sum_exp(row) - row[label];
            }
            Tensor::scalar(total / labels.len() as f64)
        }
        Op::SquaredL2 { src } => {
            let a = value_of(*src);
            Tensor::scalar(a.values().iter().map(|v| v * v).sum())
        }
        Op::Sum { src } => Tensor::scalar(value_of(*src).values().iter().sum()),
        Op::Slice { src, start, len } => {
            let a = value_of(*src);
            Tensor::from_vec(a.values()[*start..start + len].to_vec())
        }
        Op::Concat { parts } => {
            let mut values = Vec::new();
            for part in parts {
                values.extend_from_slice(value_of(*part).values());
            }
            Tensor::from_vec(values)
        }
        Op::GatherRows { src, indices } => {
            let a = value_of(*src);
            let d = a.shape()[1];
            let mut values = Vec::with_capacity(indices.len() * d);
            for &idx in indices {
                values.extend_from_slice(&a.values()[idx * d..(idx + 1) * d]);
            }
            Tensor::new(vec![indices.len(), d], values)
        }
    };
    out.map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("{}: {msg}", op.name())),
        other => other,
    })
}
