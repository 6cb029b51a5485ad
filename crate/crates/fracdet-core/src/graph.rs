//! Reverse-mode autodiff over an append-only operation tape.
//!
//! Forward calls record one node per operation (output value, operation id,
//! input node refs plus whatever the backward rule needs). The tape is
//! acyclic by construction: inputs always precede outputs, and `backward`
//! walks nodes in exact reverse append order, seeding the loss gradient
//! with 1 and accumulating into every use site.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::math;
use crate::ops::{self, Padding, PoolMode, PoolWindow};
use crate::rng::Rng;
use crate::tensor::{strides_of, unravel, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Hadamard { a: NodeId, b: NodeId },
    Scale { input: NodeId, factor: f64 },
    Matmul { a: NodeId, b: NodeId },
    Conv2d { input: NodeId, kernel: NodeId, bias: Option<NodeId>, stride: usize, padding: Padding },
    DepthwiseConv2d { input: NodeId, kernel: NodeId, bias: Option<NodeId> },
    Pool { input: NodeId, mode: PoolMode, window: PoolWindow, stride: usize, argmax: Vec<usize> },
    Softmax { input: NodeId, axis: usize },
    LayerNorm { input: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    L2Normalize { input: NodeId, axis: usize, eps: f64 },
    Relu { input: NodeId },
    Gelu { input: NodeId },
    Sigmoid { input: NodeId },
    Reshape { input: NodeId },
    Permute { input: NodeId, perm: Vec<usize> },
    Concat { parts: Vec<NodeId>, axis: usize },
    Gather { input: NodeId, indices: Vec<usize> },
    ScatterAdd { input: NodeId, indices: Vec<usize> },
    Dropout { input: NodeId, mask: Vec<f64> },
    Sum { input: NodeId },
    BceWithLogits { logits: NodeId, targets: Tensor, pos_weight: f64 },
    L1Loss { pred: NodeId, target: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// The autodiff tape.
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the given node, if it received one.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf; gradient accumulation follows `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let needs = t.requires_grad;
        self.push(t, Op::Leaf, needs)
    }

    /// Inserts a leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let mut t = t;
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    // ── Recorded operations ────────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::add(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::sub(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub { a, b }, needs))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::hadamard(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Hadamard { a, b }, needs))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId> {
        let out = ops::scale(self.value(input), factor)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Scale { input, factor }, needs))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Matmul { a, b }, needs))
    }

    /// `x @ w + bias`, recorded as its constituent ops.
    pub fn linear(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let out = ops::conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let needs =
            self.needs(input) || self.needs(kernel) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Conv2d { input, kernel, bias, stride, padding }, needs))
    }

    pub fn depthwise_conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
    ) -> Result<NodeId> {
        let out = ops::depthwise_conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
        )?;
        let needs =
            self.needs(input) || self.needs(kernel) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::DepthwiseConv2d { input, kernel, bias }, needs))
    }

    pub fn pool2d(
        &mut self,
        input: NodeId,
        mode: PoolMode,
        window: PoolWindow,
        stride: usize,
    ) -> Result<NodeId> {
        let (out, argmax) = ops::pool2d_with_argmax(self.value(input), mode, window, stride)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Pool { input, mode, window, stride, argmax }, needs))
    }

    pub fn softmax(&mut self, input: NodeId, axis: usize) -> Result<NodeId> {
        let out = ops::softmax(self.value(input), axis)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Softmax { input, axis }, needs))
    }

    pub fn layer_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let out = ops::layer_norm(self.value(input), self.value(gamma), self.value(beta), eps)?;
        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(out, Op::LayerNorm { input, gamma, beta, eps }, needs))
    }

    pub fn l2_normalize(&mut self, input: NodeId, axis: usize, eps: f64) -> Result<NodeId> {
        let out = ops::l2_normalize(self.value(input), axis, eps)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::L2Normalize { input, axis, eps }, needs))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let out = ops::relu(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Relu { input }, needs))
    }

    pub fn gelu(&mut self, input: NodeId) -> Result<NodeId> {
        let out = ops::gelu(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Gelu { input }, needs))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> Result<NodeId> {
        let out = ops::sigmoid(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Sigmoid { input }, needs))
    }

    pub fn reshape(&mut self, input: NodeId, new_shape: &[usize]) -> Result<NodeId> {
        let out = ops::reshape(self.value(input), new_shape)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Reshape { input }, needs))
    }

    pub fn permute(&mut self, input: NodeId, perm: &[usize]) -> Result<NodeId> {
        let out = ops::permute(self.value(input), perm)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Permute { input, perm: perm.to_vec() }, needs))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat(&tensors, axis)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::Concat { parts: parts.to_vec(), axis }, needs))
    }

    /// Flat-index gather into a rank-1 node.
    pub fn gather(&mut self, input: NodeId, indices: &[usize]) -> Result<NodeId> {
        let out = ops::gather(self.value(input), indices)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Gather { input, indices: indices.to_vec() }, needs))
    }

    /// Scatter-add of a rank-1 node into `out_numel` slots.
    pub fn scatter_add(&mut self, input: NodeId, indices: &[usize], out_numel: usize) -> Result<NodeId> {
        let out = ops::scatter_add(self.value(input), indices, out_numel)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::ScatterAdd { input, indices: indices.to_vec() }, needs))
    }

    pub fn dropout(&mut self, input: NodeId, p: f64, rng: &mut Rng, train: bool) -> Result<NodeId> {
        let (out, mask) = ops::dropout_with_mask(self.value(input), p, rng, train)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Dropout { input, mask }, needs))
    }

    /// Full reduction to a scalar.
    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        let total: f64 = self.value(input).data().iter().sum();
        let out = Tensor::from_op("sum", vec![1], vec![total])?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Sum { input }, needs))
    }

    /// Mean over all elements (sum followed by a constant scale).
    pub fn mean(&mut self, input: NodeId) -> Result<NodeId> {
        let n = self.value(input).numel();
        let s = self.sum(input)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Numerically stable mean binary cross-entropy on logits:
    /// `mean(max(z,0) - z*y + log(1 + exp(-|z|)))`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &Tensor) -> Result<NodeId> {
        self.bce_with_logits_weighted(logits, targets, 1.0)
    }

    /// BCE with the positive-class terms scaled by `pos_weight` (counter
    /// for the background/foreground cell imbalance in detection).
    pub fn bce_with_logits_weighted(
        &mut self,
        logits: NodeId,
        targets: &Tensor,
        pos_weight: f64,
    ) -> Result<NodeId> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: z.shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        let n = z.numel() as f64;
        let mut total = 0.0;
        for (&zv, &yv) in z.data().iter().zip(targets.data().iter()) {
            let w = if yv > 0.0 { pos_weight } else { 1.0 };
            total += w * (zv.max(0.0) - zv * yv + math::log1p(math::exp(-math::fabs(zv))));
        }
        let out = Tensor::from_op("bce_with_logits", vec![1], vec![total / n])?;
        let needs = self.needs(logits);
        Ok(self.push(
            out,
            Op::BceWithLogits { logits, targets: targets.clone(), pos_weight },
            needs,
        ))
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "l1_loss",
                lhs: p.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let n = p.numel() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data().iter())
            .map(|(&a, &b)| math::fabs(a - b))
            .sum();
        let out = Tensor::from_op("l1_loss", vec![1], vec![total / n])?;
        let needs = self.needs(pred);
        Ok(self.push(out, Op::L1Loss { pred, target: target.clone() }, needs))
    }

    // ── Backward ───────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Returns per-node gradients; leaves
    /// with `requires_grad` and every interior node on a differentiable
    /// path receive one.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(TensorError::LossNotScalar {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::filled(loss_value.shape(), 1.0)?);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(NodeId(i), &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: NodeId, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out_value = &self.nodes[id.0].value;
        match &self.nodes[id.0].op {
            Op::Leaf => {}

            Op::Add { a, b } => {
                for &side in &[*a, *b] {
                    if self.needs(side) {
                        let reduced = ops::reduce_to_shape(
                            g.data(),
                            g.shape(),
                            self.value(side).shape(),
                        );
                        self.accumulate(grads, side, reduced)?;
                    }
                }
            }

            Op::Sub { a, b } => {
                if self.needs(*a) {
                    let reduced = ops::reduce_to_shape(g.data(), g.shape(), self.value(*a).shape());
                    self.accumulate(grads, *a, reduced)?;
                }
                if self.needs(*b) {
                    let neg: Vec<f64> = g.data().iter().map(|&v| -v).collect();
                    let reduced = ops::reduce_to_shape(&neg, g.shape(), self.value(*b).shape());
                    self.accumulate(grads, *b, reduced)?;
                }
            }

            Op::Hadamard { a, b } => {
                let (a_exp, b_exp) = expand_pair(self.value(*a), self.value(*b), g.shape());
                if self.needs(*a) {
                    let full: Vec<f64> = g.data().iter().zip(b_exp.iter()).map(|(&gv, &bv)| gv * bv).collect();
                    let reduced = ops::reduce_to_shape(&full, g.shape(), self.value(*a).shape());
                    self.accumulate(grads, *a, reduced)?;
                }
                if self.needs(*b) {
                    let full: Vec<f64> = g.data().iter().zip(a_exp.iter()).map(|(&gv, &av)| gv * av).collect();
                    let reduced = ops::reduce_to_shape(&full, g.shape(), self.value(*b).shape());
                    self.accumulate(grads, *b, reduced)?;
                }
            }

            Op::Scale { input, factor } => {
                if self.needs(*input) {
                    let dg: Vec<f64> = g.data().iter().map(|&v| v * factor).collect();
                    self.accumulate(grads, *input, dg)?;
                }
            }

            Op::Matmul { a, b } => {
                self.backward_matmul(*a, *b, g, grads)?;
            }

            Op::Conv2d { input, kernel, bias, stride, padding } => {
                self.backward_conv2d(*input, *kernel, *bias, *stride, *padding, g, grads)?;
            }

            Op::DepthwiseConv2d { input, kernel, bias } => {
                self.backward_depthwise(*input, *kernel, *bias, g, grads)?;
            }

            Op::Pool { input, mode, window, stride, argmax } => {
                if self.needs(*input) {
                    let in_t = self.value(*input);
                    let mut dg = vec![0.0; in_t.numel()];
                    match mode {
                        PoolMode::Max => {
                            for (out_idx, &src) in argmax.iter().enumerate() {
                                dg[src] += g.data()[out_idx];
                            }
                        }
                        PoolMode::Avg => {
                            backward_avg_pool(in_t, out_value, *window, *stride, g, &mut dg);
                        }
                    }
                    self.accumulate(grads, *input, dg)?;
                }
            }

            Op::Softmax { input, axis } => {
                if self.needs(*input) {
                    let s = out_value.data();
                    let (outer, len, inner) = ops_axis_split(out_value.shape(), *axis);
                    let mut dg = vec![0.0; s.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let mut dot = 0.0;
                            for j in 0..len {
                                dot += g.data()[at(j)] * s[at(j)];
                            }
                            for j in 0..len {
                                dg[at(j)] = s[at(j)] * (g.data()[at(j)] - dot);
                            }
                        }
                    }
                    self.accumulate(grads, *input, dg)?;
                }
            }

            Op::LayerNorm { input, gamma, beta, eps } => {
                self.backward_layer_norm(*input, *gamma, *beta, *eps, g, grads)?;
            }

            Op::L2Normalize { input, axis, eps } => {
                if self.needs(*input) {
                    let x = self.value(*input).data();
                    let y = out_value.data();
                    let (outer, len, inner) = ops_axis_split(out_value.shape(), *axis);
                    let mut dg = vec![0.0; x.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let mut sq = 0.0;
                            for j in 0..len {
                                sq += x[at(j)] * x[at(j)];
                            }
                            let norm = math::sqrt(sq);
                            if norm > *eps {
                                let mut dot = 0.0;
                                for j in 0..len {
                                    dot += g.data()[at(j)] * y[at(j)];
                                }
                                for j in 0..len {
                                    dg[at(j)] = (g.data()[at(j)] - y[at(j)] * dot) / norm;
                                }
                            } else {
                                // Guarded branch: constant denominator eps.
                                for j in 0..len {
                                    dg[at(j)] = g.data()[at(j)] / eps;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *input, dg)?;
                }
            }

            Op::Relu { input } => {
                if self.needs(*input) {
                    let x = self.value(*input).data();
                    let dg: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(x.iter())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    self.accumulate(grads, *input, dg)?;
                }
            }

            Op::Gelu { input } => {
                if self.needs(*input) {
                    let x = self.value(*input).data();
                    let dg: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(x.iter())
                        .map(|(&gv, &xv)| gv * math::gelu_grad(xv))
                        .collect();
                    self.accumulate(grads, *input, dg)?;
                }
            }

            Op::Sigmoid { input } => {
                if self.needs(*input) {
                    let s = out_value.data();
                    let dg: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(s.iter())
                        .map(|(&gv, &sv)| gv * sv * (1.0 - sv))
                        .collect();
                    self.accumulate(grads, *input, dg)?;
                }
            }

            Op::Reshape { input } => {
                if self.needs(*input) {
                    self.accumulate(grads, *input, g.data().to_vec())?;
                }
            }

            Op::Permute { input, perm } => {
                if self.needs(*input) {
                    // Route each output gradient back to its source position.
                    let in_shape = self.value(*input).shape();
                    let in_strides = strides_of(in_shape);
                    let mut dg = vec![0.0; g.numel()];
                    for (flat, &gv) in g.data().iter().enumerate() {
                        let coords = unravel(flat, g.shape());
                        let mut src = 0;
                        for (d, &c) in coords.iter().enumerate() {
                            src += c * in_strides[perm[d]];
                        }
                        dg[src] = gv;
                    }
                    self.accumulate(grads, *input, dg)?;
                }
            }

            Op::Concat { parts, axis } => {
                let out_shape = out_value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut axis_off = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    if self.needs(p) {
                        let mut dg = vec![0.0; self.value(p).numel()];
                        for o in 0..outer {
                            let src = (o * total + axis_off) * inner;
                            let dst = o * len * inner;
                            dg[dst..dst + len * inner]
                                .copy_from_slice(&g.data()[src..src + len * inner]);
                        }
                        self.accumulate(grads, p, dg)?;
                    }
                    axis_off += len;
                }
            }

            Op::Gather { input, indices } => {
                if self.needs(*input) {
                    let mut dg = vec![0.0; self.value(*input).numel()];
                    for (&idx, &gv) in indices.iter().zip(g.data().iter()) {
                        dg[idx] += gv;
                    }
                    self.accumulate(grads, *input, dg)?;
                }
            }

            Op::ScatterAdd { input, indices } => {
                if self.needs(*input) {
                    let dg: Vec<f64> = indices.iter().map(|&idx| g.data()[idx]).collect();
                    self.accumulate(grads, *input, dg)?;
                }
            }

            Op::Dropout { input, mask } => {
                if self.needs(*input) {
                    let dg: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(mask.iter())
                        .map(|(&gv, &m)| gv * m)
                        .collect();
                    self.accumulate(grads, *input, dg)?;
                }
            }

            Op::Sum { input } => {
                if self.needs(*input) {
                    let dg = vec![g.data()[0]; self.value(*input).numel()];
                    self.accumulate(grads, *input, dg)?;
                }
            }

            Op::BceWithLogits { logits, targets, pos_weight } => {
                if self.needs(*logits) {
                    let z = self.value(*logits).data();
                    let n = z.len() as f64;
                    let g0 = g.data()[0];
                    let dg: Vec<f64> = z
                        .iter()
                        .zip(targets.data().iter())
                        .map(|(&zv, &yv)| {
                            let w = if yv > 0.0 { *pos_weight } else { 1.0 };
                            g0 * w * (math::sigmoid(zv) - yv) / n
                        })
                        .collect();
                    self.accumulate(grads, *logits, dg)?;
                }
            }

            Op::L1Loss { pred, target } => {
                if self.needs(*pred) {
                    let p = self.value(*pred).data();
                    let n = p.len() as f64;
                    let g0 = g.data()[0];
                    let dg: Vec<f64> = p
                        .iter()
                        .zip(target.data().iter())
                        .map(|(&a, &b)| {
                            let d = a - b;
                            let sign = if d > 0.0 {
                                1.0
                            } else if d < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            g0 * sign / n
                        })
                        .collect();
                    self.accumulate(grads, *pred, dg)?;
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, contribution: Vec<f64>) -> Result<()> {
        match &mut grads[id.0] {
            Some(existing) => {
                for (slot, add) in existing.data_mut().iter_mut().zip(contribution.iter()) {
                    *slot += add;
                }
                Ok(())
            }
            slot @ None => {
                let shape = self.value(id).shape().to_vec();
                *slot = Some(Tensor::from_op("backward", shape, contribution)?);
                Ok(())
            }
        }
    }

    fn backward_matmul(&self, a: NodeId, b: NodeId, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let a_t = self.value(a);
        let b_t = self.value(b);
        let (batch, m, k, n, b_batched) = crate::ops::matmul_dims(a_t, b_t)?;
        let g_data = g.data();
        if self.needs(a) {
            // dA[t] = G[t] @ B[t]^T
            let mut da = vec![0.0; a_t.numel()];
            for t in 0..batch {
                let b_off = if b_batched { t * k * n } else { 0 };
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g_data[t * m * n + i * n + j] * b_t.data()[b_off + p * n + j];
                        }
                        da[t * m * k + i * k + p] = acc;
                    }
                }
            }
            self.accumulate(grads, a, da)?;
        }
        if self.needs(b) {
            // dB[t] = A[t]^T @ G[t], summed over the batch when B is shared.
            let mut db = vec![0.0; b_t.numel()];
            for t in 0..batch {
                let b_off = if b_batched { t * k * n } else { 0 };
                for p in 0..k {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += a_t.data()[t * m * k + i * k + p] * g_data[t * m * n + i * n + j];
                        }
                        db[b_off + p * n + j] += acc;
                    }
                }
            }
            self.accumulate(grads, b, db)?;
        }
        Ok(())
    }

    fn backward_layer_norm(
        &self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let x = self.value(input);
        let gamma_t = self.value(gamma);
        let d = *x.shape().last().expect("validated at forward");
        let rows = x.numel() / d;
        let want_input = self.needs(input);
        let want_gamma = self.needs(gamma);
        let want_beta = self.needs(beta);

        let mut dx = if want_input { vec![0.0; x.numel()] } else { Vec::new() };
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        let mut xhat = vec![0.0; d];
        let mut dxhat = vec![0.0; d];
        for r in 0..rows {
            let start = r * d;
            let xs = &x.data()[start..start + d];
            let gs = &g.data()[start..start + d];
            let mean = xs.iter().sum::<f64>() / d as f64;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / math::sqrt(var + eps);
            for j in 0..d {
                xhat[j] = (xs[j] - mean) * inv_std;
                dgamma[j] += gs[j] * xhat[j];
                dbeta[j] += gs[j];
                dxhat[j] = gs[j] * gamma_t.data()[j];
            }
            if want_input {
                let sum_dxhat: f64 = dxhat.iter().sum();
                let sum_dxhat_xhat: f64 = dxhat.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum();
                let d_f = d as f64;
                for j in 0..d {
                    dx[start + j] =
                        inv_std / d_f * (d_f * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                }
            }
        }
        if want_input {
            self.accumulate(grads, input, dx)?;
        }
        if want_gamma {
            self.accumulate(grads, gamma, dgamma)?;
        }
        if want_beta {
            self.accumulate(grads, beta, dbeta)?;
        }
        Ok(())
    }

    fn backward_conv2d(
        &self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: Padding,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let in_t = self.value(input);
        let k_t = self.value(kernel);
        let (n, c_in, h, w) = (in_t.shape()[0], in_t.shape()[1], in_t.shape()[2], in_t.shape()[3]);
        let (c_out, _, kh, kw) = (k_t.shape()[0], k_t.shape()[1], k_t.shape()[2], k_t.shape()[3]);
        let (out_h, out_w) = (g.shape()[2], g.shape()[3]);
        let (pt, _pb, pl, _pr) = crate::ops::resolve_padding(padding, h, w, kh, kw, stride);

        let want_input = self.needs(input);
        let want_kernel = self.needs(kernel);
        let mut d_in = if want_input { vec![0.0; in_t.numel()] } else { Vec::new() };
        let mut d_k = if want_kernel { vec![0.0; k_t.numel()] } else { Vec::new() };

        if want_input || want_kernel {
            for b in 0..n {
                for co in 0..c_out {
                    for oh in 0..out_h {
                        for ow in 0..out_w {
                            let gv = g.data()[((b * c_out + co) * out_h + oh) * out_w + ow];
                            if gv == 0.0 {
                                continue;
                            }
                            for ci in 0..c_in {
                                for r in 0..kh {
                                    let ih = (oh * stride + r) as isize - pt as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    for c in 0..kw {
                                        let iw = (ow * stride + c) as isize - pl as isize;
                                        if iw < 0 || iw >= w as isize {
                                            continue;
                                        }
                                        let in_idx = ((b * c_in + ci) * h + ih as usize) * w + iw as usize;
                                        let k_idx = ((co * c_in + ci) * kh + r) * kw + c;
                                        if want_input {
                                            d_in[in_idx] += gv * k_t.data()[k_idx];
                                        }
                                        if want_kernel {
                                            d_k[k_idx] += gv * in_t.data()[in_idx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if want_input {
            self.accumulate(grads, input, d_in)?;
        }
        if want_kernel {
            self.accumulate(grads, kernel, d_k)?;
        }
        if let Some(bias_id) = bias {
            if self.needs(bias_id) {
                let mut d_b = vec![0.0; c_out];
                for b in 0..n {
                    for co in 0..c_out {
                        for oh in 0..out_h {
                            for ow in 0..out_w {
                                d_b[co] += g.data()[((b * c_out + co) * out_h + oh) * out_w + ow];
                            }
                        }
                    }
                }
                self.accumulate(grads, bias_id, d_b)?;
            }
        }
        Ok(())
    }

    fn backward_depthwise(
        &self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let in_t = self.value(input);
        let k_t = self.value(kernel);
        let (n, channels, h, w) = (in_t.shape()[0], in_t.shape()[1], in_t.shape()[2], in_t.shape()[3]);
        let (kh, kw) = (k_t.shape()[1], k_t.shape()[2]);
        let (pt, _pb, pl, _pr) = crate::ops::resolve_padding(Padding::Same, h, w, kh, kw, 1);

        let want_input = self.needs(input);
        let want_kernel = self.needs(kernel);
        let mut d_in = if want_input { vec![0.0; in_t.numel()] } else { Vec::new() };
        let mut d_k = if want_kernel { vec![0.0; k_t.numel()] } else { Vec::new() };

        if want_input || want_kernel {
            for b in 0..n {
                for ch in 0..channels {
                    for oh in 0..h {
                        for ow in 0..w {
                            let gv = g.data()[((b * channels + ch) * h + oh) * w + ow];
                            if gv == 0.0 {
                                continue;
                            }
                            for r in 0..kh {
                                let ih = (oh + r) as isize - pt as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                for c in 0..kw {
                                    let iw = (ow + c) as isize - pl as isize;
                                    if iw < 0 || iw >= w as isize {
                                        continue;
                                    }
                                    let in_idx = ((b * channels + ch) * h + ih as usize) * w + iw as usize;
                                    let k_idx = (ch * kh + r) * kw + c;
                                    if want_input {
                                        d_in[in_idx] += gv * k_t.data()[k_idx];
                                    }
                                    if want_kernel {
                                        d_k[k_idx] += gv * in_t.data()[in_idx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if want_input {
            self.accumulate(grads, input, d_in)?;
        }
        if want_kernel {
            self.accumulate(grads, kernel, d_k)?;
        }
        if let Some(bias_id) = bias {
            if self.needs(bias_id) {
                let mut d_b = vec![0.0; channels];
                for b in 0..n {
                    for ch in 0..channels {
                        for oh in 0..h {
                            for ow in 0..w {
                                d_b[ch] += g.data()[((b * channels + ch) * h + oh) * w + ow];
                            }
                        }
                    }
                }
                self.accumulate(grads, bias_id, d_b)?;
            }
        }
        Ok(())
    }

}

/// Mirrors the forward window geometry (clipped windows starting at stride
/// multiples) and spreads each output gradient over its true window.
fn backward_avg_pool(
    in_t: &Tensor,
    out_t: &Tensor,
    window: PoolWindow,
    stride: usize,
    g: &Tensor,
    dg: &mut [f64],
) {
    let (n, c, h, w) = (in_t.shape()[0], in_t.shape()[1], in_t.shape()[2], in_t.shape()[3]);
    let (out_h, out_w) = (out_t.shape()[2], out_t.shape()[3]);
    for b in 0..n {
        for ch in 0..c {
            let plane = (b * c + ch) * h * w;
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let (h0, w0, h1, w1) = match window {
                        PoolWindow::Global => (0, 0, h, w),
                        PoolWindow::Square(k) => {
                            let h0 = oh * stride;
                            let w0 = ow * stride;
                            (h0, w0, (h0 + k).min(h), (w0 + k).min(w))
                        }
                    };
                    let gv = g.data()[((b * c + ch) * out_h + oh) * out_w + ow];
                    let count = ((h1 - h0) * (w1 - w0)) as f64;
                    for ih in h0..h1 {
                        for iw in w0..w1 {
                            dg[plane + ih * w + iw] += gv / count;
                        }
                    }
                }
            }
        }
    }
}

fn ops_axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    crate::ops::axis_split(shape, axis)
}

/// Expands two operands elementwise to their broadcast shape.
fn expand_pair(a: &Tensor, b: &Tensor, out_shape: &[usize]) -> (Vec<f64>, Vec<f64>) {
    crate::ops::expand_pair(a, b, out_shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = Rng::seeded(seed);
        let numel = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.uniform(-2.0, 2.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    /// Random projection weights so the check exercises the full Jacobian.
    fn projection(shape: &[usize], seed: u64) -> Tensor {
        rand_tensor(shape, seed ^ 0xABCD)
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::new();
        let x = g.leaf(rand_tensor(&[3, 4], 0).with_grad());
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn quadratic_gradient_is_two_x() {
        let t = rand_tensor(&[2, 5], 1);
        let mut g = Graph::new();
        let x = g.leaf(t.clone().with_grad());
        let sq = g.hadamard(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        for (gv, xv) in grads.get(x).unwrap().data().iter().zip(t.data().iter()) {
            assert!((gv - 2.0 * xv).abs() < 1e-14);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(rand_tensor(&[2, 2], 2).with_grad());
        let y = g.relu(x).unwrap();
        assert!(matches!(
            g.backward(y).unwrap_err(),
            TensorError::LossNotScalar { .. }
        ));
    }

    #[test]
    fn gradient_accumulates_over_use_sites() {
        // y = sum(x) + sum(x) -> dy/dx = 2 everywhere.
        let mut g = Graph::new();
        let x = g.leaf(rand_tensor(&[4], 3).with_grad());
        let a = g.sum(x).unwrap();
        let b = g.sum(x).unwrap();
        let y = g.add(a, b).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn every_operator_passes_one_gradcheck_seed() {
        // One seed per operator as a fast regression net; the acceptance
        // suite runs the full ten-seed sweep.
        let step = 1e-5;
        let tol = 1e-4;

        // conv2d with bias, stride 1, same padding.
        let at = rand_tensor(&[1, 2, 5, 5], 10);
        let kernel = rand_tensor(&[3, 2, 3, 3], 11);
        let bias = rand_tensor(&[3], 12);
        let proj = projection(&[1, 3, 5, 5], 13);
        let res = grad_check(
            |g, x| {
                let k = g.constant(kernel.clone());
                let b = g.constant(bias.clone());
                let y = g.conv2d(x, k, Some(b), 1, Padding::Same)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &at,
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "conv2d: {}", res.max_rel_err);

        // conv2d stride 2.
        let res = grad_check(
            |g, x| {
                let k = g.constant(kernel.clone());
                let y = g.conv2d(x, k, None, 2, Padding::Same)?;
                g.sum(y)
            },
            &at,
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "conv2d stride 2: {}", res.max_rel_err);

        // conv2d gradient w.r.t. kernel and bias.
        let res = grad_check(
            |g, k| {
                let x = g.constant(at.clone());
                let k4 = g.reshape(k, &[3, 2, 3, 3])?;
                let y = g.conv2d(x, k4, None, 1, Padding::Same)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &crate::ops::reshape(&kernel, &[54]).unwrap(),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "conv2d kernel grad: {}", res.max_rel_err);

        // depthwise conv.
        let dw_at = rand_tensor(&[1, 3, 6, 6], 14);
        let dw_kernel = rand_tensor(&[3, 3, 3], 15);
        let dw_proj = projection(&[1, 3, 6, 6], 16);
        let res = grad_check(
            |g, x| {
                let k = g.constant(dw_kernel.clone());
                let y = g.depthwise_conv2d(x, k, None)?;
                let r = g.constant(dw_proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &dw_at,
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "depthwise: {}", res.max_rel_err);

        // avg pool (ragged edge included: 5x5 with stride 2).
        let res = grad_check(
            |g, x| {
                let y = g.pool2d(x, PoolMode::Avg, PoolWindow::Square(2), 2)?;
                g.sum(y)
            },
            &rand_tensor(&[1, 2, 5, 5], 17),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "avg pool: {}", res.max_rel_err);

        // global max pool with separated values.
        let mut mp = rand_tensor(&[1, 2, 4, 4], 18);
        crate::gradcheck::separate_window_ties(&mut mp, 4, 4, 1e-3);
        let res = grad_check(
            |g, x| {
                let y = g.pool2d(x, PoolMode::Max, PoolWindow::Global, 1)?;
                g.sum(y)
            },
            &mp,
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "max pool: {}", res.max_rel_err);

        // softmax, layer_norm, l2_normalize, activations, matmul, concat,
        // permute, gather, scatter, dropout(train, fixed seed), losses.
        let res = grad_check(
            |g, x| {
                let y = g.softmax(x, 1)?;
                let r = g.constant(projection(&[3, 4], 19));
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &rand_tensor(&[3, 4], 20),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "softmax: {}", res.max_rel_err);

        let res = grad_check(
            |g, x| {
                let gamma = g.leaf(rand_tensor(&[6], 21));
                let beta = g.leaf(rand_tensor(&[6], 22));
                let y = g.layer_norm(x, gamma, beta, 1e-5)?;
                let r = g.constant(projection(&[4, 6], 23));
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &rand_tensor(&[4, 6], 24),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "layer_norm: {}", res.max_rel_err);

        let res = grad_check(
            |g, x| {
                let y = g.l2_normalize(x, 1, 1e-12)?;
                let r = g.constant(projection(&[3, 5], 25));
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &rand_tensor(&[3, 5], 26),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "l2_normalize: {}", res.max_rel_err);

        for (name, build) in [
            ("relu", 0usize),
            ("gelu", 1),
            ("sigmoid", 2),
        ] {
            let res = grad_check(
                |g, x| {
                    let y = match build {
                        0 => g.relu(x)?,
                        1 => g.gelu(x)?,
                        _ => g.sigmoid(x)?,
                    };
                    let r = g.constant(projection(&[2, 7], 27));
                    let w = g.hadamard(y, r)?;
                    g.sum(w)
                },
                &rand_tensor(&[2, 7], 28),
                step,
                tol,
            )
            .unwrap();
            assert!(res.passed, "{name}: {}", res.max_rel_err);
        }

        let mm_b = rand_tensor(&[4, 3], 29);
        let res = grad_check(
            |g, x| {
                let b = g.constant(mm_b.clone());
                let y = g.matmul(x, b)?;
                let r = g.constant(projection(&[2, 3], 30));
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &rand_tensor(&[2, 4], 31),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "matmul dA: {}", res.max_rel_err);

        let mm_a = rand_tensor(&[2, 2, 4], 32);
        let res = grad_check(
            |g, x| {
                let a = g.constant(mm_a.clone());
                let x3 = g.reshape(x, &[2, 4, 3])?;
                let y = g.matmul(a, x3)?;
                let r = g.constant(projection(&[2, 2, 3], 33));
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &rand_tensor(&[24], 34),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "batched matmul dB: {}", res.max_rel_err);

        // Shared rhs across a batch (gradient sums over the batch).
        let res = grad_check(
            |g, x| {
                let a = g.constant(mm_a.clone());
                let x2 = g.reshape(x, &[4, 3])?;
                let y = g.matmul(a, x2)?;
                let r = g.constant(projection(&[2, 2, 3], 35));
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &rand_tensor(&[12], 36),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "broadcast matmul dB: {}", res.max_rel_err);

        let res = grad_check(
            |g, x| {
                let other = g.constant(rand_tensor(&[2, 3], 37));
                let y = g.concat(&[x, other], 1)?;
                let r = g.constant(projection(&[2, 6], 38));
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &rand_tensor(&[2, 3], 39),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "concat: {}", res.max_rel_err);

        let res = grad_check(
            |g, x| {
                let y = g.permute(x, &[0, 2, 3, 1])?;
                let r = g.constant(projection(&[1, 3, 4, 2], 40));
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &rand_tensor(&[1, 2, 3, 4], 41),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "permute: {}", res.max_rel_err);

        let res = grad_check(
            |g, x| {
                let y = g.gather(x, &[5, 1, 1, 9])?;
                let r = g.constant(projection(&[4], 42));
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &rand_tensor(&[10], 43),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "gather: {}", res.max_rel_err);

        let res = grad_check(
            |g, x| {
                let y = g.scatter_add(x, &[7, 2, 2], 9)?;
                let r = g.constant(projection(&[9], 44));
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &rand_tensor(&[3], 45),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "scatter_add: {}", res.max_rel_err);

        // Dropout with a fixed seed is a fixed linear map, hence checkable.
        let res = grad_check(
            |g, x| {
                let mut rng = Rng::seeded(7);
                let y = g.dropout(x, 0.4, &mut rng, true)?;
                let r = g.constant(projection(&[3, 3], 46));
                let w = g.hadamard(y, r)?;
                g.sum(w)
            },
            &rand_tensor(&[3, 3], 47),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "dropout: {}", res.max_rel_err);

        let bce_targets = Tensor::new(&[6], alloc::vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let res = grad_check(
            |g, x| g.bce_with_logits(x, &bce_targets),
            &rand_tensor(&[6], 48),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "bce: {}", res.max_rel_err);

        // L1 targets shifted well away from the predictions (kink at p = t).
        let l1_target = Tensor::filled(&[5], 10.0).unwrap();
        let res = grad_check(
            |g, x| g.l1_loss(x, &l1_target),
            &rand_tensor(&[5], 49),
            step,
            tol,
        )
        .unwrap();
        assert!(res.passed, "l1: {}", res.max_rel_err);
    }

    #[test]
    fn backward_reaches_interior_nodes() {
        // The heatmap needs gradients w.r.t. a feature map, not just leaves.
        let mut g = Graph::new();
        let x = g.leaf(rand_tensor(&[1, 2, 3, 3], 50));
        let k = g.leaf(rand_tensor(&[2, 2, 1, 1], 51).with_grad());
        let features = g.conv2d(x, k, None, 1, Padding::Same).unwrap();
        let s = g.sum(features).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(features).is_some());
        assert!(grads.get(k).is_some());
    }
}
