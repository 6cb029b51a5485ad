//! Multi-scale Calibration head: dual-pool channel attention, channel
//! reweighting, three axially decomposed large-kernel depthwise branches
//! plus an init branch, and spatial attention fusion.
//!
//! All convolutions are channel-preserving (`C -> C`) except the attention
//! bottleneck, every depthwise stage runs stride 1 with same padding, and
//! the branch stacks have no nonlinearity between stages. The axial pairs
//! apply the `1 x n` (horizontal) kernel first, then `n x 1` (vertical).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, NodeId};
use crate::init;
use crate::ops::{Padding, PoolMode, PoolWindow};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Branch kernel plan: `(pre_kernel, axial_kernel)` per branch, plus the
/// 5x5 depthwise of the init branch. Fixed by the module definition.
pub const BRANCH_SPECS: [(usize, usize); 3] = [(3, 7), (5, 11), (7, 21)];
pub const INIT_DW_KERNEL: usize = 5;

#[derive(Clone, Debug)]
pub struct McConfig {
    pub channels: usize,
    /// Squeeze-excitation style reduction; the bottleneck width is
    /// `max(channels / reduction, 8)`.
    pub reduction: usize,
}

impl McConfig {
    pub fn new(channels: usize) -> Self {
        McConfig {
            channels,
            reduction: 16,
        }
    }

    pub fn hidden(&self) -> usize {
        (self.channels / self.reduction).max(8)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.reduction == 0 {
            return Err(TensorError::InvalidArgument {
                op: "McConfig",
                message: alloc::format!(
                    "channels {} and reduction {} must be >= 1",
                    self.channels,
                    self.reduction
                ),
            });
        }
        Ok(())
    }
}

/// One multi-scale branch: depthwise pre-kernel then the axial pair.
#[derive(Clone, Debug)]
pub struct McBranch {
    pub pre: Tensor,     // C x k x k
    pub pre_b: Tensor,   // C
    pub horiz: Tensor,   // C x 1 x n
    pub horiz_b: Tensor, // C
    pub vert: Tensor,    // C x n x 1
    pub vert_b: Tensor,  // C
}

#[derive(Clone, Debug)]
pub struct McParams {
    /// Channel-attention bottleneck, shared between the avg and max paths.
    pub ca_w1: Tensor, // hidden x C x 1 x 1
    pub ca_b1: Tensor, // hidden
    pub ca_w2: Tensor, // C x hidden x 1 x 1
    pub ca_b2: Tensor, // C
    /// Init branch: 1x1 conv then 5x5 depthwise.
    pub init_conv_w: Tensor, // C x C x 1 x 1
    pub init_conv_b: Tensor, // C
    pub init_dw: Tensor,     // C x 5 x 5
    pub init_dw_b: Tensor,   // C
    pub branches: Vec<McBranch>,
    /// Fusion: inner 1x1 over the branch sum, outer 1x1 after the product.
    pub inner_w: Tensor, // C x C x 1 x 1
    pub inner_b: Tensor, // C
    pub outer_w: Tensor, // C x C x 1 x 1
    pub outer_b: Tensor, // C
}

impl McParams {
    /// Standard fan-in init for every conv (zero biases), in field order.
    pub fn init(config: &McConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let hidden = config.hidden();
        let ca_w1 = init::conv_kernel(rng, hidden, c, 1, 1).with_grad();
        let ca_b1 = init::zero_bias(hidden).with_grad();
        let ca_w2 = init::conv_kernel(rng, c, hidden, 1, 1).with_grad();
        let ca_b2 = init::zero_bias(c).with_grad();
        let init_conv_w = init::conv_kernel(rng, c, c, 1, 1).with_grad();
        let init_conv_b = init::zero_bias(c).with_grad();
        let init_dw = init::depthwise_kernel(rng, c, INIT_DW_KERNEL, INIT_DW_KERNEL).with_grad();
        let init_dw_b = init::zero_bias(c).with_grad();
        let mut branches = Vec::with_capacity(BRANCH_SPECS.len());
        for (pre_k, axial_n) in BRANCH_SPECS {
            branches.push(McBranch {
                pre: init::depthwise_kernel(rng, c, pre_k, pre_k).with_grad(),
                pre_b: init::zero_bias(c).with_grad(),
                horiz: init::depthwise_kernel(rng, c, 1, axial_n).with_grad(),
                horiz_b: init::zero_bias(c).with_grad(),
                vert: init::depthwise_kernel(rng, c, axial_n, 1).with_grad(),
                vert_b: init::zero_bias(c).with_grad(),
            });
        }
        Ok(McParams {
            ca_w1,
            ca_b1,
            ca_w2,
            ca_b2,
            init_conv_w,
            init_conv_b,
            init_dw,
            init_dw_b,
            branches,
            inner_w: init::conv_kernel(rng, c, c, 1, 1).with_grad(),
            inner_b: init::zero_bias(c).with_grad(),
            outer_w: init::conv_kernel(rng, c, c, 1, 1).with_grad(),
            outer_b: init::zero_bias(c).with_grad(),
        })
    }

    pub fn named_tensors(&self) -> Vec<(alloc::string::String, &Tensor)> {
        let mut out: Vec<(alloc::string::String, &Tensor)> = vec![
            ("mc.ca_w1".into(), &self.ca_w1),
            ("mc.ca_b1".into(), &self.ca_b1),
            ("mc.ca_w2".into(), &self.ca_w2),
            ("mc.ca_b2".into(), &self.ca_b2),
            ("mc.init_conv_w".into(), &self.init_conv_w),
            ("mc.init_conv_b".into(), &self.init_conv_b),
            ("mc.init_dw".into(), &self.init_dw),
            ("mc.init_dw_b".into(), &self.init_dw_b),
        ];
        for (i, b) in self.branches.iter().enumerate() {
            out.push((alloc::format!("mc.branch{}.pre", i + 1), &b.pre));
            out.push((alloc::format!("mc.branch{}.pre_b", i + 1), &b.pre_b));
            out.push((alloc::format!("mc.branch{}.horiz", i + 1), &b.horiz));
            out.push((alloc::format!("mc.branch{}.horiz_b", i + 1), &b.horiz_b));
            out.push((alloc::format!("mc.branch{}.vert", i + 1), &b.vert));
            out.push((alloc::format!("mc.branch{}.vert_b", i + 1), &b.vert_b));
        }
        out.push(("mc.inner_w".into(), &self.inner_w));
        out.push(("mc.inner_b".into(), &self.inner_b));
        out.push(("mc.outer_w".into(), &self.outer_w));
        out.push(("mc.outer_b".into(), &self.outer_b));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(alloc::string::String, &mut Tensor)> {
        let mut out: Vec<(alloc::string::String, &mut Tensor)> = vec![
            ("mc.ca_w1".into(), &mut self.ca_w1),
            ("mc.ca_b1".into(), &mut self.ca_b1),
            ("mc.ca_w2".into(), &mut self.ca_w2),
            ("mc.ca_b2".into(), &mut self.ca_b2),
            ("mc.init_conv_w".into(), &mut self.init_conv_w),
            ("mc.init_conv_b".into(), &mut self.init_conv_b),
            ("mc.init_dw".into(), &mut self.init_dw),
            ("mc.init_dw_b".into(), &mut self.init_dw_b),
        ];
        for (i, b) in self.branches.iter_mut().enumerate() {
            out.push((alloc::format!("mc.branch{}.pre", i + 1), &mut b.pre));
            out.push((alloc::format!("mc.branch{}.pre_b", i + 1), &mut b.pre_b));
            out.push((alloc::format!("mc.branch{}.horiz", i + 1), &mut b.horiz));
            out.push((alloc::format!("mc.branch{}.horiz_b", i + 1), &mut b.horiz_b));
            out.push((alloc::format!("mc.branch{}.vert", i + 1), &mut b.vert));
            out.push((alloc::format!("mc.branch{}.vert_b", i + 1), &mut b.vert_b));
        }
        out.push(("mc.inner_w".into(), &mut self.inner_w));
        out.push(("mc.inner_b".into(), &mut self.inner_b));
        out.push(("mc.outer_w".into(), &mut self.outer_w));
        out.push(("mc.outer_b".into(), &mut self.outer_b));
        out
    }

    pub fn bind(&self, g: &mut Graph) -> McNodes {
        McNodes {
            ca_w1: g.leaf(self.ca_w1.clone()),
            ca_b1: g.leaf(self.ca_b1.clone()),
            ca_w2: g.leaf(self.ca_w2.clone()),
            ca_b2: g.leaf(self.ca_b2.clone()),
            init_conv_w: g.leaf(self.init_conv_w.clone()),
            init_conv_b: g.leaf(self.init_conv_b.clone()),
            init_dw: g.leaf(self.init_dw.clone()),
            init_dw_b: g.leaf(self.init_dw_b.clone()),
            branches: self
                .branches
                .iter()
                .map(|b| McBranchNodes {
                    pre: g.leaf(b.pre.clone()),
                    pre_b: g.leaf(b.pre_b.clone()),
                    horiz: g.leaf(b.horiz.clone()),
                    horiz_b: g.leaf(b.horiz_b.clone()),
                    vert: g.leaf(b.vert.clone()),
                    vert_b: g.leaf(b.vert_b.clone()),
                })
                .collect(),
            inner_w: g.leaf(self.inner_w.clone()),
            inner_b: g.leaf(self.inner_b.clone()),
            outer_w: g.leaf(self.outer_w.clone()),
            outer_b: g.leaf(self.outer_b.clone()),
        }
    }

    /// Node ids in `named_tensors` order.
    pub fn ordered_nodes(nodes: &McNodes) -> Vec<NodeId> {
        let mut out = vec![
            nodes.ca_w1,
            nodes.ca_b1,
            nodes.ca_w2,
            nodes.ca_b2,
            nodes.init_conv_w,
            nodes.init_conv_b,
            nodes.init_dw,
            nodes.init_dw_b,
        ];
        for b in &nodes.branches {
            out.extend([b.pre, b.pre_b, b.horiz, b.horiz_b, b.vert, b.vert_b]);
        }
        out.extend([nodes.inner_w, nodes.inner_b, nodes.outer_w, nodes.outer_b]);
        out
    }
}

pub struct McBranchNodes {
    pub pre: NodeId,
    pub pre_b: NodeId,
    pub horiz: NodeId,
    pub horiz_b: NodeId,
    pub vert: NodeId,
    pub vert_b: NodeId,
}

pub struct McNodes {
    pub ca_w1: NodeId,
    pub ca_b1: NodeId,
    pub ca_w2: NodeId,
    pub ca_b2: NodeId,
    pub init_conv_w: NodeId,
    pub init_conv_b: NodeId,
    pub init_dw: NodeId,
    pub init_dw_b: NodeId,
    pub branches: Vec<McBranchNodes>,
    pub inner_w: NodeId,
    pub inner_b: NodeId,
    pub outer_w: NodeId,
    pub outer_b: NodeId,
}

// ── Operations ─────────────────────────────────────────────────────────

fn require_map(op: &'static str, shape: &[usize], channels: usize) -> Result<()> {
    if shape.len() != 4 || shape[1] != channels || shape[2] == 0 || shape[3] == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::format!("expected N x {channels} x H x W map, got {shape:?}"),
        });
    }
    Ok(())
}

/// Dual-pool channel attention: each branch is
/// `sigmoid(conv1x1(relu(conv1x1(pool(X)))))` with global average / max
/// pooling respectively; the bottleneck convs are shared. Returns `N x C`
/// gates in `(0, 1)`.
pub fn channel_attention(
    x: &Tensor,
    params: &McParams,
    config: &McConfig,
) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let nodes = params.bind(&mut g);
    let (avg, max) = channel_attention_graph(&mut g, xn, &nodes, config)?;
    Ok((g.value(avg).clone(), g.value(max).clone()))
}

pub fn channel_attention_graph(
    g: &mut Graph,
    x: NodeId,
    nodes: &McNodes,
    config: &McConfig,
) -> Result<(NodeId, NodeId)> {
    config.validate()?;
    let shape = g.value(x).shape().to_vec();
    require_map("channel_attention", &shape, config.channels)?;
    let n = shape[0];
    let c = config.channels;
    let mut gates = Vec::with_capacity(2);
    for mode in [PoolMode::Avg, PoolMode::Max] {
        let pooled = g.pool2d(x, mode, PoolWindow::Global, 1)?; // N x C x 1 x 1
        let squeezed = g.conv2d(pooled, nodes.ca_w1, Some(nodes.ca_b1), 1, Padding::none())?;
        let squeezed = g.relu(squeezed)?;
        let expanded = g.conv2d(squeezed, nodes.ca_w2, Some(nodes.ca_b2), 1, Padding::none())?;
        let gate = g.sigmoid(expanded)?;
        gates.push(g.reshape(gate, &[n, c])?);
    }
    Ok((gates[0], gates[1]))
}

/// `X_output0 = X (.) broadcast(X_avg + X_max)`: the `N x C` gate sum is
/// viewed as `N x C x 1 x 1` and broadcast over the map.
pub fn channel_reweight(x: &Tensor, x_avg: &Tensor, x_max: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let a = g.constant(x_avg.clone());
    let m = g.constant(x_max.clone());
    let out = channel_reweight_graph(&mut g, xn, a, m)?;
    Ok(g.value(out).clone())
}

pub fn channel_reweight_graph(
    g: &mut Graph,
    x: NodeId,
    x_avg: NodeId,
    x_max: NodeId,
) -> Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    let gate_shape = g.value(x_avg).shape().to_vec();
    if shape.len() != 4 || gate_shape != vec![shape[0], shape[1]] {
        return Err(TensorError::ShapeMismatch {
            op: "channel_reweight",
            lhs: shape,
            rhs: gate_shape,
        });
    }
    let summed = g.add(x_avg, x_max)?;
    let viewed = g.reshape(summed, &[shape[0], shape[1], 1, 1])?;
    g.hadamard(x, viewed)
}

/// The init branch and the three axially decomposed branches:
///
/// ```text
/// X_init = DW_5x5(Conv_1x1(X0))
/// X_1    = DW_7x1(DW_1x7(DW_3x3(X0)))
/// X_2    = DW_11x1(DW_1x11(DW_5x5(X0)))
/// X_3    = DW_21x1(DW_1x21(DW_7x7(X0)))
/// ```
///
/// All same padding, stride 1, no nonlinearity between stages.
pub fn multiscale_branches(
    x0: &Tensor,
    params: &McParams,
    config: &McConfig,
) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let mut g = Graph::new();
    let xn = g.constant(x0.clone());
    let nodes = params.bind(&mut g);
    let outs = multiscale_branches_graph(&mut g, xn, &nodes, config)?;
    Ok((
        g.value(outs[0]).clone(),
        g.value(outs[1]).clone(),
        g.value(outs[2]).clone(),
        g.value(outs[3]).clone(),
    ))
}

pub fn multiscale_branches_graph(
    g: &mut Graph,
    x0: NodeId,
    nodes: &McNodes,
    config: &McConfig,
) -> Result<[NodeId; 4]> {
    let shape = g.value(x0).shape().to_vec();
    require_map("multiscale_branches", &shape, config.channels)?;
    let refined = g.conv2d(x0, nodes.init_conv_w, Some(nodes.init_conv_b), 1, Padding::none())?;
    let x_init = g.depthwise_conv2d(refined, nodes.init_dw, Some(nodes.init_dw_b))?;
    let mut outs = [x_init; 4];
    for (i, b) in nodes.branches.iter().enumerate() {
        let pre = g.depthwise_conv2d(x0, b.pre, Some(b.pre_b))?;
        let h = g.depthwise_conv2d(pre, b.horiz, Some(b.horiz_b))?;
        let v = g.depthwise_conv2d(h, b.vert, Some(b.vert_b))?;
        outs[i + 1] = v;
    }
    Ok(outs)
}

/// `X_final = Conv_1x1( X0 (.) Conv_1x1(X_init + X1 + X2 + X3) )`.
pub fn spatial_fuse(
    x0: &Tensor,
    x_init: &Tensor,
    x1: &Tensor,
    x2: &Tensor,
    x3: &Tensor,
    params: &McParams,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let x0n = g.constant(x0.clone());
    let parts = [
        g.constant(x_init.clone()),
        g.constant(x1.clone()),
        g.constant(x2.clone()),
        g.constant(x3.clone()),
    ];
    let nodes = params.bind(&mut g);
    let out = spatial_fuse_graph(&mut g, x0n, parts, &nodes)?;
    Ok(g.value(out).clone())
}

pub fn spatial_fuse_graph(
    g: &mut Graph,
    x0: NodeId,
    branch_outs: [NodeId; 4],
    nodes: &McNodes,
) -> Result<NodeId> {
    let base_shape = g.value(x0).shape().to_vec();
    for id in branch_outs {
        if g.value(id).shape() != base_shape.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "spatial_fuse",
                lhs: base_shape,
                rhs: g.value(id).shape().to_vec(),
            });
        }
    }
    let mut total = branch_outs[0];
    for id in &branch_outs[1..] {
        total = g.add(total, *id)?;
    }
    let attention = g.conv2d(total, nodes.inner_w, Some(nodes.inner_b), 1, Padding::none())?;
    let weighted = g.hadamard(x0, attention)?;
    g.conv2d(weighted, nodes.outer_w, Some(nodes.outer_b), 1, Padding::none())
}

/// Full head: channel attention, reweighting, multi-scale branches,
/// spatial fusion. Shape preserving.
pub fn mc_forward(x: &Tensor, params: &McParams, config: &McConfig) -> Result<Tensor> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let nodes = params.bind(&mut g);
    let out = mc_forward_graph(&mut g, xn, &nodes, config)?;
    Ok(g.value(out).clone())
}

pub fn mc_forward_graph(
    g: &mut Graph,
    x: NodeId,
    nodes: &McNodes,
    config: &McConfig,
) -> Result<NodeId> {
    let (avg, max) = channel_attention_graph(g, x, nodes, config)?;
    let x0 = channel_reweight_graph(g, x, avg, max)?;
    let branch_outs = multiscale_branches_graph(g, x0, nodes, config)?;
    spatial_fuse_graph(g, x0, branch_outs, nodes)
}
