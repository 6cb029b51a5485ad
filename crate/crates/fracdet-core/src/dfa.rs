//! Dual-Focus Attention: parallel windowed-local and pooled-global
//! self-attention with an MLP-generated relative position bias, L2-normalized
//! similarity, and residual fusion.
//!
//! The module works on `N x C x H x W` feature maps. The local branch
//! partitions the map into non-overlapping `w x w` windows (ragged edge
//! windows are smaller) and attends within each window; the global branch
//! attends from every token to a down-sampled token grid produced by
//! `Linear -> GELU -> AvgPool -> LayerNorm`. Both branches share one query
//! projection, and their outputs are concatenated channelwise, projected
//! back to `C`, passed through dropout, and added to the input.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, NodeId};
use crate::init;
use crate::ops::{PoolMode, PoolWindow};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Forward mode: training applies dropout driven by the borrowed generator,
/// eval is deterministic and dropout-free.
pub enum Mode<'a> {
    Train(&'a mut Rng),
    Eval,
}

/// Hyperparameters. The attention math only fixes the branch structure;
/// these knobs are chosen for desk-scale testability.
#[derive(Clone, Debug)]
pub struct DfaConfig {
    pub channels: usize,
    pub heads: usize,
    pub local_window: usize,
    pub global_pool_ratio: usize,
    pub bias_mlp_hidden: usize,
    pub dropout_p: f64,
    pub eps: f64,
}

impl DfaConfig {
    pub fn new(channels: usize) -> Self {
        DfaConfig {
            channels,
            heads: 1,
            local_window: 8,
            global_pool_ratio: 4,
            bias_mlp_hidden: 32,
            dropout_p: 0.1,
            eps: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: alloc::string::String| TensorError::InvalidArgument {
            op: "DfaConfig",
            message,
        };
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(bad(alloc::format!(
                "channels {} must be a positive multiple of heads {}",
                self.channels,
                self.heads
            )));
        }
        if self.local_window == 0 || self.global_pool_ratio == 0 || self.bias_mlp_hidden == 0 {
            return Err(bad(alloc::string::String::from(
                "window, pool ratio and MLP hidden size must be >= 1",
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(bad(alloc::format!("dropout_p {} outside [0,1)", self.dropout_p)));
        }
        Ok(())
    }
}

/// Two-layer MLP mapping a relative position offset to one bias per head.
#[derive(Clone, Debug)]
pub struct BiasMlp {
    pub w1: Tensor, // (2, hidden)
    pub b1: Tensor, // (hidden)
    pub w2: Tensor, // (hidden, heads)
    pub b2: Tensor, // (heads)
}

impl BiasMlp {
    fn init(config: &DfaConfig, rng: &mut Rng) -> Self {
        BiasMlp {
            w1: init::linear_weight(rng, 2, config.bias_mlp_hidden).with_grad(),
            b1: init::zero_bias(config.bias_mlp_hidden).with_grad(),
            w2: init::linear_weight(rng, config.bias_mlp_hidden, config.heads).with_grad(),
            b2: init::zero_bias(config.heads).with_grad(),
        }
    }
}

/// All learnable weights. Linear weights are stored `(in, out)` so that
/// token matrices multiply as `tokens @ w + b`. The output projection
/// starts at zero, making the whole module the identity at initialization.
#[derive(Clone, Debug)]
pub struct DfaParams {
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k_local: Tensor,
    pub b_k_local: Tensor,
    pub w_v_local: Tensor,
    pub b_v_local: Tensor,
    pub w_k_global: Tensor,
    pub b_k_global: Tensor,
    pub w_v_global: Tensor,
    pub b_v_global: Tensor,
    /// Channel projection feeding the global down-sampling path.
    pub pre_w: Tensor,
    pub pre_b: Tensor,
    /// LayerNorm affine over channels in the down-sampling path.
    pub ln_gamma: Tensor,
    pub ln_beta: Tensor,
    pub mlp_local: BiasMlp,
    pub mlp_global: BiasMlp,
    /// Output projection `(2C, C)`; zero-initialized.
    pub w_proj: Tensor,
    pub b_proj: Tensor,
}

impl DfaParams {
    /// Draws weights in documented field order from `rng`.
    pub fn init(config: &DfaConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let proj = |rng: &mut Rng| init::linear_weight(rng, c, c).with_grad();
        Ok(DfaParams {
            w_q: proj(rng),
            b_q: init::zero_bias(c).with_grad(),
            w_k_local: proj(rng),
            b_k_local: init::zero_bias(c).with_grad(),
            w_v_local: proj(rng),
            b_v_local: init::zero_bias(c).with_grad(),
            w_k_global: proj(rng),
            b_k_global: init::zero_bias(c).with_grad(),
            w_v_global: proj(rng),
            b_v_global: init::zero_bias(c).with_grad(),
            pre_w: proj(rng),
            pre_b: init::zero_bias(c).with_grad(),
            ln_gamma: Tensor::filled(&[c], 1.0)?.with_grad(),
            ln_beta: init::zero_bias(c).with_grad(),
            mlp_local: BiasMlp::init(config, rng),
            mlp_global: BiasMlp::init(config, rng),
            w_proj: Tensor::zeros(&[2 * c, c]).with_grad(),
            b_proj: init::zero_bias(c).with_grad(),
        })
    }

    /// Canonical (name, tensor) listing; the order defines serialization,
    /// parameter counting and SGD pairing.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("dfa.w_q", &self.w_q),
            ("dfa.b_q", &self.b_q),
            ("dfa.w_k_local", &self.w_k_local),
            ("dfa.b_k_local", &self.b_k_local),
            ("dfa.w_v_local", &self.w_v_local),
            ("dfa.b_v_local", &self.b_v_local),
            ("dfa.w_k_global", &self.w_k_global),
            ("dfa.b_k_global", &self.b_k_global),
            ("dfa.w_v_global", &self.w_v_global),
            ("dfa.b_v_global", &self.b_v_global),
            ("dfa.pre_w", &self.pre_w),
            ("dfa.pre_b", &self.pre_b),
            ("dfa.ln_gamma", &self.ln_gamma),
            ("dfa.ln_beta", &self.ln_beta),
            ("dfa.mlp_local.w1", &self.mlp_local.w1),
            ("dfa.mlp_local.b1", &self.mlp_local.b1),
            ("dfa.mlp_local.w2", &self.mlp_local.w2),
            ("dfa.mlp_local.b2", &self.mlp_local.b2),
            ("dfa.mlp_global.w1", &self.mlp_global.w1),
            ("dfa.mlp_global.b1", &self.mlp_global.b1),
            ("dfa.mlp_global.w2", &self.mlp_global.w2),
            ("dfa.mlp_global.b2", &self.mlp_global.b2),
            ("dfa.w_proj", &self.w_proj),
            ("dfa.b_proj", &self.b_proj),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("dfa.w_q", &mut self.w_q),
            ("dfa.b_q", &mut self.b_q),
            ("dfa.w_k_local", &mut self.w_k_local),
            ("dfa.b_k_local", &mut self.b_k_local),
            ("dfa.w_v_local", &mut self.w_v_local),
            ("dfa.b_v_local", &mut self.b_v_local),
            ("dfa.w_k_global", &mut self.w_k_global),
            ("dfa.b_k_global", &mut self.b_k_global),
            ("dfa.w_v_global", &mut self.w_v_global),
            ("dfa.b_v_global", &mut self.b_v_global),
            ("dfa.pre_w", &mut self.pre_w),
            ("dfa.pre_b", &mut self.pre_b),
            ("dfa.ln_gamma", &mut self.ln_gamma),
            ("dfa.ln_beta", &mut self.ln_beta),
            ("dfa.mlp_local.w1", &mut self.mlp_local.w1),
            ("dfa.mlp_local.b1", &mut self.mlp_local.b1),
            ("dfa.mlp_local.w2", &mut self.mlp_local.w2),
            ("dfa.mlp_local.b2", &mut self.mlp_local.b2),
            ("dfa.mlp_global.w1", &mut self.mlp_global.w1),
            ("dfa.mlp_global.b1", &mut self.mlp_global.b1),
            ("dfa.mlp_global.w2", &mut self.mlp_global.w2),
            ("dfa.mlp_global.b2", &mut self.mlp_global.b2),
            ("dfa.w_proj", &mut self.w_proj),
            ("dfa.b_proj", &mut self.b_proj),
        ]
    }

    /// Binds every parameter as a graph leaf, in `named_tensors` order.
    pub fn bind(&self, g: &mut Graph) -> DfaNodes {
        DfaNodes {
            w_q: g.leaf(self.w_q.clone()),
            b_q: g.leaf(self.b_q.clone()),
            w_k_local: g.leaf(self.w_k_local.clone()),
            b_k_local: g.leaf(self.b_k_local.clone()),
            w_v_local: g.leaf(self.w_v_local.clone()),
            b_v_local: g.leaf(self.b_v_local.clone()),
            w_k_global: g.leaf(self.w_k_global.clone()),
            b_k_global: g.leaf(self.b_k_global.clone()),
            w_v_global: g.leaf(self.w_v_global.clone()),
            b_v_global: g.leaf(self.b_v_global.clone()),
            pre_w: g.leaf(self.pre_w.clone()),
            pre_b: g.leaf(self.pre_b.clone()),
            ln_gamma: g.leaf(self.ln_gamma.clone()),
            ln_beta: g.leaf(self.ln_beta.clone()),
            mlp_local: BiasMlpNodes {
                w1: g.leaf(self.mlp_local.w1.clone()),
                b1: g.leaf(self.mlp_local.b1.clone()),
                w2: g.leaf(self.mlp_local.w2.clone()),
                b2: g.leaf(self.mlp_local.b2.clone()),
            },
            mlp_global: BiasMlpNodes {
                w1: g.leaf(self.mlp_global.w1.clone()),
                b1: g.leaf(self.mlp_global.b1.clone()),
                w2: g.leaf(self.mlp_global.w2.clone()),
                b2: g.leaf(self.mlp_global.b2.clone()),
            },
            w_proj: g.leaf(self.w_proj.clone()),
            b_proj: g.leaf(self.b_proj.clone()),
        }
    }

    /// Node ids in the same order as [`DfaParams::named_tensors`].
    pub fn ordered_nodes(nodes: &DfaNodes) -> Vec<NodeId> {
        vec![
            nodes.w_q,
            nodes.b_q,
            nodes.w_k_local,
            nodes.b_k_local,
            nodes.w_v_local,
            nodes.b_v_local,
            nodes.w_k_global,
            nodes.b_k_global,
            nodes.w_v_global,
            nodes.b_v_global,
            nodes.pre_w,
            nodes.pre_b,
            nodes.ln_gamma,
            nodes.ln_beta,
            nodes.mlp_local.w1,
            nodes.mlp_local.b1,
            nodes.mlp_local.w2,
            nodes.mlp_local.b2,
            nodes.mlp_global.w1,
            nodes.mlp_global.b1,
            nodes.mlp_global.w2,
            nodes.mlp_global.b2,
            nodes.w_proj,
            nodes.b_proj,
        ]
    }
}

pub struct BiasMlpNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

pub struct DfaNodes {
    pub w_q: NodeId,
    pub b_q: NodeId,
    pub w_k_local: NodeId,
    pub b_k_local: NodeId,
    pub w_v_local: NodeId,
    pub b_v_local: NodeId,
    pub w_k_global: NodeId,
    pub b_k_global: NodeId,
    pub w_v_global: NodeId,
    pub b_v_global: NodeId,
    pub pre_w: NodeId,
    pub pre_b: NodeId,
    pub ln_gamma: NodeId,
    pub ln_beta: NodeId,
    pub mlp_local: BiasMlpNodes,
    pub mlp_global: BiasMlpNodes,
    pub w_proj: NodeId,
    pub b_proj: NodeId,
}

// ── Relative positions ─────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Local,
    Global,
}

/// Normalized coordinate offsets for every (query, key) pair of a branch at
/// one resolution.
///
/// Offsets are `[(i - k)/(H - 1), (j - l)/(W - 1)]` with a degenerate axis
/// (extent 1) contributing 0; every component lies in `[-1, 1]` and the
/// offset is exactly `[0, 0]` when query and key coordinates coincide.
#[derive(Clone, Debug)]
pub struct RelPosTable {
    pub branch: Branch,
    pub queries: usize,
    pub keys: usize,
    /// Row-major `(queries * keys, 2)` offsets, `[dy, dx]` per pair.
    pub offsets: Vec<f64>,
}

/// Normalization applied to the raw offset vector. The components are
/// already confined to `[-1, 1]` by construction, so this is the identity;
/// it is kept as a single swap point for alternative scalings.
fn normalize_offset(offset: [f64; 2]) -> [f64; 2] {
    offset
}

fn axis_offset(q: f64, k: f64, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        (q - k) / (extent - 1) as f64
    }
}

/// Offsets for explicit query and key coordinate lists on an `H x W` map.
pub fn rel_pos_for_coords(
    queries: &[(f64, f64)],
    keys: &[(f64, f64)],
    h: usize,
    w: usize,
    branch: Branch,
) -> RelPosTable {
    let mut offsets = Vec::with_capacity(queries.len() * keys.len() * 2);
    for &(qi, qj) in queries {
        for &(ki, kj) in keys {
            let r = normalize_offset([axis_offset(qi, ki, h), axis_offset(qj, kj, w)]);
            offsets.push(r[0]);
            offsets.push(r[1]);
        }
    }
    RelPosTable {
        branch,
        queries: queries.len(),
        keys: keys.len(),
        offsets,
    }
}

/// Builds the branch table for an `H x W` input map.
///
/// Local: all token pairs of the map (window attention slices sub-blocks out
/// of this one table). Global: queries are input tokens; keys are pooled
/// cells mapped back to input coordinates at their centers,
/// `(cell + 0.5) * r - 0.5`, clamped to `[0, extent - 1]`.
pub fn build_rel_pos(h: usize, w: usize, branch: Branch, config: &DfaConfig) -> RelPosTable {
    let token_coords: Vec<(f64, f64)> = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i as f64, j as f64)))
        .collect();
    match branch {
        Branch::Local => rel_pos_for_coords(&token_coords, &token_coords, h, w, branch),
        Branch::Global => {
            let r = config.global_pool_ratio;
            let centers = |extent: usize| -> Vec<f64> {
                (0..extent.div_ceil(r))
                    .map(|cell| {
                        ((cell as f64 + 0.5) * r as f64 - 0.5).clamp(0.0, (extent - 1) as f64)
                    })
                    .collect()
            };
            let (hc, wc) = (centers(h), centers(w));
            let key_coords: Vec<(f64, f64)> = hc
                .iter()
                .flat_map(|&ci| wc.iter().map(move |&cj| (ci, cj)))
                .collect();
            rel_pos_for_coords(&token_coords, &key_coords, h, w, branch)
        }
    }
}

/// Evaluates the bias MLP on a table: `b = w2 . relu(w1 . r + b1) + b2`
/// per pair, per head. Output is `heads x queries x keys`.
pub fn bias_from_mlp(table: &RelPosTable, mlp: &BiasMlp, heads: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let nodes = BiasMlpNodes {
        w1: g.leaf(mlp.w1.clone()),
        b1: g.leaf(mlp.b1.clone()),
        w2: g.leaf(mlp.w2.clone()),
        b2: g.leaf(mlp.b2.clone()),
    };
    let out = bias_from_mlp_graph(&mut g, table, &nodes, heads)?;
    Ok(g.value(out).clone())
}

/// Graph form of [`bias_from_mlp`].
pub fn bias_from_mlp_graph(
    g: &mut Graph,
    table: &RelPosTable,
    mlp: &BiasMlpNodes,
    heads: usize,
) -> Result<NodeId> {
    let pairs = table.queries * table.keys;
    let r = g.constant(Tensor::new(&[pairs, 2], table.offsets.clone())?);
    let h1 = g.linear(r, mlp.w1, Some(mlp.b1))?;
    let h1 = g.relu(h1)?;
    let out = g.linear(h1, mlp.w2, Some(mlp.b2))?; // (pairs, heads)
    let out = g.reshape(out, &[table.queries, table.keys, heads])?;
    g.permute(out, &[2, 0, 1]) // heads x Q x K
}

// ── Forward passes ─────────────────────────────────────────────────────

/// Non-overlapping `win x win` partition of an `H x W` token grid; ragged
/// edge windows are smaller. Returns flat token indices per window in
/// row-major window order.
pub fn window_partition(h: usize, w: usize, win: usize) -> Vec<Vec<usize>> {
    let mut windows = Vec::new();
    let mut r0 = 0;
    while r0 < h {
        let r1 = (r0 + win).min(h);
        let mut c0 = 0;
        while c0 < w {
            let c1 = (c0 + win).min(w);
            let mut idx = Vec::with_capacity((r1 - r0) * (c1 - c0));
            for i in r0..r1 {
                for j in c0..c1 {
                    idx.push(i * w + j);
                }
            }
            windows.push(idx);
            c0 = c1;
        }
        r0 = r1;
    }
    windows
}

/// `Linear -> GELU -> AvgPool(r) -> LayerNorm(channels)`: the global
/// branch's down-sampling path. Output is `N x C x ceil(H/r) x ceil(W/r)`.
pub fn global_downsample(x: &Tensor, params: &DfaParams, config: &DfaConfig) -> Result<Tensor> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let nodes = params.bind(&mut g);
    let out = global_downsample_graph(&mut g, xn, &nodes, config)?;
    Ok(g.value(out).clone())
}

pub fn global_downsample_graph(
    g: &mut Graph,
    x: NodeId,
    nodes: &DfaNodes,
    config: &DfaConfig,
) -> Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    require_map("global_downsample", &shape, config.channels)?;
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    // Channel projection in token space.
    let tokens = map_to_tokens(g, x, n, c, h, w)?;
    let projected = g.linear(tokens, nodes.pre_w, Some(nodes.pre_b))?;
    let activated = g.gelu(projected)?;
    let map = tokens_to_map(g, activated, n, c, h, w)?;
    let r = config.global_pool_ratio;
    let pooled = g.pool2d(map, PoolMode::Avg, PoolWindow::Square(r), r)?;
    let (hg, wg) = (h.div_ceil(r), w.div_ceil(r));
    // LayerNorm over the channel vector of every spatial position.
    let pooled_tokens = map_to_tokens(g, pooled, n, c, hg, wg)?;
    let normed = g.layer_norm(pooled_tokens, nodes.ln_gamma, nodes.ln_beta, 1e-5)?;
    tokens_to_map(g, normed, n, c, hg, wg)
}

/// Node bundle exposed for verification: attention maps and normalized
/// query/key stacks of both branches, plus the branch outputs as maps.
pub struct DfaTrace {
    pub v_local: NodeId,
    pub v_global: NodeId,
    /// Per window: attention `N x heads x Tw x Tw`.
    pub local_attn: Vec<NodeId>,
    /// `N x heads x T x Tg`.
    pub global_attn: NodeId,
    /// Per window: `N x heads x Tw x d` after L2 normalization.
    pub q_hat_local: Vec<NodeId>,
    pub k_hat_local: Vec<NodeId>,
    pub q_hat_global: NodeId,
    pub k_hat_global: NodeId,
}

/// Both attention branches (the similarity/softmax/value pipeline). Returns
/// `(V'_local, V'_global)` as `N x C x H x W` maps with heads re-merged.
pub fn dfa_attend(x: &Tensor, params: &DfaParams, config: &DfaConfig) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let nodes = params.bind(&mut g);
    let trace = dfa_attend_graph(&mut g, xn, &nodes, config)?;
    Ok((
        g.value(trace.v_local).clone(),
        g.value(trace.v_global).clone(),
    ))
}

/// Owned-tensor form of the attention trace, for invariant checks.
pub struct DfaTraceTensors {
    pub v_local: Tensor,
    pub v_global: Tensor,
    pub local_attn: Vec<Tensor>,
    pub global_attn: Tensor,
    pub q_hat_local: Vec<Tensor>,
    pub k_hat_local: Vec<Tensor>,
    pub q_hat_global: Tensor,
    pub k_hat_global: Tensor,
}

pub fn dfa_trace(x: &Tensor, params: &DfaParams, config: &DfaConfig) -> Result<DfaTraceTensors> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let nodes = params.bind(&mut g);
    let t = dfa_attend_graph(&mut g, xn, &nodes, config)?;
    Ok(DfaTraceTensors {
        v_local: g.value(t.v_local).clone(),
        v_global: g.value(t.v_global).clone(),
        local_attn: t.local_attn.iter().map(|&id| g.value(id).clone()).collect(),
        global_attn: g.value(t.global_attn).clone(),
        q_hat_local: t.q_hat_local.iter().map(|&id| g.value(id).clone()).collect(),
        k_hat_local: t.k_hat_local.iter().map(|&id| g.value(id).clone()).collect(),
        q_hat_global: g.value(t.q_hat_global).clone(),
        k_hat_global: g.value(t.k_hat_global).clone(),
    })
}

pub fn dfa_attend_graph(
    g: &mut Graph,
    x: NodeId,
    nodes: &DfaNodes,
    config: &DfaConfig,
) -> Result<DfaTrace> {
    config.validate()?;
    let shape = g.value(x).shape().to_vec();
    require_map("dfa_attend", &shape, config.channels)?;
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let t = h * w;
    let heads = config.heads;
    let d = c / heads;

    // Shared query; per-branch keys/values (local from input tokens,
    // global from the down-sampled map).
    let tokens = map_to_tokens(g, x, n, c, h, w)?;
    let q = g.linear(tokens, nodes.w_q, Some(nodes.b_q))?;
    let k_local = g.linear(tokens, nodes.w_k_local, Some(nodes.b_k_local))?;
    let v_local = g.linear(tokens, nodes.w_v_local, Some(nodes.b_v_local))?;

    let x_global = global_downsample_graph(g, x, nodes, config)?;
    let g_shape = g.value(x_global).shape().to_vec();
    let (hg, wg) = (g_shape[2], g_shape[3]);
    let tg = hg * wg;
    let tokens_g = map_to_tokens(g, x_global, n, c, hg, wg)?;
    let k_global = g.linear(tokens_g, nodes.w_k_global, Some(nodes.b_k_global))?;
    let v_global = g.linear(tokens_g, nodes.w_v_global, Some(nodes.b_v_global))?;

    // Relative position biases for both branches.
    let local_table = build_rel_pos(h, w, Branch::Local, config);
    let bias_local = bias_from_mlp_graph(g, &local_table, &nodes.mlp_local, heads)?;
    let global_table = build_rel_pos(h, w, Branch::Global, config);
    let bias_global = bias_from_mlp_graph(g, &global_table, &nodes.mlp_global, heads)?;

    // Local branch: attention within each window partition cell.
    let windows = window_partition(h, w, config.local_window);
    let mut local_acc: Option<NodeId> = None;
    let mut local_attn = Vec::with_capacity(windows.len());
    let mut q_hat_local = Vec::with_capacity(windows.len());
    let mut k_hat_local = Vec::with_capacity(windows.len());
    for win in &windows {
        let tw = win.len();
        let token_idx = token_gather_indices(n, t, c, win);
        let q_w = gather_tokens(g, q, &token_idx, n, tw, c)?;
        let k_w = gather_tokens(g, k_local, &token_idx, n, tw, c)?;
        let v_w = gather_tokens(g, v_local, &token_idx, n, tw, c)?;

        let q_heads = split_heads(g, q_w, n, tw, heads, d)?;
        let k_heads = split_heads(g, k_w, n, tw, heads, d)?;
        let v_heads = split_heads(g, v_w, n, tw, heads, d)?;
        let q_hat = g.l2_normalize(q_heads, 3, config.eps)?;
        let k_hat = g.l2_normalize(k_heads, 3, config.eps)?;

        let k_t = g.permute(k_hat, &[0, 1, 3, 2])?;
        let s = g.matmul(q_hat, k_t)?; // N x heads x Tw x Tw
        let bias_block = gather_bias_block(g, bias_local, heads, t, win, win)?;
        let s = g.add(s, bias_block)?;
        let a = g.softmax(s, 3)?;
        let out = g.matmul(a, v_heads)?; // N x heads x Tw x d
        let merged = merge_heads(g, out, n, tw, heads, d)?; // N x Tw x C
        let flat = g.reshape(merged, &[n * tw * c])?;
        let scattered = g.scatter_add(flat, &token_idx, n * t * c)?;
        local_acc = Some(match local_acc {
            Some(acc) => g.add(acc, scattered)?,
            None => scattered,
        });
        local_attn.push(a);
        q_hat_local.push(q_hat);
        k_hat_local.push(k_hat);
    }
    let local_tokens = g.reshape(local_acc.expect("at least one window"), &[n, t, c])?;
    let v_local_map = tokens_to_map(g, local_tokens, n, c, h, w)?;

    // Global branch: every token attends to the pooled grid.
    let q_heads = split_heads(g, q, n, t, heads, d)?;
    let k_heads = split_heads(g, k_global, n, tg, heads, d)?;
    let v_heads = split_heads(g, v_global, n, tg, heads, d)?;
    let q_hat_g = g.l2_normalize(q_heads, 3, config.eps)?;
    let k_hat_g = g.l2_normalize(k_heads, 3, config.eps)?;
    let k_t = g.permute(k_hat_g, &[0, 1, 3, 2])?;
    let s = g.matmul(q_hat_g, k_t)?; // N x heads x T x Tg
    let s = g.add(s, bias_global)?;
    let a_global = g.softmax(s, 3)?;
    let out = g.matmul(a_global, v_heads)?;
    let merged = merge_heads(g, out, n, t, heads, d)?;
    let v_global_map = tokens_to_map(g, merged, n, c, h, w)?;

    Ok(DfaTrace {
        v_local: v_local_map,
        v_global: v_global_map,
        local_attn,
        global_attn: a_global,
        q_hat_local,
        k_hat_local,
        q_hat_global: q_hat_g,
        k_hat_global: k_hat_g,
    })
}

/// Full module: `X + Dropout(proj(concat(V'_local, V'_global)))` with a
/// channelwise concat and a `2C -> C` projection.
pub fn dfa_forward(
    x: &Tensor,
    params: &DfaParams,
    config: &DfaConfig,
    mode: Mode<'_>,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let nodes = params.bind(&mut g);
    let out = dfa_forward_graph(&mut g, xn, &nodes, config, mode)?;
    Ok(g.value(out).clone())
}

pub fn dfa_forward_graph(
    g: &mut Graph,
    x: NodeId,
    nodes: &DfaNodes,
    config: &DfaConfig,
    mode: Mode<'_>,
) -> Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    require_map("dfa_forward", &shape, config.channels)?;
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let trace = dfa_attend_graph(g, x, nodes, config)?;
    let local_tokens = map_to_tokens(g, trace.v_local, n, c, h, w)?;
    let global_tokens = map_to_tokens(g, trace.v_global, n, c, h, w)?;
    let cat = g.concat(&[local_tokens, global_tokens], 2)?; // N x T x 2C
    let projected = g.linear(cat, nodes.w_proj, Some(nodes.b_proj))?;
    let dropped = match mode {
        Mode::Train(rng) => g.dropout(projected, config.dropout_p, rng, true)?,
        Mode::Eval => projected,
    };
    let out_map = tokens_to_map(g, dropped, n, c, h, w)?;
    g.add(x, out_map)
}

// ── Layout helpers ─────────────────────────────────────────────────────

fn require_map(op: &'static str, shape: &[usize], channels: usize) -> Result<()> {
    if shape.len() != 4 || shape[1] != channels || shape[2] == 0 || shape[3] == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            message: alloc::format!("expected N x {channels} x H x W map, got {shape:?}"),
        });
    }
    Ok(())
}

/// `N x C x H x W` map to `N x (H*W) x C` token matrix.
pub(crate) fn map_to_tokens(
    g: &mut Graph,
    x: NodeId,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Result<NodeId> {
    let p = g.permute(x, &[0, 2, 3, 1])?;
    g.reshape(p, &[n, h * w, c])
}

/// Token matrix back to an `N x C x H x W` map.
pub(crate) fn tokens_to_map(
    g: &mut Graph,
    tokens: NodeId,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Result<NodeId> {
    let r = g.reshape(tokens, &[n, h, w, c])?;
    g.permute(r, &[0, 3, 1, 2])
}

/// `N x T x C` to `N x heads x T x d`.
fn split_heads(g: &mut Graph, tokens: NodeId, n: usize, t: usize, heads: usize, d: usize) -> Result<NodeId> {
    let r = g.reshape(tokens, &[n, t, heads, d])?;
    g.permute(r, &[0, 2, 1, 3])
}

/// `N x heads x T x d` back to `N x T x C`.
fn merge_heads(g: &mut Graph, x: NodeId, n: usize, t: usize, heads: usize, d: usize) -> Result<NodeId> {
    let p = g.permute(x, &[0, 2, 1, 3])?;
    g.reshape(p, &[n, t, heads * d])
}

/// Flat indices selecting the rows `win` of every batch from `N x T x C`.
fn token_gather_indices(n: usize, t: usize, c: usize, win: &[usize]) -> Vec<usize> {
    let mut idx = Vec::with_capacity(n * win.len() * c);
    for b in 0..n {
        for &tok in win {
            let base = (b * t + tok) * c;
            idx.extend(base..base + c);
        }
    }
    idx
}

fn gather_tokens(g: &mut Graph, tokens: NodeId, idx: &[usize], n: usize, tw: usize, c: usize) -> Result<NodeId> {
    let flat = g.gather(tokens, idx)?;
    g.reshape(flat, &[n, tw, c])
}

/// Slices the `(q, k)` sub-block of a full `heads x T x T` bias for one
/// window pair list.
fn gather_bias_block(
    g: &mut Graph,
    bias_full: NodeId,
    heads: usize,
    t: usize,
    q_idx: &[usize],
    k_idx: &[usize],
) -> Result<NodeId> {
    let mut idx = Vec::with_capacity(heads * q_idx.len() * k_idx.len());
    for hh in 0..heads {
        for &qi in q_idx {
            for &kj in k_idx {
                idx.push((hh * t + qi) * t + kj);
            }
        }
    }
    let flat = g.gather(bias_full, &idx)?;
    g.reshape(flat, &[heads, q_idx.len(), k_idx.len()])
}
