//! Parameter and multiply-accumulate accounting.
//!
//! Counting convention: one MAC per kernel element per output element (for
//! matrix products, one MAC per inner-dimension element per output element);
//! bias additions, normalizations, softmaxes and activations are excluded.
//! Counts are exact integers, so the axial-decomposition saving
//! `dense / axial = k^2 / 2k = k / 2` holds exactly at any map size.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dfa::{window_partition, DfaConfig, DfaParams};
use crate::mc::{McConfig, McParams, BRANCH_SPECS, INIT_DW_KERNEL};
use crate::tensor::Tensor;

/// One operator's contribution to a cost report.
#[derive(Clone, Debug)]
pub struct CostRow {
    pub module: String,
    pub operator: String,
    pub params: u64,
    pub macs: u64,
}

/// Cost summary for a module at a fixed input shape.
#[derive(Clone, Debug)]
pub struct CostReport {
    pub input_shape: [usize; 4],
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_macs: u64,
}

impl CostReport {
    fn new(input_shape: [usize; 4]) -> Self {
        CostReport {
            input_shape,
            rows: Vec::new(),
            total_params: 0,
            total_macs: 0,
        }
    }

    fn push(&mut self, module: &str, operator: String, params: u64, macs: u64) {
        self.total_params += params;
        self.total_macs += macs;
        self.rows.push(CostRow {
            module: String::from(module),
            operator,
            params,
            macs,
        });
    }
}

/// Exact scalar-learnable count over a named tensor listing.
pub fn count_params<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> u64 {
    tensors.into_iter().map(|t| t.numel() as u64).sum()
}

pub fn count_params_dfa(params: &DfaParams) -> u64 {
    count_params(params.named_tensors().into_iter().map(|(_, t)| t))
}

pub fn count_params_mc(params: &McParams) -> u64 {
    count_params(params.named_tensors().into_iter().map(|(_, t)| t))
}

// ── MAC primitives ─────────────────────────────────────────────────────

pub fn macs_conv2d(n: usize, c_out: usize, c_in: usize, kh: usize, kw: usize, out_h: usize, out_w: usize) -> u64 {
    (n * c_out * c_in * kh * kw * out_h * out_w) as u64
}

pub fn macs_depthwise(n: usize, c: usize, kh: usize, kw: usize, out_h: usize, out_w: usize) -> u64 {
    (n * c * kh * kw * out_h * out_w) as u64
}

pub fn macs_matmul(batch: usize, m: usize, k: usize, n: usize) -> u64 {
    (batch * m * k * n) as u64
}

/// Ratio of dense `k x k` depthwise MACs to the axial `1 x k` + `k x 1`
/// pair at the same map size, computed from the counting primitives
/// (`k^2 C / 2 k C`, exactly `k / 2`).
pub fn axial_savings(k: usize, c: usize) -> f64 {
    let dense = macs_depthwise(1, c, k, k, 1, 1);
    let axial = macs_depthwise(1, c, 1, k, 1, 1) + macs_depthwise(1, c, k, 1, 1, 1);
    dense as f64 / axial as f64
}

// ── Per-module reports ─────────────────────────────────────────────────

/// DFA cost at a given input shape. Parameter counts depend only on
/// `(C, heads, hidden)`; MACs depend on the map size through the token
/// count, the window partition and the pooled grid.
pub fn dfa_cost(config: &DfaConfig, params: &DfaParams, shape: [usize; 4]) -> CostReport {
    let [n, c, h, w] = shape;
    debug_assert_eq!(c, config.channels);
    let t = h * w;
    let r = config.global_pool_ratio;
    let (hg, wg) = (h.div_ceil(r), w.div_ceil(r));
    let tg = hg * wg;
    let heads = config.heads;
    let d = c / heads;
    let hidden = config.bias_mlp_hidden;

    let mut report = CostReport::new(shape);
    let m = "dfa";
    let proj_params = (c * c + c) as u64;
    report.push(m, String::from("pre_linear"), proj_params, macs_matmul(n, t, c, c));
    report.push(m, String::from("q_proj"), proj_params, macs_matmul(n, t, c, c));
    report.push(m, String::from("k_local_proj"), proj_params, macs_matmul(n, t, c, c));
    report.push(m, String::from("v_local_proj"), proj_params, macs_matmul(n, t, c, c));
    report.push(m, String::from("k_global_proj"), proj_params, macs_matmul(n, tg, c, c));
    report.push(m, String::from("v_global_proj"), proj_params, macs_matmul(n, tg, c, c));
    report.push(m, String::from("layernorm"), 2 * c as u64, 0);

    let mlp_params = (2 * hidden + hidden + hidden * heads + heads) as u64;
    let mlp_macs = |pairs: usize| (pairs * (2 * hidden + hidden * heads)) as u64;
    report.push(m, String::from("bias_mlp_local"), mlp_params, mlp_macs(t * t));
    report.push(m, String::from("bias_mlp_global"), mlp_params, mlp_macs(t * tg));

    let local_pairs: usize = window_partition(h, w, config.local_window)
        .iter()
        .map(|win| win.len() * win.len())
        .sum();
    // Similarity and value aggregation are each one batched matmul of
    // d-length inner products over every in-window query-key pair.
    report.push(m, String::from("attn_local"), 0, 2 * (n * heads * d * local_pairs) as u64);
    report.push(m, String::from("attn_global"), 0, 2 * macs_matmul(n * heads, t, d, tg));
    report.push(
        m,
        String::from("out_proj"),
        (2 * c * c + c) as u64,
        macs_matmul(n, t, 2 * c, c),
    );
    debug_assert_eq!(report.total_params, count_params_dfa(params));
    report
}

/// MC cost at a given input shape; all stages preserve `H x W`.
pub fn mc_cost(config: &McConfig, params: &McParams, shape: [usize; 4]) -> CostReport {
    let [n, c, h, w] = shape;
    debug_assert_eq!(c, config.channels);
    let hidden = config.hidden();
    let mut report = CostReport::new(shape);
    let m = "mc";

    // Channel attention runs the shared bottleneck once per pooling branch
    // on the 1x1 pooled map.
    report.push(
        m,
        String::from("ca_conv1 (avg+max)"),
        (hidden * c + hidden) as u64,
        2 * macs_conv2d(n, hidden, c, 1, 1, 1, 1),
    );
    report.push(
        m,
        String::from("ca_conv2 (avg+max)"),
        (c * hidden + c) as u64,
        2 * macs_conv2d(n, c, hidden, 1, 1, 1, 1),
    );
    report.push(
        m,
        String::from("init_conv1x1"),
        (c * c + c) as u64,
        macs_conv2d(n, c, c, 1, 1, h, w),
    );
    report.push(
        m,
        format!("init_dw{kx}x{kx}", kx = INIT_DW_KERNEL),
        (c * INIT_DW_KERNEL * INIT_DW_KERNEL + c) as u64,
        macs_depthwise(n, c, INIT_DW_KERNEL, INIT_DW_KERNEL, h, w),
    );
    for (i, (pre_k, axial_n)) in BRANCH_SPECS.iter().enumerate() {
        let b = i + 1;
        report.push(
            m,
            format!("branch{b}_pre_dw{pre_k}x{pre_k}"),
            (c * pre_k * pre_k + c) as u64,
            macs_depthwise(n, c, *pre_k, *pre_k, h, w),
        );
        report.push(
            m,
            format!("branch{b}_dw1x{axial_n}"),
            (c * axial_n + c) as u64,
            macs_depthwise(n, c, 1, *axial_n, h, w),
        );
        report.push(
            m,
            format!("branch{b}_dw{axial_n}x1"),
            (c * axial_n + c) as u64,
            macs_depthwise(n, c, *axial_n, 1, h, w),
        );
    }
    report.push(
        m,
        String::from("inner_conv1x1"),
        (c * c + c) as u64,
        macs_conv2d(n, c, c, 1, 1, h, w),
    );
    report.push(
        m,
        String::from("outer_conv1x1"),
        (c * c + c) as u64,
        macs_conv2d(n, c, c, 1, 1, h, w),
    );
    debug_assert_eq!(report.total_params, count_params_mc(params));
    report
}

/// Assembles a report from precomputed rows (used by the detector, whose
/// layer plan lives in its own module).
pub fn report_from_rows(input_shape: [usize; 4], rows: Vec<CostRow>) -> CostReport {
    let mut report = CostReport::new(input_shape);
    for row in rows {
        report.push(&row.module.clone(), row.operator.clone(), row.params, row.macs);
    }
    report
}
