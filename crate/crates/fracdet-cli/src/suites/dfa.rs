//! DFA suite: attention-row and unit-norm invariants, exact identities,
//! and the full-module gradient sweep.

use fracdet_core::dfa::{
    dfa_attend, dfa_forward, dfa_forward_graph, dfa_trace, DfaConfig, DfaParams, Mode,
};
use fracdet_core::graph::{Graph, NodeId};
use fracdet_core::ops;
use fracdet_core::rng::Rng;
use fracdet_core::tensor::Tensor;
use fracdet_core::Result as CoreResult;

use super::{gradcheck_entry, gradcheck_sweep, projection, rand_tensor};
use crate::config::RunConfig;
use crate::report::CheckEntry;

/// Desk-scale geometry exercising several windows and ragged pooling.
fn suite_config(config: &RunConfig) -> DfaConfig {
    let mut cfg = config.dfa_config(8);
    cfg.local_window = 3;
    cfg.global_pool_ratio = 3;
    cfg.heads = 2;
    cfg.bias_mlp_hidden = 8;
    cfg
}

fn suite_params(cfg: &DfaConfig, seed: u64) -> DfaParams {
    let mut rng = Rng::seeded(seed);
    DfaParams::init(cfg, &mut rng).expect("valid config")
}

pub fn dfa_suite(config: &RunConfig) -> Vec<CheckEntry> {
    let mut entries = Vec::new();
    let cfg = suite_config(config);

    {
        // Attention rows sum to 1 and entries lie in (0,1); normalized
        // query/key vectors are unit length.
        let params = suite_params(&cfg, 100);
        let x = rand_tensor(&[2, 8, 6, 6], 101);
        let trace = dfa_trace(&x, &params, &cfg).expect("trace");
        let mut worst_row = 0.0f64;
        let mut check_rows = |a: &Tensor| {
            let keys = *a.shape().last().unwrap();
            for row in a.data().chunks(keys) {
                worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
                if !row.iter().all(|&v| v > 0.0 && v < 1.0) {
                    worst_row = f64::MAX;
                }
            }
        };
        for a in &trace.local_attn {
            check_rows(a);
        }
        check_rows(&trace.global_attn);
        entries.push(CheckEntry::within(
            "dfa.attention_rows",
            "every local and global attention row sums to 1",
            worst_row,
            config.tol_row_sum,
        ));

        let mut worst_norm = 0.0f64;
        let mut check_norms = |t: &Tensor| {
            let d = *t.shape().last().unwrap();
            for v in t.data().chunks(d) {
                let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
                worst_norm = worst_norm.max((norm - 1.0).abs());
            }
        };
        for t in trace.q_hat_local.iter().chain(trace.k_hat_local.iter()) {
            check_norms(t);
        }
        check_norms(&trace.q_hat_global);
        check_norms(&trace.k_hat_global);
        entries.push(CheckEntry::within(
            "dfa.unit_norms",
            "normalized query/key token vectors have unit L2 norm",
            worst_norm,
            config.tol_unit_norm,
        ));
    }

    {
        // Zero-initialized output projection: the module is the identity.
        let params = suite_params(&cfg, 102);
        let x = rand_tensor(&[1, 8, 7, 5], 103);
        let y = dfa_forward(&x, &params, &cfg, Mode::Eval).expect("forward");
        entries.push(CheckEntry::exact(
            "dfa.residual_identity",
            "zero-init projection makes eval forward the exact identity",
            y.max_abs_diff(&x).unwrap(),
        ));
    }

    {
        // Locality: perturbing a token outside a window leaves the window's
        // local branch output bitwise unchanged.
        let params = suite_params(&cfg, 104);
        let x = rand_tensor(&[1, 8, 6, 6], 105);
        let (v_base, _) = dfa_attend(&x, &params, &cfg).expect("attend");
        let mut x2 = x.clone();
        for c in 0..8 {
            let idx = x2.idx4(0, c, 5, 5);
            x2.data_mut()[idx] += 5.0;
        }
        let (v_pert, _) = dfa_attend(&x2, &params, &cfg).expect("attend");
        let mut worst = 0.0f64;
        for c in 0..8 {
            for i in 0..3 {
                for j in 0..3 {
                    worst = worst.max((v_base.at4(0, c, i, j) - v_pert.at4(0, c, i, j)).abs());
                }
            }
        }
        entries.push(CheckEntry::exact(
            "dfa.locality",
            "out-of-window perturbation leaves local outputs unchanged",
            worst,
        ));
    }

    {
        // Scale robustness with bias-free projections: local attention is
        // bitwise invariant under X -> 2X.
        let mut params = suite_params(&cfg, 106);
        params.b_q = Tensor::zeros(&[8]);
        params.b_k_local = Tensor::zeros(&[8]);
        let x = rand_tensor(&[1, 8, 6, 6], 107);
        let x2 = ops::scale(&x, 2.0).unwrap();
        let t1 = dfa_trace(&x, &params, &cfg).expect("trace");
        let t2 = dfa_trace(&x2, &params, &cfg).expect("trace");
        let mut worst = 0.0f64;
        for (a, b) in t1.local_attn.iter().zip(t2.local_attn.iter()) {
            worst = worst.max(a.max_abs_diff(b).unwrap());
        }
        entries.push(CheckEntry::exact(
            "dfa.scale_invariance",
            "bias-free local attention is invariant to doubling the input",
            worst,
        ));
    }

    {
        // Shape preservation over awkward extents (ragged windows/pools).
        let params = suite_params(&cfg, 108);
        let mut ok = true;
        for (h, w) in [(1usize, 1usize), (5, 3), (7, 10)] {
            let x = rand_tensor(&[1, 8, h, w], 109 + (h * 13 + w) as u64);
            match dfa_forward(&x, &params, &cfg, Mode::Eval) {
                Ok(y) => ok &= y.shape() == x.shape(),
                Err(_) => ok = false,
            }
        }
        entries.push(CheckEntry::exact(
            "dfa.shape_preservation",
            "forward preserves N x C x H x W for all valid extents",
            if ok { 0.0 } else { 1.0 },
        ));
    }

    {
        // Train-mode determinism per seed.
        let params = suite_params(&cfg, 110);
        let x = rand_tensor(&[1, 8, 6, 6], 111);
        let mut r1 = Rng::seeded(7);
        let mut r2 = Rng::seeded(7);
        let a = dfa_forward(&x, &params, &cfg, Mode::Train(&mut r1)).expect("forward");
        let b = dfa_forward(&x, &params, &cfg, Mode::Train(&mut r2)).expect("forward");
        entries.push(CheckEntry::exact(
            "dfa.determinism",
            "train-mode forward is bit-identical for identical seeds",
            a.max_abs_diff(&b).unwrap(),
        ));
    }

    // Full-module gradient sweep on 1 x 8 x 6 x 6 inputs.
    let seeds = config.tol_grad_seeds as u64;
    entries.push(gradcheck_entry(
        config,
        "dfa.grad_forward",
        "full dfa_forward passes the finite-difference check",
        gradcheck_sweep(config, seeds, |seed| {
            let cfg = suite_config(config);
            let params = suite_params(&cfg, 2000 + seed);
            let probe = rand_tensor(&[1, 8, 6, 6], 2100 + seed);
            let proj = projection(&[1, 8, 6, 6], 2200 + seed);
            let f = move |g: &mut Graph, x: NodeId| -> CoreResult<NodeId> {
                let nodes = params.bind(g);
                let y = dfa_forward_graph(g, x, &nodes, &cfg, Mode::Eval)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    ));

    entries
}
