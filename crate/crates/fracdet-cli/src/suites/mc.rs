//! MC suite: separability oracle, exact identities, gate range, and the
//! full-module gradient sweep.

use fracdet_core::mc::{
    channel_attention, mc_forward, mc_forward_graph, McBranch, McConfig, McParams, BRANCH_SPECS,
    INIT_DW_KERNEL,
};
use fracdet_core::graph::{Graph, NodeId};
use fracdet_core::ops;
use fracdet_core::rng::Rng;
use fracdet_core::tensor::Tensor;
use fracdet_core::Result as CoreResult;

use super::{gradcheck_entry, gradcheck_sweep, projection, rand_tensor};
use crate::config::RunConfig;
use crate::report::CheckEntry;

fn suite_params(cfg: &McConfig, seed: u64) -> McParams {
    let mut rng = Rng::seeded(seed);
    McParams::init(cfg, &mut rng).expect("valid config")
}

fn delta_depthwise(c: usize, kh: usize, kw: usize) -> Tensor {
    let mut data = vec![0.0; c * kh * kw];
    let centre = (kh / 2) * kw + kw / 2;
    for ch in 0..c {
        data[ch * kh * kw + centre] = 1.0;
    }
    Tensor::new(&[c, kh, kw], data).unwrap()
}

pub fn mc_suite(config: &RunConfig) -> Vec<CheckEntry> {
    let mut entries = Vec::new();
    let cfg = config.mc_config(8);

    {
        // Separability: the axial pair with rank-1 kernels matches the
        // dense depthwise convolution for every branch kernel size.
        let mut worst = 0.0f64;
        for &(_, n) in BRANCH_SPECS.iter() {
            let c = 2;
            let u = rand_tensor(&[c, n], 300 + n as u64);
            let v = rand_tensor(&[c, n], 310 + n as u64);
            let x = rand_tensor(&[1, c, 30, 30], 320 + n as u64);
            let horiz = ops::reshape(&v, &[c, 1, n]).unwrap();
            let vert = ops::reshape(&u, &[c, n, 1]).unwrap();
            let step = ops::depthwise_conv2d(&x, &horiz, None).unwrap();
            let axial = ops::depthwise_conv2d(&step, &vert, None).unwrap();
            let mut dense_k = vec![0.0; c * n * n];
            for ch in 0..c {
                for r in 0..n {
                    for s in 0..n {
                        dense_k[(ch * n + r) * n + s] = u.data()[ch * n + r] * v.data()[ch * n + s];
                    }
                }
            }
            let dense =
                ops::depthwise_conv2d(&x, &Tensor::new(&[c, n, n], dense_k).unwrap(), None).unwrap();
            worst = worst.max(axial.max_abs_diff(&dense).unwrap());
        }
        entries.push(CheckEntry::within(
            "mc.separability",
            "axial (1xn)+(nx1) with rank-1 kernels equals dense nxn depthwise",
            worst,
            config.tol_separability,
        ));
    }

    {
        // Identity configuration: unit channel gates, delta branches,
        // all-ones inner attention, identity outer conv.
        let c = cfg.channels;
        let hidden = cfg.hidden();
        let mut identity_outer = Tensor::zeros(&[c, c, 1, 1]);
        for ch in 0..c {
            let idx = identity_outer.idx4(ch, ch, 0, 0);
            identity_outer.data_mut()[idx] = 1.0;
        }
        let mut identity_init = Tensor::zeros(&[c, c, 1, 1]);
        for ch in 0..c {
            let idx = identity_init.idx4(ch, ch, 0, 0);
            identity_init.data_mut()[idx] = 1.0;
        }
        let params = McParams {
            ca_w1: Tensor::zeros(&[hidden, c, 1, 1]),
            ca_b1: Tensor::zeros(&[hidden]),
            ca_w2: Tensor::zeros(&[c, hidden, 1, 1]),
            ca_b2: Tensor::zeros(&[c]),
            init_conv_w: identity_init,
            init_conv_b: Tensor::zeros(&[c]),
            init_dw: delta_depthwise(c, INIT_DW_KERNEL, INIT_DW_KERNEL),
            init_dw_b: Tensor::zeros(&[c]),
            branches: BRANCH_SPECS
                .iter()
                .map(|&(pre_k, n)| McBranch {
                    pre: delta_depthwise(c, pre_k, pre_k),
                    pre_b: Tensor::zeros(&[c]),
                    horiz: delta_depthwise(c, 1, n),
                    horiz_b: Tensor::zeros(&[c]),
                    vert: delta_depthwise(c, n, 1),
                    vert_b: Tensor::zeros(&[c]),
                })
                .collect(),
            inner_w: Tensor::zeros(&[c, c, 1, 1]),
            inner_b: Tensor::filled(&[c], 1.0).unwrap(),
            outer_w: identity_outer,
            outer_b: Tensor::zeros(&[c]),
        };
        let x = rand_tensor(&[1, c, 9, 9], 330);
        let y = mc_forward(&x, &params, &cfg).expect("forward");
        entries.push(CheckEntry::exact(
            "mc.identity_configuration",
            "identity-configured head returns its input exactly",
            y.max_abs_diff(&x).unwrap(),
        ));
    }

    {
        // Channel gates strictly inside (0,1); combined weight inside (0,2).
        let params = suite_params(&cfg, 331);
        let x = rand_tensor(&[2, 8, 6, 6], 332);
        let (avg, max) = channel_attention(&x, &params, &cfg).expect("gates");
        let mut violation = 0.0f64;
        for (&a, &m) in avg.data().iter().zip(max.data().iter()) {
            if !(a > 0.0 && a < 1.0 && m > 0.0 && m < 1.0) {
                violation = 1.0;
            }
            let combined = a + m;
            if !(combined > 0.0 && combined < 2.0) {
                violation = 1.0;
            }
        }
        entries.push(CheckEntry::exact(
            "mc.gate_range",
            "channel-attention gates lie strictly in (0,1), sums in (0,2)",
            violation,
        ));
    }

    {
        // Channel independence of the bias-free depthwise branch stacks.
        let mut params = suite_params(&cfg, 333);
        for b in params.branches.iter_mut() {
            b.pre_b = Tensor::zeros(&[8]);
            b.horiz_b = Tensor::zeros(&[8]);
            b.vert_b = Tensor::zeros(&[8]);
        }
        let mut x0 = rand_tensor(&[1, 8, 8, 8], 334);
        for i in 0..64 {
            x0.data_mut()[i] = 0.0;
        }
        let (_, x1, x2, x3) =
            fracdet_core::mc::multiscale_branches(&x0, &params, &cfg).expect("branches");
        let mut worst = 0.0f64;
        for out in [&x1, &x2, &x3] {
            worst = worst.max(out.data()[..64].iter().map(|v| v.abs()).fold(0.0, f64::max));
        }
        entries.push(CheckEntry::exact(
            "mc.channel_independence",
            "zeroed input channel stays zero through bias-free depthwise stacks",
            worst,
        ));
    }

    {
        // Shape preservation and determinism.
        let params = suite_params(&cfg, 335);
        let mut ok = true;
        for (h, w) in [(1usize, 1usize), (2, 9), (12, 12)] {
            let x = rand_tensor(&[1, 8, h, w], 336 + (h * 13 + w) as u64);
            match mc_forward(&x, &params, &cfg) {
                Ok(y) => ok &= y.shape() == x.shape(),
                Err(_) => ok = false,
            }
        }
        entries.push(CheckEntry::exact(
            "mc.shape_preservation",
            "forward preserves N x C x H x W down to 1 x 1 maps",
            if ok { 0.0 } else { 1.0 },
        ));

        let x = rand_tensor(&[1, 8, 6, 6], 337);
        let a = mc_forward(&x, &suite_params(&cfg, 42), &cfg).expect("forward");
        let b = mc_forward(&x, &suite_params(&cfg, 42), &cfg).expect("forward");
        entries.push(CheckEntry::exact(
            "mc.determinism",
            "same-seed parameters produce bit-identical outputs",
            a.max_abs_diff(&b).unwrap(),
        ));
    }

    // Full-module gradient sweep on 1 x 8 x 12 x 12 inputs.
    let seeds = config.tol_grad_seeds as u64;
    entries.push(gradcheck_entry(
        config,
        "mc.grad_forward",
        "full mc_forward passes the finite-difference check",
        gradcheck_sweep(config, seeds, |seed| {
            let cfg = config.mc_config(8);
            let params = suite_params(&cfg, 3000 + seed);
            let probe = rand_tensor(&[1, 8, 12, 12], 3100 + seed);
            let proj = projection(&[1, 8, 12, 12], 3200 + seed);
            let f = move |g: &mut Graph, x: NodeId| -> CoreResult<NodeId> {
                let nodes = params.bind(g);
                let y = mc_forward_graph(g, x, &nodes, &cfg)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    ));

    entries
}
