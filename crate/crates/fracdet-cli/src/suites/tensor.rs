//! Tensor-core suite: operator oracles and per-operator gradient sweeps.

use fracdet_core::gradcheck::separate_window_ties;
use fracdet_core::graph::{Graph, NodeId};
use fracdet_core::ops::{self, Padding, PoolMode, PoolWindow};
use fracdet_core::rng::Rng;
use fracdet_core::tensor::Tensor;
use fracdet_core::Result as CoreResult;

use super::{gradcheck_entry, gradcheck_sweep, projection, rand_tensor};
use crate::config::RunConfig;
use crate::report::CheckEntry;

/// Direct six-nested-loop reference convolution (stride 1, same padding),
/// written independently of the production path.
fn naive_conv2d(input: &Tensor, kernel: &Tensor, bias: &[f64]) -> Tensor {
    let (n, c_in, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (c_out, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
    let (pt, pl) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = Tensor::zeros(&[n, c_out, h, w]);
    for b in 0..n {
        for co in 0..c_out {
            for oh in 0..h {
                for ow in 0..w {
                    let mut acc = bias[co];
                    for ci in 0..c_in {
                        for r in 0..kh {
                            for s in 0..kw {
                                let ih = oh as isize + r as isize - pt as isize;
                                let iw = ow as isize + s as isize - pl as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue;
                                }
                                acc += input.at4(b, ci, ih as usize, iw as usize)
                                    * kernel.at4(co, ci, r, s);
                            }
                        }
                    }
                    let idx = out.idx4(b, co, oh, ow);
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    out
}

pub fn tensor_suite(config: &RunConfig) -> Vec<CheckEntry> {
    let mut entries = Vec::new();
    let seeds = config.tol_grad_seeds as u64;

    // ── Oracle checks ──────────────────────────────────────────────────

    {
        // Delta kernel is the exact identity.
        let x = rand_tensor(&[1, 2, 5, 6], 1);
        let mut k = Tensor::zeros(&[2, 2, 3, 3]);
        for c in 0..2 {
            let idx = k.idx4(c, c, 1, 1);
            k.data_mut()[idx] = 1.0;
        }
        let y = ops::conv2d(&x, &k, None, 1, Padding::Same).expect("conv");
        entries.push(CheckEntry::exact(
            "tensor.conv_delta_identity",
            "3x3 delta-kernel conv2d equals its input exactly",
            y.max_abs_diff(&x).unwrap(),
        ));
    }
    {
        // Random conv vs the naive loop reference.
        let x = rand_tensor(&[1, 2, 5, 5], 2);
        let k = rand_tensor(&[3, 2, 3, 3], 3);
        let bias = rand_tensor(&[3], 4);
        let fast = ops::conv2d(&x, &k, Some(&bias), 1, Padding::Same).expect("conv");
        let slow = naive_conv2d(&x, &k, bias.data());
        entries.push(CheckEntry::within(
            "tensor.conv_loop_oracle",
            "conv2d matches a six-nested-loop reference convolution",
            fast.max_abs_diff(&slow).unwrap(),
            config.tol_oracle,
        ));
    }
    {
        // Depthwise vs grouped conv built from a block-diagonal kernel.
        let c = 4;
        let x = rand_tensor(&[1, c, 8, 8], 5);
        let dw = rand_tensor(&[c, 3, 3], 6);
        let got = ops::depthwise_conv2d(&x, &dw, None).expect("depthwise");
        let mut block = Tensor::zeros(&[c, c, 3, 3]);
        for ch in 0..c {
            for r in 0..3 {
                for s in 0..3 {
                    let idx = block.idx4(ch, ch, r, s);
                    block.data_mut()[idx] = dw.data()[(ch * 3 + r) * 3 + s];
                }
            }
        }
        let grouped = ops::conv2d(&x, &block, None, 1, Padding::Same).expect("conv");
        entries.push(CheckEntry::within(
            "tensor.depthwise_grouped_oracle",
            "depthwise conv matches block-diagonal dense conv",
            got.max_abs_diff(&grouped).unwrap(),
            config.tol_oracle,
        ));
    }
    {
        // Pooling vs a per-window loop.
        let x = rand_tensor(&[1, 1, 4, 4], 7);
        let got = ops::pool2d(&x, PoolMode::Avg, PoolWindow::Square(2), 2).expect("pool");
        let mut worst = 0.0f64;
        for oh in 0..2 {
            for ow in 0..2 {
                let mut acc = 0.0;
                for r in 0..2 {
                    for s in 0..2 {
                        acc += x.at4(0, 0, oh * 2 + r, ow * 2 + s);
                    }
                }
                worst = worst.max((got.at4(0, 0, oh, ow) - acc / 4.0).abs());
            }
        }
        entries.push(CheckEntry::exact(
            "tensor.pool_loop_oracle",
            "2x2/stride-2 avg pool matches the per-window loop exactly",
            worst,
        ));
        let (avg, max) = (
            ops::global_pool(&x, PoolMode::Avg).unwrap(),
            ops::global_pool(&x, PoolMode::Max).unwrap(),
        );
        let direct_max = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let direct_avg = x.data().iter().sum::<f64>() / 16.0;
        entries.push(CheckEntry::exact(
            "tensor.pool_global",
            "global avg/max pooling match direct reductions",
            (avg.data()[0] - direct_avg)
                .abs()
                .max((max.data()[0] - direct_max).abs()),
        ));
    }
    {
        // Softmax: row sums, range, and the direct [1,2,3] evaluation.
        let x = rand_tensor(&[4, 7], 8);
        let y = ops::softmax(&x, 1).expect("softmax");
        let mut worst = 0.0f64;
        for row in y.data().chunks(7) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            if !row.iter().all(|&v| v > 0.0 && v < 1.0) {
                worst = f64::MAX;
            }
        }
        entries.push(CheckEntry::within(
            "tensor.softmax_rows",
            "softmax rows sum to 1 with entries in (0,1)",
            worst,
            config.tol_row_sum,
        ));
        let probe = ops::softmax(&Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap(), 0).unwrap();
        let expect = [0.09003057, 0.24472847, 0.66524096];
        let diff = probe
            .data()
            .iter()
            .zip(expect.iter())
            .map(|(a, e)| (a - e).abs())
            .fold(0.0, f64::max);
        entries.push(CheckEntry::within(
            "tensor.softmax_values",
            "softmax of [1,2,3] matches direct exp/sum evaluation",
            diff,
            1e-8,
        ));
        let shifted = ops::softmax(&Tensor::new(&[2], vec![1000.0, 1000.0]).unwrap(), 0).unwrap();
        entries.push(CheckEntry::exact(
            "tensor.softmax_shift",
            "softmax of huge equal logits is exactly [0.5, 0.5]",
            (shifted.data()[0] - 0.5).abs().max((shifted.data()[1] - 0.5).abs()),
        ));
    }
    {
        // LayerNorm moments against eps = 1e-5 on a high-variance slice.
        let mut rng = Rng::seeded(9);
        let data: Vec<f64> = (0..32).map(|_| rng.uniform(-10.0, 10.0)).collect();
        let x = Tensor::new(&[4, 8], data).unwrap();
        let gamma = Tensor::filled(&[8], 1.0).unwrap();
        let beta = Tensor::zeros(&[8]);
        let y = ops::layer_norm(&x, &gamma, &beta, 1e-5).expect("layer_norm");
        let mut worst_mean = 0.0f64;
        let mut worst_var = 0.0f64;
        for row in y.data().chunks(8) {
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            worst_mean = worst_mean.max(mean.abs());
            worst_var = worst_var.max((var - 1.0).abs());
        }
        entries.push(CheckEntry::within(
            "tensor.layer_norm_mean",
            "normalized slices have zero mean",
            worst_mean,
            1e-12,
        ));
        entries.push(CheckEntry::within(
            "tensor.layer_norm_var",
            "normalized slices have unit variance at eps 1e-5",
            worst_var,
            1e-6,
        ));
    }
    {
        let y = ops::l2_normalize(&Tensor::new(&[2], vec![3.0, 4.0]).unwrap(), 0, 1e-12).unwrap();
        entries.push(CheckEntry::within(
            "tensor.l2_345",
            "l2_normalize([3,4]) is [0.6, 0.8]",
            (y.data()[0] - 0.6).abs().max((y.data()[1] - 0.8).abs()),
            1e-15,
        ));
        let zero = ops::l2_normalize(&Tensor::zeros(&[3]), 0, 1e-12).unwrap();
        entries.push(CheckEntry::exact(
            "tensor.l2_zero_guard",
            "zero vector stays zero under the eps guard",
            zero.data().iter().map(|v| v.abs()).fold(0.0, f64::max),
        ));
    }
    {
        let s = ops::sigmoid(&Tensor::new(&[1], vec![3.0f64.ln()]).unwrap()).unwrap();
        entries.push(CheckEntry::within(
            "tensor.sigmoid_ln3",
            "sigmoid(ln 3) equals 3/4",
            (s.data()[0] - 0.75).abs(),
            1e-12,
        ));
        let g = ops::gelu(&Tensor::new(&[2], vec![0.0, -10.0]).unwrap()).unwrap();
        entries.push(CheckEntry::within(
            "tensor.gelu_points",
            "gelu(0) = 0 and gelu(-10) vanishes (exact erf form)",
            g.data()[0].abs().max(g.data()[1].abs()),
            1e-12,
        ));
        let r = ops::relu(&Tensor::new(&[2], vec![-1.0, 2.0]).unwrap()).unwrap();
        entries.push(CheckEntry::exact(
            "tensor.relu_points",
            "relu(-1) = 0 and relu(2) = 2",
            (r.data()[0]).abs().max((r.data()[1] - 2.0).abs()),
        ));
    }
    {
        // Dropout contracts: p = 0 identity, eval identity, seed determinism.
        let x = rand_tensor(&[64], 10);
        let mut r0 = Rng::seeded(11);
        let p0 = ops::dropout(&x, 0.0, &mut r0, true).unwrap();
        let mut ra = Rng::seeded(12);
        let mut rb = Rng::seeded(12);
        let a = ops::dropout(&x, 0.5, &mut ra, true).unwrap();
        let b = ops::dropout(&x, 0.5, &mut rb, true).unwrap();
        let mut re = Rng::seeded(13);
        let ev = ops::dropout(&x, 0.7, &mut re, false).unwrap();
        let measured = p0
            .max_abs_diff(&x)
            .unwrap()
            .max(a.max_abs_diff(&b).unwrap())
            .max(ev.max_abs_diff(&x).unwrap());
        entries.push(CheckEntry::exact(
            "tensor.dropout_contracts",
            "dropout: p=0 identity, eval identity, same-seed determinism",
            measured,
        ));
    }

    // ── Gradient sweeps (one per operator) ─────────────────────────────

    let grad = |entries: &mut Vec<CheckEntry>, id: &str, desc: &str, sweep: (f64, bool)| {
        entries.push(gradcheck_entry(config, id, desc, sweep));
    };

    grad(
        &mut entries,
        "tensor.grad_conv2d",
        "conv2d gradients (input) match central differences",
        gradcheck_sweep(config, seeds, |seed| {
            let kernel = rand_tensor(&[3, 2, 3, 3], 900 + seed);
            let bias = rand_tensor(&[3], 910 + seed);
            let proj = projection(&[1, 3, 5, 5], 920 + seed);
            let probe = rand_tensor(&[1, 2, 5, 5], 930 + seed);
            let f = move |g: &mut Graph, x: NodeId| -> CoreResult<NodeId> {
                let k = g.constant(kernel.clone());
                let b = g.constant(bias.clone());
                let y = g.conv2d(x, k, Some(b), 1, Padding::Same)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    );
    grad(
        &mut entries,
        "tensor.grad_conv2d_kernel",
        "conv2d gradients (kernel and bias) match central differences",
        gradcheck_sweep(config, seeds, |seed| {
            let input = rand_tensor(&[1, 2, 5, 5], 940 + seed);
            let proj = projection(&[1, 2, 3, 3], 950 + seed);
            // Probe holds kernel (2x2x3x3 = 36) then bias (2): 38 values.
            let probe = rand_tensor(&[38], 960 + seed);
            let f = move |g: &mut Graph, p: NodeId| -> CoreResult<NodeId> {
                let kernel = g.gather(p, &(0..36).collect::<Vec<_>>())?;
                let kernel = g.reshape(kernel, &[2, 2, 3, 3])?;
                let bias = g.gather(p, &[36, 37])?;
                let x = g.constant(input.clone());
                let y = g.conv2d(x, kernel, Some(bias), 2, Padding::Same)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    );
    grad(
        &mut entries,
        "tensor.grad_depthwise",
        "depthwise conv gradients match central differences",
        gradcheck_sweep(config, seeds, |seed| {
            let kernel = rand_tensor(&[3, 3, 3], 970 + seed);
            let proj = projection(&[1, 3, 6, 6], 980 + seed);
            let probe = rand_tensor(&[1, 3, 6, 6], 990 + seed);
            let f = move |g: &mut Graph, x: NodeId| -> CoreResult<NodeId> {
                let k = g.constant(kernel.clone());
                let y = g.depthwise_conv2d(x, k, None)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    );
    grad(
        &mut entries,
        "tensor.grad_pool_avg",
        "avg pool gradients (ragged windows) match central differences",
        gradcheck_sweep(config, seeds, |seed| {
            let probe = rand_tensor(&[1, 2, 5, 5], 1000 + seed);
            let proj = projection(&[1, 2, 3, 3], 1010 + seed);
            let f = move |g: &mut Graph, x: NodeId| -> CoreResult<NodeId> {
                let y = g.pool2d(x, PoolMode::Avg, PoolWindow::Square(2), 2)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    );
    grad(
        &mut entries,
        "tensor.grad_pool_max",
        "max pool gradients (ties separated) match central differences",
        gradcheck_sweep(config, seeds, |seed| {
            let mut probe = rand_tensor(&[1, 2, 4, 4], 1020 + seed);
            separate_window_ties(&mut probe, 2, 2, 1e-3);
            let proj = projection(&[1, 2, 2, 2], 1030 + seed);
            let f = move |g: &mut Graph, x: NodeId| -> CoreResult<NodeId> {
                let y = g.pool2d(x, PoolMode::Max, PoolWindow::Square(2), 2)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    );
    grad(
        &mut entries,
        "tensor.grad_softmax",
        "softmax gradients match central differences",
        gradcheck_sweep(config, seeds, |seed| {
            let probe = rand_tensor(&[3, 5], 1040 + seed);
            let proj = projection(&[3, 5], 1050 + seed);
            let f = move |g: &mut Graph, x: NodeId| -> CoreResult<NodeId> {
                let y = g.softmax(x, 1)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    );
    grad(
        &mut entries,
        "tensor.grad_layer_norm",
        "layer norm gradients (input, gamma, beta) match central differences",
        gradcheck_sweep(config, seeds, |seed| {
            // Probe holds a 3x4 input, gamma (4) and beta (4): 20 values.
            let probe = rand_tensor(&[20], 1060 + seed);
            let proj = projection(&[3, 4], 1070 + seed);
            let f = move |g: &mut Graph, p: NodeId| -> CoreResult<NodeId> {
                let x = g.gather(p, &(0..12).collect::<Vec<_>>())?;
                let x = g.reshape(x, &[3, 4])?;
                let gamma = g.gather(p, &[12, 13, 14, 15])?;
                let beta = g.gather(p, &[16, 17, 18, 19])?;
                let y = g.layer_norm(x, gamma, beta, 1e-5)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    );
    grad(
        &mut entries,
        "tensor.grad_l2_normalize",
        "l2 normalization gradients match central differences",
        gradcheck_sweep(config, seeds, |seed| {
            let probe = rand_tensor(&[4, 6], 1080 + seed);
            let proj = projection(&[4, 6], 1090 + seed);
            let f = move |g: &mut Graph, x: NodeId| -> CoreResult<NodeId> {
                let y = g.l2_normalize(x, 1, 1e-12)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    );
    for (name, which) in [("relu", 0usize), ("gelu", 1), ("sigmoid", 2)] {
        grad(
            &mut entries,
            &format!("tensor.grad_{name}"),
            &format!("{name} gradients match central differences"),
            gradcheck_sweep(config, seeds, |seed| {
                let probe = rand_tensor(&[3, 6], 1100 + 37 * which as u64 + seed);
                let proj = projection(&[3, 6], 1110 + 37 * which as u64 + seed);
                let f = move |g: &mut Graph, x: NodeId| -> CoreResult<NodeId> {
                    let y = match which {
                        0 => g.relu(x)?,
                        1 => g.gelu(x)?,
                        _ => g.sigmoid(x)?,
                    };
                    let r = g.constant(proj.clone());
                    let w = g.hadamard(y, r)?;
                    g.sum(w)
                };
                (probe, Box::new(f))
            }),
        );
    }
    grad(
        &mut entries,
        "tensor.grad_matmul",
        "matmul gradients (both sides, batched and shared rhs) match",
        gradcheck_sweep(config, seeds, |seed| {
            // Probe: A (2x3x4 = 24) then shared B (4x2 = 8).
            let probe = rand_tensor(&[32], 1200 + seed);
            let proj = projection(&[2, 3, 2], 1210 + seed);
            let f = move |g: &mut Graph, p: NodeId| -> CoreResult<NodeId> {
                let a = g.gather(p, &(0..24).collect::<Vec<_>>())?;
                let a = g.reshape(a, &[2, 3, 4])?;
                let b = g.gather(p, &(24..32).collect::<Vec<_>>())?;
                let b = g.reshape(b, &[4, 2])?;
                let y = g.matmul(a, b)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    );
    grad(
        &mut entries,
        "tensor.grad_elementwise",
        "add/hadamard/scale/concat/permute/reshape gradients match",
        gradcheck_sweep(config, seeds, |seed| {
            let other = rand_tensor(&[2, 3], 1220 + seed);
            let proj = projection(&[2, 6], 1230 + seed);
            let probe = rand_tensor(&[2, 3], 1240 + seed);
            let f = move |g: &mut Graph, x: NodeId| -> CoreResult<NodeId> {
                let o = g.constant(other.clone());
                let summed = g.add(x, o)?;
                let scaled = g.scale(summed, 0.7)?;
                let squared = g.hadamard(scaled, x)?;
                let cat = g.concat(&[squared, x], 1)?;
                let perm = g.permute(cat, &[1, 0])?;
                let back = g.reshape(perm, &[2, 6])?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(back, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    );
    grad(
        &mut entries,
        "tensor.grad_gather_scatter",
        "gather/scatter-add gradients match central differences",
        gradcheck_sweep(config, seeds, |seed| {
            let probe = rand_tensor(&[10], 1250 + seed);
            let proj = projection(&[8], 1260 + seed);
            let f = move |g: &mut Graph, x: NodeId| -> CoreResult<NodeId> {
                let picked = g.gather(x, &[9, 0, 0, 4])?;
                let spread = g.scatter_add(picked, &[1, 5, 5, 7], 8)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(spread, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    );
    grad(
        &mut entries,
        "tensor.grad_dropout",
        "dropout gradients (fixed mask) match central differences",
        gradcheck_sweep(config, seeds, |seed| {
            let probe = rand_tensor(&[4, 4], 1270 + seed);
            let proj = projection(&[4, 4], 1280 + seed);
            let f = move |g: &mut Graph, x: NodeId| -> CoreResult<NodeId> {
                let mut rng = Rng::seeded(4242);
                let y = g.dropout(x, 0.4, &mut rng, true)?;
                let r = g.constant(proj.clone());
                let w = g.hadamard(y, r)?;
                g.sum(w)
            };
            (probe, Box::new(f))
        }),
    );
    grad(
        &mut entries,
        "tensor.grad_losses",
        "BCE-with-logits and L1 loss gradients match central differences",
        gradcheck_sweep(config, seeds, |seed| {
            let probe = rand_tensor(&[8], 1290 + seed);
            let mut rng = Rng::seeded(1300 + seed);
            let targets = Tensor::new(
                &[8],
                (0..8).map(|_| if rng.chance(0.5) { 1.0 } else { 0.0 }).collect(),
            )
            .unwrap();
            // L1 target far from the probe range keeps the kink away.
            let l1_target = Tensor::filled(&[8], 10.0).unwrap();
            let f = move |g: &mut Graph, x: NodeId| -> CoreResult<NodeId> {
                let bce = g.bce_with_logits_weighted(x, &targets, 4.0)?;
                let l1 = g.l1_loss(x, &l1_target)?;
                g.add(bce, l1)
            };
            (probe, Box::new(f))
        }),
    );

    entries
}
