//! Complexity suite: the axial-decomposition saving, the spatial-size
//! invariance of parameter counts, and the ablation-grid deltas.

use fracdet_core::complexity::{
    axial_savings, count_params_dfa, count_params_mc, dfa_cost, macs_conv2d, macs_depthwise,
    mc_cost,
};
use fracdet_core::detector::{Detector, DetectorConfig};
use fracdet_core::dfa::DfaParams;
use fracdet_core::mc::{McParams, BRANCH_SPECS};
use fracdet_core::rng::Rng;

use crate::config::RunConfig;
use crate::report::CheckEntry;

pub fn flops_suite(config: &RunConfig) -> Vec<CheckEntry> {
    let mut entries = Vec::new();

    // Dense/axial MAC ratio equals k/2 exactly, for each branch kernel and
    // cross-checked against instantiated counts at several map sizes.
    for &(_, k) in BRANCH_SPECS.iter() {
        let expect = k as f64 / 2.0;
        let mut worst = (axial_savings(k, 64) - expect).abs();
        for (c, h, w) in [(1usize, 1usize, 1usize), (16, 32, 32), (3, 5, 9)] {
            let dense = macs_depthwise(1, c, k, k, h, w);
            let axial = macs_depthwise(1, c, 1, k, h, w) + macs_depthwise(1, c, k, 1, h, w);
            worst = worst.max((dense as f64 / axial as f64 - expect).abs());
            if axial * k as u64 != dense * 2 {
                worst = f64::MAX;
            }
        }
        entries.push(CheckEntry::exact(
            &format!("flops.axial_ratio_k{k}"),
            &format!("dense/axial MAC ratio equals {expect} exactly at k = {k}"),
            worst,
        ));
    }

    {
        // Counting-convention anchors.
        let dw = macs_depthwise(1, 64, 21, 21, 1, 1);
        let axial = macs_depthwise(1, 64, 1, 21, 1, 1) + macs_depthwise(1, 64, 21, 1, 1, 1);
        let conv = macs_conv2d(1, 64, 64, 1, 1, 32, 32);
        let measured = (dw != 28224) as u64 + (axial != 2688) as u64
            + (conv != 64 * 64 * 32 * 32) as u64;
        entries.push(CheckEntry::exact(
            "flops.mac_convention",
            "per-position MACs: dense 21x21 = 28224, axial pair = 2688, 1x1 conv = C^2 H W",
            measured as f64,
        ));
    }

    {
        // Parameter totals are invariant to the input spatial size.
        let dfa_cfg = config.dfa_config(16);
        let mut rng = Rng::seeded(500);
        let dfa_params = DfaParams::init(&dfa_cfg, &mut rng).expect("init");
        let a = dfa_cost(&dfa_cfg, &dfa_params, [1, 16, 8, 8]).total_params;
        let b = dfa_cost(&dfa_cfg, &dfa_params, [1, 16, 32, 32]).total_params;
        entries.push(CheckEntry::exact(
            "flops.dfa_param_invariance",
            "DFA parameter count is identical at 8x8 and 32x32 inputs",
            (a as f64 - b as f64).abs(),
        ));

        let mc_cfg = config.mc_config(16);
        let mc_params = McParams::init(&mc_cfg, &mut rng).expect("init");
        let a = mc_cost(&mc_cfg, &mc_params, [1, 16, 8, 8]).total_params;
        let b = mc_cost(&mc_cfg, &mc_params, [1, 16, 64, 64]).total_params;
        entries.push(CheckEntry::exact(
            "flops.mc_param_invariance",
            "MC parameter count is identical at 8x8 and 64x64 inputs",
            (a as f64 - b as f64).abs(),
        ));
    }

    {
        // 2x2 ablation grid: exactly additive parameter deltas.
        let build = |dfa: bool, mc: bool| {
            let mut rng = Rng::seeded(501);
            Detector::build(DetectorConfig::with_modules(dfa, mc), &mut rng).expect("build")
        };
        let base = build(false, false).param_count();
        let with_dfa = build(true, false);
        let with_mc = build(false, true);
        let with_both = build(true, true);
        let dfa_delta = count_params_dfa(with_dfa.dfa.as_ref().unwrap());
        let mc_delta = count_params_mc(with_mc.mc.as_ref().unwrap());
        let mismatch = (with_dfa.param_count() != base + dfa_delta) as u64
            + (with_mc.param_count() != base + mc_delta) as u64
            + (with_both.param_count() != base + dfa_delta + mc_delta) as u64;
        entries.push(CheckEntry::exact(
            "flops.ablation_grid_additive",
            "toggling DFA/MC changes the total by exactly the module counts",
            mismatch as f64,
        ));
    }

    {
        // Report totals equal the row sums.
        let dfa_cfg = config.dfa_config(8);
        let mut rng = Rng::seeded(502);
        let params = DfaParams::init(&dfa_cfg, &mut rng).expect("init");
        let report = dfa_cost(&dfa_cfg, &params, [1, 8, 6, 6]);
        let p: u64 = report.rows.iter().map(|r| r.params).sum();
        let m: u64 = report.rows.iter().map(|r| r.macs).sum();
        let mismatch = (p != report.total_params) as u64 + (m != report.total_macs) as u64;
        entries.push(CheckEntry::exact(
            "flops.report_additive",
            "report totals equal the sum of their rows",
            mismatch as f64,
        ));
    }

    entries
}
