//! Acceptance suite: every gate the artifact must clear, one criterion per
//! test, each printing its own pass/fail line (visible with
//! `cargo test --test acceptance -- --nocapture`).
//!
//! The heavy criteria (end-to-end training, the heatmap sweep) run the real
//! pipeline at its shipping configuration: 200 synthetic 64x64 scenes, the
//! full DFA+MC detector, and the calibrated epoch budgets.

use std::process::Command;
use std::time::Instant;

use fracdet_cli::commands::{build_dataset, evaluate_detector};
use fracdet_cli::config::RunConfig;
use fracdet_cli::suites;
use fracdet_core::detector::{
    generate_scene, heatmap, heatmap_argmax, train, Detector, DetectorConfig, SyntheticScene,
    TrainOptions, STRIDE,
};
use fracdet_core::ops;
use fracdet_core::rng::Rng;

fn verdict(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[{}] {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion}: {detail}");
}

fn assert_entries(entries: &[fracdet_cli::CheckEntry], ids: &[&str]) -> (bool, String) {
    let mut all = true;
    let mut missing = Vec::new();
    for id in ids {
        match entries.iter().find(|e| e.id == *id) {
            Some(e) => all &= e.pass,
            None => missing.push(*id),
        }
    }
    let detail = if missing.is_empty() {
        format!("{} checks", ids.len())
    } else {
        all = false;
        format!("missing entries: {missing:?}")
    };
    (all, detail)
}

/// Criterion 1: gradient correctness for every tensor-core operator plus
/// the full DFA and MC forwards, ten seeds each, within two minutes.
#[test]
fn criterion_1_gradient_correctness() {
    let config = RunConfig::default();
    let start = Instant::now();
    let tensor = suites::tensor_suite(&config);
    let dfa = suites::dfa_suite(&config);
    let mc = suites::mc_suite(&config);
    let elapsed = start.elapsed().as_secs_f64();

    let mut all = true;
    let mut grad_checks = 0;
    for e in tensor.iter().chain(dfa.iter()).chain(mc.iter()) {
        if e.id.contains("grad") {
            grad_checks += 1;
            all &= e.pass;
        }
    }
    let budget_ok = elapsed < 120.0;
    verdict(
        "criterion 1 (gradient correctness, 10 seeds, < 2 min)",
        all && budget_ok && grad_checks >= 16,
        &format!("{grad_checks} gradient sweeps in {elapsed:.1}s"),
    );
}

/// Criterion 2: DFA invariants - row sums, unit norms, the zero-init
/// residual identity and exact locality.
#[test]
fn criterion_2_dfa_invariants() {
    let config = RunConfig::default();
    let entries = suites::dfa_suite(&config);
    let (pass, detail) = assert_entries(
        &entries,
        &[
            "dfa.attention_rows",
            "dfa.unit_norms",
            "dfa.residual_identity",
            "dfa.locality",
            "dfa.scale_invariance",
        ],
    );
    verdict("criterion 2 (DFA invariants)", pass, &detail);
}

/// Criterion 3: the axial separability oracle at n in {7, 11, 21}.
#[test]
fn criterion_3_mc_separability() {
    let config = RunConfig::default();
    let entries = suites::mc_suite(&config);
    let (pass, detail) = assert_entries(&entries, &["mc.separability"]);
    verdict("criterion 3 (MC separability oracle)", pass, &detail);
}

/// Criterion 4: the dense/axial MAC ratio equals k/2 exactly.
#[test]
fn criterion_4_complexity_claim() {
    let config = RunConfig::default();
    let entries = suites::flops_suite(&config);
    let (pass, detail) = assert_entries(
        &entries,
        &[
            "flops.axial_ratio_k7",
            "flops.axial_ratio_k11",
            "flops.axial_ratio_k21",
        ],
    );
    verdict("criterion 4 (axial MAC saving k/2)", pass, &detail);
}

/// Criterion 5: parameter counts are invariant to the input spatial size
/// and the 2x2 ablation grid shows exactly additive deltas. (The paper's
/// absolute deltas need the authors' channel configuration and are out of
/// reach by design; only the invariance pattern is asserted.)
#[test]
fn criterion_5_parameter_delta_invariance() {
    let config = RunConfig::default();
    let entries = suites::flops_suite(&config);
    let (pass, detail) = assert_entries(
        &entries,
        &[
            "flops.dfa_param_invariance",
            "flops.mc_param_invariance",
            "flops.ablation_grid_additive",
        ],
    );
    verdict("criterion 5 (parameter-delta invariance pattern)", pass, &detail);
}

/// Criterion 6: the full DFA+MC detector trained on 200 synthetic scenes
/// reaches train-set AP@0.5 >= 0.9 inside ten minutes, deterministically.
#[test]
fn criterion_6_toy_end_to_end() {
    let mut config = RunConfig::default();
    config.detector_with_dfa = true;
    config.detector_with_mc = true;

    let start = Instant::now();
    let scenes = build_dataset(&config);
    assert_eq!(scenes.len(), 200);

    // Determinism of the pipeline: a two-epoch prefix re-run is
    // bit-identical (every further epoch is a pure function of state).
    let prefix = |epochs: usize| {
        let mut rng = Rng::derive(config.seed, 0x0DE1);
        let mut det = Detector::build(config.detector_config(), &mut rng).unwrap();
        let mut opts = TrainOptions::new(epochs, config.train_lr, config.seed);
        opts.pos_weight = config.train_pos_weight;
        (train(&mut det, &scenes, &opts).unwrap().history, det)
    };
    let (h1, _) = prefix(2);
    let (h2, _) = prefix(2);
    assert_eq!(h1, h2, "training prefix must be bit-reproducible");

    let mut rng = Rng::derive(config.seed, 0x0DE1);
    let mut det = Detector::build(config.detector_config(), &mut rng).unwrap();
    let mut opts = TrainOptions::new(config.train_epochs, config.train_lr, config.seed);
    opts.pos_weight = config.train_pos_weight;
    opts.box_loss_weight = config.train_box_loss_weight;
    let result = train(&mut det, &scenes, &opts).unwrap();
    assert!(result.diverged_at.is_none(), "training must not diverge");
    // The two-epoch prefix of the full run matches the standalone prefix.
    assert_eq!(&result.history[..2], h1.as_slice());

    let summary = evaluate_detector(&det, &scenes).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "criterion 6 (toy end-to-end AP@0.5 >= 0.9, < 10 min)",
        summary.ap50 >= 0.9 && elapsed < 600.0,
        &format!(
            "AP@0.5 = {:.4}, mAP = {:.4}, {} epochs in {elapsed:.0}s",
            summary.ap50, summary.map_50_95, config.train_epochs
        ),
    );
}

/// Criterion 7: on overfit single-image models the heatmap argmax falls
/// inside the ground-truth fracture box for at least 9 of 10 seeds.
#[test]
fn criterion_7_heatmap_sanity() {
    let mut hits = 0;
    let mut tested = 0;
    let mut scene_seed = 0u64;
    while tested < 10 {
        let scene: SyntheticScene = generate_scene(scene_seed, 64, 64);
        scene_seed += 1;
        if scene.boxes.is_empty() {
            continue;
        }
        tested += 1;
        let model_seed = 1000 + tested as u64;
        let mut rng = Rng::seeded(model_seed);
        let mut det = Detector::build(DetectorConfig::with_modules(true, true), &mut rng).unwrap();
        let mut opts = TrainOptions::new(600, 0.1, model_seed);
        opts.pos_weight = 32.0;
        let scenes = vec![scene.clone()];
        let result = train(&mut det, &scenes, &opts).unwrap();
        assert!(result.diverged_at.is_none());

        let image = ops::reshape(&scene.image, &[1, 1, 64, 64]).unwrap();
        let map = heatmap(&det, &image, None).unwrap();
        let (ci, cj) = heatmap_argmax(&map);
        let px = (cj as f64 + 0.5) * STRIDE as f64;
        let py = (ci as f64 + 0.5) * STRIDE as f64;
        let b = &scene.boxes[0];
        if px >= b.x_min && px <= b.x_max && py >= b.y_min && py <= b.y_max {
            hits += 1;
        }
    }
    verdict(
        "criterion 7 (heatmap argmax in box, >= 9/10 seeds)",
        hits >= 9,
        &format!("{hits}/10 overfit models localized the fracture"),
    );
}

fn strip_timestamps(text: &str) -> String {
    text.lines()
        .filter(|l| !l.contains("timestamp_unix"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Criterion 8: re-runs with identical configuration produce byte-identical
/// reports modulo the timestamp field, through the real binary.
#[test]
fn criterion_8_determinism() {
    let bin = env!("CARGO_BIN_EXE_fracdet");
    let base = std::env::temp_dir().join(format!("fracdet-acceptance-{}", std::process::id()));

    // verify --suite all, twice with the identical configuration (same
    // outdir; the report embeds its resolved config, so the runs must
    // agree on every key). Outputs are captured between runs.
    let verify_out = base.join("verify");
    let mut reports = Vec::new();
    for _ in 0..2 {
        let status = Command::new(bin)
            .args(["verify", "--suite", "all", "--out", verify_out.to_str().unwrap()])
            .output()
            .expect("binary runs");
        assert!(status.status.success(), "verify all must pass");
        let json =
            std::fs::read_to_string(verify_out.join("verify-all.json")).expect("report exists");
        reports.push(strip_timestamps(&json));
    }
    let verify_identical = reports[0] == reports[1];

    // train-demo, twice, identical configuration at a reduced size.
    let demo_out = base.join("demo");
    let mut demo_outputs = Vec::new();
    for _ in 0..2 {
        let status = Command::new(bin)
            .args([
                "train-demo",
                "--epochs",
                "2",
                "--scenes",
                "6",
                "--with-dfa",
                "--with-mc",
                "--out",
                demo_out.to_str().unwrap(),
            ])
            .output()
            .expect("binary runs");
        assert!(status.status.success(), "train-demo must succeed");
        let loss = std::fs::read(demo_out.join("loss.csv")).expect("loss.csv exists");
        let eval =
            std::fs::read_to_string(demo_out.join("eval.json")).expect("eval.json exists");
        let blob = std::fs::read(demo_out.join("model.params")).expect("params exist");
        demo_outputs.push((loss, strip_timestamps(&eval), blob));
    }
    let demo_identical = demo_outputs[0] == demo_outputs[1];

    std::fs::remove_dir_all(&base).ok();
    verdict(
        "criterion 8 (byte-identical re-runs modulo timestamps)",
        verify_identical && demo_identical,
        &format!("verify-all identical: {verify_identical}, train-demo identical: {demo_identical}"),
    );
}
