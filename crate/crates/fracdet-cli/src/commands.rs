//! Implementations behind the CLI subcommands.
//!
//! Exit-code contract: 0 pass, 1 verification failure, 2 usage/config
//! error, 3 runtime failure (training divergence).

use std::path::{Path, PathBuf};

use fracdet_core::complexity::{dfa_cost, mc_cost, CostReport};
use fracdet_core::detector::{
    detect, evaluate_map, generate_scene, heatmap, heatmap_argmax, train, Detection, Detector,
    EvalSummary, SyntheticScene, TrainOptions, STRIDE,
};
use fracdet_core::dfa::DfaParams;
use fracdet_core::mc::McParams;
use fracdet_core::ops;
use fracdet_core::rng::Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::formats;
use crate::report::VerificationReport;
use crate::suites;

/// Failures mapped to the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: a verification suite reported a failing entry.
    VerificationFailed(String),
    /// Exit 2: bad usage, bad configuration, bad shape.
    Usage(String),
    /// Exit 3: runtime failure (divergence, IO).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerificationFailed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::VerificationFailed(m) | CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn ensure_outdir(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = config.resolve_outdir();
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

// ── verify ─────────────────────────────────────────────────────────────

/// Runs one suite (or `all`), writes `verify-<suite>.json`, and fails with
/// exit 1 when any entry fails.
pub fn cmd_verify(suite: &str, config: &RunConfig) -> Result<(), CliError> {
    let entries = if suite == "all" {
        let mut all = Vec::new();
        for name in suites::SUITE_NAMES {
            all.extend(suites::run_suite(name, config).expect("known suite"));
        }
        all
    } else {
        suites::run_suite(suite, config)
            .ok_or_else(|| CliError::Usage(format!("unknown suite {suite:?}")))?
    };
    let report = VerificationReport::new(suite, config, entries);
    let outdir = ensure_outdir(config)?;
    let path = outdir.join(format!("verify-{suite}.json"));
    write_file(&path, &report.to_json())?;
    report.print_summary();
    println!("report: {}", path.display());
    if report.overall_pass {
        Ok(())
    } else {
        Err(CliError::VerificationFailed(format!(
            "suite {suite} failed; see {}",
            path.display()
        )))
    }
}

// ── cost ───────────────────────────────────────────────────────────────

/// Parses `N,C,H,W` with positive extents.
pub fn parse_shape(text: &str) -> Result<[usize; 4], CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(CliError::Usage(format!(
            "shape wants N,C,H,W, got {text:?}"
        )));
    }
    let mut shape = [0usize; 4];
    for (slot, part) in shape.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|_| CliError::Usage(format!("bad extent {part:?} in shape {text:?}")))?;
        if *slot == 0 {
            return Err(CliError::Usage(format!("zero extent in shape {text:?}")));
        }
    }
    Ok(shape)
}

#[derive(Serialize)]
struct CostJson<'a> {
    module: &'a str,
    input_shape: [usize; 4],
    total_params: u64,
    total_macs: u64,
    rows: Vec<CostRowJson>,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct CostRowJson {
    module: String,
    operator: String,
    params: u64,
    macs: u64,
}

/// Writes `cost-<module>.json` and `cost-<module>.csv` for the module at
/// the given input shape.
pub fn cmd_cost(module: &str, shape_text: &str, config: &RunConfig) -> Result<(), CliError> {
    let shape = parse_shape(shape_text)?;
    let mut rng = Rng::seeded(config.seed);
    let report: CostReport = match module {
        "dfa" => {
            let cfg = config.dfa_config(shape[1]);
            cfg.validate()
                .map_err(|e| CliError::Usage(format!("invalid DFA config for shape: {e}")))?;
            let params = DfaParams::init(&cfg, &mut rng)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            dfa_cost(&cfg, &params, shape)
        }
        "mc" => {
            let cfg = config.mc_config(shape[1]);
            let params = McParams::init(&cfg, &mut rng)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            mc_cost(&cfg, &params, shape)
        }
        "detector" => {
            if shape[1] != 1 {
                return Err(CliError::Usage(format!(
                    "detector input is grayscale (C = 1), got C = {}",
                    shape[1]
                )));
            }
            let det = Detector::build(config.detector_config(), &mut rng)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            det.cost(shape)
        }
        other => return Err(CliError::Usage(format!("unknown module {other:?}"))),
    };

    let outdir = ensure_outdir(config)?;
    let json = CostJson {
        module,
        input_shape: report.input_shape,
        total_params: report.total_params,
        total_macs: report.total_macs,
        rows: report
            .rows
            .iter()
            .map(|r| CostRowJson {
                module: r.module.clone(),
                operator: r.operator.clone(),
                params: r.params,
                macs: r.macs,
            })
            .collect(),
        config,
    };
    let json_path = outdir.join(format!("cost-{module}.json"));
    write_file(&json_path, &serde_json::to_string_pretty(&json).expect("serializes"))?;
    let csv_path = outdir.join(format!("cost-{module}.csv"));
    formats::write_cost_csv(&csv_path, &report)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", csv_path.display())))?;
    println!(
        "{module} @ {:?}: {} params, {} MACs",
        report.input_shape, report.total_params, report.total_macs
    );
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

// ── train-demo ─────────────────────────────────────────────────────────

#[derive(Serialize)]
struct TrainDemoJson<'a> {
    scenes: usize,
    ground_truth_boxes: usize,
    parameter_count: u64,
    epochs_run: usize,
    final_loss: Option<f64>,
    diverged_at: Option<usize>,
    ap50: f64,
    map_50_95: f64,
    per_threshold: Vec<(f64, f64)>,
    config: &'a RunConfig,
    timestamp_unix: u64,
}

/// Generates the dataset for a run configuration (scene `i` renders from
/// `seed + i`, so the default seed covers scene seeds `0..n`).
pub fn build_dataset(config: &RunConfig) -> Vec<SyntheticScene> {
    (0..config.train_scenes as u64)
        .map(|i| {
            generate_scene(
                config.seed.wrapping_add(i),
                config.train_image_size,
                config.train_image_size,
            )
        })
        .collect()
}

/// Evaluates the model on the given scenes (train-set evaluation).
pub fn evaluate_detector(
    detector: &Detector,
    scenes: &[SyntheticScene],
) -> Result<EvalSummary, CliError> {
    let mut preds = Vec::new();
    let mut gt = Vec::new();
    let size = scenes[0].image.shape()[1];
    for (i, scene) in scenes.iter().enumerate() {
        let image = ops::reshape(&scene.image, &[1, 1, size, size])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        for (bbox, conf) in
            detect(detector, &image, 0.05, 0.5).map_err(|e| CliError::Runtime(e.to_string()))?
        {
            preds.push(Detection {
                image_id: i,
                bbox,
                confidence: conf,
            });
        }
        gt.push(scene.boxes.clone());
    }
    Ok(evaluate_map(&preds, &gt))
}

/// Trains the configured variant on synthetic scenes; writes the loss CSV,
/// evaluation JSON, the trained parameter blob, heatmaps for the first few
/// scenes, and optionally the exported dataset.
pub fn cmd_train_demo(config: &RunConfig, export_scenes: usize) -> Result<(), CliError> {
    let outdir = ensure_outdir(config)?;
    let scenes = build_dataset(config);
    let total_boxes: usize = scenes.iter().map(|s| s.boxes.len()).sum();
    println!(
        "dataset: {} scenes, {} boxes; model: dfa={} mc={}",
        scenes.len(),
        total_boxes,
        config.detector_with_dfa,
        config.detector_with_mc
    );

    for (i, scene) in scenes.iter().take(export_scenes).enumerate() {
        export_scene(&outdir, i, scene)?;
    }

    let mut rng = Rng::derive(config.seed, 0x0DE1);
    let mut detector = Detector::build(config.detector_config(), &mut rng)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    println!("parameters: {}", detector.param_count());

    let mut options = TrainOptions::new(config.train_epochs, config.train_lr, config.seed);
    options.box_loss_weight = config.train_box_loss_weight;
    options.pos_weight = config.train_pos_weight;
    let result = train(&mut detector, &scenes, &options)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let csv_path = outdir.join("loss.csv");
    formats::write_loss_csv(&csv_path, &result.history)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", csv_path.display())))?;

    if let Some(epoch) = result.diverged_at {
        // Partial history is already on disk; report the failure.
        return Err(CliError::Runtime(format!(
            "training diverged at epoch {epoch}; partial history in {}",
            csv_path.display()
        )));
    }

    let summary = evaluate_detector(&detector, &scenes)?;
    println!(
        "train-set AP@0.5 = {:.4}, mAP 0.5:0.95 = {:.4}",
        summary.ap50, summary.map_50_95
    );

    let blob_path = outdir.join("model.params");
    let named = detector.named_tensors();
    formats::save_params(&blob_path, &named)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", blob_path.display())))?;

    // Heatmaps for the first few scenes.
    let size = config.train_image_size;
    for (i, scene) in scenes.iter().take(4).enumerate() {
        let image = ops::reshape(&scene.image, &[1, 1, size, size])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let map = heatmap(&detector, &image, None).map_err(|e| CliError::Runtime(e.to_string()))?;
        let path = outdir.join(format!("heatmap-{i:04}.pgm"));
        formats::write_pgm(&path, &map)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }

    let eval_json = TrainDemoJson {
        scenes: scenes.len(),
        ground_truth_boxes: total_boxes,
        parameter_count: detector.param_count(),
        epochs_run: result.history.len(),
        final_loss: result.history.last().copied(),
        diverged_at: None,
        ap50: summary.ap50,
        map_50_95: summary.map_50_95,
        per_threshold: summary.per_threshold.clone(),
        config,
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let eval_path = outdir.join("eval.json");
    write_file(&eval_path, &serde_json::to_string_pretty(&eval_json).expect("serializes"))?;
    println!(
        "wrote {}, {}, {} and heatmap PGMs",
        csv_path.display(),
        eval_path.display(),
        blob_path.display()
    );
    Ok(())
}

fn export_scene(outdir: &Path, index: usize, scene: &SyntheticScene) -> Result<(), CliError> {
    let pgm_path = outdir.join(format!("scene-{index:04}.pgm"));
    formats::write_pgm(&pgm_path, &scene.image)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", pgm_path.display())))?;
    #[derive(Serialize)]
    struct SceneSidecar<'a> {
        boxes: Vec<[f64; 4]>,
        labels: &'a [usize],
    }
    let sidecar = SceneSidecar {
        boxes: scene
            .boxes
            .iter()
            .map(|b| [b.x_min, b.y_min, b.x_max, b.y_max])
            .collect(),
        labels: &scene.labels,
    };
    let json_path = outdir.join(format!("scene-{index:04}.json"));
    write_file(&json_path, &serde_json::to_string_pretty(&sidecar).expect("serializes"))
}

// ── heatmap ────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct HeatmapJson<'a> {
    scene_seed: u64,
    epochs: usize,
    final_loss: f64,
    argmax_cell: [usize; 2],
    argmax_pixel: [f64; 2],
    ground_truth_box: Option<[f64; 4]>,
    argmax_in_box: Option<bool>,
    config: &'a RunConfig,
}

/// Overfits the configured model on one scene and writes the scene PGM,
/// heatmap PGM and a JSON summary with the argmax-in-box verdict.
pub fn cmd_heatmap(config: &RunConfig, scene_seed: u64, epochs: usize) -> Result<(), CliError> {
    let outdir = ensure_outdir(config)?;
    let size = config.train_image_size;
    let scene = generate_scene(scene_seed, size, size);
    let mut rng = Rng::derive(config.seed, 0x0DE1);
    let mut detector = Detector::build(config.detector_config(), &mut rng)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let mut options = TrainOptions::new(epochs, config.train_lr, config.seed);
    options.box_loss_weight = config.train_box_loss_weight;
    options.pos_weight = config.train_pos_weight;
    let scenes = vec![scene.clone()];
    let result = train(&mut detector, &scenes, &options)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(epoch) = result.diverged_at {
        return Err(CliError::Runtime(format!("training diverged at epoch {epoch}")));
    }

    let image = ops::reshape(&scene.image, &[1, 1, size, size])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let map = heatmap(&detector, &image, None).map_err(|e| CliError::Runtime(e.to_string()))?;
    let (ci, cj) = heatmap_argmax(&map);
    let px = (cj as f64 + 0.5) * STRIDE as f64;
    let py = (ci as f64 + 0.5) * STRIDE as f64;
    let in_box = scene
        .boxes
        .first()
        .map(|b| px >= b.x_min && px <= b.x_max && py >= b.y_min && py <= b.y_max);

    formats::write_pgm(&outdir.join("heatmap-scene.pgm"), &scene.image)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    formats::write_pgm(&outdir.join("heatmap.pgm"), &map)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let summary = HeatmapJson {
        scene_seed,
        epochs,
        final_loss: *result.history.last().unwrap_or(&f64::NAN),
        argmax_cell: [ci, cj],
        argmax_pixel: [px, py],
        ground_truth_box: scene.boxes.first().map(|b| [b.x_min, b.y_min, b.x_max, b.y_max]),
        argmax_in_box: in_box,
        config,
    };
    write_file(
        &outdir.join("heatmap.json"),
        &serde_json::to_string_pretty(&summary).expect("serializes"),
    )?;
    println!(
        "heatmap argmax cell ({ci},{cj}) -> pixel ({px},{py}); in box: {in_box:?}"
    );
    Ok(())
}
