//! Detector suite: scene generation, IoU/AP semantics, model composition
//! and training determinism (the fast checks; the full training run lives
//! behind `train-demo`).

use fracdet_core::detector::{
    average_precision, generate_scene, iou, train, BoundingBox, Detection, Detector,
    DetectorConfig, TrainOptions,
};
use fracdet_core::rng::Rng;
use fracdet_core::tensor::Tensor;

use crate::config::RunConfig;
use crate::report::CheckEntry;

/// Independent AP recomputation: explicit confidence-ordered matching and a
/// per-true-positive integration of the interpolated precision.
fn ap_oracle(preds: &[Detection], gt: &[Vec<BoundingBox>], thresh: f64) -> f64 {
    let total_gt: usize = gt.iter().map(|g| g.len()).sum();
    if total_gt == 0 {
        return if preds.is_empty() { 1.0 } else { 0.0 };
    }
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&a, &b| preds[b].confidence.partial_cmp(&preds[a].confidence).unwrap());
    let mut used: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let mut flags = Vec::new();
    for &i in &idx {
        let p = &preds[i];
        let mut best = usize::MAX;
        let mut best_iou = 0.0;
        for (gi, gbox) in gt[p.image_id].iter().enumerate() {
            let v = iou(&p.bbox, gbox);
            if !used[p.image_id][gi] && v >= thresh && v > best_iou {
                best_iou = v;
                best = gi;
            }
        }
        if best != usize::MAX {
            used[p.image_id][best] = true;
            flags.push(true);
        } else {
            flags.push(false);
        }
    }
    let mut ap = 0.0;
    for i in 0..flags.len() {
        if !flags[i] {
            continue;
        }
        let mut best_prec = 0.0f64;
        let mut tp = 0;
        for (j, &f) in flags.iter().enumerate() {
            if f {
                tp += 1;
            }
            if j >= i {
                best_prec = best_prec.max(tp as f64 / (j + 1) as f64);
            }
        }
        ap += best_prec / total_gt as f64;
    }
    ap
}

pub fn detector_suite(config: &RunConfig) -> Vec<CheckEntry> {
    let mut entries = Vec::new();

    {
        // Scene determinism and value range.
        let a = generate_scene(7, 64, 64);
        let b = generate_scene(7, 64, 64);
        let mut measured = a.image.max_abs_diff(&b.image).unwrap();
        if a.boxes.len() != b.boxes.len() {
            measured = f64::MAX;
        }
        if !a.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            measured = f64::MAX;
        }
        entries.push(CheckEntry::exact(
            "detector.scene_determinism",
            "identical seeds render identical scenes with values in [0,1]",
            measured,
        ));
    }

    {
        // Fraction of scenes with at least one box: binomial at p = 0.8
        // over seeds 0..199, checked inside [0.7, 0.9].
        let with_box = (0..200u64)
            .filter(|&s| !generate_scene(s, 64, 64).boxes.is_empty())
            .count();
        let fraction = with_box as f64 / 200.0;
        entries.push(CheckEntry::within(
            "detector.scene_fraction",
            "fraction of scenes with a fracture box lies in [0.7, 0.9]",
            (fraction - 0.8).abs(),
            0.1,
        ));
    }

    {
        // IoU anchor values.
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0);
        let shifted = BoundingBox::new(1.0, 1.0, 3.0, 3.0);
        let far = BoundingBox::new(9.0, 9.0, 11.0, 11.0);
        let measured = (iou(&a, &a) - 1.0)
            .abs()
            .max((iou(&a, &shifted) - 1.0 / 7.0).abs())
            .max(iou(&a, &far).abs());
        entries.push(CheckEntry::within(
            "detector.iou_values",
            "IoU: identical 1, offset squares 1/7, disjoint 0",
            measured,
            1e-12,
        ));
    }

    {
        // Hand-computed precision-envelope AP plus empty-GT conventions.
        let gt = vec![vec![
            BoundingBox::new(0.0, 0.0, 10.0, 10.0),
            BoundingBox::new(20.0, 20.0, 30.0, 30.0),
        ]];
        let preds = vec![
            Detection { image_id: 0, bbox: BoundingBox::new(0.0, 0.0, 10.0, 10.0), confidence: 0.9 },
            Detection { image_id: 0, bbox: BoundingBox::new(50.0, 50.0, 60.0, 60.0), confidence: 0.8 },
            Detection { image_id: 0, bbox: BoundingBox::new(20.0, 20.0, 30.0, 30.0), confidence: 0.7 },
        ];
        let mut measured = (average_precision(&preds, &gt, 0.5) - 5.0 / 6.0).abs();
        let empty: Vec<Vec<BoundingBox>> = vec![Vec::new()];
        measured = measured.max((average_precision(&[], &empty, 0.5) - 1.0).abs());
        measured = measured.max(average_precision(&preds[..1], &empty, 0.5).abs());
        entries.push(CheckEntry::within(
            "detector.ap_envelope",
            "AP matches the hand-computed envelope 5/6 and GT-free conventions",
            measured,
            1e-12,
        ));
    }

    {
        // Agreement with the brute-force oracle on random small instances.
        let mut rng = Rng::seeded(600);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let gen_box = |rng: &mut Rng| {
                let x = rng.uniform(0.0, 40.0);
                let y = rng.uniform(0.0, 40.0);
                BoundingBox::new(x, y, x + rng.uniform(4.0, 20.0), y + rng.uniform(4.0, 20.0))
            };
            let gt = vec![(0..rng.below(4)).map(|_| gen_box(&mut rng)).collect::<Vec<_>>()];
            let preds: Vec<Detection> = (0..rng.below(4))
                .map(|_| Detection {
                    image_id: 0,
                    bbox: gen_box(&mut rng),
                    confidence: rng.next_f64(),
                })
                .collect();
            for thresh in [0.5, 0.75] {
                worst = worst.max(
                    (average_precision(&preds, &gt, thresh) - ap_oracle(&preds, &gt, thresh)).abs(),
                );
            }
        }
        entries.push(CheckEntry::within(
            "detector.ap_bruteforce",
            "AP agrees with an independent matching oracle on <=3-box instances",
            worst,
            1e-12,
        ));
    }

    {
        // One-to-one matching: a duplicate TP at lower confidence never
        // increases AP.
        let gt = vec![vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0)]];
        let tp = Detection { image_id: 0, bbox: BoundingBox::new(0.0, 0.0, 10.0, 10.0), confidence: 0.9 };
        let base = average_precision(std::slice::from_ref(&tp), &gt, 0.5);
        let mut dup = vec![tp];
        dup.push(Detection { image_id: 0, bbox: BoundingBox::new(0.0, 0.0, 10.0, 10.0), confidence: 0.4 });
        let with_dup = average_precision(&dup, &gt, 0.5);
        entries.push(CheckEntry::exact(
            "detector.ap_monotonic",
            "duplicating a matched prediction at lower confidence keeps AP",
            (with_dup - base).max(0.0),
        ));
    }

    {
        // Model composition: closed-form parameter count and the residual
        // identity of a zero-init DFA block.
        let mut rng = Rng::seeded(601);
        let base = Detector::build(DetectorConfig::with_modules(false, false), &mut rng).expect("build");
        let expect = (8 * 9 + 8) + (16 * 8 * 9 + 16) + (32 * 16 * 9 + 32) + (5 * 32 + 5);
        let mut measured = (base.param_count() as f64 - expect as f64).abs();

        let mut rng = Rng::seeded(602);
        let with_dfa = Detector::build(DetectorConfig::with_modules(true, false), &mut rng).expect("build");
        let mut stripped = with_dfa.clone();
        stripped.config.with_dfa = false;
        stripped.dfa = None;
        let image = Tensor::filled(&[1, 1, 64, 64], 0.3).unwrap();
        let a = with_dfa.forward_eval(&image).expect("forward");
        let b = stripped.forward_eval(&image).expect("forward");
        measured = measured.max(a.max_abs_diff(&b).unwrap());
        entries.push(CheckEntry::exact(
            "detector.build_composition",
            "parameter closed form and zero-init DFA residual identity hold",
            measured,
        ));
    }

    {
        // Training contracts on a tiny run: lr = 0 freezes the history and
        // identical seeds reproduce it bitwise.
        let scenes: Vec<_> = (0..2u64).map(|s| generate_scene(s, 64, 64)).collect();
        let mut opts = TrainOptions::new(2, 0.0, config.seed);
        opts.pos_weight = config.train_pos_weight;
        let mut rng = Rng::seeded(603);
        let mut det = Detector::build(DetectorConfig::with_modules(false, false), &mut rng).expect("build");
        let frozen = train(&mut det, &scenes, &opts).expect("train");
        let mut measured = (frozen.history[0] - frozen.history[1]).abs();

        let run = || {
            let mut rng = Rng::seeded(604);
            let mut det = Detector::build(DetectorConfig::with_modules(false, false), &mut rng).expect("build");
            let mut opts = TrainOptions::new(1, config.train_lr, config.seed);
            opts.pos_weight = config.train_pos_weight;
            train(&mut det, &scenes, &opts).expect("train").history
        };
        let (h1, h2) = (run(), run());
        for (a, b) in h1.iter().zip(h2.iter()) {
            measured = measured.max((a - b).abs());
        }
        entries.push(CheckEntry::exact(
            "detector.train_determinism",
            "lr=0 freezes the loss and identical seeds replay the history",
            measured,
        ));
    }

    entries
}
