//! Training loop: binary cross-entropy on objectness plus L1 on box
//! offsets at positive cells, plain SGD with a fixed learning rate.
//!
//! A cell is positive when a ground-truth box centre falls inside it; when
//! several centres share a cell the smallest box assigns the regression
//! target. One SGD step per image, images in dataset order, so the whole
//! run is a pure function of `(detector, scenes, options)`.

use alloc::vec::Vec;

use crate::detector::model::{Detector, ForwardNodes, STRIDE};
use crate::detector::scene::SyntheticScene;
use crate::dfa::Mode;
use crate::error::{Result, TensorError};
use crate::graph::Graph;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    /// Weight of the box-offset L1 term relative to the objectness BCE.
    pub box_loss_weight: f64,
    /// BCE weight of positive cells, countering the background imbalance
    /// (one positive cell against dozens of background cells).
    pub pos_weight: f64,
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> Self {
        TrainOptions {
            epochs,
            lr,
            box_loss_weight: 1.0,
            pos_weight: 16.0,
            seed,
        }
    }
}

/// Per-epoch mean losses; `diverged_at` marks an aborted run (the history
/// holds the epochs completed before the non-finite loss).
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub history: Vec<f64>,
    pub diverged_at: Option<usize>,
}

/// Objectness and offset targets for one scene at the head resolution.
pub(crate) struct CellTargets {
    pub objectness: Tensor, // flat H'*W', 0 or 1
    /// (flat cell index, [dx, dy, w, h] in stride units), ordered by cell.
    pub boxes: Vec<(usize, [f64; 4])>,
}

pub(crate) fn assign_targets(scene: &SyntheticScene, hc: usize, wc: usize) -> CellTargets {
    let s = STRIDE as f64;
    let mut objectness = alloc::vec![0.0; hc * wc];
    // Smaller boxes assign first so they win contested cells.
    let mut order: Vec<usize> = (0..scene.boxes.len()).collect();
    order.sort_by(|&a, &b| {
        scene.boxes[a]
            .area()
            .partial_cmp(&scene.boxes[b].area())
            .expect("finite areas")
    });
    let mut boxes: Vec<(usize, [f64; 4])> = Vec::new();
    for bi in order {
        let bbox = &scene.boxes[bi];
        let (cx, cy) = bbox.center();
        let j = ((cx / s) as usize).min(wc - 1);
        let i = ((cy / s) as usize).min(hc - 1);
        let cell = i * wc + j;
        objectness[cell] = 1.0;
        if boxes.iter().all(|(c, _)| *c != cell) {
            let cell_cx = (j as f64 + 0.5) * s;
            let cell_cy = (i as f64 + 0.5) * s;
            boxes.push((
                cell,
                [
                    (cx - cell_cx) / s,
                    (cy - cell_cy) / s,
                    (bbox.x_max - bbox.x_min) / s,
                    (bbox.y_max - bbox.y_min) / s,
                ],
            ));
        }
    }
    boxes.sort_by_key(|(c, _)| *c);
    CellTargets {
        objectness: Tensor::new(&[hc * wc], objectness).expect("targets are finite"),
        boxes,
    }
}

/// Builds the scalar loss for one scene on the graph.
pub(crate) fn scene_loss(
    g: &mut Graph,
    detector: &Detector,
    fwd: &ForwardNodes,
    scene: &SyntheticScene,
    box_loss_weight: f64,
    pos_weight: f64,
) -> Result<crate::graph::NodeId> {
    let out_shape = g.value(fwd.output).shape().to_vec();
    let (hc, wc) = (out_shape[2], out_shape[3]);
    let cells = hc * wc;
    let targets = assign_targets(scene, hc, wc);
    let _ = detector;

    // Channel 0 occupies the first H'*W' slots of the flat output.
    let obj_idx: Vec<usize> = (0..cells).collect();
    let logits = g.gather(fwd.output, &obj_idx)?;
    let bce = g.bce_with_logits_weighted(logits, &targets.objectness, pos_weight)?;
    if targets.boxes.is_empty() {
        return Ok(bce);
    }

    let mut offset_idx = Vec::with_capacity(targets.boxes.len() * 4);
    let mut offset_target = Vec::with_capacity(targets.boxes.len() * 4);
    for (cell, t) in &targets.boxes {
        for ch in 0..4 {
            offset_idx.push((ch + 1) * cells + cell);
            offset_target.push(t[ch]);
        }
    }
    let picked = g.gather(fwd.output, &offset_idx)?;
    let target = Tensor::new(&[offset_idx.len()], offset_target)?;
    let l1 = g.l1_loss(picked, &target)?;
    let weighted = g.scale(l1, box_loss_weight)?;
    g.add(bce, weighted)
}

/// Trains in place. Deterministic per `(options.seed, scenes)`; aborts on a
/// non-finite loss, reporting the epoch.
pub fn train(detector: &mut Detector, scenes: &[SyntheticScene], options: &TrainOptions) -> Result<TrainResult> {
    if options.epochs == 0 {
        return Err(TensorError::InvalidArgument {
            op: "train",
            message: alloc::string::String::from("epochs must be >= 1"),
        });
    }
    let mut dropout_rng = Rng::derive(options.seed, 0xD20);
    let mut history = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        let mut epoch_loss = 0.0;
        for scene in scenes {
            let step = train_step(detector, scene, options, &mut dropout_rng);
            let loss = match step {
                Ok(l) => l,
                Err(TensorError::NonFinite { .. }) => {
                    return Ok(TrainResult {
                        history,
                        diverged_at: Some(epoch),
                    })
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Ok(TrainResult {
                    history,
                    diverged_at: Some(epoch),
                });
            }
            epoch_loss += loss;
        }
        history.push(epoch_loss / scenes.len() as f64);
    }
    Ok(TrainResult {
        history,
        diverged_at: None,
    })
}

fn train_step(
    detector: &mut Detector,
    scene: &SyntheticScene,
    options: &TrainOptions,
    dropout_rng: &mut Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let image_map = crate::ops::reshape(
        &scene.image,
        &[1, 1, scene.image.shape()[1], scene.image.shape()[2]],
    )?;
    let image = g.constant(image_map);
    let nodes = detector.bind(&mut g);
    let ordered = Detector::ordered_nodes(&nodes);
    let fwd = detector.forward_graph(&mut g, image, &nodes, Mode::Train(dropout_rng))?;
    let loss = scene_loss(
        &mut g,
        detector,
        &fwd,
        scene,
        options.box_loss_weight,
        options.pos_weight,
    )?;
    let loss_value = g.value(loss).item()?;
    if options.lr == 0.0 {
        return Ok(loss_value);
    }
    let grads = g.backward(loss)?;
    for ((_, tensor), node) in detector.named_tensors_mut().into_iter().zip(ordered) {
        if let Some(grad) = grads.get(node) {
            for (p, gv) in tensor.data_mut().iter_mut().zip(grad.data().iter()) {
                *p -= options.lr * gv;
            }
        }
    }
    // Parameter updates must stay finite; a blow-up here is divergence.
    for (_, tensor) in detector.named_tensors() {
        tensor.check_finite("sgd_update")?;
    }
    Ok(loss_value)
}
