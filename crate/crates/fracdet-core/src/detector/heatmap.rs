//! Simplified gradient-weighted class activation map.
//!
//! For a chosen cell's objectness logit, take the gradient w.r.t. the
//! feature map feeding the head, average it spatially into per-channel
//! weights, form the weighted channel sum, rectify, and normalize to
//! `[0, 1]` (an all-zero map stays all-zero).

use alloc::vec::Vec;

use crate::detector::model::Detector;
use crate::dfa::Mode;
use crate::error::Result;
use crate::graph::Graph;
use crate::math::sigmoid;
use crate::tensor::Tensor;

/// Computes the `H' x W'` heatmap for `image` (`1 x 1 x H x W`). With no
/// `target_cell`, the cell with the highest predicted objectness is used.
pub fn heatmap(
    detector: &Detector,
    image: &Tensor,
    target_cell: Option<(usize, usize)>,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(image.clone());
    let nodes = detector.bind(&mut g);
    let fwd = detector.forward_graph(&mut g, x, &nodes, Mode::Eval)?;
    let out = g.value(fwd.output);
    let (hc, wc) = (out.shape()[2], out.shape()[3]);

    let (ti, tj) = match target_cell {
        Some(cell) => cell,
        None => {
            // Highest objectness, first cell on ties.
            let mut best = (0usize, 0usize);
            let mut best_v = f64::NEG_INFINITY;
            for i in 0..hc {
                for j in 0..wc {
                    let v = sigmoid(out.at4(0, 0, i, j));
                    if v > best_v {
                        best_v = v;
                        best = (i, j);
                    }
                }
            }
            best
        }
    };

    // Scalar objectness logit at the target cell.
    let logit = g.gather(fwd.output, &[ti * wc + tj])?;
    let loss = g.sum(logit)?;
    let grads = g.backward(loss)?;
    let features = g.value(fwd.features);
    let channels = features.shape()[1];

    let mut cam = alloc::vec![0.0; hc * wc];
    if let Some(grad) = grads.get(fwd.features) {
        let cells = (hc * wc) as f64;
        let mut weights = Vec::with_capacity(channels);
        for c in 0..channels {
            let mut acc = 0.0;
            for i in 0..hc {
                for j in 0..wc {
                    acc += grad.at4(0, c, i, j);
                }
            }
            weights.push(acc / cells);
        }
        for i in 0..hc {
            for j in 0..wc {
                let mut v = 0.0;
                for c in 0..channels {
                    v += weights[c] * features.at4(0, c, i, j);
                }
                cam[i * wc + j] = v.max(0.0);
            }
        }
    }
    let peak = cam.iter().cloned().fold(0.0f64, f64::max);
    if peak > 0.0 {
        for v in cam.iter_mut() {
            *v /= peak;
        }
    }
    Tensor::new(&[hc, wc], cam)
}

/// Argmax cell of a heatmap (first maximum in scan order).
pub fn heatmap_argmax(map: &Tensor) -> (usize, usize) {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut best = (0, 0);
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..h {
        for j in 0..w {
            let v = map.data()[i * w + j];
            if v > best_v {
                best_v = v;
                best = (i, j);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::model::DetectorConfig;
    use crate::detector::scene::generate_scene;
    use crate::detector::train::{train, TrainOptions};
    use crate::detector::STRIDE;
    use crate::rng::Rng;

    #[test]
    fn zero_head_weights_give_all_zero_heatmap() {
        let mut rng = Rng::seeded(0);
        let mut det = Detector::build(DetectorConfig::default(), &mut rng).unwrap();
        det.head_w = Tensor::zeros(det.head_w.shape());
        let image = Tensor::filled(&[1, 1, 64, 64], 0.4).unwrap();
        let map = heatmap(&det, &image, None).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heatmap_values_stay_in_unit_range() {
        let mut rng = Rng::seeded(1);
        let det = Detector::build(DetectorConfig::with_modules(false, true), &mut rng).unwrap();
        let scene = generate_scene(5, 64, 64);
        let image = crate::ops::reshape(&scene.image, &[1, 1, 64, 64]).unwrap();
        let map = heatmap(&det, &image, None).unwrap();
        assert_eq!(map.shape(), &[8, 8]);
        assert!(map.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let peak = map.data().iter().cloned().fold(0.0f64, f64::max);
        assert!(peak == 0.0 || (peak - 1.0).abs() < 1e-15);
    }

    #[test]
    fn overfit_model_localizes_the_fracture() {
        // Overfit one scene, then check the heatmap argmax falls inside the
        // ground-truth box (the quantitative stand-in for visual checks).
        let scene = generate_scene(11, 64, 64);
        assert!(!scene.boxes.is_empty());
        let mut rng = Rng::seeded(2);
        let mut det = Detector::build(DetectorConfig::default(), &mut rng).unwrap();
        let scenes = alloc::vec![scene.clone()];
        train(&mut det, &scenes, &TrainOptions::new(300, 0.05, 3)).unwrap();

        let image = crate::ops::reshape(&scene.image, &[1, 1, 64, 64]).unwrap();
        let map = heatmap(&det, &image, None).unwrap();
        let (ci, cj) = heatmap_argmax(&map);
        let (px, py) = (
            (cj as f64 + 0.5) * STRIDE as f64,
            (ci as f64 + 0.5) * STRIDE as f64,
        );
        let b = &scene.boxes[0];
        assert!(
            px >= b.x_min && px <= b.x_max && py >= b.y_min && py <= b.y_max,
            "argmax cell centre ({px},{py}) outside box {b:?}"
        );
    }
}
