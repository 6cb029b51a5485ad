//! IoU, non-maximum suppression, and mean average precision.

use alloc::vec::Vec;

#[cfg(test)]
use crate::math::fabs;

/// Axis-aligned box in pixel coordinates, `x` along width, `y` along height.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BoundingBox { x_min, y_min, x_max, y_max }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    /// Clips to `[0, w] x [0, h]`.
    pub fn clip(&self, w: f64, h: f64) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.clamp(0.0, w),
            y_min: self.y_min.clamp(0.0, h),
            x_max: self.x_max.clamp(0.0, w),
            y_max: self.y_max.clamp(0.0, h),
        }
    }
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One scored detection attached to an image.
#[derive(Clone, Debug)]
pub struct Detection {
    pub image_id: usize,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// Greedy non-maximum suppression at `iou_thresh`; input order breaks
/// confidence ties deterministically.
pub fn nms(mut dets: Vec<(BoundingBox, f64)>, iou_thresh: f64) -> Vec<(BoundingBox, f64)> {
    dets.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite confidences"));
    let mut keep: Vec<(BoundingBox, f64)> = Vec::new();
    for (bbox, conf) in dets {
        if keep.iter().all(|(kept, _)| iou(kept, &bbox) < iou_thresh) {
            keep.push((bbox, conf));
        }
    }
    keep
}

/// The ten COCO-style thresholds `0.5, 0.55, ..., 0.95`.
pub const IOU_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// Average precision over a dataset at one IoU threshold.
///
/// Predictions are ranked by confidence (stable for ties) and matched
/// greedily, one-to-one, to the unmatched ground-truth box of highest IoU
/// in their image. AP integrates the precision envelope over all recall
/// points. With no ground truth at all, an empty prediction set scores 1.0
/// (documented convention) and any prediction scores 0.
pub fn average_precision(
    predictions: &[Detection],
    ground_truth: &[Vec<BoundingBox>],
    iou_thresh: f64,
) -> f64 {
    let total_gt: usize = ground_truth.iter().map(|g| g.len()).sum();
    if total_gt == 0 {
        return if predictions.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        predictions[b]
            .confidence
            .partial_cmp(&predictions[a].confidence)
            .expect("finite confidences")
    });

    let mut matched: Vec<Vec<bool>> = ground_truth.iter().map(|g| alloc::vec![false; g.len()]).collect();
    let mut tp_flags = Vec::with_capacity(order.len());
    for &pi in &order {
        let det = &predictions[pi];
        let gts = &ground_truth[det.image_id];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if matched[det.image_id][gi] {
                continue;
            }
            let overlap = iou(&det.bbox, gt);
            if overlap >= iou_thresh && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        match best {
            Some((gi, _)) => {
                matched[det.image_id][gi] = true;
                tp_flags.push(true);
            }
            None => tp_flags.push(false),
        }
    }

    // Precision envelope over all recall points.
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut recalls = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &is_tp) in tp_flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precisions.push(tp as f64 / (i + 1) as f64);
        recalls.push(tp as f64 / total_gt as f64);
    }
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precisions.iter().zip(recalls.iter()) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    ap
}

/// AP at 0.5 plus the mean over `IOU_THRESHOLDS`.
#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub ap50: f64,
    pub map_50_95: f64,
    pub per_threshold: Vec<(f64, f64)>,
}

pub fn evaluate_map(predictions: &[Detection], ground_truth: &[Vec<BoundingBox>]) -> EvalSummary {
    let per_threshold: Vec<(f64, f64)> = IOU_THRESHOLDS
        .iter()
        .map(|&t| (t, average_precision(predictions, ground_truth, t)))
        .collect();
    let map = per_threshold.iter().map(|(_, ap)| ap).sum::<f64>() / per_threshold.len() as f64;
    EvalSummary {
        ap50: per_threshold[0].1,
        map_50_95: map,
        per_threshold,
    }
}

/// Sanity helper for tests: true when two boxes agree within `tol`.
#[cfg(test)]
pub(crate) fn boxes_close(a: &BoundingBox, b: &BoundingBox, tol: f64) -> bool {
    fabs(a.x_min - b.x_min) < tol
        && fabs(a.y_min - b.y_min) < tol
        && fabs(a.x_max - b.x_max) < tol
        && fabs(a.y_max - b.y_max) < tol
}
