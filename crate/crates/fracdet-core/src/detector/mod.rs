//! Desk-scale anchor-free detector: a tiny stride-8 convolutional backbone
//! with optional DFA (neck position) and MC (head position) blocks, trained
//! on synthetic fracture-like scenes.

mod eval;
mod heatmap;
mod model;
mod scene;
mod train;

pub use eval::{
    average_precision, evaluate_map, iou, nms, BoundingBox, Detection, EvalSummary,
    IOU_THRESHOLDS,
};
pub use heatmap::{heatmap, heatmap_argmax};
pub use model::{detect, Detector, DetectorConfig, DetectorNodes, ForwardNodes, HEAD_CHANNELS, STRIDE};
pub use scene::{generate_scene, SyntheticScene};
pub use train::{train, TrainOptions, TrainResult};
