//! Detector model: three stride-2 conv stages, optional DFA and MC blocks
//! on the final map, and a 1x1 head emitting objectness plus four box
//! offsets per cell.

use alloc::string::String;
use alloc::vec::Vec;

use crate::complexity::{macs_conv2d, CostReport, CostRow};
use crate::detector::eval::{nms, BoundingBox};
use crate::dfa::{dfa_forward_graph, DfaConfig, DfaNodes, DfaParams, Mode};
use crate::error::{Result, TensorError};
use crate::graph::{Graph, NodeId};
use crate::init;
use crate::math::sigmoid;
use crate::mc::{mc_forward_graph, McConfig, McNodes, McParams};
use crate::ops::Padding;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Output channels per cell: objectness logit + (dx, dy, w, h) offsets.
pub const HEAD_CHANNELS: usize = 5;
/// Total backbone downsampling factor (three stride-2 stages).
pub const STRIDE: usize = 8;

/// Architecture toggles; `with_dfa`/`with_mc` are independent, forming the
/// 2x2 ablation grid.
#[derive(Clone, Debug)]
pub struct DetectorConfig {
    pub widths: [usize; 3],
    pub with_dfa: bool,
    pub with_mc: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            widths: [8, 16, 32],
            with_dfa: false,
            with_mc: false,
        }
    }
}

impl DetectorConfig {
    pub fn with_modules(with_dfa: bool, with_mc: bool) -> Self {
        DetectorConfig {
            with_dfa,
            with_mc,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub w: Tensor,
    pub b: Tensor,
}

/// The assembled model: configs plus every learnable tensor.
#[derive(Clone, Debug)]
pub struct Detector {
    pub config: DetectorConfig,
    pub dfa_config: DfaConfig,
    pub mc_config: McConfig,
    pub stem: Vec<ConvLayer>,
    pub dfa: Option<DfaParams>,
    pub mc: Option<McParams>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

pub struct DetectorNodes {
    pub stem: Vec<(NodeId, NodeId)>,
    pub dfa: Option<DfaNodes>,
    pub mc: Option<McNodes>,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

/// Forward products: the feature map feeding the head (heatmap target) and
/// the raw `N x 5 x H' x W'` head output.
pub struct ForwardNodes {
    pub features: NodeId,
    pub output: NodeId,
}

impl Detector {
    /// Builds the model with seeded initialization. Draw order: stem stage
    /// by stage, then DFA, then MC, then the head.
    pub fn build(config: DetectorConfig, rng: &mut Rng) -> Result<Self> {
        let [c1, c2, c3] = config.widths;
        if c1 == 0 || c2 == 0 || c3 == 0 {
            return Err(TensorError::InvalidArgument {
                op: "Detector::build",
                message: String::from("backbone widths must be positive"),
            });
        }
        let stem_plan = [(c1, 1), (c2, c1), (c3, c2)];
        let stem = stem_plan
            .iter()
            .map(|&(c_out, c_in)| ConvLayer {
                w: init::conv_kernel(rng, c_out, c_in, 3, 3).with_grad(),
                b: init::zero_bias(c_out).with_grad(),
            })
            .collect();
        let dfa_config = DfaConfig::new(c3);
        let mc_config = McConfig::new(c3);
        let dfa = if config.with_dfa {
            Some(DfaParams::init(&dfa_config, rng)?)
        } else {
            None
        };
        let mc = if config.with_mc {
            Some(McParams::init(&mc_config, rng)?)
        } else {
            None
        };
        Ok(Detector {
            config,
            dfa_config,
            mc_config,
            stem,
            dfa,
            mc,
            head_w: init::conv_kernel(rng, HEAD_CHANNELS, c3, 1, 1).with_grad(),
            head_b: init::zero_bias(HEAD_CHANNELS).with_grad(),
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (i, layer) in self.stem.iter().enumerate() {
            out.push((alloc::format!("stem.{i}.w"), &layer.w));
            out.push((alloc::format!("stem.{i}.b"), &layer.b));
        }
        if let Some(dfa) = &self.dfa {
            out.extend(dfa.named_tensors().into_iter().map(|(n, t)| (String::from(n), t)));
        }
        if let Some(mc) = &self.mc {
            out.extend(mc.named_tensors());
        }
        out.push((String::from("head.w"), &self.head_w));
        out.push((String::from("head.b"), &self.head_b));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (i, layer) in self.stem.iter_mut().enumerate() {
            out.push((alloc::format!("stem.{i}.w"), &mut layer.w));
            out.push((alloc::format!("stem.{i}.b"), &mut layer.b));
        }
        if let Some(dfa) = &mut self.dfa {
            out.extend(
                dfa.named_tensors_mut()
                    .into_iter()
                    .map(|(n, t)| (String::from(n), t)),
            );
        }
        if let Some(mc) = &mut self.mc {
            out.extend(mc.named_tensors_mut());
        }
        out.push((String::from("head.w"), &mut self.head_w));
        out.push((String::from("head.b"), &mut self.head_b));
        out
    }

    pub fn param_count(&self) -> u64 {
        self.named_tensors().iter().map(|(_, t)| t.numel() as u64).sum()
    }

    /// Binds all parameters as graph leaves, in `named_tensors` order.
    pub fn bind(&self, g: &mut Graph) -> DetectorNodes {
        DetectorNodes {
            stem: self
                .stem
                .iter()
                .map(|l| (g.leaf(l.w.clone()), g.leaf(l.b.clone())))
                .collect(),
            dfa: self.dfa.as_ref().map(|p| p.bind(g)),
            mc: self.mc.as_ref().map(|p| p.bind(g)),
            head_w: g.leaf(self.head_w.clone()),
            head_b: g.leaf(self.head_b.clone()),
        }
    }

    /// Node ids aligned with `named_tensors` order.
    pub fn ordered_nodes(nodes: &DetectorNodes) -> Vec<NodeId> {
        let mut out = Vec::new();
        for &(w, b) in &nodes.stem {
            out.push(w);
            out.push(b);
        }
        if let Some(dfa) = &nodes.dfa {
            out.extend(DfaParams::ordered_nodes(dfa));
        }
        if let Some(mc) = &nodes.mc {
            out.extend(McParams::ordered_nodes(mc));
        }
        out.push(nodes.head_w);
        out.push(nodes.head_b);
        out
    }

    /// Records the full forward pass on the graph. `image` node must hold
    /// `N x 1 x H x W` with H, W divisible by the stride.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        image: NodeId,
        nodes: &DetectorNodes,
        mode: Mode<'_>,
    ) -> Result<ForwardNodes> {
        let shape = g.value(image).shape().to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] % STRIDE != 0 || shape[3] % STRIDE != 0 {
            return Err(TensorError::InvalidArgument {
                op: "Detector::forward",
                message: alloc::format!(
                    "expected N x 1 x H x W with H, W divisible by {STRIDE}, got {shape:?}"
                ),
            });
        }
        let mut x = image;
        for (w, b) in &nodes.stem {
            x = g.conv2d(x, *w, Some(*b), 2, Padding::Same)?;
            x = g.relu(x)?;
        }
        if let Some(dfa_nodes) = &nodes.dfa {
            x = dfa_forward_graph(g, x, dfa_nodes, &self.dfa_config, mode)?;
        }
        if let Some(mc_nodes) = &nodes.mc {
            x = mc_forward_graph(g, x, mc_nodes, &self.mc_config)?;
        }
        let output = g.conv2d(x, nodes.head_w, Some(nodes.head_b), 1, Padding::none())?;
        Ok(ForwardNodes { features: x, output })
    }

    /// Dropout-free forward returning the raw head output.
    pub fn forward_eval(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let nodes = self.bind(&mut g);
        let fwd = self.forward_graph(&mut g, x, &nodes, Mode::Eval)?;
        Ok(g.value(fwd.output).clone())
    }

    /// Cost report at `shape = [n, 1, h, w]`: stem rows plus module reports
    /// plus the head row.
    pub fn cost(&self, shape: [usize; 4]) -> CostReport {
        let [n, _, h, w] = shape;
        let mut rows: Vec<CostRow> = Vec::new();
        let mut c_in = 1;
        let (mut oh, mut ow) = (h, w);
        for (i, layer) in self.stem.iter().enumerate() {
            let c_out = layer.w.shape()[0];
            oh = oh.div_ceil(2);
            ow = ow.div_ceil(2);
            rows.push(CostRow {
                module: String::from("backbone"),
                operator: alloc::format!("stem{i}_conv3x3_s2"),
                params: (layer.w.numel() + layer.b.numel()) as u64,
                macs: macs_conv2d(n, c_out, c_in, 3, 3, oh, ow),
            });
            c_in = c_out;
        }
        let feature_shape = [n, self.config.widths[2], oh, ow];
        if let (Some(dfa), true) = (&self.dfa, self.config.with_dfa) {
            rows.extend(crate::complexity::dfa_cost(&self.dfa_config, dfa, feature_shape).rows);
        }
        if let (Some(mc), true) = (&self.mc, self.config.with_mc) {
            rows.extend(crate::complexity::mc_cost(&self.mc_config, mc, feature_shape).rows);
        }
        rows.push(CostRow {
            module: String::from("head"),
            operator: String::from("head_conv1x1"),
            params: (self.head_w.numel() + self.head_b.numel()) as u64,
            macs: macs_conv2d(n, HEAD_CHANNELS, c_in, 1, 1, oh, ow),
        });
        crate::complexity::report_from_rows(shape, rows)
    }
}

/// Decodes head output into scored boxes, applies the confidence floor and
/// NMS. Offsets are cell-relative in stride units; box extents are floored
/// at one pixel and boxes are clipped to the image.
pub fn detect(
    detector: &Detector,
    image: &Tensor,
    conf_floor: f64,
    nms_iou: f64,
) -> Result<Vec<(BoundingBox, f64)>> {
    let out = detector.forward_eval(image)?;
    let (h_img, w_img) = (image.shape()[2], image.shape()[3]);
    Ok(decode_output(&out, h_img, w_img, conf_floor, nms_iou))
}

/// Decoding used by both `detect` and the training-demo evaluation.
pub(crate) fn decode_output(
    out: &Tensor,
    img_h: usize,
    img_w: usize,
    conf_floor: f64,
    nms_iou: f64,
) -> Vec<(BoundingBox, f64)> {
    let (hc, wc) = (out.shape()[2], out.shape()[3]);
    let s = STRIDE as f64;
    let mut dets = Vec::new();
    for i in 0..hc {
        for j in 0..wc {
            let conf = sigmoid(out.at4(0, 0, i, j));
            if conf <= conf_floor {
                continue;
            }
            let cx = (j as f64 + 0.5) * s + out.at4(0, 1, i, j) * s;
            let cy = (i as f64 + 0.5) * s + out.at4(0, 2, i, j) * s;
            let bw = (out.at4(0, 3, i, j) * s).max(1.0);
            let bh = (out.at4(0, 4, i, j) * s).max(1.0);
            let bbox = BoundingBox::new(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0)
                .clip(img_w as f64, img_h as f64);
            if bbox.x_min < bbox.x_max && bbox.y_min < bbox.y_max {
                dets.push((bbox, conf));
            }
        }
    }
    nms(dets, nms_iou)
}
