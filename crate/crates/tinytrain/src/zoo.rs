//! Randomly initialized, architecture-faithful backbones.
//!
//! These builders reproduce the layer structure, strides, and feature shapes
//! of well-known mobile CNNs so the full pipeline can run without downloading
//! pretrained weights: a MobileNetV2-style network maps `(224, 224, 3)` to
//! `(7, 7, 1280)` and a YAMNet-style (MobileNetV1 depthwise-separable)
//! network maps a `(96, 64, 1)` log-mel patch to `(3, 2, 1024)`, with its
//! three prediction layers attached so backbone preparation can strip them.
//!
//! `width_div` shrinks every internal channel count (the boundary shapes
//! stay fixed), which keeps demo and test models small and fast.
//!
//! Weights are random but calibrated: after drawing each convolution kernel,
//! the builder pushes a deterministic reference input through the stack and
//! rescales the kernel so its output has unit RMS. Without this, activation
//! magnitude drifts exponentially across ~20 relu6 layers and, depending on
//! the seed, either vanishes or saturates against the clamp — both of which
//! flatten the features. Calibrated random backbones give usable features
//! for demos and tests; for real accuracy, import pretrained weights in the
//! documented blob layout instead.

use crate::model::{GraphNode, ModelGraph, NodeOp};
use crate::tensor::{self, ActivationKind, Padding, Tensor};
use crate::util::derive_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

fn glorot(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    uniform_init(rng, shape, (6.0 / (fan_in + fan_out) as f64).sqrt())
}

fn uniform_init(rng: &mut ChaCha8Rng, shape: Vec<usize>, limit: f64) -> Tensor {
    let len: usize = shape.iter().product();
    let data: Vec<f32> = (0..len)
        .map(|_| rng.random_range(-limit..limit) as f32)
        .collect();
    Tensor::from_f32(shape, data).expect("finite init")
}

fn rms(t: &Tensor) -> f64 {
    let data = t.as_f32().expect("calibration tensors are float");
    (data.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / data.len() as f64).sqrt()
}

fn scale_tensor(t: &Tensor, factor: f32) -> Tensor {
    let data = t.as_f32().unwrap().iter().map(|&v| v * factor).collect();
    Tensor::from_f32(t.shape().to_vec(), data).expect("finite scale")
}

/// Builds a stack of nodes while tracking a calibration activation per node,
/// so each convolution can be rescaled to unit output RMS as it is added.
struct StackBuilder {
    graph: ModelGraph,
    rng: ChaCha8Rng,
    prev: Option<String>,
    counter: usize,
    /// Calibration activations, graph input included under "".
    acts: HashMap<String, Tensor>,
}

impl StackBuilder {
    /// `calib_range` spans the values the real preprocessing produces
    /// ([0, 1] pixels, or roughly [ln(0.001), 1] log-mel values).
    fn new(name: &str, input_shape: Vec<usize>, seed: u64, calib_range: (f32, f32)) -> StackBuilder {
        let mut calib_rng = derive_rng(seed, 0xca11b);
        let mut shape = vec![1];
        shape.extend_from_slice(&input_shape);
        let len: usize = shape.iter().product();
        let calib = Tensor::from_f32(
            shape,
            (0..len)
                .map(|_| calib_rng.random_range(calib_range.0..calib_range.1))
                .collect(),
        )
        .expect("finite calibration input");
        let mut acts = HashMap::new();
        acts.insert(String::new(), calib);
        StackBuilder {
            graph: ModelGraph::new(name, input_shape),
            rng: derive_rng(seed, 0xb0_0b),
            prev: None,
            counter: 0,
            acts,
        }
    }

    fn next_id(&mut self, kind: &str) -> String {
        let id = format!("{kind}{}", self.counter);
        self.counter += 1;
        id
    }

    fn prev_id(&self) -> String {
        self.prev.clone().unwrap_or_default()
    }

    fn prev_act(&self) -> &Tensor {
        &self.acts[&self.prev_id()]
    }

    fn push(&mut self, id: String, op: NodeOp, weight_refs: Vec<String>, act: Tensor) -> String {
        let inputs = if self.prev.is_none() { vec![] } else { vec![self.prev_id()] };
        self.graph
            .nodes
            .push(GraphNode::new(id.clone(), op, inputs, weight_refs));
        self.acts.insert(id.clone(), act);
        self.prev = Some(id.clone());
        id
    }

    fn conv(&mut self, kh: usize, kw: usize, cin: usize, cout: usize, stride: usize) -> String {
        let id = self.next_id("conv");
        let mut kernel = uniform_init(
            &mut self.rng,
            vec![kh, kw, cin, cout],
            (6.0 / (kh * kw * cin) as f64).sqrt(),
        );
        let bias = Tensor::zeros(vec![cout]);
        let mut out = tensor::conv2d(self.prev_act(), &kernel, &bias, stride, Padding::Same)
            .expect("calibration conv");
        let out_rms = rms(&out);
        if out_rms > 1e-9 {
            let factor = (1.0 / out_rms) as f32;
            kernel = scale_tensor(&kernel, factor);
            out = scale_tensor(&out, factor);
        }
        self.graph.weights.insert(format!("{id}.w"), kernel);
        self.graph.weights.insert(format!("{id}.b"), bias);
        self.push(
            id.clone(),
            NodeOp::Conv2d {
                stride,
                padding: Padding::Same,
            },
            vec![format!("{id}.w"), format!("{id}.b")],
            out,
        )
    }

    fn dwconv(&mut self, channels: usize, stride: usize) -> String {
        let id = self.next_id("dw");
        let mut kernel = uniform_init(
            &mut self.rng,
            vec![3, 3, channels, 1],
            (6.0 / 9.0f64).sqrt(),
        );
        let bias = Tensor::zeros(vec![channels]);
        let mut out =
            tensor::depthwise_conv2d(self.prev_act(), &kernel, &bias, stride, Padding::Same)
                .expect("calibration depthwise");
        let out_rms = rms(&out);
        if out_rms > 1e-9 {
            let factor = (1.0 / out_rms) as f32;
            kernel = scale_tensor(&kernel, factor);
            out = scale_tensor(&out, factor);
        }
        self.graph.weights.insert(format!("{id}.w"), kernel);
        self.graph.weights.insert(format!("{id}.b"), bias);
        self.push(
            id.clone(),
            NodeOp::DepthwiseConv2d {
                stride,
                padding: Padding::Same,
            },
            vec![format!("{id}.w"), format!("{id}.b")],
            out,
        )
    }

    fn relu6(&mut self) -> String {
        let id = self.next_id("relu");
        let out = tensor::activation(self.prev_act(), ActivationKind::Relu6)
            .expect("calibration relu6");
        self.push(
            id,
            NodeOp::Activation {
                kind: ActivationKind::Relu6,
            },
            vec![],
            out,
        )
    }

    fn add(&mut self, a: String, b: String) -> String {
        let id = self.next_id("add");
        let out = tensor::add(&self.acts[&a], &self.acts[&b]).expect("calibration add");
        self.graph
            .nodes
            .push(GraphNode::new(id.clone(), NodeOp::Add, vec![a, b], vec![]));
        self.acts.insert(id.clone(), out);
        self.prev = Some(id.clone());
        id
    }
}

fn scaled(channels: usize, width_div: usize) -> usize {
    (channels / width_div).max(4)
}

/// MobileNetV2-style backbone: strided stem, inverted residual bottlenecks
/// (expand 6x, depthwise, project, residual add at stride 1), and a final
/// 1x1 convolution to 1280 channels. Maps `(224, 224, 3) -> (7, 7, 1280)`.
pub fn mobilenet_v2_shaped(seed: u64, width_div: usize) -> ModelGraph {
    let mut b = StackBuilder::new("mobilenetv2-shaped", vec![224, 224, 3], seed, (0.0, 1.0));

    let stem = scaled(32, width_div);
    b.conv(3, 3, 3, stem, 2);
    b.relu6();
    let mut channels = stem;

    // (expansion, output channels, blocks, first-block stride)
    let stages: [(usize, usize, usize, usize); 7] = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ];
    for (expansion, out_channels, blocks, first_stride) in stages {
        let out_channels = scaled(out_channels, width_div);
        for block in 0..blocks {
            let stride = if block == 0 { first_stride } else { 1 };
            let block_input = b.prev.clone().expect("stem exists");
            let hidden = channels * expansion;
            if expansion > 1 {
                b.conv(1, 1, channels, hidden, 1);
                b.relu6();
            }
            b.dwconv(hidden, stride);
            b.relu6();
            let projected = b.conv(1, 1, hidden, out_channels, 1);
            if stride == 1 && channels == out_channels {
                b.add(block_input, projected);
            }
            channels = out_channels;
        }
    }

    b.conv(1, 1, channels, 1280, 1);
    b.relu6();
    b.graph
}

/// YAMNet-style backbone (MobileNetV1 depthwise-separable stack) over
/// `(96, 64, 1)` log-mel patches, ending at `(3, 2, 1024)` features plus the
/// three prediction layers (pooling, dense, sigmoid). Strip them with
/// `truncate(3)` (or `create --drop-last 3`) to use it as a feature
/// extractor.
pub fn yamnet_shaped(seed: u64, width_div: usize) -> ModelGraph {
    let pad = crate::audio::LOG_OFFSET.ln();
    let mut b = StackBuilder::new("yamnet-shaped", vec![96, 64, 1], seed, (pad, 1.0));

    let stem = scaled(32, width_div);
    b.conv(3, 3, 1, stem, 2);
    b.relu6();
    let mut channels = stem;

    // (output channels, stride) for each depthwise-separable pair.
    let pairs: [(usize, usize); 13] = [
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (1024, 2),
        (1024, 1),
    ];
    for (i, (out_channels, stride)) in pairs.into_iter().enumerate() {
        // The closing pair stays at its real width so the feature shape is
        // exactly (3, 2, 1024).
        let out_channels = if i >= 11 { out_channels } else { scaled(out_channels, width_div) };
        b.dwconv(channels, stride);
        b.relu6();
        b.conv(1, 1, channels, out_channels, 1);
        b.relu6();
        channels = out_channels;
    }

    // Prediction layers; backbone preparation drops these three.
    let pooled = tensor::global_average_pool(b.prev_act()).expect("calibration pool");
    b.push("pool".into(), NodeOp::GlobalAveragePool, vec![], pooled.clone());
    let dense_w = glorot(&mut b.rng, vec![1024, 8], 1024, 8);
    let dense_b = Tensor::zeros(vec![8]);
    let dense_out = tensor::dense(&pooled, &dense_w, &dense_b).expect("calibration dense");
    b.graph.weights.insert("pred.w".into(), dense_w);
    b.graph.weights.insert("pred.b".into(), dense_b);
    b.push(
        "pred".into(),
        NodeOp::Dense,
        vec!["pred.w".into(), "pred.b".into()],
        dense_out.clone(),
    );
    let act_out = tensor::activation(&dense_out, ActivationKind::Sigmoid).expect("calibration act");
    b.push(
        "pred_act".into(),
        NodeOp::Activation {
            kind: ActivationKind::Sigmoid,
        },
        vec![],
        act_out,
    );
    b.graph
}

/// Weight-dominated classifier (about a million parameters in two dense
/// layers) for exercising quantization and file-size accounting.
pub fn dense_classifier(seed: u64, input_features: usize, hidden: usize, classes: usize) -> ModelGraph {
    let mut rng = derive_rng(seed, 0xd1);
    let mut g = ModelGraph::new("dense-classifier", vec![1, 1, input_features]);
    g.weights.insert(
        "fc1.w".into(),
        glorot(&mut rng, vec![input_features, hidden], input_features, hidden),
    );
    g.weights.insert("fc1.b".into(), Tensor::zeros(vec![hidden]));
    g.weights.insert(
        "fc2.w".into(),
        glorot(&mut rng, vec![hidden, classes], hidden, classes),
    );
    g.weights.insert("fc2.b".into(), Tensor::zeros(vec![classes]));
    g.nodes.push(GraphNode::new("flat", NodeOp::Flatten, vec![], vec![]));
    g.nodes.push(GraphNode::new(
        "fc1",
        NodeOp::Dense,
        vec!["flat".into()],
        vec!["fc1.w".into(), "fc1.b".into()],
    ));
    g.nodes.push(GraphNode::new(
        "act1",
        NodeOp::Activation {
            kind: ActivationKind::Relu,
        },
        vec!["fc1".into()],
        vec![],
    ));
    g.nodes.push(GraphNode::new(
        "fc2",
        NodeOp::Dense,
        vec!["act1".into()],
        vec!["fc2.w".into(), "fc2.b".into()],
    ));
    g.nodes.push(GraphNode::new(
        "out",
        NodeOp::Activation {
            kind: ActivationKind::Softmax,
        },
        vec!["fc2".into()],
        vec![],
    ));
    g.set_classes(&(0..classes).map(|i| format!("class{i}")).collect::<Vec<_>>());
    g
}
