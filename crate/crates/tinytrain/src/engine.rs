//! Executes a [`ModelGraph`] on batch tensors.
//!
//! An [`ExecutionPlan`] resolves node inputs to indices and dequantizes every
//! int8 weight blob once (`w = scale * q`), so inference always runs through
//! the float kernels. Plans are read-only after construction; concurrent
//! `run` calls on one plan are safe.

use crate::model::{ModelError, ModelGraph, NodeOp, META_CLASSES};
use crate::quant::dequantize_blob;
use crate::tensor::{self, Tensor, TensorError};
use std::collections::HashMap;
use std::fmt;

#[derive(Debug)]
pub enum EngineError {
    /// Batch shape does not match the graph input.
    ShapeMismatch(String),
    /// Graph failed validation during plan construction.
    Validation(ModelError),
    Kernel(TensorError),
    /// `predict_probs` needs class labels in graph metadata.
    MissingLabels(String),
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::ShapeMismatch(detail) => write!(f, "engine shape mismatch: {detail}"),
            EngineError::Validation(e) => write!(f, "engine: {e}"),
            EngineError::Kernel(e) => write!(f, "engine kernel: {e}"),
            EngineError::MissingLabels(detail) => write!(f, "missing class labels: {detail}"),
        }
    }
}

impl std::error::Error for EngineError {}

impl From<ModelError> for EngineError {
    fn from(e: ModelError) -> Self {
        EngineError::Validation(e)
    }
}

impl From<TensorError> for EngineError {
    fn from(e: TensorError) -> Self {
        EngineError::Kernel(e)
    }
}

enum PlanInput {
    Graph,
    Node(usize),
}

struct PlanNode {
    op: NodeOp,
    inputs: Vec<PlanInput>,
    /// Dequantized weight tensors, in the node's weight_refs order.
    weights: Vec<Tensor>,
}

/// A validated, weight-resolved graph ready to run batches.
pub struct ExecutionPlan {
    nodes: Vec<PlanNode>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
}

impl ExecutionPlan {
    pub fn new(graph: &ModelGraph) -> Result<ExecutionPlan, EngineError> {
        let output_shape = graph.validate()?;
        let index: HashMap<&str, usize> = graph
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut nodes = Vec::with_capacity(graph.nodes.len());
        for node in &graph.nodes {
            let inputs = if node.inputs.is_empty() {
                vec![PlanInput::Graph]
            } else {
                node.inputs
                    .iter()
                    .map(|id| PlanInput::Node(index[id.as_str()]))
                    .collect()
            };
            let weights = node
                .weight_refs
                .iter()
                .map(|id| {
                    let blob = &graph.weights[id];
                    if blob.is_quantized() {
                        dequantize_blob(blob)
                    } else {
                        Ok(blob.clone())
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            nodes.push(PlanNode {
                op: node.op.clone(),
                inputs,
                weights,
            });
        }
        Ok(ExecutionPlan {
            nodes,
            input_shape: graph.input_shape.clone(),
            output_shape,
        })
    }

    /// Per-sample input shape the plan expects (batch dim excluded).
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape (batch dim excluded).
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    /// Run a batch. The batch tensor's shape must be `[n, ..input_shape]`.
    pub fn run(&self, batch: &Tensor) -> Result<Tensor, EngineError> {
        if batch.shape().len() != self.input_shape.len() + 1
            || batch.shape()[1..] != self.input_shape[..]
            || batch.shape()[0] == 0
        {
            return Err(EngineError::ShapeMismatch(format!(
                "batch shape {:?} does not match graph input {:?} (plus batch dim)",
                batch.shape(),
                self.input_shape
            )));
        }

        let mut outputs: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let resolve = |input: &PlanInput| -> &Tensor {
                match input {
                    PlanInput::Graph => batch,
                    PlanInput::Node(i) => outputs[*i].as_ref().expect("topological order"),
                }
            };
            let x = resolve(&node.inputs[0]);
            let out = match &node.op {
                NodeOp::Conv2d { stride, padding } => {
                    tensor::conv2d(x, &node.weights[0], &node.weights[1], *stride, *padding)?
                }
                NodeOp::DepthwiseConv2d { stride, padding } => tensor::depthwise_conv2d(
                    x,
                    &node.weights[0],
                    &node.weights[1],
                    *stride,
                    *padding,
                )?,
                NodeOp::Dense => tensor::dense(x, &node.weights[0], &node.weights[1])?,
                NodeOp::GlobalAveragePool => tensor::global_average_pool(x)?,
                NodeOp::Activation { kind } => tensor::activation(x, *kind)?,
                NodeOp::Add => tensor::add(x, resolve(&node.inputs[1]))?,
                NodeOp::DropoutMarker { .. } => x.clone(),
                NodeOp::Flatten => tensor::flatten(x)?,
            };
            outputs.push(Some(out));
        }
        Ok(outputs
            .pop()
            .flatten()
            .expect("validated graph has at least one node"))
    }
}

/// One-shot convenience: build a plan and run a single batch.
pub fn run(graph: &ModelGraph, batch: &Tensor) -> Result<Tensor, EngineError> {
    ExecutionPlan::new(graph)?.run(batch)
}

/// Class probabilities plus the argmax label for one sample.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub probs: Vec<f32>,
    pub class_index: usize,
    pub label: String,
    pub class_names: Vec<String>,
}

impl Prediction {
    /// `(label, prob)` pairs sorted by descending probability, ties by class
    /// order.
    pub fn ranked(&self) -> Vec<(&str, f32)> {
        let mut pairs: Vec<(usize, f32)> = self.probs.iter().copied().enumerate().collect();
        pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        pairs
            .into_iter()
            .map(|(i, p)| (self.class_names[i].as_str(), p))
            .collect()
    }
}

/// Index of the largest value, ties broken by the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Run one sample through a labeled classifier graph.
///
/// The sample may have the per-sample shape or carry a leading batch dim
/// of 1. Sigmoid heads are argmaxed over their per-class scores, so `probs`
/// is returned exactly as produced and only softmax heads sum to 1.
pub fn predict_probs(graph: &ModelGraph, sample: &Tensor) -> Result<Prediction, EngineError> {
    let plan = ExecutionPlan::new(graph)?;
    let class_names = graph.classes().ok_or_else(|| {
        EngineError::MissingLabels(format!("graph '{}' has no {META_CLASSES} metadata", graph.name))
    })?;

    let batch = if sample.shape() == plan.input_shape() {
        let mut shape = vec![1];
        shape.extend_from_slice(sample.shape());
        sample.reshape(shape).map_err(EngineError::Kernel)?
    } else {
        sample.clone()
    };
    let out = plan.run(&batch)?;
    if out.shape().len() != 2 || out.shape()[0] != 1 {
        return Err(EngineError::ShapeMismatch(format!(
            "classifier output must be (1, classes), got {:?}",
            out.shape()
        )));
    }
    let probs = out.as_f32()?.to_vec();
    if probs.len() != class_names.len() {
        return Err(EngineError::MissingLabels(format!(
            "{} labels for {} outputs",
            class_names.len(),
            probs.len()
        )));
    }
    let class_index = argmax(&probs);
    Ok(Prediction {
        label: class_names[class_index].clone(),
        class_index,
        probs,
        class_names,
    })
}
