//! Builds and trains the classification head on cached backbone features.
//!
//! The head is global average pooling, optional inverted dropout (training
//! only), and one dense layer: softmax + categorical cross-entropy for image
//! models, sigmoid + per-class binary cross-entropy for audio models.
//! Training is plain mini-batch backprop (SGD or Adam) with Glorot-uniform
//! initialization; every random choice derives from the config seed, so the
//! same config always produces the same weights and history.
//!
//! Forward/backward math runs in f64. The dense layer is convex in its
//! weights, so this stays well-behaved, and it makes analytic gradients
//! agree with central finite differences to high precision.

use crate::engine::argmax;
use crate::features::FeatureCache;
use crate::model::{GraphNode, ModelGraph, NodeOp};
use crate::tensor::{ActivationKind, Tensor};
use crate::util::derive_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

#[derive(Debug)]
pub enum TrainError {
    /// Train/validation caches disagree on classes.
    ClassMismatch(String),
    /// A class has zero training rows.
    DegenerateDataset(String),
    ShapeMismatch(String),
    InvalidConfig(String),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::ClassMismatch(d) => write!(f, "class mismatch: {d}"),
            TrainError::DegenerateDataset(d) => write!(f, "degenerate dataset: {d}"),
            TrainError::ShapeMismatch(d) => write!(f, "trainer shape mismatch: {d}"),
            TrainError::InvalidConfig(d) => write!(f, "invalid training config: {d}"),
        }
    }
}

impl std::error::Error for TrainError {}

/// Final nonlinearity of the head. The audio head uses sigmoid, trained with
/// per-class binary cross-entropy; predictions argmax the per-class scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadActivation {
    Softmax,
    Sigmoid,
}

impl HeadActivation {
    pub fn kind(self) -> ActivationKind {
        match self {
            HeadActivation::Softmax => ActivationKind::Softmax,
            HeadActivation::Sigmoid => ActivationKind::Sigmoid,
        }
    }
}

/// Architecture choices for a head before training.
#[derive(Debug, Clone, Copy)]
pub struct HeadSpec {
    pub dropout_rate: f32,
    pub activation: HeadActivation,
}

impl HeadSpec {
    /// Image default: dropout 0.5 before a softmax dense layer.
    pub fn image(dropout_rate: f32) -> HeadSpec {
        HeadSpec {
            dropout_rate,
            activation: HeadActivation::Softmax,
        }
    }

    /// Audio default: no dropout, sigmoid dense layer.
    pub fn audio() -> HeadSpec {
        HeadSpec {
            dropout_rate: 0.0,
            activation: HeadActivation::Sigmoid,
        }
    }
}

/// Trained classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    /// Per-sample feature shape this head consumes, e.g. `(7, 7, 1280)`.
    pub input_shape: Vec<usize>,
    pub dropout_rate: f32,
    /// Dense weights `(features, classes)`.
    pub dense_weights: Tensor,
    /// Dense bias `(classes,)`.
    pub dense_bias: Tensor,
    pub activation: HeadActivation,
    pub class_names: Vec<String>,
}

/// Optimizer selection; Adam keeps per-parameter first/second moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam_default() -> Optimizer {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::adam_default()),
            other => Err(format!("unknown optimizer '{other}' (expected sgd or adam)")),
        }
    }
}

/// Training hyperparameters. All values are recorded verbatim into the
/// packaged model's metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::adam_default(),
        }
    }
}

/// Per-epoch metrics, all computed in eval mode (dropout off) over the full
/// split at the end of the epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Loss/accuracy curves over training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// CSV with header `epoch,train_loss,train_acc,val_loss,val_acc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for (i, e) in self.epochs.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                i + 1,
                e.train_loss,
                e.train_acc,
                e.val_loss,
                e.val_acc
            ));
        }
        out
    }
}

/// Gradients returned by [`head_loss_grad`], row-major `(features, classes)`
/// for the weights.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub loss: f64,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

// ---------------------------------------------------------------------------
// f64 math core shared by the public ops and the training loop
// ---------------------------------------------------------------------------

/// Pool `(N, h, w, c)` features to an `(N, c)` f64 matrix.
fn pool_features(features: &Tensor, input_shape: &[usize]) -> Result<(Vec<f64>, usize), TrainError> {
    let shape = features.shape();
    if shape.len() != input_shape.len() + 1 || shape[1..] != input_shape[..] {
        return Err(TrainError::ShapeMismatch(format!(
            "features {shape:?} do not match head input {input_shape:?}"
        )));
    }
    if input_shape.len() != 3 {
        return Err(TrainError::ShapeMismatch(format!(
            "head input must be (h, w, c), got {input_shape:?}"
        )));
    }
    let data = features
        .as_f32()
        .map_err(|e| TrainError::ShapeMismatch(e.to_string()))?;
    let n = shape[0];
    let area = input_shape[0] * input_shape[1];
    let channels = input_shape[2];
    let mut pooled = vec![0.0f64; n * channels];
    for (row, sample) in data.chunks(area * channels).enumerate() {
        let out = &mut pooled[row * channels..(row + 1) * channels];
        for px in sample.chunks(channels) {
            for (o, &v) in out.iter_mut().zip(px) {
                *o += f64::from(v);
            }
        }
        for o in out.iter_mut() {
            *o /= area as f64;
        }
    }
    Ok((pooled, channels))
}

/// Inverted dropout mask over an `(N, F)` matrix: 0 with probability `rate`,
/// `1/(1-rate)` otherwise.
fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f32) -> Vec<f64> {
    let keep_scale = 1.0 / f64::from(1.0 - rate);
    (0..len)
        .map(|_| {
            if rng.random::<f32>() < rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect()
}

/// Dense + activation on pooled features: returns `(N, K)` probabilities.
fn forward_pooled(
    pooled: &[f64],
    n: usize,
    f: usize,
    weights: &[f64],
    bias: &[f64],
    k: usize,
    activation: HeadActivation,
) -> Vec<f64> {
    let mut probs = vec![0.0f64; n * k];
    for row in 0..n {
        let x = &pooled[row * f..(row + 1) * f];
        let z = &mut probs[row * k..(row + 1) * k];
        z.copy_from_slice(bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                let w_row = &weights[i * k..(i + 1) * k];
                for (zj, &wij) in z.iter_mut().zip(w_row) {
                    *zj += xi * wij;
                }
            }
        }
        match activation {
            HeadActivation::Softmax => {
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in z.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in z.iter_mut() {
                    *v /= sum;
                }
            }
            HeadActivation::Sigmoid => {
                for v in z.iter_mut() {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
            }
        }
    }
    probs
}

const PROB_FLOOR: f64 = 1e-12;

/// Mean loss and the `dL/dz` matrix for the pre-activation logits.
fn loss_and_dz(
    probs: &[f64],
    labels: &[f32],
    n: usize,
    k: usize,
    activation: HeadActivation,
) -> (f64, Vec<f64>) {
    let mut loss = 0.0f64;
    let mut dz = vec![0.0f64; n * k];
    match activation {
        HeadActivation::Softmax => {
            // Mean categorical cross-entropy; softmax+CE gives dz = (p-y)/N.
            for i in 0..n * k {
                let y = f64::from(labels[i]);
                if y > 0.0 {
                    loss -= y * probs[i].max(PROB_FLOOR).ln();
                }
                dz[i] = (probs[i] - y) / n as f64;
            }
            loss /= n as f64;
        }
        HeadActivation::Sigmoid => {
            // Mean per-class binary cross-entropy over all N*K entries;
            // sigmoid+BCE gives dz = (p-y)/(N*K).
            let count = (n * k) as f64;
            for i in 0..n * k {
                let y = f64::from(labels[i]);
                let p = probs[i].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
                dz[i] = (probs[i] - y) / count;
            }
            loss /= count;
        }
    }
    (loss, dz)
}

fn accumulate_grads(
    pooled: &[f64],
    dz: &[f64],
    n: usize,
    f: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut grad_w = vec![0.0f64; f * k];
    let mut grad_b = vec![0.0f64; k];
    for row in 0..n {
        let x = &pooled[row * f..(row + 1) * f];
        let d = &dz[row * k..(row + 1) * k];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                let g_row = &mut grad_w[i * k..(i + 1) * k];
                for (g, &dj) in g_row.iter_mut().zip(d) {
                    *g += xi * dj;
                }
            }
        }
        for (g, &dj) in grad_b.iter_mut().zip(d) {
            *g += dj;
        }
    }
    (grad_w, grad_b)
}

fn weights_f64(head: &HeadModel) -> (Vec<f64>, Vec<f64>) {
    let w = head
        .dense_weights
        .as_f32()
        .expect("head weights are float")
        .iter()
        .map(|&v| f64::from(v))
        .collect();
    let b = head
        .dense_bias
        .as_f32()
        .expect("head bias is float")
        .iter()
        .map(|&v| f64::from(v))
        .collect();
    (w, b)
}

// ---------------------------------------------------------------------------
// Public ops
// ---------------------------------------------------------------------------

/// Run the head on a feature batch. With `training` set, inverted dropout is
/// applied between pooling and the dense layer using draws from `rng`;
/// otherwise dropout is the identity and `rng` is untouched.
pub fn head_forward(
    head: &HeadModel,
    features: &Tensor,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor, TrainError> {
    let (mut pooled, f) = pool_features(features, &head.input_shape)?;
    let n = features.shape()[0];
    let k = head.class_names.len();
    if training && head.dropout_rate > 0.0 {
        let mask = dropout_mask(rng, pooled.len(), head.dropout_rate);
        for (p, m) in pooled.iter_mut().zip(&mask) {
            *p *= m;
        }
    }
    let (w, b) = weights_f64(head);
    let probs = forward_pooled(&pooled, n, f, &w, &b, k, head.activation);
    Tensor::from_f32(vec![n, k], probs.iter().map(|&v| v as f32).collect())
        .map_err(|e| TrainError::ShapeMismatch(e.to_string()))
}

/// Loss and analytic gradients for one batch. `labels` is one-hot `(N, K)`.
pub fn head_loss_grad(
    head: &HeadModel,
    features: &Tensor,
    labels: &Tensor,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<HeadGradients, TrainError> {
    let (mut pooled, f) = pool_features(features, &head.input_shape)?;
    let n = features.shape()[0];
    let k = head.class_names.len();
    if labels.shape() != [n, k] {
        return Err(TrainError::ShapeMismatch(format!(
            "labels {:?} do not match ({n}, {k})",
            labels.shape()
        )));
    }
    let label_data = labels
        .as_f32()
        .map_err(|e| TrainError::ShapeMismatch(e.to_string()))?;
    if training && head.dropout_rate > 0.0 {
        let mask = dropout_mask(rng, pooled.len(), head.dropout_rate);
        for (p, m) in pooled.iter_mut().zip(&mask) {
            *p *= m;
        }
    }
    let (w, b) = weights_f64(head);
    let probs = forward_pooled(&pooled, n, f, &w, &b, k, head.activation);
    let (loss, dz) = loss_and_dz(&probs, label_data, n, k, head.activation);
    let (grad_weights, grad_bias) = accumulate_grads(&pooled, &dz, n, f, k);
    Ok(HeadGradients {
        loss,
        grad_weights,
        grad_bias,
    })
}

/// One split's pooled features and labels during training.
struct Split<'a> {
    pooled: &'a [f64],
    labels: &'a [f32],
    n: usize,
}

fn eval_metrics(
    split: &Split<'_>,
    f: usize,
    weights: &[f64],
    bias: &[f64],
    k: usize,
    activation: HeadActivation,
) -> (f64, f64) {
    let probs = forward_pooled(split.pooled, split.n, f, weights, bias, k, activation);
    let (loss, _) = loss_and_dz(&probs, split.labels, split.n, k, activation);
    let mut correct = 0usize;
    for row in 0..split.n {
        let p32: Vec<f32> = probs[row * k..(row + 1) * k].iter().map(|&v| v as f32).collect();
        let truth = argmax(&split.labels[row * k..(row + 1) * k]);
        if argmax(&p32) == truth {
            correct += 1;
        }
    }
    (loss, correct as f64 / split.n as f64)
}

/// Train a head on cached features, validating against `val_cache` each
/// epoch. Returns the final-epoch model and the full history.
pub fn train(
    cache: &FeatureCache,
    val_cache: &FeatureCache,
    spec: HeadSpec,
    cfg: &TrainConfig,
) -> Result<(HeadModel, TrainHistory), TrainError> {
    if cache.class_names != val_cache.class_names {
        return Err(TrainError::ClassMismatch(format!(
            "train classes {:?} vs validation classes {:?}",
            cache.class_names, val_cache.class_names
        )));
    }
    if cache.features.shape()[1..] != val_cache.features.shape()[1..] {
        return Err(TrainError::ShapeMismatch(format!(
            "train features {:?} vs validation features {:?}",
            cache.features.shape(),
            val_cache.features.shape()
        )));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.learning_rate < 0.0 {
        return Err(TrainError::InvalidConfig(
            "epochs and batch_size must be positive, learning_rate non-negative".into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.dropout_rate) {
        return Err(TrainError::InvalidConfig(format!(
            "dropout rate {} outside [0, 1)",
            spec.dropout_rate
        )));
    }
    let input_shape = cache.features.shape()[1..].to_vec();
    let k = cache.class_names.len();
    if k < 2 {
        return Err(TrainError::ClassMismatch(format!(
            "need at least 2 classes, got {k}"
        )));
    }

    let n = cache.sample_count();
    let labels = cache.labels.as_f32().expect("labels are float");
    for (class, name) in cache.class_names.iter().enumerate() {
        let count = (0..n).filter(|&row| labels[row * k + class] == 1.0).count();
        if count == 0 {
            return Err(TrainError::DegenerateDataset(format!(
                "class '{name}' has no training rows"
            )));
        }
    }

    let (pooled, f) = pool_features(&cache.features, &input_shape)?;
    let (val_pooled, _) = pool_features(&val_cache.features, &input_shape)?;
    let val_labels = val_cache.labels.as_f32().expect("labels are float");
    let val_n = val_cache.sample_count();

    // Glorot-uniform init over (F, K); bias starts at zero.
    let mut init_rng = derive_rng(cfg.seed, 0);
    let limit = (6.0 / (f + k) as f64).sqrt();
    let mut weights: Vec<f64> = (0..f * k)
        .map(|_| init_rng.random_range(-limit..limit))
        .collect();
    let mut bias = vec![0.0f64; k];

    let mut shuffle_rng = derive_rng(cfg.seed, 1);
    let mut dropout_rng = derive_rng(cfg.seed, 2);

    // Adam state.
    let mut m_w = vec![0.0f64; f * k];
    let mut v_w = vec![0.0f64; f * k];
    let mut m_b = vec![0.0f64; k];
    let mut v_b = vec![0.0f64; k];
    let mut step = 0u64;

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory::default();

    let mut batch_pooled = vec![0.0f64; cfg.batch_size.min(n) * f];
    let mut batch_labels = vec![0.0f32; cfg.batch_size.min(n) * k];

    for _ in 0..cfg.epochs {
        // Fisher-Yates via the dedicated shuffle stream.
        for i in (1..n).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_size) {
            let bn = batch.len();
            for (slot, &row) in batch.iter().enumerate() {
                batch_pooled[slot * f..(slot + 1) * f]
                    .copy_from_slice(&pooled[row * f..(row + 1) * f]);
                batch_labels[slot * k..(slot + 1) * k]
                    .copy_from_slice(&labels[row * k..(row + 1) * k]);
            }
            let view = &mut batch_pooled[..bn * f];
            if spec.dropout_rate > 0.0 {
                let mask = dropout_mask(&mut dropout_rng, bn * f, spec.dropout_rate);
                for (p, m) in view.iter_mut().zip(&mask) {
                    *p *= m;
                }
            }
            let probs = forward_pooled(view, bn, f, &weights, &bias, k, spec.activation);
            let (_, dz) = loss_and_dz(&probs, &batch_labels[..bn * k], bn, k, spec.activation);
            let (grad_w, grad_b) = accumulate_grads(view, &dz, bn, f, k);

            step += 1;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (w, g) in weights.iter_mut().zip(&grad_w) {
                        *w -= cfg.learning_rate * g;
                    }
                    for (b, g) in bias.iter_mut().zip(&grad_b) {
                        *b -= cfg.learning_rate * g;
                    }
                }
                Optimizer::Adam {
                    beta1,
                    beta2,
                    epsilon,
                } => {
                    let bc1 = 1.0 - beta1.powi(step as i32);
                    let bc2 = 1.0 - beta2.powi(step as i32);
                    let update = |w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                        for i in 0..w.len() {
                            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                            let m_hat = m[i] / bc1;
                            let v_hat = v[i] / bc2;
                            w[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                        }
                    };
                    update(&mut weights, &grad_w, &mut m_w, &mut v_w);
                    update(&mut bias, &grad_b, &mut m_b, &mut v_b);
                }
            }
        }

        let train_split = Split {
            pooled: &pooled,
            labels,
            n,
        };
        let val_split = Split {
            pooled: &val_pooled,
            labels: val_labels,
            n: val_n,
        };
        let (train_loss, train_acc) =
            eval_metrics(&train_split, f, &weights, &bias, k, spec.activation);
        let (val_loss, val_acc) =
            eval_metrics(&val_split, f, &weights, &bias, k, spec.activation);
        history.epochs.push(EpochRecord {
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });
    }

    let head = HeadModel {
        input_shape,
        dropout_rate: spec.dropout_rate,
        dense_weights: Tensor::from_f32(
            vec![f, k],
            weights.iter().map(|&v| v as f32).collect(),
        )
        .map_err(|e| TrainError::ShapeMismatch(e.to_string()))?,
        dense_bias: Tensor::from_f32(vec![k], bias.iter().map(|&v| v as f32).collect())
            .map_err(|e| TrainError::ShapeMismatch(e.to_string()))?,
        activation: spec.activation,
        class_names: cache.class_names.clone(),
    };
    Ok((head, history))
}

/// Export the trained head as a small graph (`gap -> [dropout] -> dense ->
/// activation`) ready for [`crate::model::compose`].
pub fn export_head(head: &HeadModel, name: &str) -> ModelGraph {
    let mut g = ModelGraph::new(name, head.input_shape.clone());
    g.weights
        .insert("dense.w".into(), head.dense_weights.clone());
    g.weights.insert("dense.b".into(), head.dense_bias.clone());
    g.nodes.push(GraphNode::new(
        "gap",
        NodeOp::GlobalAveragePool,
        vec![],
        vec![],
    ));
    let mut prev = "gap".to_string();
    if head.dropout_rate > 0.0 {
        g.nodes.push(GraphNode::new(
            "dropout",
            NodeOp::DropoutMarker {
                rate: head.dropout_rate,
            },
            vec![prev],
            vec![],
        ));
        prev = "dropout".to_string();
    }
    g.nodes.push(GraphNode::new(
        "dense",
        NodeOp::Dense,
        vec![prev],
        vec!["dense.w".into(), "dense.b".into()],
    ));
    g.nodes.push(GraphNode::new(
        "out",
        NodeOp::Activation {
            kind: head.activation.kind(),
        },
        vec!["dense".into()],
        vec![],
    ));
    g.set_classes(&head.class_names);
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{CacheMeta, FeatureCache};

    fn tiny_head(f: usize, k: usize, dropout: f32, activation: HeadActivation) -> HeadModel {
        let mut rng = derive_rng(99, 0);
        let w: Vec<f32> = (0..f * k).map(|_| rng.random_range(-0.5..0.5)).collect();
        let b: Vec<f32> = (0..k).map(|_| rng.random_range(-0.1..0.1)).collect();
        HeadModel {
            input_shape: vec![1, 1, f],
            dropout_rate: dropout,
            dense_weights: Tensor::from_f32(vec![f, k], w).unwrap(),
            dense_bias: Tensor::from_f32(vec![k], b).unwrap(),
            activation,
            class_names: (0..k).map(|i| format!("c{i}")).collect(),
        }
    }

    fn feature_batch(n: usize, f: usize, seed: u64) -> Tensor {
        let mut rng = derive_rng(seed, 7);
        let data: Vec<f32> = (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_f32(vec![n, 1, 1, f], data).unwrap()
    }

    #[test]
    fn eval_mode_ignores_dropout_and_rng() {
        let head = tiny_head(6, 3, 0.9, HeadActivation::Softmax);
        let feats = feature_batch(4, 6, 1);
        let a = head_forward(&head, &feats, false, &mut derive_rng(0, 0)).unwrap();
        let b = head_forward(&head, &feats, false, &mut derive_rng(5, 5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_weights_softmax_is_uniform_at_any_feature_scale() {
        let mut head = tiny_head(8, 5, 0.0, HeadActivation::Softmax);
        head.dense_weights = Tensor::zeros(vec![8, 5]);
        head.dense_bias = Tensor::zeros(vec![5]);
        let feats = feature_batch(3, 8, 2);
        for scale in [1.0f32, 7.5, 1000.0] {
            let scaled = Tensor::from_f32(
                feats.shape().to_vec(),
                feats.as_f32().unwrap().iter().map(|&v| v * scale).collect(),
            )
            .unwrap();
            let probs = head_forward(&head, &scaled, false, &mut derive_rng(0, 0)).unwrap();
            for &p in probs.as_f32().unwrap() {
                assert!((p - 0.2).abs() < 1e-6, "scale {scale}");
            }
        }
    }

    #[test]
    fn same_seed_same_masks() {
        let head = tiny_head(10, 2, 0.5, HeadActivation::Softmax);
        let feats = feature_batch(4, 10, 3);
        let a = head_forward(&head, &feats, true, &mut derive_rng(42, 1)).unwrap();
        let b = head_forward(&head, &feats, true, &mut derive_rng(42, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_probs_give_ln2_loss_for_two_classes() {
        let mut head = tiny_head(4, 2, 0.0, HeadActivation::Softmax);
        head.dense_weights = Tensor::zeros(vec![4, 2]);
        head.dense_bias = Tensor::zeros(vec![2]);
        let feats = feature_batch(6, 4, 4);
        let labels = {
            let mut l = vec![0.0f32; 12];
            for row in 0..6 {
                l[row * 2 + row % 2] = 1.0;
            }
            Tensor::from_f32(vec![6, 2], l).unwrap()
        };
        let g = head_loss_grad(&head, &feats, &labels, false, &mut derive_rng(0, 0)).unwrap();
        assert!((g.loss - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn perfect_predictions_give_near_zero_loss_and_grads() {
        let mut head = tiny_head(2, 2, 0.0, HeadActivation::Softmax);
        // Strong diagonal weights so one-hot features produce saturated
        // probabilities.
        head.dense_weights =
            Tensor::from_f32(vec![2, 2], vec![60.0, -60.0, -60.0, 60.0]).unwrap();
        head.dense_bias = Tensor::zeros(vec![2]);
        let feats = Tensor::from_f32(vec![2, 1, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let labels = Tensor::from_f32(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let g = head_loss_grad(&head, &feats, &labels, false, &mut derive_rng(0, 0)).unwrap();
        assert!(g.loss < 1e-9);
        assert!(g.grad_weights.iter().all(|&v| v.abs() < 1e-9));
        assert!(g.grad_bias.iter().all(|&v| v.abs() < 1e-9));
    }

    fn synthetic_cache(n_per_class: usize, f: usize, separation: f64, seed: u64) -> FeatureCache {
        // Two blobs along a fixed direction; `seed` only drives the noise,
        // so train and validation sets share the class geometry.
        let mut dir_rng = derive_rng(0xd1e, 11);
        let direction: Vec<f64> = (0..f).map(|_| dir_rng.random_range(-1.0..1.0)).collect();
        let mut rng = derive_rng(seed, 12);
        let mut data = Vec::with_capacity(2 * n_per_class * f);
        let mut labels = vec![0.0f32; 2 * n_per_class * 2];
        for row in 0..2 * n_per_class {
            let class = row % 2;
            let sign = if class == 0 { -1.0 } else { 1.0 };
            for dir in direction.iter().take(f) {
                let noise: f64 = rng.random_range(-1.0..1.0);
                data.push((sign * separation * dir + noise) as f32);
            }
            labels[row * 2 + class] = 1.0;
        }
        let meta = CacheMeta {
            class_names: vec!["neg".into(), "pos".into()],
            backbone_fingerprint: "test".into(),
            preprocessing_id: "synthetic".into(),
        };
        FeatureCache {
            features: Tensor::from_f32(vec![2 * n_per_class, 1, 1, f], data).unwrap(),
            labels: Tensor::from_f32(vec![2 * n_per_class, 2], labels).unwrap(),
            class_names: meta.class_names,
            backbone_fingerprint: meta.backbone_fingerprint,
            preprocessing_id: meta.preprocessing_id,
        }
    }

    #[test]
    fn separable_blobs_train_to_high_accuracy() {
        let train = synthetic_cache(40, 32, 2.0, 5);
        let val = synthetic_cache(10, 32, 2.0, 6);
        let cfg = TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        };
        let (_, history) = train_pair(&train, &val, cfg);
        let last = history.epochs.last().unwrap();
        assert!(last.val_acc >= 0.95, "val accuracy {}", last.val_acc);
    }

    fn train_pair(
        a: &FeatureCache,
        b: &FeatureCache,
        cfg: TrainConfig,
    ) -> (HeadModel, TrainHistory) {
        train(a, b, HeadSpec::image(0.2), &cfg).unwrap()
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let train_cache = synthetic_cache(10, 8, 1.0, 7);
        let val_cache = synthetic_cache(4, 8, 1.0, 8);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 5,
            ..TrainConfig::default()
        };
        let (_, history) = train_pair(&train_cache, &val_cache, cfg);
        let first = &history.epochs[0];
        for e in &history.epochs {
            assert_eq!(e.train_loss, first.train_loss);
            assert_eq!(e.val_loss, first.val_loss);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let train_cache = synthetic_cache(10, 8, 1.0, 9);
        let val_cache = synthetic_cache(4, 8, 1.0, 10);
        let cfg = TrainConfig {
            epochs: 6,
            seed: 123,
            ..TrainConfig::default()
        };
        let (head_a, hist_a) = train_pair(&train_cache, &val_cache, cfg);
        let (head_b, hist_b) = train_pair(&train_cache, &val_cache, cfg);
        assert_eq!(head_a, head_b);
        assert_eq!(hist_a, hist_b);
        assert_eq!(hist_a.to_csv(), hist_b.to_csv());
    }

    #[test]
    fn class_mismatch_and_degenerate_errors() {
        let a = synthetic_cache(5, 4, 1.0, 1);
        let mut b = synthetic_cache(2, 4, 1.0, 2);
        b.class_names = vec!["x".into(), "y".into()];
        assert!(matches!(
            train(&a, &b, HeadSpec::image(0.5), &TrainConfig::default()),
            Err(TrainError::ClassMismatch(_))
        ));

        let mut degenerate = synthetic_cache(5, 4, 1.0, 3);
        // Rewrite all labels to class 0.
        let n = degenerate.sample_count();
        let mut labels = vec![0.0f32; n * 2];
        for row in 0..n {
            labels[row * 2] = 1.0;
        }
        degenerate.labels = Tensor::from_f32(vec![n, 2], labels).unwrap();
        let val = synthetic_cache(2, 4, 1.0, 4);
        assert!(matches!(
            train(&degenerate, &val, HeadSpec::image(0.5), &TrainConfig::default()),
            Err(TrainError::DegenerateDataset(_))
        ));
    }

    #[test]
    fn export_head_matches_eval_forward() {
        let head = tiny_head(12, 3, 0.25, HeadActivation::Softmax);
        let g = export_head(&head, "head");
        assert_eq!(g.validate().unwrap(), vec![3]);
        let feats = feature_batch(5, 12, 20);
        let direct = head_forward(&head, &feats, false, &mut derive_rng(0, 0)).unwrap();
        let via_graph = crate::engine::run(&g, &feats).unwrap();
        let a = direct.as_f32().unwrap();
        let b = via_graph.as_f32().unwrap();
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn audio_head_export_has_no_dropout_node() {
        let head = tiny_head(8, 2, 0.0, HeadActivation::Sigmoid);
        let g = export_head(&head, "audio-head");
        assert_eq!(g.nodes.len(), 3);
        assert!(!g
            .nodes
            .iter()
            .any(|n| matches!(n.op, NodeOp::DropoutMarker { .. })));
    }
}
