//! Post-training symmetric int8 weight quantization.
//!
//! Per-tensor scheme: `scale = max|w| / 127` (scale 1 for an all-zero
//! tensor), `q = round(w / scale)` with round-half-away-from-zero, zero point
//! fixed at 0. Only convolution and dense weight kernels are quantized;
//! biases stay float32. Inference dequantizes (`w = scale * q`) and runs the
//! float kernels, so the roundtrip error per weight is bounded by `scale/2`.

use crate::model::{ModelError, ModelGraph, NodeOp, META_QUANTIZED};
use crate::tensor::{Tensor, TensorError};
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub enum QuantError {
    /// The graph already carries int8 weights.
    AlreadyQuantized(String),
    Io(String, std::io::Error),
    Model(ModelError),
    Tensor(TensorError),
}

impl fmt::Display for QuantError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantError::AlreadyQuantized(name) => {
                write!(f, "model '{name}' is already quantized")
            }
            QuantError::Io(path, e) => write!(f, "{path}: {e}"),
            QuantError::Model(e) => write!(f, "{e}"),
            QuantError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for QuantError {}

impl From<ModelError> for QuantError {
    fn from(e: ModelError) -> Self {
        QuantError::Model(e)
    }
}

/// Quantize one float tensor to symmetric int8.
pub fn quantize_blob(t: &Tensor) -> Result<Tensor, QuantError> {
    let values = t.as_f32().map_err(QuantError::Tensor)?;
    let max_abs = values.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    let scale = if max_abs == 0.0 { 1.0 } else { max_abs / 127.0 };
    let q: Vec<i8> = values
        .iter()
        .map(|&v| (v / scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    Tensor::from_qint8(t.shape().to_vec(), q, scale).map_err(QuantError::Tensor)
}

/// Reconstruct floats from a quantized tensor: `scale * q`.
pub fn dequantize_blob(t: &Tensor) -> Result<Tensor, TensorError> {
    let (values, scale) = t
        .as_qint8()
        .ok_or(TensorError::QuantizedInput {
            context: "dequantize_blob (tensor is already float)",
        })?;
    let floats = values.iter().map(|&q| f32::from(q) * scale).collect();
    Tensor::from_f32(t.shape().to_vec(), floats)
}

/// Quantize every conv / depthwise / dense weight kernel in the graph,
/// leaving biases float. The result still validates and is flagged in
/// metadata.
pub fn quantize_model(graph: &ModelGraph) -> Result<ModelGraph, QuantError> {
    if graph.is_quantized() {
        return Err(QuantError::AlreadyQuantized(graph.name.clone()));
    }
    // First weight ref of a conv/dense node is the kernel; the second is the
    // bias, which stays float.
    let mut kernel_ids: BTreeSet<&str> = BTreeSet::new();
    for node in &graph.nodes {
        if matches!(
            node.op,
            NodeOp::Conv2d { .. } | NodeOp::DepthwiseConv2d { .. } | NodeOp::Dense
        ) {
            if let Some(id) = node.weight_refs.first() {
                kernel_ids.insert(id);
            }
        }
    }
    let mut out = graph.clone();
    for id in kernel_ids {
        let q = quantize_blob(&graph.weights[id])?;
        out.weights.insert(id.to_string(), q);
    }
    out.metadata
        .insert(META_QUANTIZED.to_string(), "int8-weights".to_string());
    out.validate()?;
    Ok(out)
}

/// File sizes before/after quantization and the relative reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeReport {
    pub before_bytes: u64,
    pub after_bytes: u64,
}

impl SizeReport {
    /// `1 - after/before`, in `[0, 1]` for any real compression.
    pub fn reduction(&self) -> f64 {
        1.0 - self.after_bytes as f64 / self.before_bytes as f64
    }

    /// Structured text form written next to quantized models.
    pub fn to_text(&self) -> String {
        format!(
            "before_bytes {}\nafter_bytes {}\nreduction_percent {:.1}\n",
            self.before_bytes,
            self.after_bytes,
            self.reduction() * 100.0
        )
    }
}

impl fmt::Display for SizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>12}", "", "bytes")?;
        writeln!(f, "{:<12} {:>12}", "before", self.before_bytes)?;
        writeln!(f, "{:<12} {:>12}", "after", self.after_bytes)?;
        write!(f, "{:<12} {:>11.1}%", "reduction", self.reduction() * 100.0)
    }
}

/// Compare two model files on disk.
pub fn size_report(before: &Path, after: &Path) -> Result<SizeReport, QuantError> {
    let len = |p: &Path| -> Result<u64, QuantError> {
        Ok(std::fs::metadata(p)
            .map_err(|e| QuantError::Io(p.display().to_string(), e))?
            .len())
    };
    Ok(SizeReport {
        before_bytes: len(before)?,
        after_bytes: len(after)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GraphNode;

    #[test]
    fn quantize_known_values() {
        let t = Tensor::from_f32(vec![3], vec![0.5, -1.0, 1.27]).unwrap();
        let q = quantize_blob(&t).unwrap();
        let (values, scale) = q.as_qint8().unwrap();
        assert!((scale - 0.01).abs() < 1e-7);
        assert_eq!(values, &[50, -100, 127]);
    }

    #[test]
    fn all_zero_tensor_gets_unit_scale() {
        let t = Tensor::zeros(vec![4]);
        let q = quantize_blob(&t).unwrap();
        let (values, scale) = q.as_qint8().unwrap();
        assert_eq!(scale, 1.0);
        assert!(values.iter().all(|&v| v == 0));
        let back = dequantize_blob(&q).unwrap();
        assert!(back.as_f32().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dequantize_known_values() {
        let q = Tensor::from_qint8(vec![3], vec![50, -100, 127], 0.01).unwrap();
        let t = dequantize_blob(&q).unwrap();
        let v = t.as_f32().unwrap();
        assert!((v[0] - 0.5).abs() < 1e-6);
        assert!((v[1] + 1.0).abs() < 1e-6);
        assert!((v[2] - 1.27).abs() < 1e-6);
    }

    #[test]
    fn roundtrip_error_bounded_by_half_scale() {
        let values: Vec<f32> = (0..512).map(|i| ((i * 37 % 101) as f32 - 50.0) * 0.013).collect();
        let t = Tensor::from_f32(vec![512], values.clone()).unwrap();
        let q = quantize_blob(&t).unwrap();
        let (_, scale) = q.as_qint8().unwrap();
        let back = dequantize_blob(&q).unwrap();
        for (orig, rec) in values.iter().zip(back.as_f32().unwrap()) {
            assert!((orig - rec).abs() <= scale / 2.0 + 1e-9);
        }
    }

    fn small_model() -> ModelGraph {
        let mut g = ModelGraph::new("m", vec![4]);
        g.weights.insert(
            "w".into(),
            Tensor::from_f32(vec![4, 2], vec![0.4, -0.2, 0.9, 0.1, -0.7, 0.3, 0.05, -0.6]).unwrap(),
        );
        g.weights
            .insert("b".into(), Tensor::from_f32(vec![2], vec![0.1, -0.1]).unwrap());
        g.nodes.push(GraphNode::new(
            "fc",
            NodeOp::Dense,
            vec![],
            vec!["w".into(), "b".into()],
        ));
        g
    }

    #[test]
    fn quantize_model_converts_kernels_not_biases() {
        let g = small_model();
        let q = quantize_model(&g).unwrap();
        assert!(q.weights["w"].is_quantized());
        assert!(!q.weights["b"].is_quantized());
        assert!(q.metadata.contains_key(META_QUANTIZED));
        assert!(q.validate().is_ok());
    }

    #[test]
    fn double_quantize_is_error() {
        let g = small_model();
        let q = quantize_model(&g).unwrap();
        assert!(matches!(
            quantize_model(&q),
            Err(QuantError::AlreadyQuantized(_))
        ));
    }

    #[test]
    fn requantizing_dequantized_weights_is_stable() {
        let g = small_model();
        let q1 = quantize_model(&g).unwrap();
        let deq = dequantize_blob(&q1.weights["w"]).unwrap();
        let q2 = quantize_blob(&deq).unwrap();
        assert_eq!(q1.weights["w"].as_qint8().unwrap().0, q2.as_qint8().unwrap().0);
    }

    #[test]
    fn reduction_matches_reported_ratio() {
        let r = SizeReport {
            before_bytes: 8_900_000,
            after_bytes: 2_300_000,
        };
        assert!((r.reduction() - 0.7416).abs() < 1e-3);
        let same = SizeReport {
            before_bytes: 100,
            after_bytes: 100,
        };
        assert_eq!(same.reduction(), 0.0);
    }
}
