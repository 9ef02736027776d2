//! Dense tensors and the numeric kernels the rest of the crate computes with.
//!
//! Tensors are flat row-major buffers, either `f32` or symmetric-int8
//! quantized (`i8` values plus one positive scale, zero point fixed at 0).
//! Kernels take and return `f32` tensors; quantized weights are dequantized
//! by the execution plan before they reach a kernel. Convolutions and matrix
//! products accumulate in `f64` so results are deterministic across
//! platforms, and every constructed float tensor is checked finite so a NaN
//! cannot propagate silently.
//!
//! All kernels are pure functions of their inputs and safe to call from many
//! threads at once; the convolution kernels internally parallelize over
//! independent output rows, which cannot change the result.

use rayon::prelude::*;
use std::fmt;

/// Spatial padding mode for convolutions.
///
/// `Same` pads so the output spatial size is `ceil(in / stride)`, with the
/// extra pixel (when the total padding is odd) on the bottom/right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Pointwise (or row-wise, for softmax) nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Relu6,
    Sigmoid,
    /// Softmax over the last axis, computed with max-subtraction.
    Softmax,
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Relu6 => "relu6",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Softmax => "softmax",
        };
        f.write_str(s)
    }
}

#[derive(Debug)]
pub enum TensorError {
    /// Shapes do not line up for the requested kernel.
    ShapeMismatch { context: &'static str, detail: String },
    /// A shape or parameter is invalid on its own (zero dim, stride 0, ...).
    InvalidShape(String),
    /// A float buffer contains NaN or infinity.
    NonFinite { context: &'static str },
    /// A kernel was handed a quantized tensor where floats are required.
    QuantizedInput { context: &'static str },
    /// Quantized constructor arguments violate the symmetric-int8 contract.
    InvalidQuantization(String),
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { context, detail } => {
                write!(f, "shape mismatch in {context}: {detail}")
            }
            TensorError::InvalidShape(detail) => write!(f, "invalid shape: {detail}"),
            TensorError::NonFinite { context } => {
                write!(f, "non-finite value produced by {context}")
            }
            TensorError::QuantizedInput { context } => {
                write!(f, "{context} requires a float32 tensor, got quantized int8")
            }
            TensorError::InvalidQuantization(detail) => {
                write!(f, "invalid quantization: {detail}")
            }
        }
    }
}

impl std::error::Error for TensorError {}

/// Element storage: plain floats or symmetric int8 with a per-tensor scale.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    QInt8 { values: Vec<i8>, scale: f32 },
}

/// N-dimensional row-major numeric array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    /// Build a float tensor, validating length and finiteness.
    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Tensor, TensorError> {
        let len: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(TensorError::InvalidShape(format!(
                "zero-sized dimension in {shape:?}"
            )));
        }
        if len != data.len() {
            return Err(TensorError::InvalidShape(format!(
                "shape {:?} implies {} elements, buffer has {}",
                shape,
                len,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite {
                context: "tensor construction",
            });
        }
        Ok(Tensor {
            shape,
            data: TensorData::F32(data),
        })
    }

    /// Build a quantized tensor. Values must stay in `[-127, 127]` and the
    /// scale must be a positive finite float.
    pub fn from_qint8(
        shape: Vec<usize>,
        values: Vec<i8>,
        scale: f32,
    ) -> Result<Tensor, TensorError> {
        let len: usize = shape.iter().product();
        if shape.contains(&0) || len != values.len() {
            return Err(TensorError::InvalidShape(format!(
                "shape {:?} does not match {} int8 values",
                shape,
                values.len()
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(TensorError::InvalidQuantization(format!(
                "scale must be positive and finite, got {scale}"
            )));
        }
        if values.contains(&i8::MIN) {
            return Err(TensorError::InvalidQuantization(
                "values must lie in [-127, 127]".into(),
            ));
        }
        Ok(Tensor {
            shape,
            data: TensorData::QInt8 { values, scale },
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: TensorData::F32(vec![0.0; len]),
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Result<Tensor, TensorError> {
        let len = shape.iter().product();
        Tensor::from_f32(shape, vec![value; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.data, TensorData::QInt8 { .. })
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// Float view; errors when the tensor is quantized.
    pub fn as_f32(&self) -> Result<&[f32], TensorError> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::QInt8 { .. } => Err(TensorError::QuantizedInput {
                context: "as_f32",
            }),
        }
    }

    /// Quantized view: `(values, scale)`.
    pub fn as_qint8(&self) -> Option<(&[i8], f32)> {
        match &self.data {
            TensorData::QInt8 { values, scale } => Some((values, *scale)),
            TensorData::F32(_) => None,
        }
    }

    /// Reinterpret the buffer under a new shape of the same total length.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        let len: usize = shape.iter().product();
        if len != self.len() || shape.contains(&0) {
            return Err(TensorError::InvalidShape(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Serialized byte length in the container blob layout: 4 bytes per f32,
    /// or 1 byte per i8 plus a trailing f32 scale.
    pub fn byte_len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => 4 * v.len(),
            TensorData::QInt8 { values, .. } => values.len() + 4,
        }
    }
}

fn rank4<'a>(t: &'a Tensor, context: &'static str) -> Result<(&'a [f32], [usize; 4]), TensorError> {
    let data = t.as_f32().map_err(|_| TensorError::QuantizedInput { context })?;
    match *t.shape() {
        [a, b, c, d] => Ok((data, [a, b, c, d])),
        _ => Err(TensorError::ShapeMismatch {
            context,
            detail: format!("expected rank-4 tensor, got shape {:?}", t.shape()),
        }),
    }
}

/// Output size and leading pad for one spatial axis.
fn conv_axis(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize), TensorError> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if input < kernel {
                return Err(TensorError::InvalidShape(format!(
                    "valid padding needs input >= kernel, got {input} < {kernel}"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
    }
}

fn check_bias(bias: &Tensor, channels: usize, context: &'static str) -> Result<(), TensorError> {
    if bias.shape() != [channels] {
        return Err(TensorError::ShapeMismatch {
            context,
            detail: format!(
                "bias shape {:?} does not match {} output channels",
                bias.shape(),
                channels
            ),
        });
    }
    Ok(())
}

/// 2-D convolution. Input is NHWC, kernel is HWIO, one stride for both
/// spatial axes. Accumulates in f64.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Tensor, TensorError> {
    const CTX: &str = "conv2d";
    if stride == 0 {
        return Err(TensorError::InvalidShape("stride must be >= 1".into()));
    }
    let (in_data, [n, ih, iw, ic]) = rank4(input, CTX)?;
    let (k_data, [kh, kw, kic, oc]) = rank4(kernel, CTX)?;
    if kic != ic {
        return Err(TensorError::ShapeMismatch {
            context: CTX,
            detail: format!("input has {ic} channels, kernel expects {kic}"),
        });
    }
    let bias_data = bias.as_f32().map_err(|_| TensorError::QuantizedInput { context: CTX })?;
    check_bias(bias, oc, CTX)?;

    let (oh, pad_top) = conv_axis(ih, kh, stride, padding)?;
    let (ow, pad_left) = conv_axis(iw, kw, stride, padding)?;

    let mut out = vec![0.0f32; n * oh * ow * oc];
    out.par_chunks_mut(ow * oc).enumerate().for_each(|(row, chunk)| {
        let b = row / oh;
        let oy = row % oh;
        for ox in 0..ow {
            for o in 0..oc {
                let mut acc = f64::from(bias_data[o]);
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad_top as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad_left as isize;
                        if ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        let in_base = ((b * ih + iy as usize) * iw + ix as usize) * ic;
                        let k_base = ((ky * kw + kx) * kic) * oc + o;
                        for c in 0..ic {
                            acc += f64::from(in_data[in_base + c])
                                * f64::from(k_data[k_base + c * oc]);
                        }
                    }
                }
                chunk[ox * oc + o] = acc as f32;
            }
        }
    });
    Tensor::from_f32(vec![n, oh, ow, oc], out).map_err(|_| TensorError::NonFinite { context: CTX })
}

/// Depthwise 2-D convolution: kernel is (kh, kw, C, 1) and output channel c
/// depends only on input channel c.
pub fn depthwise_conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Tensor, TensorError> {
    const CTX: &str = "depthwise_conv2d";
    if stride == 0 {
        return Err(TensorError::InvalidShape("stride must be >= 1".into()));
    }
    let (in_data, [n, ih, iw, ic]) = rank4(input, CTX)?;
    let (k_data, [kh, kw, kc, mult]) = rank4(kernel, CTX)?;
    if kc != ic || mult != 1 {
        return Err(TensorError::ShapeMismatch {
            context: CTX,
            detail: format!(
                "kernel shape ({kh},{kw},{kc},{mult}) does not match {ic} input channels"
            ),
        });
    }
    let bias_data = bias.as_f32().map_err(|_| TensorError::QuantizedInput { context: CTX })?;
    check_bias(bias, ic, CTX)?;

    let (oh, pad_top) = conv_axis(ih, kh, stride, padding)?;
    let (ow, pad_left) = conv_axis(iw, kw, stride, padding)?;

    let mut out = vec![0.0f32; n * oh * ow * ic];
    out.par_chunks_mut(ow * ic).enumerate().for_each(|(row, chunk)| {
        let b = row / oh;
        let oy = row % oh;
        for ox in 0..ow {
            for c in 0..ic {
                let mut acc = f64::from(bias_data[c]);
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad_top as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad_left as isize;
                        if ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        let iv = in_data[((b * ih + iy as usize) * iw + ix as usize) * ic + c];
                        let kv = k_data[(ky * kw + kx) * ic + c];
                        acc += f64::from(iv) * f64::from(kv);
                    }
                }
                chunk[ox * ic + c] = acc as f32;
            }
        }
    });
    Tensor::from_f32(vec![n, oh, ow, ic], out).map_err(|_| TensorError::NonFinite { context: CTX })
}

/// Fully connected layer: `(N,F) x (F,K) + (K,) -> (N,K)`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    const CTX: &str = "dense";
    let in_data = input.as_f32().map_err(|_| TensorError::QuantizedInput { context: CTX })?;
    let w_data = weights.as_f32().map_err(|_| TensorError::QuantizedInput { context: CTX })?;
    let bias_data = bias.as_f32().map_err(|_| TensorError::QuantizedInput { context: CTX })?;
    let (n, f) = match *input.shape() {
        [n, f] => (n, f),
        _ => {
            return Err(TensorError::ShapeMismatch {
                context: CTX,
                detail: format!("expected rank-2 input, got {:?}", input.shape()),
            })
        }
    };
    let (wf, k) = match *weights.shape() {
        [wf, k] => (wf, k),
        _ => {
            return Err(TensorError::ShapeMismatch {
                context: CTX,
                detail: format!("expected rank-2 weights, got {:?}", weights.shape()),
            })
        }
    };
    if wf != f {
        return Err(TensorError::ShapeMismatch {
            context: CTX,
            detail: format!("input features {f} vs weight rows {wf}"),
        });
    }
    check_bias(bias, k, CTX)?;

    let mut out = vec![0.0f32; n * k];
    out.par_chunks_mut(k).enumerate().for_each(|(row, chunk)| {
        let in_row = &in_data[row * f..(row + 1) * f];
        for (j, slot) in chunk.iter_mut().enumerate() {
            let mut acc = f64::from(bias_data[j]);
            for (i, &x) in in_row.iter().enumerate() {
                acc += f64::from(x) * f64::from(w_data[i * k + j]);
            }
            *slot = acc as f32;
        }
    });
    Tensor::from_f32(vec![n, k], out).map_err(|_| TensorError::NonFinite { context: CTX })
}

/// Global average pooling: `(N,H,W,C) -> (N,C)`, mean over the spatial axes.
pub fn global_average_pool(input: &Tensor) -> Result<Tensor, TensorError> {
    const CTX: &str = "global_average_pool";
    let (data, [n, h, w, c]) = rank4(input, CTX)?;
    let area = (h * w) as f64;
    let mut out = vec![0.0f32; n * c];
    for b in 0..n {
        for ch in 0..c {
            let mut acc = 0.0f64;
            for y in 0..h {
                for x in 0..w {
                    acc += f64::from(data[((b * h + y) * w + x) * c + ch]);
                }
            }
            out[b * c + ch] = (acc / area) as f32;
        }
    }
    Tensor::from_f32(vec![n, c], out).map_err(|_| TensorError::NonFinite { context: CTX })
}

/// Apply a nonlinearity. Softmax normalizes over the last axis.
pub fn activation(input: &Tensor, kind: ActivationKind) -> Result<Tensor, TensorError> {
    const CTX: &str = "activation";
    let data = input.as_f32().map_err(|_| TensorError::QuantizedInput { context: CTX })?;
    let out = match kind {
        ActivationKind::Relu => data.iter().map(|&x| x.max(0.0)).collect(),
        ActivationKind::Relu6 => data.iter().map(|&x| x.clamp(0.0, 6.0)).collect(),
        ActivationKind::Sigmoid => data
            .iter()
            .map(|&x| (1.0 / (1.0 + (-f64::from(x)).exp())) as f32)
            .collect(),
        ActivationKind::Softmax => {
            let width = *input.shape().last().ok_or_else(|| TensorError::ShapeMismatch {
                context: CTX,
                detail: "softmax needs at least one axis".into(),
            })?;
            let mut out = vec![0.0f32; data.len()];
            for (row_in, row_out) in data.chunks(width).zip(out.chunks_mut(width)) {
                let max = row_in.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                let mut sum = 0.0f64;
                for (o, &x) in row_out.iter_mut().zip(row_in) {
                    let e = f64::from(x - max).exp();
                    *o = e as f32;
                    sum += e;
                }
                for o in row_out.iter_mut() {
                    *o = (f64::from(*o) / sum) as f32;
                }
            }
            out
        }
    };
    Tensor::from_f32(input.shape().to_vec(), out)
        .map_err(|_| TensorError::NonFinite { context: CTX })
}

/// Elementwise sum of two tensors of identical shape.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    const CTX: &str = "add";
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            context: CTX,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let av = a.as_f32().map_err(|_| TensorError::QuantizedInput { context: CTX })?;
    let bv = b.as_f32().map_err(|_| TensorError::QuantizedInput { context: CTX })?;
    let out = av.iter().zip(bv).map(|(&x, &y)| x + y).collect();
    Tensor::from_f32(a.shape().to_vec(), out).map_err(|_| TensorError::NonFinite { context: CTX })
}

/// Collapse all non-batch axes: `(N, d1, ..., dk) -> (N, d1*...*dk)`.
pub fn flatten(input: &Tensor) -> Result<Tensor, TensorError> {
    let shape = input.shape();
    if shape.len() < 2 {
        return Err(TensorError::ShapeMismatch {
            context: "flatten",
            detail: format!("expected rank >= 2, got {shape:?}"),
        });
    }
    let n = shape[0];
    let rest: usize = shape[1..].iter().product();
    input.reshape(vec![n, rest])
}
