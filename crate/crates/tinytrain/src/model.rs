//! Serializable operator graphs and the `.ttml` container format.
//!
//! A [`ModelGraph`] is an ordered list of nodes (a chain or a single-input /
//! single-output DAG) plus named weight blobs and string metadata. Graphs are
//! immutable once loaded and can be shared freely across threads.
//!
//! # Container layout
//!
//! `.ttml` files are little-endian and bit-exact:
//!
//! ```text
//! magic   b"TTML"
//! version u32
//! m_len   u64                      length of the manifest in bytes
//! manifest UTF-8 text              nodes, params, shapes, blob offsets, metadata
//! blobs   raw little-endian data   f32: IEEE-754 values
//!                                  qi8: i8 values followed by one f32 scale
//! ```
//!
//! Blob offsets are relative to the start of the blob section and blobs are
//! written in blob-id order, so identical graphs serialize to identical
//! bytes.
//!
//! # Weight import
//!
//! Pretrained weights from other ecosystems can be imported by writing blobs
//! in this layout: convolution kernels are HWIO (`height, width, in, out`),
//! depthwise kernels are `(h, w, channels, 1)`, dense weights are `(in, out)`,
//! biases are rank-1, and batchnorm must be folded into the preceding
//! convolution. No vendor-format converter ships with this crate.

use crate::tensor::{ActivationKind, Padding, Tensor, TensorData};
use crate::util::{esc, unesc};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

pub const TTML_MAGIC: &[u8; 4] = b"TTML";
pub const TTML_VERSION: u32 = 1;

/// Metadata key holding the comma-separated (escaped) class labels.
pub const META_CLASSES: &str = "classes";
/// Metadata key naming the preprocessing the model expects at inference.
pub const META_PREPROCESSING: &str = "preprocessing";
/// Metadata key set by the quantizer.
pub const META_QUANTIZED: &str = "quantized";
/// Metadata key recording the backbone fingerprint a packaged model used.
pub const META_FINGERPRINT: &str = "backbone_fingerprint";
/// Metadata key carrying the full run configuration, verbatim.
pub const META_RUN_CONFIG: &str = "run_config";

#[derive(Debug)]
pub enum ModelError {
    Io(String, std::io::Error),
    /// Bad magic, bad version, torn manifest, or truncated blob section.
    FormatError(String),
    /// The graph is structurally invalid; carries the offending node id.
    ValidationError { node: String, detail: String },
    /// Truncation would leave no nodes or a multi-headed graph.
    InvalidTruncation(String),
    /// Backbone/head shapes do not line up in `compose`.
    ShapeMismatch(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Io(path, e) => write!(f, "{path}: {e}"),
            ModelError::FormatError(detail) => write!(f, "model format error: {detail}"),
            ModelError::ValidationError { node, detail } => {
                write!(f, "invalid graph at node '{node}': {detail}")
            }
            ModelError::InvalidTruncation(detail) => write!(f, "invalid truncation: {detail}"),
            ModelError::ShapeMismatch(detail) => write!(f, "shape mismatch: {detail}"),
        }
    }
}

impl std::error::Error for ModelError {}

/// Operator carried by a graph node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeOp {
    Conv2d { stride: usize, padding: Padding },
    DepthwiseConv2d { stride: usize, padding: Padding },
    Dense,
    GlobalAveragePool,
    Activation { kind: ActivationKind },
    Add,
    /// Records where dropout sat during training; identity at inference.
    DropoutMarker { rate: f32 },
    Flatten,
}

impl NodeOp {
    /// Number of weight blobs the op consumes.
    fn weight_arity(&self) -> usize {
        match self {
            NodeOp::Conv2d { .. } | NodeOp::DepthwiseConv2d { .. } | NodeOp::Dense => 2,
            _ => 0,
        }
    }

    /// Number of node inputs the op consumes (0 or 1 means "one tensor",
    /// which may be the graph input when the input list is empty).
    fn input_arity(&self) -> usize {
        match self {
            NodeOp::Add => 2,
            _ => 1,
        }
    }
}

/// One operator in a graph. An empty `inputs` list means the node reads the
/// graph input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: String,
    pub op: NodeOp,
    pub inputs: Vec<String>,
    pub weight_refs: Vec<String>,
}

impl GraphNode {
    pub fn new(
        id: impl Into<String>,
        op: NodeOp,
        inputs: Vec<String>,
        weight_refs: Vec<String>,
    ) -> GraphNode {
        GraphNode {
            id: id.into(),
            op,
            inputs,
            weight_refs,
        }
    }
}

/// Ordered operator graph plus weight blobs, the unit of serialization.
///
/// `input_shape` holds the per-sample dimensions; the batch dimension is a
/// wildcard fixed at run time.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub nodes: Vec<GraphNode>,
    pub weights: BTreeMap<String, Tensor>,
    pub input_shape: Vec<usize>,
    pub metadata: BTreeMap<String, String>,
}

impl ModelGraph {
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>) -> ModelGraph {
        ModelGraph {
            name: name.into(),
            nodes: Vec::new(),
            weights: BTreeMap::new(),
            input_shape,
            metadata: BTreeMap::new(),
        }
    }

    /// Store the ordered class labels in graph metadata.
    pub fn set_classes(&mut self, names: &[String]) {
        let joined: Vec<String> = names.iter().map(|n| esc(n)).collect();
        self.metadata
            .insert(META_CLASSES.to_string(), joined.join(","));
    }

    /// Ordered class labels, when present.
    pub fn classes(&self) -> Option<Vec<String>> {
        let raw = self.metadata.get(META_CLASSES)?;
        raw.split(',').map(unesc).collect()
    }

    pub fn is_quantized(&self) -> bool {
        self.metadata.contains_key(META_QUANTIZED)
            || self.weights.values().any(Tensor::is_quantized)
    }

    /// Id of the node producing the graph output, i.e. the unique node no
    /// other node consumes.
    pub fn output_node(&self) -> Result<&GraphNode, ModelError> {
        let consumed: HashSet<&str> = self
            .nodes
            .iter()
            .flat_map(|n| n.inputs.iter().map(String::as_str))
            .collect();
        let mut terminals = self.nodes.iter().filter(|n| !consumed.contains(n.id.as_str()));
        let first = terminals.next().ok_or_else(|| ModelError::ValidationError {
            node: "<graph>".into(),
            detail: "graph has no nodes".into(),
        })?;
        if let Some(extra) = terminals.next() {
            return Err(ModelError::ValidationError {
                node: extra.id.clone(),
                detail: format!("multiple outputs: '{}' and '{}'", first.id, extra.id),
            });
        }
        Ok(first)
    }

    /// Check structure and run shape inference end to end, returning the
    /// per-sample output shape.
    pub fn validate(&self) -> Result<Vec<usize>, ModelError> {
        if self.nodes.is_empty() {
            return Err(ModelError::ValidationError {
                node: "<graph>".into(),
                detail: "graph has no nodes".into(),
            });
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(ModelError::ValidationError {
                node: "<graph>".into(),
                detail: format!("bad input shape {:?}", self.input_shape),
            });
        }

        let mut shapes: HashMap<&str, Vec<usize>> = HashMap::new();
        for node in &self.nodes {
            if shapes.contains_key(node.id.as_str()) {
                return Err(ModelError::ValidationError {
                    node: node.id.clone(),
                    detail: "duplicate node id".into(),
                });
            }
            let err = |detail: String| ModelError::ValidationError {
                node: node.id.clone(),
                detail,
            };

            // Resolve input shapes; an empty list reads the graph input.
            let in_shapes: Vec<&[usize]> = if node.inputs.is_empty() {
                vec![&self.input_shape]
            } else {
                let mut v = Vec::with_capacity(node.inputs.len());
                for id in &node.inputs {
                    let s = shapes
                        .get(id.as_str())
                        .ok_or_else(|| err(format!("input '{id}' is not an earlier node")))?;
                    v.push(s.as_slice());
                }
                v
            };
            if node.inputs.len() > node.op.input_arity()
                || (node.op.input_arity() == 2 && in_shapes.len() != 2)
            {
                return Err(err(format!(
                    "op takes {} input(s), got {}",
                    node.op.input_arity(),
                    in_shapes.len()
                )));
            }
            if node.weight_refs.len() != node.op.weight_arity() {
                return Err(err(format!(
                    "op takes {} weight blob(s), got {}",
                    node.op.weight_arity(),
                    node.weight_refs.len()
                )));
            }
            let blob = |i: usize| -> Result<&Tensor, ModelError> {
                let id = &node.weight_refs[i];
                self.weights
                    .get(id)
                    .ok_or_else(|| ModelError::ValidationError {
                        node: node.id.clone(),
                        detail: format!("missing weight blob '{id}'"),
                    })
            };

            let out = match &node.op {
                NodeOp::Conv2d { stride, padding } => {
                    let (kshape, x) = (blob(0)?.shape().to_vec(), in_shapes[0]);
                    infer_conv(x, &kshape, *stride, *padding, false)
                        .map_err(&err)?
                }
                NodeOp::DepthwiseConv2d { stride, padding } => {
                    let (kshape, x) = (blob(0)?.shape().to_vec(), in_shapes[0]);
                    infer_conv(x, &kshape, *stride, *padding, true).map_err(&err)?
                }
                NodeOp::Dense => {
                    let w = blob(0)?.shape().to_vec();
                    let x = in_shapes[0];
                    if x.len() != 1 {
                        return Err(err(format!(
                            "dense needs a rank-1 per-sample input (use flatten or pooling first), got {x:?}"
                        )));
                    }
                    if w.len() != 2 || w[0] != x[0] {
                        return Err(err(format!(
                            "dense weights {w:?} do not match input features {}",
                            x[0]
                        )));
                    }
                    vec![w[1]]
                }
                NodeOp::GlobalAveragePool => {
                    let x = in_shapes[0];
                    if x.len() != 3 {
                        return Err(err(format!(
                            "global average pool needs (h, w, c) input, got {x:?}"
                        )));
                    }
                    vec![x[2]]
                }
                NodeOp::Activation { .. } | NodeOp::DropoutMarker { .. } => in_shapes[0].to_vec(),
                NodeOp::Add => {
                    if in_shapes[0] != in_shapes[1] {
                        return Err(err(format!(
                            "add inputs differ: {:?} vs {:?}",
                            in_shapes[0], in_shapes[1]
                        )));
                    }
                    in_shapes[0].to_vec()
                }
                NodeOp::Flatten => vec![in_shapes[0].iter().product()],
            };
            shapes.insert(node.id.as_str(), out);
        }

        let output = self.output_node()?;
        Ok(shapes[output.id.as_str()].clone())
    }

    /// Drop the final `drop_last` nodes (and any weight blobs they alone
    /// referenced).
    pub fn truncate(&self, drop_last: usize) -> Result<ModelGraph, ModelError> {
        if drop_last == 0 {
            return Err(ModelError::InvalidTruncation("drop_last must be >= 1".into()));
        }
        if drop_last >= self.nodes.len() {
            return Err(ModelError::InvalidTruncation(format!(
                "cannot drop {} of {} nodes",
                drop_last,
                self.nodes.len()
            )));
        }
        let kept = &self.nodes[..self.nodes.len() - drop_last];
        let referenced: HashSet<&str> = kept
            .iter()
            .flat_map(|n| n.weight_refs.iter().map(String::as_str))
            .collect();
        let out = ModelGraph {
            name: self.name.clone(),
            nodes: kept.to_vec(),
            weights: self
                .weights
                .iter()
                .filter(|(id, _)| referenced.contains(id.as_str()))
                .map(|(id, t)| (id.clone(), t.clone()))
                .collect(),
            input_shape: self.input_shape.clone(),
            metadata: self.metadata.clone(),
        };
        out.validate().map_err(|e| {
            ModelError::InvalidTruncation(format!("cut leaves an invalid graph: {e}"))
        })?;
        Ok(out)
    }
}

fn infer_conv(
    x: &[usize],
    kshape: &[usize],
    stride: usize,
    padding: Padding,
    depthwise: bool,
) -> Result<Vec<usize>, String> {
    if x.len() != 3 {
        return Err(format!("convolution needs (h, w, c) input, got {x:?}"));
    }
    if kshape.len() != 4 {
        return Err(format!("kernel must be rank 4, got {kshape:?}"));
    }
    if stride == 0 {
        return Err("stride must be >= 1".into());
    }
    let (h, w, c) = (x[0], x[1], x[2]);
    let (kh, kw) = (kshape[0], kshape[1]);
    let oc = if depthwise {
        if kshape[2] != c || kshape[3] != 1 {
            return Err(format!(
                "depthwise kernel {kshape:?} does not match {c} channels"
            ));
        }
        c
    } else {
        if kshape[2] != c {
            return Err(format!(
                "kernel expects {} input channels, input has {c}",
                kshape[2]
            ));
        }
        kshape[3]
    };
    let axis = |n: usize, k: usize| -> Result<usize, String> {
        match padding {
            Padding::Same => Ok(n.div_ceil(stride)),
            Padding::Valid => {
                if n < k {
                    Err(format!("valid padding needs input >= kernel ({n} < {k})"))
                } else {
                    Ok((n - k) / stride + 1)
                }
            }
        }
    };
    Ok(vec![axis(h, kh)?, axis(w, kw)?, oc])
}

/// Join `backbone` and `head` into one graph. The head's graph-input nodes
/// are rewired to the backbone's output; metadata is merged with the head
/// winning on conflicts.
pub fn compose(backbone: &ModelGraph, head: &ModelGraph) -> Result<ModelGraph, ModelError> {
    let backbone_out = backbone.validate()?;
    head.validate()?;
    if backbone_out != head.input_shape {
        return Err(ModelError::ShapeMismatch(format!(
            "backbone produces {:?}, head expects {:?}",
            backbone_out, head.input_shape
        )));
    }
    let output_id = backbone.output_node()?.id.clone();

    let node_ids: HashSet<&str> = backbone.nodes.iter().map(|n| n.id.as_str()).collect();
    let blob_ids: HashSet<&str> = backbone.weights.keys().map(String::as_str).collect();
    let rename = |mut id: String, taken: &HashSet<&str>| -> String {
        while taken.contains(id.as_str()) {
            id.push_str("_h");
        }
        id
    };
    let node_map: HashMap<String, String> = head
        .nodes
        .iter()
        .map(|n| (n.id.clone(), rename(n.id.clone(), &node_ids)))
        .collect();
    let blob_map: HashMap<String, String> = head
        .weights
        .keys()
        .map(|id| (id.clone(), rename(id.clone(), &blob_ids)))
        .collect();

    let mut nodes = backbone.nodes.clone();
    for node in &head.nodes {
        let inputs = if node.inputs.is_empty() {
            vec![output_id.clone()]
        } else {
            node.inputs.iter().map(|i| node_map[i].clone()).collect()
        };
        nodes.push(GraphNode {
            id: node_map[&node.id].clone(),
            op: node.op.clone(),
            inputs,
            weight_refs: node.weight_refs.iter().map(|w| blob_map[w].clone()).collect(),
        });
    }

    let mut weights = backbone.weights.clone();
    for (id, t) in &head.weights {
        weights.insert(blob_map[id].clone(), t.clone());
    }
    let mut metadata = backbone.metadata.clone();
    for (k, v) in &head.metadata {
        metadata.insert(k.clone(), v.clone());
    }

    let composed = ModelGraph {
        name: format!("{}+{}", backbone.name, head.name),
        nodes,
        weights,
        input_shape: backbone.input_shape.clone(),
        metadata,
    };
    composed.validate()?;
    Ok(composed)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

fn fmt_shape(shape: &[usize]) -> String {
    shape
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_shape(s: &str) -> Result<Vec<usize>, ModelError> {
    s.split(',')
        .map(|d| {
            d.parse::<usize>()
                .map_err(|_| ModelError::FormatError(format!("bad shape component '{d}'")))
        })
        .collect()
}

fn fmt_id_list(ids: &[String]) -> String {
    if ids.is_empty() {
        "-".to_string()
    } else {
        ids.iter().map(|i| esc(i)).collect::<Vec<_>>().join(",")
    }
}

fn parse_id_list(s: &str) -> Result<Vec<String>, ModelError> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| unesc(p).ok_or_else(|| ModelError::FormatError(format!("bad escape in '{p}'"))))
        .collect()
}

fn op_to_manifest(op: &NodeOp) -> String {
    let pad = |p: Padding| match p {
        Padding::Same => "same",
        Padding::Valid => "valid",
    };
    match op {
        NodeOp::Conv2d { stride, padding } => format!("conv2d stride={stride} pad={}", pad(*padding)),
        NodeOp::DepthwiseConv2d { stride, padding } => {
            format!("dwconv2d stride={stride} pad={}", pad(*padding))
        }
        NodeOp::Dense => "dense".into(),
        NodeOp::GlobalAveragePool => "gap".into(),
        NodeOp::Activation { kind } => format!("act kind={kind}"),
        NodeOp::Add => "add".into(),
        NodeOp::DropoutMarker { rate } => format!("dropout rate={rate}"),
        NodeOp::Flatten => "flatten".into(),
    }
}

fn op_from_manifest(op: &str, params: &HashMap<&str, &str>) -> Result<NodeOp, ModelError> {
    let bad = |what: &str| ModelError::FormatError(format!("node {what}"));
    let stride = || -> Result<usize, ModelError> {
        params
            .get("stride")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("missing stride"))
    };
    let padding = || -> Result<Padding, ModelError> {
        match params.get("pad").copied() {
            Some("same") => Ok(Padding::Same),
            Some("valid") => Ok(Padding::Valid),
            _ => Err(bad("missing padding")),
        }
    };
    Ok(match op {
        "conv2d" => NodeOp::Conv2d {
            stride: stride()?,
            padding: padding()?,
        },
        "dwconv2d" => NodeOp::DepthwiseConv2d {
            stride: stride()?,
            padding: padding()?,
        },
        "dense" => NodeOp::Dense,
        "gap" => NodeOp::GlobalAveragePool,
        "act" => NodeOp::Activation {
            kind: match params.get("kind").copied() {
                Some("relu") => ActivationKind::Relu,
                Some("relu6") => ActivationKind::Relu6,
                Some("sigmoid") => ActivationKind::Sigmoid,
                Some("softmax") => ActivationKind::Softmax,
                other => {
                    return Err(bad(&format!("unknown activation {other:?}")));
                }
            },
        },
        "add" => NodeOp::Add,
        "dropout" => NodeOp::DropoutMarker {
            rate: params
                .get("rate")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("missing dropout rate"))?,
        },
        "flatten" => NodeOp::Flatten,
        other => return Err(ModelError::FormatError(format!("unknown op '{other}'"))),
    })
}

impl ModelGraph {
    /// Human-readable manifest section, exactly as stored in the file.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("name {}\n", esc(&self.name)));
        out.push_str(&format!("input {}\n", fmt_shape(&self.input_shape)));
        for (k, v) in &self.metadata {
            out.push_str(&format!("meta {} {}\n", esc(k), esc(v)));
        }
        for node in &self.nodes {
            out.push_str(&format!(
                "node {} {} in={} w={}\n",
                esc(&node.id),
                op_to_manifest(&node.op),
                fmt_id_list(&node.inputs),
                fmt_id_list(&node.weight_refs),
            ));
        }
        let mut offset = 0usize;
        for (id, t) in &self.weights {
            let dtype = if t.is_quantized() { "qi8" } else { "f32" };
            let len = t.byte_len();
            out.push_str(&format!(
                "blob {} {} {} {} {}\n",
                esc(id),
                dtype,
                fmt_shape(t.shape()),
                offset,
                len
            ));
            offset += len;
        }
        out
    }

    /// Serialize to the `.ttml` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = self.manifest();
        let blob_bytes: usize = self.weights.values().map(Tensor::byte_len).sum();
        let mut out = Vec::with_capacity(16 + manifest.len() + blob_bytes);
        out.extend_from_slice(TTML_MAGIC);
        out.extend_from_slice(&TTML_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for t in self.weights.values() {
            write_blob(&mut out, t);
        }
        out
    }

    /// Write the graph to disk, returning the byte count (used by size
    /// reports). The graph must validate first.
    pub fn save(&self, path: &Path) -> Result<u64, ModelError> {
        self.validate()?;
        let bytes = self.to_bytes();
        let mut file = std::fs::File::create(path)
            .map_err(|e| ModelError::Io(path.display().to_string(), e))?;
        file.write_all(&bytes)
            .map_err(|e| ModelError::Io(path.display().to_string(), e))?;
        Ok(bytes.len() as u64)
    }

    /// Parse the `.ttml` byte layout. The returned graph has been validated.
    pub fn from_bytes(bytes: &[u8]) -> Result<ModelGraph, ModelError> {
        let header = bytes
            .get(..16)
            .ok_or_else(|| ModelError::FormatError("file shorter than header".into()))?;
        if &header[..4] != TTML_MAGIC {
            return Err(ModelError::FormatError("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != TTML_VERSION {
            return Err(ModelError::FormatError(format!(
                "unsupported version {version}"
            )));
        }
        let m_len = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let manifest_bytes = bytes
            .get(16..16 + m_len)
            .ok_or_else(|| ModelError::FormatError("manifest extends past end of file".into()))?;
        let manifest = std::str::from_utf8(manifest_bytes)
            .map_err(|_| ModelError::FormatError("manifest is not UTF-8".into()))?;
        let blob_section = &bytes[16 + m_len..];

        let mut graph = ModelGraph::new("", Vec::new());
        for line in manifest.lines() {
            let mut parts = line.split_whitespace();
            let Some(tag) = parts.next() else { continue };
            match tag {
                "name" => {
                    let raw = parts.next().unwrap_or("");
                    graph.name = unesc(raw)
                        .ok_or_else(|| ModelError::FormatError("bad name escape".into()))?;
                }
                "input" => {
                    let raw = parts
                        .next()
                        .ok_or_else(|| ModelError::FormatError("input line missing shape".into()))?;
                    graph.input_shape = parse_shape(raw)?;
                }
                "meta" => {
                    let k = parts
                        .next()
                        .and_then(unesc)
                        .ok_or_else(|| ModelError::FormatError("bad meta key".into()))?;
                    let v = parts
                        .next()
                        .and_then(unesc)
                        .ok_or_else(|| ModelError::FormatError("bad meta value".into()))?;
                    graph.metadata.insert(k, v);
                }
                "node" => {
                    let id = parts
                        .next()
                        .and_then(unesc)
                        .ok_or_else(|| ModelError::FormatError("bad node id".into()))?;
                    let op_name = parts
                        .next()
                        .ok_or_else(|| ModelError::FormatError("node line missing op".into()))?;
                    let mut inputs = None;
                    let mut weight_refs = None;
                    let mut params = HashMap::new();
                    for tok in parts {
                        let (key, value) = tok.split_once('=').ok_or_else(|| {
                            ModelError::FormatError(format!("bad node token '{tok}'"))
                        })?;
                        match key {
                            "in" => inputs = Some(parse_id_list(value)?),
                            "w" => weight_refs = Some(parse_id_list(value)?),
                            _ => {
                                params.insert(key, value);
                            }
                        }
                    }
                    let op = op_from_manifest(op_name, &params)?;
                    graph.nodes.push(GraphNode {
                        id,
                        op,
                        inputs: inputs
                            .ok_or_else(|| ModelError::FormatError("node missing in=".into()))?,
                        weight_refs: weight_refs
                            .ok_or_else(|| ModelError::FormatError("node missing w=".into()))?,
                    });
                }
                "blob" => {
                    let id = parts
                        .next()
                        .and_then(unesc)
                        .ok_or_else(|| ModelError::FormatError("bad blob id".into()))?;
                    let dtype = parts
                        .next()
                        .ok_or_else(|| ModelError::FormatError("blob missing dtype".into()))?;
                    let shape = parse_shape(
                        parts
                            .next()
                            .ok_or_else(|| ModelError::FormatError("blob missing shape".into()))?,
                    )?;
                    let offset: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| ModelError::FormatError("blob missing offset".into()))?;
                    let len: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| ModelError::FormatError("blob missing length".into()))?;
                    let raw = blob_section.get(offset..offset + len).ok_or_else(|| {
                        ModelError::FormatError(format!("blob '{id}' is truncated"))
                    })?;
                    let tensor = read_blob(dtype, shape, raw)?;
                    graph.weights.insert(id, tensor);
                }
                other => {
                    return Err(ModelError::FormatError(format!(
                        "unknown manifest line '{other}'"
                    )));
                }
            }
        }
        graph.validate()?;
        Ok(graph)
    }

    pub fn load(path: &Path) -> Result<ModelGraph, ModelError> {
        let bytes =
            std::fs::read(path).map_err(|e| ModelError::Io(path.display().to_string(), e))?;
        ModelGraph::from_bytes(&bytes)
    }
}

pub(crate) fn write_blob(out: &mut Vec<u8>, t: &Tensor) {
    match t.data() {
        TensorData::F32(values) => {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        TensorData::QInt8 { values, scale } => {
            out.extend(values.iter().map(|&q| q as u8));
            out.extend_from_slice(&scale.to_le_bytes());
        }
    }
}

pub(crate) fn read_blob(dtype: &str, shape: Vec<usize>, raw: &[u8]) -> Result<Tensor, ModelError> {
    let count: usize = shape.iter().product();
    match dtype {
        "f32" => {
            if raw.len() != count * 4 {
                return Err(ModelError::FormatError(format!(
                    "f32 blob length {} != 4 * {count}",
                    raw.len()
                )));
            }
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::from_f32(shape, values)
                .map_err(|e| ModelError::FormatError(format!("bad f32 blob: {e}")))
        }
        "qi8" => {
            if raw.len() != count + 4 {
                return Err(ModelError::FormatError(format!(
                    "qi8 blob length {} != {count} + 4",
                    raw.len()
                )));
            }
            let values: Vec<i8> = raw[..count].iter().map(|&b| b as i8).collect();
            let scale = f32::from_le_bytes(raw[count..].try_into().unwrap());
            Tensor::from_qint8(shape, values, scale)
                .map_err(|e| ModelError::FormatError(format!("bad qi8 blob: {e}")))
        }
        other => Err(ModelError::FormatError(format!("unknown dtype '{other}'"))),
    }
}
