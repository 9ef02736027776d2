//! Batched frozen-backbone feature extraction and the `.ttfc` on-disk cache.
//!
//! Extraction streams `(tensor, class)` samples through a backbone in batches
//! (default 32, final partial batch included), filling a preallocated feature
//! tensor in stream order. The cache remembers which backbone and
//! preprocessing produced it, so a stale cache is detected on load rather
//! than silently reused.

use crate::engine::ExecutionPlan;
use crate::model::{read_blob, write_blob, ModelGraph};
use crate::tensor::Tensor;
use crate::util::{esc, fnv1a64, unesc};
use std::fmt;
use std::io::Write;
use std::path::Path;

pub const TTFC_MAGIC: &[u8; 4] = b"TTFC";
pub const TTFC_VERSION: u32 = 1;

/// One labeled sample for extraction or evaluation.
///
/// `group` ties samples that came from the same source file (an audio clip's
/// patches share a group); per-clip evaluation aggregates over it.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Tensor,
    pub class_index: usize,
    pub group: usize,
}

#[derive(Debug)]
pub enum CacheError {
    Io(String, std::io::Error),
    FormatError(String),
    /// The cache was produced by a different backbone or preprocessing.
    StaleCache { expected: String, found: String },
    ShapeMismatch(String),
    EmptyDataset,
    /// Stream ended before `sample_count` rows were filled.
    ShortStream { expected: usize, got: usize },
    /// A sample's class index falls outside the class list.
    InvalidLabel { class_index: usize, classes: usize },
}

impl fmt::Display for CacheError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacheError::Io(path, e) => write!(f, "{path}: {e}"),
            CacheError::FormatError(detail) => write!(f, "feature cache format error: {detail}"),
            CacheError::StaleCache { expected, found } => write!(
                f,
                "stale feature cache: expected fingerprint {expected}, found {found}"
            ),
            CacheError::ShapeMismatch(detail) => write!(f, "feature shape mismatch: {detail}"),
            CacheError::EmptyDataset => write!(f, "dataset yielded no samples"),
            CacheError::ShortStream { expected, got } => {
                write!(f, "dataset ended early: expected {expected} samples, got {got}")
            }
            CacheError::InvalidLabel {
                class_index,
                classes,
            } => write!(f, "class index {class_index} out of range for {classes} classes"),
        }
    }
}

impl std::error::Error for CacheError {}

/// Extracted feature tensors plus one-hot labels, persisted between the
/// extraction and training stages.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    /// `(sample_count, ..backbone output dims)`.
    pub features: Tensor,
    /// One-hot `(sample_count, classes)`.
    pub labels: Tensor,
    pub class_names: Vec<String>,
    /// Fingerprint of the backbone file that produced the features.
    pub backbone_fingerprint: String,
    /// Identity of the preprocessing (and its inputs) that fed the backbone.
    pub preprocessing_id: String,
}

impl FeatureCache {
    pub fn sample_count(&self) -> usize {
        self.features.shape()[0]
    }

    /// Class index of row `i`, read back from the one-hot labels.
    pub fn class_of(&self, row: usize) -> usize {
        let k = self.class_names.len();
        let labels = self.labels.as_f32().expect("labels are float");
        crate::engine::argmax(&labels[row * k..(row + 1) * k])
    }
}

/// Hex fingerprint of a byte buffer (FNV-1a 64).
pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

/// Hex fingerprint of a file on disk.
pub fn fingerprint_file(path: &Path) -> Result<String, CacheError> {
    let bytes = std::fs::read(path).map_err(|e| CacheError::Io(path.display().to_string(), e))?;
    Ok(fingerprint_bytes(&bytes))
}

/// Batch sizes used to cover `sample_count` samples: full batches of
/// `batch_size` plus the final partial batch.
pub fn batch_plan(sample_count: usize, batch_size: usize) -> Vec<usize> {
    let mut plan = vec![batch_size; sample_count / batch_size];
    if !sample_count.is_multiple_of(batch_size) {
        plan.push(sample_count % batch_size);
    }
    plan
}

/// Provenance recorded into a cache at extraction time.
#[derive(Debug, Clone)]
pub struct CacheMeta {
    pub class_names: Vec<String>,
    pub backbone_fingerprint: String,
    pub preprocessing_id: String,
}

/// Run `sample_count` samples through the frozen backbone in batches,
/// returning features in stream order with one-hot labels.
///
/// Samples may carry a leading batch dimension of 1 (as produced by the
/// image preprocessor); it is stripped when stacking.
pub fn extract_features<I>(
    backbone: &ModelGraph,
    samples: I,
    sample_count: usize,
    batch_size: usize,
    meta: CacheMeta,
) -> Result<FeatureCache, crate::Error>
where
    I: IntoIterator<Item = Result<Sample, crate::Error>>,
{
    if sample_count == 0 {
        return Err(CacheError::EmptyDataset.into());
    }
    if batch_size == 0 {
        return Err(crate::Error::Config("batch size must be >= 1".into()));
    }
    let plan = ExecutionPlan::new(backbone).map_err(crate::Error::from)?;
    let in_shape = plan.input_shape().to_vec();
    let out_shape = plan.output_shape().to_vec();
    let out_stride: usize = out_shape.iter().product();
    let in_stride: usize = in_shape.iter().product();
    let classes = meta.class_names.len();

    let mut features = vec![0.0f32; sample_count * out_stride];
    let mut labels = vec![0.0f32; sample_count * classes];

    let mut iter = samples.into_iter();
    let mut filled = 0usize;
    let mut batch_buf: Vec<f32> = Vec::with_capacity(batch_size * in_stride);
    let mut batch_classes: Vec<usize> = Vec::with_capacity(batch_size);

    while filled < sample_count {
        batch_buf.clear();
        batch_classes.clear();
        while batch_classes.len() < batch_size && filled + batch_classes.len() < sample_count {
            let Some(next) = iter.next() else { break };
            let sample = next?;
            let data = stacked_sample(&sample.input, &in_shape)?;
            if sample.class_index >= classes {
                return Err(CacheError::InvalidLabel {
                    class_index: sample.class_index,
                    classes,
                }
                .into());
            }
            batch_buf.extend_from_slice(data);
            batch_classes.push(sample.class_index);
        }
        if batch_classes.is_empty() {
            return Err(CacheError::ShortStream {
                expected: sample_count,
                got: filled,
            }
            .into());
        }
        let n = batch_classes.len();
        let mut shape = vec![n];
        shape.extend_from_slice(&in_shape);
        let batch = Tensor::from_f32(shape, batch_buf.clone()).map_err(crate::Error::from)?;
        let out = plan.run(&batch).map_err(crate::Error::from)?;
        let out_data = out.as_f32().map_err(crate::Error::from)?;
        features[filled * out_stride..(filled + n) * out_stride].copy_from_slice(out_data);
        for (i, &class) in batch_classes.iter().enumerate() {
            labels[(filled + i) * classes + class] = 1.0;
        }
        filled += n;
    }

    let mut fshape = vec![sample_count];
    fshape.extend_from_slice(&out_shape);
    Ok(FeatureCache {
        features: Tensor::from_f32(fshape, features).map_err(crate::Error::from)?,
        labels: Tensor::from_f32(vec![sample_count, classes], labels)
            .map_err(crate::Error::from)?,
        class_names: meta.class_names,
        backbone_fingerprint: meta.backbone_fingerprint,
        preprocessing_id: meta.preprocessing_id,
    })
}

fn stacked_sample<'a>(input: &'a Tensor, in_shape: &[usize]) -> Result<&'a [f32], CacheError> {
    let shape = input.shape();
    let matches_plain = shape == in_shape;
    let matches_batched =
        shape.len() == in_shape.len() + 1 && shape[0] == 1 && shape[1..] == in_shape[..];
    if !matches_plain && !matches_batched {
        return Err(CacheError::ShapeMismatch(format!(
            "sample shape {shape:?} does not match backbone input {in_shape:?}"
        )));
    }
    input
        .as_f32()
        .map_err(|e| CacheError::ShapeMismatch(e.to_string()))
}

/// Write a cache to disk in the `.ttfc` container (same blob layout as
/// `.ttml`).
pub fn save_cache(cache: &FeatureCache, path: &Path) -> Result<u64, CacheError> {
    let mut manifest = String::new();
    let classes: Vec<String> = cache.class_names.iter().map(|c| esc(c)).collect();
    manifest.push_str(&format!("classes {}\n", classes.join(",")));
    manifest.push_str(&format!("fingerprint {}\n", esc(&cache.backbone_fingerprint)));
    manifest.push_str(&format!("preprocessing {}\n", esc(&cache.preprocessing_id)));
    let mut offset = 0usize;
    for (name, t) in [("features", &cache.features), ("labels", &cache.labels)] {
        let shape: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
        manifest.push_str(&format!(
            "blob {name} f32 {} {offset} {}\n",
            shape.join(","),
            t.byte_len()
        ));
        offset += t.byte_len();
    }

    let mut bytes = Vec::with_capacity(16 + manifest.len() + offset);
    bytes.extend_from_slice(TTFC_MAGIC);
    bytes.extend_from_slice(&TTFC_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    bytes.extend_from_slice(manifest.as_bytes());
    write_blob(&mut bytes, &cache.features);
    write_blob(&mut bytes, &cache.labels);

    let mut file =
        std::fs::File::create(path).map_err(|e| CacheError::Io(path.display().to_string(), e))?;
    file.write_all(&bytes)
        .map_err(|e| CacheError::Io(path.display().to_string(), e))?;
    Ok(bytes.len() as u64)
}

/// Load a cache, verifying the backbone fingerprint when one is expected.
pub fn load_cache(path: &Path, expect_fingerprint: Option<&str>) -> Result<FeatureCache, CacheError> {
    let bytes = std::fs::read(path).map_err(|e| CacheError::Io(path.display().to_string(), e))?;
    let cache = cache_from_bytes(&bytes)?;
    if let Some(expected) = expect_fingerprint {
        if cache.backbone_fingerprint != expected {
            return Err(CacheError::StaleCache {
                expected: expected.to_string(),
                found: cache.backbone_fingerprint,
            });
        }
    }
    Ok(cache)
}

fn cache_from_bytes(bytes: &[u8]) -> Result<FeatureCache, CacheError> {
    let bad = |d: String| CacheError::FormatError(d);
    let header = bytes
        .get(..16)
        .ok_or_else(|| bad("file shorter than header".into()))?;
    if &header[..4] != TTFC_MAGIC {
        return Err(bad("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != TTFC_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let m_len = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let manifest = std::str::from_utf8(
        bytes
            .get(16..16 + m_len)
            .ok_or_else(|| bad("manifest extends past end of file".into()))?,
    )
    .map_err(|_| bad("manifest is not UTF-8".into()))?;
    let blob_section = &bytes[16 + m_len..];

    let mut class_names = None;
    let mut fingerprint = None;
    let mut preprocessing = None;
    let mut features = None;
    let mut labels = None;
    for line in manifest.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("classes") => {
                let raw = parts.next().ok_or_else(|| bad("classes line empty".into()))?;
                let names: Option<Vec<String>> = raw.split(',').map(unesc).collect();
                class_names = Some(names.ok_or_else(|| bad("bad class escape".into()))?);
            }
            Some("fingerprint") => {
                fingerprint =
                    Some(parts.next().and_then(unesc).ok_or_else(|| bad("bad fingerprint".into()))?);
            }
            Some("preprocessing") => {
                preprocessing = Some(
                    parts
                        .next()
                        .and_then(unesc)
                        .ok_or_else(|| bad("bad preprocessing id".into()))?,
                );
            }
            Some("blob") => {
                let name = parts.next().ok_or_else(|| bad("blob missing name".into()))?;
                let dtype = parts.next().ok_or_else(|| bad("blob missing dtype".into()))?;
                let shape: Vec<usize> = parts
                    .next()
                    .ok_or_else(|| bad("blob missing shape".into()))?
                    .split(',')
                    .map(|d| d.parse().map_err(|_| bad(format!("bad dim '{d}'"))))
                    .collect::<Result<_, _>>()?;
                let offset: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("blob missing offset".into()))?;
                let len: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("blob missing length".into()))?;
                let raw = blob_section
                    .get(offset..offset + len)
                    .ok_or_else(|| bad(format!("blob '{name}' truncated")))?;
                let tensor = read_blob(dtype, shape, raw)
                    .map_err(|e| bad(format!("blob '{name}': {e}")))?;
                match name {
                    "features" => features = Some(tensor),
                    "labels" => labels = Some(tensor),
                    other => return Err(bad(format!("unknown blob '{other}'"))),
                }
            }
            Some(other) => return Err(bad(format!("unknown manifest line '{other}'"))),
            None => {}
        }
    }

    let cache = FeatureCache {
        features: features.ok_or_else(|| bad("missing features blob".into()))?,
        labels: labels.ok_or_else(|| bad("missing labels blob".into()))?,
        class_names: class_names.ok_or_else(|| bad("missing classes".into()))?,
        backbone_fingerprint: fingerprint.ok_or_else(|| bad("missing fingerprint".into()))?,
        preprocessing_id: preprocessing.ok_or_else(|| bad("missing preprocessing id".into()))?,
    };
    if cache.features.shape()[0] != cache.labels.shape()[0] {
        return Err(bad(format!(
            "{} feature rows vs {} label rows",
            cache.features.shape()[0],
            cache.labels.shape()[0]
        )));
    }
    if cache.labels.shape().len() != 2 || cache.labels.shape()[1] != cache.class_names.len() {
        return Err(bad("label width does not match class list".into()));
    }
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GraphNode, NodeOp};

    fn identity_backbone(shape: Vec<usize>) -> ModelGraph {
        let mut g = ModelGraph::new("identity", shape);
        g.nodes.push(GraphNode::new(
            "id",
            NodeOp::DropoutMarker { rate: 0.0 },
            vec![],
            vec![],
        ));
        g
    }

    fn sample(v: f32, class: usize) -> Result<Sample, crate::Error> {
        Ok(Sample {
            input: Tensor::filled(vec![2, 2, 1], v).unwrap(),
            class_index: class,
            group: 0,
        })
    }

    fn meta(classes: &[&str]) -> CacheMeta {
        CacheMeta {
            class_names: classes.iter().map(ToString::to_string).collect(),
            backbone_fingerprint: "cafe".into(),
            preprocessing_id: "test-v1".into(),
        }
    }

    #[test]
    fn identity_extraction_preserves_inputs_and_order() {
        let g = identity_backbone(vec![2, 2, 1]);
        let stream = vec![sample(1.0, 0), sample(2.0, 1), sample(3.0, 0)];
        let cache = extract_features(&g, stream, 3, 2, meta(&["a", "b"])).unwrap();
        assert_eq!(cache.features.shape(), &[3, 2, 2, 1]);
        assert_eq!(cache.labels.shape(), &[3, 2]);
        let f = cache.features.as_f32().unwrap();
        assert_eq!(&f[0..4], &[1.0; 4]);
        assert_eq!(&f[4..8], &[2.0; 4]);
        assert_eq!(&f[8..12], &[3.0; 4]);
        assert_eq!(cache.class_of(0), 0);
        assert_eq!(cache.class_of(1), 1);
        assert_eq!(cache.class_of(2), 0);
    }

    #[test]
    fn extraction_stops_at_sample_count() {
        let g = identity_backbone(vec![2, 2, 1]);
        let stream = (0..10).map(|i| sample(i as f32, 0));
        let cache = extract_features(&g, stream, 4, 3, meta(&["a", "b"])).unwrap();
        assert_eq!(cache.sample_count(), 4);
    }

    #[test]
    fn short_stream_is_an_error() {
        let g = identity_backbone(vec![2, 2, 1]);
        let stream = vec![sample(1.0, 0)];
        let err = extract_features(&g, stream, 3, 2, meta(&["a", "b"])).unwrap_err();
        assert!(matches!(
            err,
            crate::Error::Cache(CacheError::ShortStream { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn wrong_sample_shape_is_an_error() {
        let g = identity_backbone(vec![2, 2, 1]);
        let stream = vec![Ok(Sample {
            input: Tensor::filled(vec![3, 3, 1], 1.0).unwrap(),
            class_index: 0,
            group: 0,
        })];
        let err = extract_features(&g, stream, 1, 2, meta(&["a", "b"])).unwrap_err();
        assert!(matches!(
            err,
            crate::Error::Cache(CacheError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let g = identity_backbone(vec![2, 2, 1]);
        let err = extract_features(&g, Vec::new(), 0, 2, meta(&["a", "b"])).unwrap_err();
        assert!(matches!(err, crate::Error::Cache(CacheError::EmptyDataset)));
    }

    #[test]
    fn batch_plan_shapes() {
        assert_eq!(batch_plan(100, 32), vec![32, 32, 32, 4]);
        assert_eq!(batch_plan(64, 32), vec![32, 32]);
        assert_eq!(batch_plan(5, 32), vec![5]);
    }

    #[test]
    fn cache_round_trip_and_stale_detection() {
        let g = identity_backbone(vec![2, 2, 1]);
        let stream = vec![sample(1.0, 0), sample(2.0, 1)];
        let cache = extract_features(&g, stream, 2, 32, meta(&["a", "b"])).unwrap();

        let dir = std::env::temp_dir().join(format!("ttfc-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cache.ttfc");
        save_cache(&cache, &path).unwrap();

        let loaded = load_cache(&path, Some("cafe")).unwrap();
        assert_eq!(loaded, cache);

        let err = load_cache(&path, Some("beef")).unwrap_err();
        assert!(matches!(err, CacheError::StaleCache { .. }));
        std::fs::remove_dir_all(&dir).ok();
    }
}
