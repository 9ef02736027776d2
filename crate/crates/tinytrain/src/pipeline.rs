//! End-to-end orchestration: dataset in, packaged classifier out.
//!
//! `create` runs ingest -> preprocess -> extract -> train -> compose ->
//! quantize -> save, then evaluates the packaged file on the validation
//! split and writes the report files. Every stage is also reachable on its
//! own through the library API and the CLI subcommands.

use crate::audio::{self, AudioClip, FrontendConfig};
use crate::config::RunConfig;
use crate::dataset::{ingest, DatasetManifest, SplitSpec, TaskKind};
use crate::engine::Prediction;
use crate::eval::{emit_report, evaluate, Aggregation, EvalReport};
use crate::features::{
    extract_features, fingerprint_bytes, load_cache, save_cache, CacheMeta, FeatureCache, Sample,
};
use crate::image::{self, decode_image, sniff_format, AugmentConfig};
use crate::model::{
    compose, ModelGraph, META_FINGERPRINT, META_PREPROCESSING, META_RUN_CONFIG,
};
use crate::quant::{quantize_model, size_report, SizeReport};
use crate::tensor::Tensor;
use crate::trainer::{export_head, train, TrainHistory};
use crate::Error;
use rayon::prelude::*;
use std::collections::VecDeque;
use std::path::{Path, PathBuf};

/// Everything `create` produced.
#[derive(Debug)]
pub struct CreateOutcome {
    pub model_path: PathBuf,
    pub manifest: DatasetManifest,
    pub report: EvalReport,
    pub history: TrainHistory,
    pub size_report: Option<SizeReport>,
    pub report_files: Vec<PathBuf>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(path.display().to_string(), e)
}

// ---------------------------------------------------------------------------
// Sample streams
// ---------------------------------------------------------------------------

/// Lazy image loader: decodes, augments (training only), and preprocesses in
/// parallel chunks while preserving stream order. Each image's RNG derives
/// from (seed, stream index), so parallelism cannot change outputs.
struct ImageStream {
    files: Vec<(PathBuf, usize)>,
    augment: Option<AugmentConfig>,
    buffer: VecDeque<Result<Sample, Error>>,
    next: usize,
}

impl ImageStream {
    fn new(files: Vec<(PathBuf, usize)>, augment: Option<AugmentConfig>) -> ImageStream {
        ImageStream {
            files,
            augment,
            buffer: VecDeque::new(),
            next: 0,
        }
    }

    fn refill(&mut self) {
        const CHUNK: usize = 64;
        let end = (self.next + CHUNK).min(self.files.len());
        if self.next >= end {
            return;
        }
        let augment = self.augment.clone();
        let base = self.next;
        let loaded: Vec<Result<Sample, Error>> = self.files[base..end]
            .par_iter()
            .enumerate()
            .map(|(offset, (path, class))| {
                load_image_sample(path, *class, base + offset, augment.as_ref())
            })
            .collect();
        self.buffer.extend(loaded);
        self.next = end;
    }
}

impl Iterator for ImageStream {
    type Item = Result<Sample, Error>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.buffer.is_empty() {
            self.refill();
        }
        self.buffer.pop_front()
    }
}

fn load_image_sample(
    path: &Path,
    class: usize,
    index: usize,
    augment: Option<&AugmentConfig>,
) -> Result<Sample, Error> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let format = sniff_format(&bytes).ok_or_else(|| {
        Error::Image(image::ImageError::UnsupportedFormat(format!(
            "{}: unrecognized image bytes",
            path.display()
        )))
    })?;
    let mut img = decode_image(&bytes, format)?;
    if let Some(cfg) = augment {
        let mut rng = cfg.rng_for(index as u64);
        img = image::augment(&img, cfg, &mut rng);
    }
    Ok(Sample {
        input: image::preprocess(&img),
        class_index: class,
        group: index,
    })
}

fn load_audio_samples(
    files: &[(PathBuf, usize)],
    frontend: &FrontendConfig,
) -> Result<Vec<Sample>, Error> {
    // Clips decode in parallel; patches keep (clip order, patch order) so the
    // stream is deterministic.
    let per_clip: Vec<Result<Vec<Tensor>, Error>> = files
        .par_iter()
        .map(|(path, _)| -> Result<Vec<Tensor>, Error> {
            let bytes = std::fs::read(path).map_err(io_err(path))?;
            let clip = audio::decode_wav(&bytes)?;
            let patches = audio::log_mel_patches(&clip, frontend)?;
            Ok(split_patches(&patches))
        })
        .collect();
    let mut samples = Vec::new();
    for (group, (result, (_, class))) in per_clip.into_iter().zip(files).enumerate() {
        for patch in result? {
            samples.push(Sample {
                input: patch,
                class_index: *class,
                group,
            });
        }
    }
    Ok(samples)
}

/// Split a `(P, 96, 64, 1)` patch tensor into per-patch tensors.
fn split_patches(patches: &Tensor) -> Vec<Tensor> {
    let shape = patches.shape();
    let per: usize = shape[1..].iter().product();
    let data = patches.as_f32().expect("patches are float");
    (0..shape[0])
        .map(|p| {
            Tensor::from_f32(shape[1..].to_vec(), data[p * per..(p + 1) * per].to_vec())
                .expect("finite slice")
        })
        .collect()
}

enum PreparedSplit {
    Image {
        files: Vec<(PathBuf, usize)>,
        augment: Option<AugmentConfig>,
    },
    Audio {
        samples: Vec<Sample>,
    },
}

impl PreparedSplit {
    fn count(&self) -> usize {
        match self {
            PreparedSplit::Image { files, .. } => files.len(),
            PreparedSplit::Audio { samples } => samples.len(),
        }
    }

    fn stream(&self) -> Box<dyn Iterator<Item = Result<Sample, Error>> + '_> {
        match self {
            PreparedSplit::Image { files, augment } => {
                Box::new(ImageStream::new(files.clone(), augment.clone()))
            }
            PreparedSplit::Audio { samples } => {
                Box::new(samples.iter().cloned().map(Ok))
            }
        }
    }
}

fn prepare_split(
    cfg: &RunConfig,
    files: &[(PathBuf, usize)],
    training: bool,
) -> Result<PreparedSplit, Error> {
    match cfg.task {
        TaskKind::Image => {
            let augment_cfg = cfg.augment_config();
            let augment = (training && augment_cfg.enabled).then_some(augment_cfg);
            Ok(PreparedSplit::Image {
                files: files.to_vec(),
                augment,
            })
        }
        TaskKind::Audio => Ok(PreparedSplit::Audio {
            samples: load_audio_samples(files, &frontend_config(cfg))?,
        }),
    }
}

fn frontend_config(cfg: &RunConfig) -> FrontendConfig {
    FrontendConfig {
        silence_threshold: (!cfg.no_trim).then_some(cfg.silence_threshold),
    }
}

fn preprocessing_kind(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Image => image::PREPROCESSING_ID,
        TaskKind::Audio => audio::PREPROCESSING_ID,
    }
}

/// Cache identity: preprocessing kind plus everything that changes its
/// output (file list, augmentation, trim settings, seed).
fn cache_id(cfg: &RunConfig, manifest: &DatasetManifest, training: bool) -> String {
    let knobs = match cfg.task {
        TaskKind::Image => {
            if training && cfg.augment.enabled {
                format!(
                    "augment=h{}r{}z{}-{};seed={}",
                    cfg.augment.hflip_prob,
                    cfg.augment.rotation_max_deg,
                    cfg.augment.zoom_lo,
                    cfg.augment.zoom_hi,
                    cfg.seed
                )
            } else {
                "augment=off".to_string()
            }
        }
        TaskKind::Audio => match frontend_config(cfg).silence_threshold {
            Some(t) => format!("trim={t}"),
            None => "trim=off".to_string(),
        },
    };
    format!(
        "{};split={};data={};{}",
        preprocessing_kind(cfg.task),
        if training { "train" } else { "val" },
        manifest.digest(),
        knobs
    )
}

// ---------------------------------------------------------------------------
// Stage drivers
// ---------------------------------------------------------------------------

/// Load the backbone file, apply `drop_last`, and fingerprint the bytes.
pub fn load_backbone(cfg: &RunConfig) -> Result<(ModelGraph, String), Error> {
    let bytes = std::fs::read(&cfg.backbone).map_err(io_err(&cfg.backbone))?;
    let fingerprint = fingerprint_bytes(&bytes);
    let mut backbone = ModelGraph::from_bytes(&bytes).map_err(Error::from)?;
    if cfg.drop_last > 0 {
        backbone = backbone.truncate(cfg.drop_last).map_err(Error::from)?;
    }
    Ok((backbone, fingerprint))
}

pub fn ingest_for(cfg: &RunConfig) -> Result<DatasetManifest, Error> {
    let split = SplitSpec::Ratio {
        train_fraction: cfg.split_ratio,
        seed: cfg.seed,
    };
    // Explicit layouts are detected from the directory itself.
    let manifest = match ingest(&cfg.data_dir, cfg.task, &split) {
        Ok(m) => m,
        Err(crate::dataset::IngestError::MixedLayout(_)) => {
            ingest(&cfg.data_dir, cfg.task, &SplitSpec::Explicit)?
        }
        Err(e) => return Err(e.into()),
    };
    Ok(manifest)
}

fn extract_split(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    backbone: &ModelGraph,
    fingerprint: &str,
    training: bool,
) -> Result<FeatureCache, Error> {
    let files = if training { &manifest.train } else { &manifest.val };
    let id = cache_id(cfg, manifest, training);
    let cache_path = cfg
        .out_dir
        .join("cache")
        .join(if training { "train.ttfc" } else { "val.ttfc" });

    if cfg.cache && cache_path.is_file() {
        if let Ok(cache) = load_cache(&cache_path, Some(fingerprint)) {
            if cache.preprocessing_id == id && cache.class_names == manifest.classes {
                return Ok(cache);
            }
        }
        // Stale cache: fall through and rebuild.
    }

    let prepared = prepare_split(cfg, files, training)?;
    let cache = extract_features(
        backbone,
        prepared.stream(),
        prepared.count(),
        cfg.batch_size,
        CacheMeta {
            class_names: manifest.classes.clone(),
            backbone_fingerprint: fingerprint.to_string(),
            preprocessing_id: id,
        },
    )?;
    if cfg.cache {
        std::fs::create_dir_all(cache_path.parent().unwrap())
            .map_err(io_err(&cache_path))?;
        save_cache(&cache, &cache_path)?;
    }
    Ok(cache)
}

/// Ingest the dataset and extract train/val feature caches (reusing fresh
/// caches on disk). Used by both `create` and the standalone `extract`
/// subcommand.
pub fn build_caches(
    cfg: &RunConfig,
) -> Result<(DatasetManifest, ModelGraph, FeatureCache, FeatureCache), Error> {
    let manifest = ingest_for(cfg).map_err(|e| e.in_stage("ingest"))?;
    if manifest.val.is_empty() {
        return Err(Error::Ingest(crate::dataset::IngestError::EmptyClass(
            "no validation files; add a val/ directory or use split_ratio < 1".into(),
        ))
        .in_stage("ingest"));
    }
    let (backbone, fingerprint) = load_backbone(cfg).map_err(|e| e.in_stage("backbone"))?;
    let train_cache = extract_split(cfg, &manifest, &backbone, &fingerprint, true)
        .map_err(|e| e.in_stage("extract"))?;
    let val_cache = extract_split(cfg, &manifest, &backbone, &fingerprint, false)
        .map_err(|e| e.in_stage("extract"))?;
    Ok((manifest, backbone, train_cache, val_cache))
}

/// Full pipeline: returns the packaged model path and the validation report.
pub fn create(cfg: &RunConfig) -> Result<CreateOutcome, Error> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;

    let (manifest, backbone, train_cache, val_cache) = build_caches(cfg)?;

    let (head, history) = train(&train_cache, &val_cache, cfg.head_spec(), &cfg.train_config())
        .map_err(|e| Error::from(e).in_stage("train"))?;
    let head_graph = export_head(&head, "head");

    let mut full = compose(&backbone, &head_graph)
        .map_err(|e| Error::from(e).in_stage("compose"))?;
    full.name = format!("{}-classifier", cfg.task);
    full.metadata.insert(
        META_PREPROCESSING.into(),
        preprocessing_kind(cfg.task).into(),
    );
    full.metadata.insert(
        META_FINGERPRINT.into(),
        train_cache.backbone_fingerprint.clone(),
    );
    full.metadata.insert(META_RUN_CONFIG.into(), cfg.to_json());

    let model_path = cfg.out_dir.join("model.ttml");
    let size = if cfg.quantize {
        let float_path = cfg.out_dir.join("model.f32.ttml");
        full.save(&float_path)
            .map_err(|e| Error::from(e).in_stage("package"))?;
        let quantized = quantize_model(&full)
            .map_err(|e| Error::from(e).in_stage("quantize"))?;
        quantized
            .save(&model_path)
            .map_err(|e| Error::from(e).in_stage("package"))?;
        let report = size_report(&float_path, &model_path)
            .map_err(|e| Error::from(e).in_stage("quantize"))?;
        std::fs::remove_file(&float_path).map_err(io_err(&float_path))?;
        std::fs::write(cfg.out_dir.join("size_report.txt"), report.to_text())
            .map_err(io_err(&cfg.out_dir))?;
        Some(report)
    } else {
        full.save(&model_path)
            .map_err(|e| Error::from(e).in_stage("package"))?;
        None
    };

    // Score exactly what was shipped: reload the packaged file and run the
    // validation media through it.
    let packaged = ModelGraph::load(&model_path).map_err(|e| Error::from(e).in_stage("eval"))?;
    let report = evaluate_manifest_split(cfg, &packaged, &manifest, false, None)
        .map_err(|e| e.in_stage("eval"))?;

    let mut report_files = emit_report(&report, Some(&history), &cfg.out_dir)
        .map_err(|e| Error::from(e).in_stage("report"))?;
    let config_path = cfg.out_dir.join("run_config.json");
    std::fs::write(&config_path, cfg.to_json()).map_err(io_err(&config_path))?;
    report_files.push(config_path);

    Ok(CreateOutcome {
        model_path,
        manifest,
        report,
        history,
        size_report: size,
        report_files,
    })
}

/// Evaluate a model on one split of a dataset manifest (no augmentation).
/// Audio defaults to per-clip scoring, images to per-sample; pass
/// `aggregation` to override.
pub fn evaluate_manifest_split(
    cfg: &RunConfig,
    model: &ModelGraph,
    manifest: &DatasetManifest,
    training_split: bool,
    aggregation: Option<Aggregation>,
) -> Result<EvalReport, Error> {
    let files = if training_split { &manifest.train } else { &manifest.val };
    let prepared = match cfg.task {
        TaskKind::Image => PreparedSplit::Image {
            files: files.to_vec(),
            augment: None,
        },
        TaskKind::Audio => PreparedSplit::Audio {
            samples: load_audio_samples(files, &frontend_config(cfg))?,
        },
    };
    let aggregation = aggregation.unwrap_or(match cfg.task {
        TaskKind::Image => Aggregation::PerSample,
        TaskKind::Audio => Aggregation::PerClip,
    });
    evaluate(model, prepared.stream(), &manifest.classes, aggregation)
}

// ---------------------------------------------------------------------------
// Prediction on media files
// ---------------------------------------------------------------------------

fn media_kind(path: &Path, bytes: &[u8]) -> &'static str {
    if sniff_format(bytes).is_some() {
        return "image";
    }
    if bytes.starts_with(b"RIFF") {
        return "audio";
    }
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("ppm" | "png") => "image",
        Some("wav") => "audio",
        _ => "unknown",
    }
}

/// Silence settings recorded at training time, falling back to defaults for
/// hand-built models.
fn frontend_from_metadata(graph: &ModelGraph) -> FrontendConfig {
    graph
        .metadata
        .get(META_RUN_CONFIG)
        .and_then(|json| RunConfig::from_json(json).ok())
        .map(|cfg| frontend_config(&cfg))
        .unwrap_or_default()
}

/// Run one media file through a packaged model, selecting the preprocessing
/// recorded in the model's metadata.
pub fn predict_file(model_path: &Path, media_path: &Path) -> Result<Prediction, Error> {
    let graph = ModelGraph::load(model_path).map_err(Error::from)?;
    let bytes = std::fs::read(media_path).map_err(io_err(media_path))?;
    let expected = graph
        .metadata
        .get(META_PREPROCESSING)
        .cloned()
        .unwrap_or_default();
    let got = media_kind(media_path, &bytes);

    match expected.as_str() {
        id if id == image::PREPROCESSING_ID => {
            if got != "image" {
                return Err(Error::PreprocessingMismatch {
                    expected: "image".into(),
                    got: got.into(),
                });
            }
            let format = sniff_format(&bytes).ok_or_else(|| {
                Error::Image(image::ImageError::UnsupportedFormat(
                    "unrecognized image bytes".into(),
                ))
            })?;
            let img = decode_image(&bytes, format)?;
            crate::engine::predict_probs(&graph, &image::preprocess(&img)).map_err(Error::from)
        }
        id if id == audio::PREPROCESSING_ID => {
            if got != "audio" {
                return Err(Error::PreprocessingMismatch {
                    expected: "audio".into(),
                    got: got.into(),
                });
            }
            let clip = audio::decode_wav(&bytes)?;
            predict_clip(&graph, &clip, &frontend_from_metadata(&graph))
        }
        other => Err(Error::PreprocessingMismatch {
            expected: if other.is_empty() { "unknown".into() } else { other.into() },
            got: got.into(),
        }),
    }
}

/// Per-clip prediction: mean patch probabilities, then argmax.
pub fn predict_clip(
    graph: &ModelGraph,
    clip: &AudioClip,
    frontend: &FrontendConfig,
) -> Result<Prediction, Error> {
    let patches = audio::log_mel_patches(clip, frontend)?;
    let class_names = graph.classes().ok_or_else(|| {
        Error::Engine(crate::engine::EngineError::MissingLabels(
            "model metadata has no classes".into(),
        ))
    })?;
    let out = crate::engine::run(graph, &patches).map_err(Error::from)?;
    let k = class_names.len();
    let data = out.as_f32().map_err(Error::from)?;
    let patches_n = out.shape()[0];
    let mut mean = vec![0.0f32; k];
    for row in data.chunks(k) {
        for (m, &p) in mean.iter_mut().zip(row) {
            *m += p / patches_n as f32;
        }
    }
    let class_index = crate::engine::argmax(&mean);
    Ok(Prediction {
        label: class_names[class_index].clone(),
        class_index,
        probs: mean,
        class_names,
    })
}
