//! Build image and audio classifiers from a labeled dataset directory — no
//! model code required.
//!
//! The workflow is classic frozen-backbone transfer learning:
//!
//! 1. **Ingest** a `root/<class>/<files>` (or `root/{train,val}/<class>/`)
//!    directory and split it deterministically.
//! 2. **Preprocess** media into backbone-ready tensors: images are
//!    bilinear-resized to 224x224 and rescaled to `[0,1]`; audio is resampled
//!    to 16 kHz mono and turned into 96x64 log-mel patches.
//! 3. **Extract features** once through a frozen convolutional backbone and
//!    cache them on disk (`.ttfc`).
//! 4. **Train** a small head (global average pooling + dropout + dense) on the
//!    cached features with from-scratch backprop.
//! 5. **Package** backbone + head into a single `.ttml` file, with symmetric
//!    int8 weight quantization cutting the file size by roughly 74%.
//!
//! Every stage is exposed both as a library API and as a subcommand of the
//! `tinytrain` binary (`ingest`, `create`, `extract`, `train`, `quantize`,
//! `eval`, `predict`, `inspect`). Runnable demos live in `examples/` — start
//! with `image_classifier.rs` and `audio_classifier.rs`, which build a
//! synthetic dataset, train a model, and run predictions end to end.
//!
//! Backbones are ordinary [`model::ModelGraph`] files. [`zoo`] generates
//! architecture-faithful, randomly initialized stand-ins for quick starts and
//! tests; real pretrained weights can be imported by writing blobs in the
//! documented layout (HWIO convolution kernels, FxK dense weights, batchnorm
//! folded in).

pub mod audio;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod eval;
pub mod features;
pub mod image;
pub mod model;
pub mod pipeline;
pub mod quant;
pub mod tensor;
pub mod trainer;
pub mod zoo;

mod util;

pub use config::RunConfig;
pub use dataset::{DatasetManifest, SplitSpec, TaskKind};
pub use engine::{predict_probs, run, ExecutionPlan, Prediction};
pub use eval::{evaluate, Aggregation, EvalReport};
pub use features::{extract_features, FeatureCache, Sample};
pub use model::{GraphNode, ModelGraph, NodeOp};
pub use quant::{quantize_model, size_report, SizeReport};
pub use tensor::{ActivationKind, Padding, Tensor};
pub use trainer::{train, HeadModel, TrainConfig, TrainHistory};

use std::fmt;

/// Crate-wide error, wrapping each subsystem's error type and carrying the
/// pipeline stage it surfaced from.
#[derive(Debug)]
pub enum Error {
    /// Invalid configuration or command-line usage.
    Config(String),
    Tensor(tensor::TensorError),
    Model(model::ModelError),
    Engine(engine::EngineError),
    Image(image::ImageError),
    Audio(audio::AudioError),
    Cache(features::CacheError),
    Train(trainer::TrainError),
    Eval(eval::EvalError),
    Ingest(dataset::IngestError),
    Quant(quant::QuantError),
    Io(String, std::io::Error),
    /// The model's recorded preprocessing does not match the input media.
    PreprocessingMismatch { expected: String, got: String },
    /// An error tagged with the pipeline stage that produced it.
    Stage(&'static str, Box<Error>),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage(stage, Box::new(self))
    }

    /// Process exit code: 0 success, 2 config error, 3 data error, 4 internal.
    pub fn exit_code(&self) -> i32 {
        use features::CacheError;
        use trainer::TrainError;
        match self {
            Error::Config(_) => 2,
            Error::Image(_)
            | Error::Audio(_)
            | Error::Ingest(_)
            | Error::PreprocessingMismatch { .. } => 3,
            Error::Cache(CacheError::EmptyDataset | CacheError::StaleCache { .. }) => 3,
            Error::Train(TrainError::ClassMismatch(_) | TrainError::DegenerateDataset(_)) => 3,
            Error::Eval(eval::EvalError::ClassMismatch(_) | eval::EvalError::EmptyDataset) => 3,
            // A user-supplied path that does not exist is a data problem,
            // not an internal failure.
            Error::Io(_, e) if e.kind() == std::io::ErrorKind::NotFound => 3,
            Error::Model(model::ModelError::Io(_, e)) if e.kind() == std::io::ErrorKind::NotFound => 3,
            Error::Quant(quant::QuantError::AlreadyQuantized(_)) => 3,
            Error::Stage(_, inner) => inner.exit_code(),
            _ => 4,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config: {msg}"),
            Error::Tensor(e) => write!(f, "{e}"),
            Error::Model(e) => write!(f, "{e}"),
            Error::Engine(e) => write!(f, "{e}"),
            Error::Image(e) => write!(f, "{e}"),
            Error::Audio(e) => write!(f, "{e}"),
            Error::Cache(e) => write!(f, "{e}"),
            Error::Train(e) => write!(f, "{e}"),
            Error::Eval(e) => write!(f, "{e}"),
            Error::Ingest(e) => write!(f, "{e}"),
            Error::Quant(e) => write!(f, "{e}"),
            Error::Io(path, e) => write!(f, "{path}: {e}"),
            Error::PreprocessingMismatch { expected, got } => write!(
                f,
                "preprocessing mismatch: model expects {expected} input, got {got}"
            ),
            Error::Stage(stage, inner) => write!(f, "{stage}: {inner}"),
        }
    }
}

impl std::error::Error for Error {}

macro_rules! impl_from_error {
    ($($variant:ident($ty:ty)),* $(,)?) => {
        $(impl From<$ty> for Error {
            fn from(e: $ty) -> Self { Error::$variant(e) }
        })*
    };
}

impl_from_error!(
    Tensor(tensor::TensorError),
    Model(model::ModelError),
    Engine(engine::EngineError),
    Image(image::ImageError),
    Audio(audio::AudioError),
    Cache(features::CacheError),
    Train(trainer::TrainError),
    Eval(eval::EvalError),
    Ingest(dataset::IngestError),
    Quant(quant::QuantError),
);
