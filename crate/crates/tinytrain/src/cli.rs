//! Command-line interface. Each pipeline stage is its own subcommand so any
//! step can be run (and debugged) in isolation; `create` chains them all.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 data error,
//! 4 internal error.

use crate::config::RunConfig;
use crate::dataset::TaskKind;
use crate::eval::{emit_report, Aggregation};
use crate::features::load_cache;
use crate::model::ModelGraph;
use crate::pipeline;
use crate::quant::{quantize_model, size_report};
use crate::trainer::{train as train_head, export_head, HeadActivation, HeadSpec};
use crate::Error;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "tinytrain",
    version,
    about = "Build image and audio classifiers from a dataset directory using transfer learning"
)]
struct Cli {
    /// Worker threads for preprocessing and inference (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

/// Flags shared by dataset-consuming subcommands; they override the config
/// file when both are given.
#[derive(Args, Debug, Default)]
struct RunFlags {
    /// JSON config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root: one directory per class, or train/ and val/ trees.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Media type of the dataset.
    #[arg(long, value_enum)]
    task: Option<TaskKind>,
    /// Backbone model file (.ttml).
    #[arg(long)]
    backbone: Option<PathBuf>,
    /// Output directory for the model, caches, and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Drop the last N backbone nodes before feature extraction.
    #[arg(long)]
    drop_last: Option<usize>,
    /// Train fraction for ratio splits.
    #[arg(long)]
    ratio: Option<f64>,
    /// Master seed (split, augmentation, init, shuffling, dropout).
    #[arg(long)]
    seed: Option<u64>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Training mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Head dropout rate (default: 0.5 image, 0 audio).
    #[arg(long)]
    dropout: Option<f32>,
    /// Optimizer: adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    /// Skip int8 weight quantization when packaging.
    #[arg(long)]
    no_quantize: bool,
    /// Disable training-split augmentation.
    #[arg(long)]
    no_augment: bool,
    /// RMS threshold for audio silence trimming.
    #[arg(long)]
    silence_threshold: Option<f32>,
    /// Keep silent frames (disable trimming).
    #[arg(long)]
    no_trim: bool,
    /// Ignore and do not write feature caches.
    #[arg(long)]
    no_cache: bool,
}

impl RunFlags {
    fn into_config(self, threads: usize) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.data {
            cfg.data_dir = v;
        }
        if let Some(v) = self.task {
            cfg.task = v;
        }
        if let Some(v) = self.backbone {
            cfg.backbone = v;
        }
        if let Some(v) = self.out {
            cfg.out_dir = v;
        }
        if let Some(v) = self.drop_last {
            cfg.drop_last = v;
        }
        if let Some(v) = self.ratio {
            cfg.split_ratio = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.lr {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
            cfg.batch_size = v;
        }
        if let Some(v) = self.dropout {
            cfg.train.dropout = Some(v);
        }
        if let Some(v) = self.optimizer {
            cfg.train.optimizer = v;
        }
        if self.no_quantize {
            cfg.quantize = false;
        }
        if self.no_augment {
            cfg.augment.enabled = false;
        }
        if let Some(v) = self.silence_threshold {
            cfg.silence_threshold = v;
        }
        if self.no_trim {
            cfg.no_trim = true;
        }
        if self.no_cache {
            cfg.cache = false;
        }
        cfg.threads = threads;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Discover classes and the train/val split without processing media.
    Ingest {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run the whole pipeline and package a classifier.
    Create {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Extract backbone features into .ttfc caches (no training).
    Extract {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Train a head from existing feature caches and export it as a graph.
    Train {
        /// Training feature cache (.ttfc).
        #[arg(long)]
        train_cache: PathBuf,
        /// Validation feature cache (.ttfc).
        #[arg(long)]
        val_cache: PathBuf,
        /// Output directory for head.ttml and history.csv.
        #[arg(long, default_value = "tinytrain-out")]
        out: PathBuf,
        /// Head activation: softmax or sigmoid.
        #[arg(long, default_value = "softmax")]
        activation: String,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        dropout: Option<f32>,
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Quantize a model's weights to int8 and report the size change.
    Quantize {
        /// Input model (.ttml).
        #[arg(long)]
        model: PathBuf,
        /// Output path for the quantized model.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a packaged model against a labeled dataset directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
        /// Score audio per patch instead of per clip.
        #[arg(long)]
        per_sample: bool,
    },
    /// Classify one media file with a packaged model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Image (.ppm/.png) or audio (.wav) file.
        #[arg(long)]
        input: PathBuf,
        /// How many classes to print.
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Print a model file's manifest.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

/// Parse `std::env::args`, run, and return the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Ignore the error from configuring twice (tests call main repeatedly).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match run(cli.command, cli.threads) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command, threads: usize) -> Result<(), Error> {
    match command {
        Command::Ingest { flags } => {
            let mut cfg = flags.into_config(threads)?;
            if cfg.backbone.as_os_str().is_empty() {
                // Ingest needs no backbone; satisfy validation with a stub.
                cfg.backbone = PathBuf::from("-");
            }
            cfg.validate()?;
            let manifest = pipeline::ingest_for(&cfg)?;
            println!(
                "{} dataset at {}: {} classes, {} train / {} val files",
                cfg.task,
                cfg.data_dir.display(),
                manifest.classes.len(),
                manifest.train_count(),
                manifest.val_count()
            );
            for (idx, class) in manifest.classes.iter().enumerate() {
                let n_train = manifest.train.iter().filter(|(_, c)| *c == idx).count();
                let n_val = manifest.val.iter().filter(|(_, c)| *c == idx).count();
                println!("  {class}: {n_train} train, {n_val} val");
            }
            Ok(())
        }
        Command::Create { flags } => {
            let cfg = flags.into_config(threads)?;
            let outcome = pipeline::create(&cfg)?;
            println!("model: {}", outcome.model_path.display());
            if let Some(size) = outcome.size_report {
                println!("{size}");
            }
            println!(
                "validation accuracy: {:.1}% over {} {}",
                outcome.report.accuracy() * 100.0,
                outcome.report.sample_count,
                match cfg.task {
                    TaskKind::Image => "images",
                    TaskKind::Audio => "clips",
                }
            );
            for path in &outcome.report_files {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Extract { flags } => {
            let cfg = flags.into_config(threads)?;
            cfg.validate()?;
            let (_, _, train_cache, val_cache) = pipeline::build_caches(&cfg)?;
            println!(
                "train features {:?}, val features {:?} -> {}",
                train_cache.features.shape(),
                val_cache.features.shape(),
                cfg.out_dir.join("cache").display()
            );
            Ok(())
        }
        Command::Train {
            train_cache,
            val_cache,
            out,
            activation,
            lr,
            epochs,
            batch_size,
            dropout,
            optimizer,
            seed,
        } => {
            let mut cfg = RunConfig::default();
            if let Some(v) = lr {
                cfg.train.learning_rate = v;
            }
            if let Some(v) = epochs {
                cfg.train.epochs = v;
            }
            if let Some(v) = batch_size {
                cfg.train.batch_size = v;
            }
            if let Some(v) = optimizer {
                cfg.train.optimizer = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            let activation = match activation.as_str() {
                "softmax" => HeadActivation::Softmax,
                "sigmoid" => HeadActivation::Sigmoid,
                other => {
                    return Err(Error::Config(format!(
                        "unknown activation '{other}' (expected softmax or sigmoid)"
                    )))
                }
            };
            let spec = HeadSpec {
                dropout_rate: dropout.unwrap_or(0.0),
                activation,
            };
            let train_set = load_cache(&train_cache, None)?;
            let val_set = load_cache(&val_cache, Some(&train_set.backbone_fingerprint))?;
            let (head, history) = train_head(&train_set, &val_set, spec, &cfg.train_config())?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io(out.display().to_string(), e))?;
            let head_path = out.join("head.ttml");
            export_head(&head, "head").save(&head_path)?;
            let csv_path = out.join("history.csv");
            std::fs::write(&csv_path, history.to_csv())
                .map_err(|e| Error::Io(csv_path.display().to_string(), e))?;
            let last = history.epochs.last().expect("at least one epoch");
            println!(
                "trained head -> {} (final val acc {:.1}%)",
                head_path.display(),
                last.val_acc * 100.0
            );
            Ok(())
        }
        Command::Quantize { model, out } => {
            let graph = ModelGraph::load(&model)?;
            let quantized = quantize_model(&graph)?;
            quantized.save(&out)?;
            let report = size_report(&model, &out)?;
            println!("{report}");
            let report_path = out.with_extension("size.txt");
            std::fs::write(&report_path, report.to_text())
                .map_err(|e| Error::Io(report_path.display().to_string(), e))?;
            println!("wrote {}", report_path.display());
            Ok(())
        }
        Command::Eval {
            model,
            flags,
            per_sample,
        } => {
            let mut cfg = flags.into_config(threads)?;
            let graph = ModelGraph::load(&model)?;
            if cfg.backbone.as_os_str().is_empty() {
                cfg.backbone = model.clone();
            }
            cfg.validate()?;
            let manifest = pipeline::ingest_for(&cfg)?;
            let aggregation = per_sample.then_some(Aggregation::PerSample);
            let report =
                pipeline::evaluate_manifest_split(&cfg, &graph, &manifest, false, aggregation)?;
            println!("{}", report.to_text());
            let files = emit_report(&report, None, &cfg.out_dir)?;
            for path in files {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Predict { model, input, top } => {
            let prediction = pipeline::predict_file(&model, &input)?;
            println!("label: {}", prediction.label);
            for (name, prob) in prediction.ranked().into_iter().take(top) {
                println!("  {name}: {prob:.4}");
            }
            Ok(())
        }
        Command::Inspect { model } => {
            let graph = ModelGraph::load(&model)?;
            print!("{}", graph.manifest());
            Ok(())
        }
    }
}
