//! Run configuration: one serializable struct covering every stage.
//!
//! The effective config is echoed verbatim (as canonical JSON) into the
//! packaged model's metadata, so a model file fully describes how it was
//! built. Configs can be loaded from a JSON file and overridden by CLI
//! flags.

use crate::dataset::TaskKind;
use crate::image::AugmentConfig;
use crate::trainer::{HeadActivation, HeadSpec, Optimizer, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    pub enabled: bool,
    pub hflip_prob: f32,
    pub rotation_max_deg: f32,
    pub zoom_lo: f32,
    pub zoom_hi: f32,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        let base = AugmentConfig::default();
        AugmentSettings {
            enabled: base.enabled,
            hflip_prob: base.hflip_prob,
            rotation_max_deg: base.rotation_max_deg,
            zoom_lo: base.zoom_range.0,
            zoom_hi: base.zoom_range.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: String,
    /// Head dropout rate; `None` picks the task default (0.5 for images,
    /// none for audio).
    pub dropout: Option<f32>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 32,
            optimizer: "adam".into(),
            dropout: None,
        }
    }
}

/// Everything `create` needs, serializable and overridable from the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub data_dir: PathBuf,
    pub backbone: PathBuf,
    pub out_dir: PathBuf,
    /// Nodes to drop from the end of the backbone before extraction (e.g. 3
    /// to strip a pooling + dense + activation prediction head).
    pub drop_last: usize,
    /// Per-class fraction of files used for training when the dataset has no
    /// explicit train/val directories.
    pub split_ratio: f64,
    /// Master seed for splitting, augmentation, initialization, shuffling,
    /// and dropout.
    pub seed: u64,
    pub augment: AugmentSettings,
    pub train: TrainSettings,
    /// Quantize weights to int8 in the packaged model.
    pub quantize: bool,
    /// RMS threshold for audio silence trimming.
    pub silence_threshold: f32,
    /// Disable silence trimming entirely.
    pub no_trim: bool,
    /// Feature-extraction batch size.
    pub batch_size: usize,
    /// Reuse feature caches when fingerprints match.
    pub cache: bool,
    /// Worker threads for preprocessing (0 = all logical cores).
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskKind::Image,
            data_dir: PathBuf::new(),
            backbone: PathBuf::new(),
            out_dir: PathBuf::from("tinytrain-out"),
            drop_last: 0,
            split_ratio: 0.8,
            seed: 0,
            augment: AugmentSettings::default(),
            train: TrainSettings::default(),
            quantize: true,
            silence_threshold: crate::audio::DEFAULT_SILENCE_RMS,
            no_trim: false,
            batch_size: 32,
            cache: true,
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<RunConfig, crate::Error> {
        serde_json::from_str(json).map_err(|e| crate::Error::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunConfig, crate::Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    /// Canonical JSON form, embedded into model metadata and written next to
    /// the reports.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), crate::Error> {
        let err = |msg: String| Err(crate::Error::Config(msg));
        if self.data_dir.as_os_str().is_empty() {
            return err("data_dir is required".into());
        }
        if self.backbone.as_os_str().is_empty() {
            return err("backbone is required".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio <= 1.0) {
            return err(format!("split_ratio {} outside (0, 1]", self.split_ratio));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return err("epochs and batch_size must be >= 1".into());
        }
        if self.train.learning_rate < 0.0 {
            return err(format!("negative learning rate {}", self.train.learning_rate));
        }
        if let Some(rate) = self.train.dropout {
            if !(0.0..1.0).contains(&rate) {
                return err(format!("dropout {rate} outside [0, 1)"));
            }
        }
        if self.batch_size == 0 {
            return err("extraction batch_size must be >= 1".into());
        }
        if self.silence_threshold < 0.0 {
            return err(format!("negative silence threshold {}", self.silence_threshold));
        }
        self.train
            .optimizer
            .parse::<Optimizer>()
            .map_err(crate::Error::Config)?;
        self.augment_config()
            .validate()
            .map_err(crate::Error::Config)?;
        Ok(())
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            enabled: self.augment.enabled,
            hflip_prob: self.augment.hflip_prob,
            rotation_max_deg: self.augment.rotation_max_deg,
            zoom_range: (self.augment.zoom_lo, self.augment.zoom_hi),
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.seed,
            optimizer: self.train.optimizer.parse().unwrap_or(Optimizer::adam_default()),
        }
    }

    pub fn head_spec(&self) -> HeadSpec {
        match self.task {
            TaskKind::Image => HeadSpec {
                dropout_rate: self.train.dropout.unwrap_or(0.5),
                activation: HeadActivation::Softmax,
            },
            TaskKind::Audio => HeadSpec {
                dropout_rate: self.train.dropout.unwrap_or(0.0),
                activation: HeadActivation::Sigmoid,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_stable() {
        let cfg = RunConfig {
            data_dir: PathBuf::from("/tmp/data"),
            backbone: PathBuf::from("backbone.ttml"),
            seed: 42,
            ..RunConfig::default()
        };
        let json = cfg.to_json();
        let back = RunConfig::from_json(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn defaults_validate_once_paths_are_set() {
        let cfg = RunConfig {
            data_dir: PathBuf::from("d"),
            backbone: PathBuf::from("b"),
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn bad_values_are_config_errors() {
        let base = RunConfig {
            data_dir: PathBuf::from("d"),
            backbone: PathBuf::from("b"),
            ..RunConfig::default()
        };
        let mut bad = base.clone();
        bad.split_ratio = 1.5;
        assert!(bad.validate().is_err());
        let mut bad = base.clone();
        bad.train.optimizer = "adagrad".into();
        assert!(bad.validate().is_err());
        let mut bad = base.clone();
        bad.train.dropout = Some(1.0);
        assert!(bad.validate().is_err());
        let mut bad = base;
        bad.augment.zoom_lo = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = RunConfig::from_json("{\"tassk\": \"image\"}").unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }

    #[test]
    fn task_defaults_pick_head() {
        let mut cfg = RunConfig {
            task: TaskKind::Image,
            ..RunConfig::default()
        };
        assert_eq!(cfg.head_spec().dropout_rate, 0.5);
        cfg.task = TaskKind::Audio;
        assert_eq!(cfg.head_spec().dropout_rate, 0.0);
        cfg.train.dropout = Some(0.3);
        assert_eq!(cfg.head_spec().dropout_rate, 0.3);
    }
}
