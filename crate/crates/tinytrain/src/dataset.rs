//! Dataset directory ingestion: class discovery and train/validation
//! splitting.
//!
//! Two layouts are accepted:
//!
//! * `root/<class>/<files>` — classes are subdirectory names; files are
//!   split per class by a seeded shuffle at the configured ratio.
//! * `root/{train,val}/<class>/<files>` — an explicit split; `val` may be
//!   spelled `val` or `validation`.
//!
//! Discovery is fully sorted so the same directory and seed always produce
//! the same manifest.

use crate::util::derive_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum IngestError {
    /// Fewer than two usable class directories.
    NoClasses(String),
    /// A class directory has no usable training files.
    EmptyClass(String),
    /// The root mixes explicit train/val directories with class directories.
    MixedLayout(String),
    /// A validation class that never appears in training.
    UnknownClass(String),
    Io(String, std::io::Error),
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestError::NoClasses(d) => write!(f, "no classes: {d}"),
            IngestError::EmptyClass(d) => write!(f, "empty class: {d}"),
            IngestError::MixedLayout(d) => write!(f, "mixed dataset layout: {d}"),
            IngestError::UnknownClass(d) => write!(f, "unknown class: {d}"),
            IngestError::Io(path, e) => write!(f, "{path}: {e}"),
        }
    }
}

impl std::error::Error for IngestError {}

/// Media type of a dataset; decides both the file filter and the
/// preprocessing pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Image,
    Audio,
}

impl TaskKind {
    fn accepts(self, path: &Path) -> bool {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match self {
            TaskKind::Image => matches!(ext.as_deref(), Some("ppm" | "png")),
            TaskKind::Audio => matches!(ext.as_deref(), Some("wav")),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Image => f.write_str("image"),
            TaskKind::Audio => f.write_str("audio"),
        }
    }
}

/// How to derive the train/validation split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// Use explicit `train/` and `val/` directories.
    Explicit,
    /// Stratified per-class split: `train_fraction` of each class's files
    /// go to training, shuffled by `seed`.
    Ratio { train_fraction: f64, seed: u64 },
}

/// Discovered dataset: ordered classes and per-split file lists with class
/// indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub task: TaskKind,
    pub classes: Vec<String>,
    pub train: Vec<(PathBuf, usize)>,
    pub val: Vec<(PathBuf, usize)>,
}

impl DatasetManifest {
    pub fn train_count(&self) -> usize {
        self.train.len()
    }

    pub fn val_count(&self) -> usize {
        self.val.len()
    }

    /// Fingerprint of the manifest contents, used to key feature caches to
    /// the exact file lists they were built from.
    pub fn digest(&self) -> String {
        let mut text = String::new();
        for (path, class) in self.train.iter().chain(&self.val) {
            text.push_str(&format!("{}:{class}\n", path.display()));
        }
        crate::features::fingerprint_bytes(text.as_bytes())
    }
}

fn sorted_subdirs(root: &Path) -> Result<Vec<(String, PathBuf)>, IngestError> {
    let read = std::fs::read_dir(root)
        .map_err(|e| IngestError::Io(root.display().to_string(), e))?;
    let mut dirs = Vec::new();
    for entry in read {
        let entry = entry.map_err(|e| IngestError::Io(root.display().to_string(), e))?;
        let path = entry.path();
        if path.is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                if !name.starts_with('.') {
                    dirs.push((name.to_string(), path));
                }
            }
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn sorted_files(dir: &Path, task: TaskKind) -> Result<Vec<PathBuf>, IngestError> {
    let read =
        std::fs::read_dir(dir).map_err(|e| IngestError::Io(dir.display().to_string(), e))?;
    let mut files = Vec::new();
    for entry in read {
        let entry = entry.map_err(|e| IngestError::Io(dir.display().to_string(), e))?;
        let path = entry.path();
        if path.is_file() && task.accepts(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Build a manifest from a dataset directory.
pub fn ingest(root: &Path, task: TaskKind, split: &SplitSpec) -> Result<DatasetManifest, IngestError> {
    let subdirs = sorted_subdirs(root)?;
    let has_train = subdirs.iter().any(|(name, _)| name == "train");
    let val_dir_name = subdirs
        .iter()
        .map(|(name, _)| name.as_str())
        .find(|n| *n == "val" || *n == "validation");

    if has_train {
        let extras: Vec<&str> = subdirs
            .iter()
            .map(|(name, _)| name.as_str())
            .filter(|n| *n != "train" && Some(*n) != val_dir_name)
            .collect();
        if !extras.is_empty() {
            return Err(IngestError::MixedLayout(format!(
                "root has train/ plus unexpected directories {extras:?}; \
                 use either train/val subdirectories or one directory per class"
            )));
        }
        if matches!(split, SplitSpec::Ratio { .. }) {
            return Err(IngestError::MixedLayout(
                "root has an explicit train/ directory; a ratio split does not apply".into(),
            ));
        }
        return ingest_explicit(root, task, val_dir_name);
    }

    match split {
        SplitSpec::Explicit => Err(IngestError::MixedLayout(
            "explicit split requested but root has no train/ directory".into(),
        )),
        SplitSpec::Ratio {
            train_fraction,
            seed,
        } => ingest_ratio(root, task, subdirs, *train_fraction, *seed),
    }
}

fn ingest_explicit(
    root: &Path,
    task: TaskKind,
    val_dir_name: Option<&str>,
) -> Result<DatasetManifest, IngestError> {
    let train_root = root.join("train");
    let class_dirs = sorted_subdirs(&train_root)?;
    if class_dirs.len() < 2 {
        return Err(IngestError::NoClasses(format!(
            "{} has {} class directories, need at least 2",
            train_root.display(),
            class_dirs.len()
        )));
    }
    let classes: Vec<String> = class_dirs.iter().map(|(n, _)| n.clone()).collect();
    let mut train = Vec::new();
    for (idx, (name, dir)) in class_dirs.iter().enumerate() {
        let files = sorted_files(dir, task)?;
        if files.is_empty() {
            return Err(IngestError::EmptyClass(format!(
                "class '{name}' has no usable {task} files"
            )));
        }
        train.extend(files.into_iter().map(|f| (f, idx)));
    }

    let mut val = Vec::new();
    if let Some(val_name) = val_dir_name {
        let val_root = root.join(val_name);
        for (name, dir) in sorted_subdirs(&val_root)? {
            let Some(idx) = classes.iter().position(|c| *c == name) else {
                return Err(IngestError::UnknownClass(format!(
                    "validation class '{name}' does not appear under train/"
                )));
            };
            val.extend(sorted_files(&dir, task)?.into_iter().map(|f| (f, idx)));
        }
    }

    Ok(DatasetManifest {
        root: root.to_path_buf(),
        task,
        classes,
        train,
        val,
    })
}

fn ingest_ratio(
    root: &Path,
    task: TaskKind,
    class_dirs: Vec<(String, PathBuf)>,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest, IngestError> {
    if class_dirs.len() < 2 {
        return Err(IngestError::NoClasses(format!(
            "{} has {} class directories, need at least 2",
            root.display(),
            class_dirs.len()
        )));
    }
    let classes: Vec<String> = class_dirs.iter().map(|(n, _)| n.clone()).collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (idx, (name, dir)) in class_dirs.iter().enumerate() {
        let mut files = sorted_files(dir, task)?;
        if files.is_empty() {
            return Err(IngestError::EmptyClass(format!(
                "class '{name}' has no usable {task} files"
            )));
        }
        // Per-class shuffle stream so adding a class never reshuffles the
        // others.
        let mut rng = derive_rng(seed, idx as u64);
        for i in (1..files.len()).rev() {
            let j = rng.random_range(0..=i);
            files.swap(i, j);
        }
        let n_train = ((files.len() as f64 * train_fraction).round() as usize)
            .clamp(1, files.len());
        for (i, file) in files.into_iter().enumerate() {
            if i < n_train {
                train.push((file, idx));
            } else {
                val.push((file, idx));
            }
        }
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        task,
        classes,
        train,
        val,
    })
}
