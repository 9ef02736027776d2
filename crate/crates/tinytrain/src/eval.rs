//! Accuracy, confusion matrices, and report/curve emission.
//!
//! Audio models are scored per clip by default: patch probabilities are
//! averaged per source clip before the argmax, which reduces to per-sample
//! scoring whenever each clip yields exactly one patch.

use crate::engine::{argmax, ExecutionPlan};
use crate::features::Sample;
use crate::model::ModelGraph;
use crate::tensor::Tensor;
use crate::trainer::TrainHistory;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

const EVAL_BATCH: usize = 32;

#[derive(Debug)]
pub enum EvalError {
    /// Model classes and dataset classes disagree.
    ClassMismatch(String),
    EmptyDataset,
    Io(String, std::io::Error),
    /// A group's samples carried inconsistent true labels.
    InconsistentGroup(String),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::ClassMismatch(d) => write!(f, "eval class mismatch: {d}"),
            EvalError::EmptyDataset => write!(f, "nothing to evaluate"),
            EvalError::Io(path, e) => write!(f, "{path}: {e}"),
            EvalError::InconsistentGroup(d) => write!(f, "inconsistent group labels: {d}"),
        }
    }
}

impl std::error::Error for EvalError {}

/// How sample predictions roll up into dataset rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Every sample scores on its own (images).
    PerSample,
    /// Samples sharing a group average their probabilities first (audio
    /// patches from one clip).
    PerClip,
}

/// Accuracy, confusion, and per-class metrics for one dataset pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub sample_count: usize,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        let trace: usize = (0..self.class_names.len())
            .map(|i| self.confusion[i][i])
            .sum();
        trace as f64 / self.sample_count as f64
    }

    /// Precision for one predicted class; 0 when the class was never
    /// predicted.
    pub fn precision(&self, class: usize) -> f64 {
        let predicted: usize = self.confusion.iter().map(|row| row[class]).sum();
        if predicted == 0 {
            0.0
        } else {
            self.confusion[class][class] as f64 / predicted as f64
        }
    }

    /// Recall for one true class; 0 when the class never occurred.
    pub fn recall(&self, class: usize) -> f64 {
        let actual: usize = self.confusion[class].iter().sum();
        if actual == 0 {
            0.0
        } else {
            self.confusion[class][class] as f64 / actual as f64
        }
    }

    /// Confusion matrix CSV with class names on both axes.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for name in &self.class_names {
            out.push(',');
            out.push_str(&name.replace(',', ";"));
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&self.class_names[i].replace(',', ";"));
            for count in row {
                out.push_str(&format!(",{count}"));
            }
            out.push('\n');
        }
        out
    }

    /// Plain-text summary; accuracy is reported to one decimal place.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("accuracy: {:.1}%\n", self.accuracy() * 100.0));
        out.push_str(&format!("samples: {}\n\n", self.sample_count));
        out.push_str(&format!(
            "{:<24} {:>10} {:>10} {:>8}\n",
            "class", "precision", "recall", "count"
        ));
        for (i, name) in self.class_names.iter().enumerate() {
            let count: usize = self.confusion[i].iter().sum();
            out.push_str(&format!(
                "{:<24} {:>9.1}% {:>9.1}% {:>8}\n",
                name,
                self.precision(i) * 100.0,
                self.recall(i) * 100.0,
                count
            ));
        }
        out
    }
}

/// Score a labeled sample stream against a classifier graph.
///
/// The graph's metadata classes must cover the dataset's class indices; the
/// report is identical under any reordering of the stream.
pub fn evaluate<I>(
    graph: &ModelGraph,
    samples: I,
    class_names: &[String],
    aggregation: Aggregation,
) -> Result<EvalReport, crate::Error>
where
    I: IntoIterator<Item = Result<Sample, crate::Error>>,
{
    let model_classes = graph.classes().unwrap_or_default();
    if model_classes != class_names {
        return Err(EvalError::ClassMismatch(format!(
            "model classes {model_classes:?} vs dataset classes {class_names:?}"
        ))
        .into());
    }
    let k = class_names.len();
    let plan = ExecutionPlan::new(graph).map_err(crate::Error::from)?;
    let in_shape = plan.input_shape().to_vec();
    let in_stride: usize = in_shape.iter().product();

    // (group, true class, summed probs, sample count) in first-seen order.
    let mut groups: BTreeMap<usize, (usize, Vec<f64>, usize)> = BTreeMap::new();
    let mut per_sample: Vec<(usize, usize)> = Vec::new(); // (true, predicted)

    let mut pending: Vec<Sample> = Vec::with_capacity(EVAL_BATCH);
    let mut iter = samples.into_iter();
    loop {
        pending.clear();
        for item in iter.by_ref() {
            pending.push(item?);
            if pending.len() == EVAL_BATCH {
                break;
            }
        }
        if pending.is_empty() {
            break;
        }
        let mut buf = Vec::with_capacity(pending.len() * in_stride);
        for s in &pending {
            let shape = s.input.shape();
            let ok = shape == in_shape.as_slice()
                || (shape.len() == in_shape.len() + 1
                    && shape[0] == 1
                    && shape[1..] == in_shape[..]);
            if !ok {
                return Err(crate::Error::Engine(crate::engine::EngineError::ShapeMismatch(
                    format!("sample shape {shape:?} vs model input {in_shape:?}"),
                )));
            }
            buf.extend_from_slice(s.input.as_f32().map_err(crate::Error::from)?);
            if s.class_index >= k {
                return Err(EvalError::ClassMismatch(format!(
                    "sample class index {} out of range for {k} classes",
                    s.class_index
                ))
                .into());
            }
        }
        let mut shape = vec![pending.len()];
        shape.extend_from_slice(&in_shape);
        let batch = Tensor::from_f32(shape, buf).map_err(crate::Error::from)?;
        let out = plan.run(&batch).map_err(crate::Error::from)?;
        let probs = out.as_f32().map_err(crate::Error::from)?;
        for (i, s) in pending.iter().enumerate() {
            let row = &probs[i * k..(i + 1) * k];
            match aggregation {
                Aggregation::PerSample => per_sample.push((s.class_index, argmax(row))),
                Aggregation::PerClip => {
                    let entry = groups
                        .entry(s.group)
                        .or_insert_with(|| (s.class_index, vec![0.0; k], 0));
                    if entry.0 != s.class_index {
                        return Err(EvalError::InconsistentGroup(format!(
                            "group {} has labels {} and {}",
                            s.group, entry.0, s.class_index
                        ))
                        .into());
                    }
                    for (acc, &p) in entry.1.iter_mut().zip(row) {
                        *acc += f64::from(p);
                    }
                    entry.2 += 1;
                }
            }
        }
    }

    let mut confusion = vec![vec![0usize; k]; k];
    let mut total = 0usize;
    match aggregation {
        Aggregation::PerSample => {
            for (truth, pred) in per_sample {
                confusion[truth][pred] += 1;
                total += 1;
            }
        }
        Aggregation::PerClip => {
            for (truth, sums, count) in groups.into_values() {
                let mean: Vec<f32> = sums.iter().map(|&s| (s / count as f64) as f32).collect();
                confusion[truth][argmax(&mean)] += 1;
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(EvalError::EmptyDataset.into());
    }
    Ok(EvalReport {
        class_names: class_names.to_vec(),
        confusion,
        sample_count: total,
    })
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

/// One labeled line in a plot panel: (legend label, stroke color, values).
type PlotSeries = (&'static str, &'static str, Vec<f64>);

/// Self-contained SVG with loss and accuracy curves, one polyline point per
/// epoch per series.
pub fn curves_svg(history: &TrainHistory) -> String {
    const W: f64 = 840.0;
    const H: f64 = 420.0;
    const PANEL_W: f64 = 360.0;
    const PANEL_H: f64 = 300.0;
    const MARGIN: f64 = 60.0;

    let epochs = history.epochs.len().max(1);
    let series = |pick: &dyn Fn(&crate::trainer::EpochRecord) -> f64| -> Vec<f64> {
        history.epochs.iter().map(pick).collect()
    };
    let panels: [(&str, Vec<PlotSeries>); 2] = [
        (
            "loss",
            vec![
                ("train", "#1f77b4", series(&|e| e.train_loss)),
                ("val", "#d62728", series(&|e| e.val_loss)),
            ],
        ),
        (
            "accuracy",
            vec![
                ("train", "#1f77b4", series(&|e| e.train_acc)),
                ("val", "#d62728", series(&|e| e.val_acc)),
            ],
        ),
    ];

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    );
    for (panel_idx, (title, lines)) in panels.iter().enumerate() {
        let x0 = MARGIN + panel_idx as f64 * (PANEL_W + MARGIN);
        let y0 = MARGIN;
        let lo = lines
            .iter()
            .flat_map(|(_, _, v)| v.iter().copied())
            .fold(f64::INFINITY, f64::min)
            .min(0.0);
        let hi = lines
            .iter()
            .flat_map(|(_, _, v)| v.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
            .max(lo + 1e-9);
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
            x0 + PANEL_W / 2.0,
            y0 - 20.0
        ));
        svg.push_str(&format!(
            "<rect x=\"{x0}\" y=\"{y0}\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" \
             fill=\"none\" stroke=\"#999\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi:.3}</text>\n",
            x0 - 6.0,
            y0 + 12.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{lo:.3}</text>\n",
            x0 - 6.0,
            y0 + PANEL_H
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">epoch 1..{epochs}</text>\n",
            x0 + PANEL_W / 2.0,
            y0 + PANEL_H + 24.0
        ));
        for (series_idx, (label, color, values)) in lines.iter().enumerate() {
            let points: Vec<String> = values
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let x = if epochs == 1 {
                        x0 + PANEL_W / 2.0
                    } else {
                        x0 + PANEL_W * i as f64 / (epochs - 1) as f64
                    };
                    let y = y0 + PANEL_H - PANEL_H * (v - lo) / (hi - lo);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                points.join(" ")
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>\n",
                x0 + 8.0 + series_idx as f64 * 60.0,
                y0 + 16.0
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write `history.csv`, `confusion.csv`, `report.txt`, and `curves.svg` into
/// `out_dir`, returning the paths written. History-dependent files are
/// skipped when no history is given (e.g. `eval` on a saved model).
pub fn emit_report(
    report: &EvalReport,
    history: Option<&TrainHistory>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| EvalError::Io(out_dir.display().to_string(), e))?;
    let write = |name: &str, content: &str| -> Result<PathBuf, EvalError> {
        let path = out_dir.join(name);
        std::fs::write(&path, content).map_err(|e| EvalError::Io(path.display().to_string(), e))?;
        Ok(path)
    };
    let mut written = Vec::new();
    if let Some(history) = history {
        written.push(write("history.csv", &history.to_csv())?);
        written.push(write("curves.svg", &curves_svg(history))?);
    }
    written.push(write("confusion.csv", &report.confusion_csv())?);
    written.push(write("report.txt", &report.to_text())?);
    Ok(written)
}
