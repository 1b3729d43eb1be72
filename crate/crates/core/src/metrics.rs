//! Classification metrics and the line-delimited experiment report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{HarError, Result};

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let c = class_names.len();
        Self {
            class_names,
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn with_classes(c: usize) -> Self {
        Self::new((0..c).map(|i| i.to_string()).collect())
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn from_predictions(preds: &[usize], labels: &[usize], class_names: Vec<String>) -> Result<Self> {
        let mut m = Self::new(class_names);
        m.add(preds, labels)?;
        Ok(m)
    }

    pub fn add(&mut self, preds: &[usize], labels: &[usize]) -> Result<()> {
        if preds.len() != labels.len() {
            return Err(HarError::Shape(format!(
                "{} predictions but {} labels",
                preds.len(),
                labels.len()
            )));
        }
        let c = self.n_classes();
        if let Some(bad) = preds.iter().chain(labels).find(|&&v| v >= c) {
            return Err(HarError::InvalidArgument(format!("class id {bad} out of range for {c} classes")));
        }
        for (&p, &t) in preds.iter().zip(labels) {
            self.counts[t][p] += 1;
        }
        Ok(())
    }

    /// Element-wise sum with another matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes() != self.n_classes() {
            return Err(HarError::Shape("cannot merge confusion matrices of different sizes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(HarError::Data("accuracy of an empty confusion matrix".into()));
        }
        let hit: u64 = (0..self.n_classes()).map(|i| self.counts[i][i]).sum();
        Ok(hit as f64 / total as f64)
    }

    /// Per-class F1; an undefined precision or recall counts as 0.
    pub fn per_class_f1(&self) -> Vec<f64> {
        let c = self.n_classes();
        (0..c)
            .map(|k| {
                let tp = self.counts[k][k] as f64;
                let actual: u64 = self.counts[k].iter().sum();
                let predicted: u64 = (0..c).map(|t| self.counts[t][k]).sum();
                let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
                let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
                if p + r == 0.0 {
                    0.0
                } else {
                    2.0 * p * r / (p + r)
                }
            })
            .collect()
    }

    /// Unweighted mean of the per-class F1 scores.
    pub fn mean_f1(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(HarError::Data("mean F1 of an empty confusion matrix".into()));
        }
        let f = self.per_class_f1();
        Ok(f.iter().sum::<f64>() / f.len() as f64)
    }

    /// Header row of predicted class names, then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("truth\\pred");
        for n in &self.class_names {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Round to the reporting precision of four decimal places.
pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// One line of the epoch report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub epoch: usize,
    pub split: String,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub mean_f1: Option<f64>,
}

impl EpochRecord {
    pub fn rounded(mut self) -> Self {
        self.loss = self.loss.map(round4);
        self.accuracy = self.accuracy.map(round4);
        self.mean_f1 = self.mean_f1.map(round4);
        self
    }
}

/// Split-level metrics at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMetrics {
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub mean_f1: Option<f64>,
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| HarError::Format(e.to_string()))?);
        out.push('\n');
    }
    codec::write_file(path, out.as_bytes())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarError::Ingest {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
