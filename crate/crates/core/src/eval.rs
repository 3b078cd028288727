//! Confusion counts, the four reported metrics and split evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::Model;
use crate::data::{check_files, load_batch, samples, InputSpec, Split, TileRecord};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Counts predictions `p >= threshold` against 0/1 labels.
pub fn confusion(probs: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    if probs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} probabilities for {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, 1) => c.tp += 1,
            (true, 0) => c.fp += 1,
            (false, 0) => c.tn += 1,
            (false, 1) => c.fn_ += 1,
            (_, y) => return Err(Error::InvalidArgument(format!("label {y} is not 0 or 1"))),
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Names of metrics whose denominator was zero; those are reported as 0.
    pub degenerate_flags: Vec<String>,
}

/// Accuracy, precision, recall and F1; any 0/0 becomes 0 and is flagged.
pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let mut flags = Vec::new();
    let mut ratio = |num: usize, den: usize, name: &str| {
        if den == 0 {
            flags.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = ratio(c.tp + c.tn, c.total(), "accuracy");
    let precision = ratio(c.tp, c.tp + c.fp, "precision");
    let recall = ratio(c.tp, c.tp + c.fn_, "recall");
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        flags.push("f1".to_string());
        0.0
    };
    Metrics { accuracy, precision, recall, f1, degenerate_flags: flags }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub n: usize,
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate_flags: Vec<String>,
}

impl MetricsReport {
    pub fn new(split: &str, threshold: f64, c: ConfusionCounts) -> Self {
        let m = metrics(&c);
        MetricsReport {
            split: split.to_string(),
            n: c.total(),
            threshold,
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            degenerate_flags: m.degenerate_flags,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

/// Per-tile output row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub path: String,
    pub label: u8,
    pub prob: f64,
    pub pred: u8,
}

/// Batched inference over one split of a manifest rooted at `root`.
///
/// All missing tile files are reported together before any inference runs.
/// Predictions are returned sorted by path.
pub fn evaluate_split(
    model: &Model,
    root: &Path,
    records: &[TileRecord],
    split: Split,
    spec: &InputSpec,
    threshold: f64,
    batch_size: usize,
) -> Result<(MetricsReport, Vec<Prediction>)> {
    let mut items: Vec<(&TileRecord, _)> = records
        .iter()
        .filter(|r| r.split == split && r.kept)
        .zip(samples(root, records, split))
        .collect();
    if items.is_empty() {
        return Err(Error::Data(format!("split {split} has no tiles")));
    }
    items.sort_by(|a, b| a.0.path.cmp(&b.0.path));
    let all: Vec<_> = items.iter().map(|(_, s)| s.clone()).collect();
    check_files(&all)?;
    let mut probs = Vec::with_capacity(all.len());
    for chunk in all.chunks(batch_size.max(1)) {
        let (x, _) = load_batch(chunk, spec)?;
        probs.extend(model.predict(&x)?);
    }
    let labels: Vec<u8> = all.iter().map(|s| s.label).collect();
    let report = MetricsReport::new(split.as_str(), threshold, confusion(&probs, &labels, threshold)?);
    let preds = items
        .iter()
        .zip(&probs)
        .map(|((r, _), &p)| Prediction { path: r.path.clone(), label: r.label, prob: p, pred: (p >= threshold) as u8 })
        .collect();
    Ok((report, preds))
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    std::fs::write(path, report.to_json() + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in preds {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let c = ConfusionCounts { tp: 2, fp: 1, tn: 6, fn_: 1 };
        let m = metrics(&c);
        assert_eq!(m.accuracy, 0.8);
        assert_eq!((m.precision, m.recall), (2.0 / 3.0, 2.0 / 3.0));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!(m.degenerate_flags.is_empty());
    }

    #[test]
    fn degenerate_precision() {
        let m = metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 3, fn_: 1 });
        assert_eq!(m.precision, 0.0);
        assert!(m.degenerate_flags.contains(&"precision".to_string()));
    }

    #[test]
    fn simple_counts_and_errors() {
        let c = confusion(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 });
        assert!(confusion(&[], &[], 0.5).is_err());
        assert!(confusion(&[0.3], &[2], 0.5).is_err());
    }

    #[test]
    fn report_json_fields() {
        let r = MetricsReport::new("test", 0.5, ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 });
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut want = ["split", "n", "threshold", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "f1", "degenerate_flags"];
        keys.sort_unstable();
        want.sort_unstable();
        assert_eq!(keys, want);
    }
}
