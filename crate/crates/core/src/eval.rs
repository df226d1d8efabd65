//! Blind-set scoring: top-1, top-5, gender-collapsed emotion accuracy, a
//! confusion matrix and the list of mispredictions.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{ClassLabel, LabeledExample};
use crate::model::SerModel;
use crate::optim::metrics::rank_classes;
use crate::tensor::TensorError;

pub const TOP_K: usize = 5;
const EVAL_CHUNK: usize = 16;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("{source_id}: {source}")]
    Example { source_id: String, source: TensorError },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Misprediction {
    pub source_id: String,
    pub actual: ClassLabel,
    pub predicted: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub top1_accuracy: f64,
    pub top5_accuracy: f64,
    /// Accuracy when male/female variants of an emotion count as the same class.
    pub emotion_accuracy: f64,
    pub class_labels: Vec<ClassLabel>,
    /// `confusion[actual][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub errors: Vec<Misprediction>,
}

impl EvalReport {
    pub fn correct(&self) -> usize {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Build a report from per-example probability rows.
pub fn report_from_probs(
    probs: &[Vec<f32>],
    targets: &[usize],
    source_ids: &[String],
    class_labels: &[ClassLabel],
) -> EvalReport {
    let k = class_labels.len();
    let n = probs.len();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut top5 = 0;
    let mut emotion_hits = 0;
    let mut errors = Vec::new();
    for ((row, &t), id) in probs.iter().zip(targets).zip(source_ids) {
        let ranked = rank_classes(row);
        let pred = ranked[0];
        confusion[t][pred] += 1;
        if ranked[..TOP_K.min(k)].contains(&t) {
            top5 += 1;
        }
        let (actual, predicted) = (class_labels[t], class_labels[pred]);
        if actual.emotion == predicted.emotion {
            emotion_hits += 1;
        }
        if pred != t {
            errors.push(Misprediction {
                source_id: id.clone(),
                actual,
                predicted,
            });
        }
    }
    let correct = n - errors.len();
    EvalReport {
        n,
        top1_accuracy: correct as f64 / n as f64,
        top5_accuracy: top5 as f64 / n as f64,
        emotion_accuracy: emotion_hits as f64 / n as f64,
        class_labels: class_labels.to_vec(),
        confusion,
        errors,
    }
}

/// Score `model` on `test_set` in eval mode.
pub fn evaluate(model: &SerModel, test_set: &[LabeledExample]) -> Result<EvalReport, EvalError> {
    if test_set.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    // validate shapes one by one so a bad example is named
    for ex in test_set {
        model.prepare_input(&ex.features).map_err(|source| EvalError::Example {
            source_id: ex.source_id.clone(),
            source,
        })?;
    }
    let features: Vec<_> = test_set.iter().map(|e| &e.features).collect();
    let probs = model.predict_probs(&features, EVAL_CHUNK)?;
    let targets: Vec<usize> = test_set.iter().map(|e| e.label.index()).collect();
    let ids: Vec<String> = test_set.iter().map(|e| e.source_id.clone()).collect();
    Ok(report_from_probs(&probs, &targets, &ids, &model.class_labels))
}

fn short_label(c: &ClassLabel) -> String {
    let g = match c.gender {
        crate::dataset::Gender::Male => 'M',
        crate::dataset::Gender::Female => 'F',
    };
    format!("{g}-{}", &c.emotion.as_str()[..3])
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

/// Plain-text report: summary, confusion matrix, mispredictions.
pub fn format_report(report: &EvalReport) -> String {
    let mut s = String::new();
    let n = report.n;
    let ratio = |x: f64| format!("{} ({}/{})", pct(x), (x * n as f64).round() as usize, n);
    let _ = writeln!(s, "Evaluation report");
    let _ = writeln!(s, "=================");
    let _ = writeln!(s, "examples:          {n}");
    let _ = writeln!(s, "top-1 accuracy:    {}", ratio(report.top1_accuracy));
    let _ = writeln!(s, "top-{TOP_K} accuracy:    {}", ratio(report.top5_accuracy));
    let _ = writeln!(
        s,
        "emotion accuracy:  {} (gender ignored)",
        ratio(report.emotion_accuracy)
    );
    let _ = writeln!(s);

    let _ = writeln!(s, "Confusion matrix (rows = actual, columns = predicted)");
    let _ = write!(s, "{:<16}", "");
    for c in &report.class_labels {
        let _ = write!(s, "{:>6}", short_label(c));
    }
    let _ = writeln!(s, " | {:>5}", "total");
    for (c, row) in report.class_labels.iter().zip(&report.confusion) {
        let _ = write!(s, "{:<16}", c.to_string());
        for v in row {
            let _ = write!(s, "{v:>6}");
        }
        let _ = writeln!(s, " | {:>5}", row.iter().sum::<usize>());
    }
    let _ = writeln!(s);

    let _ = writeln!(s, "Mispredictions: {} errors", report.errors.len());
    for (i, e) in report.errors.iter().enumerate() {
        let _ = writeln!(s, "{:>4}. {}: {} → {}", i + 1, e.source_id, e.actual, e.predicted);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<ClassLabel> {
        ClassLabel::all()
    }

    fn onehot(i: usize) -> Vec<f32> {
        let mut v = vec![0.0; 12];
        v[i] = 1.0;
        v
    }

    #[test]
    fn always_class_zero() {
        let probs = vec![onehot(0); 4];
        let ids: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let r = report_from_probs(&probs, &[0; 4], &ids, &labels());
        assert_eq!(r.top1_accuracy, 1.0);
        assert_eq!(r.confusion[0][0], 4);
        assert_eq!(r.confusion.iter().flatten().sum::<usize>(), 4);
        assert!(format_report(&r).contains("Mispredictions: 0 errors"));
    }

    #[test]
    fn gender_collapse() {
        // female happy (7) predicted as male happy (1)
        let r = report_from_probs(&[onehot(1)], &[7], &["x".into()], &labels());
        assert_eq!(r.top1_accuracy, 0.0);
        assert_eq!(r.emotion_accuracy, 1.0);
        assert_eq!(r.errors[0].to_owned().actual.to_string(), "female happy");
        assert!(format_report(&r).contains("x: female happy → male happy"));
    }
}
