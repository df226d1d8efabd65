//! Accuracy metrics over probability rows.

use crate::tensor::{Scalar, Tensor};

/// Class indices sorted by descending probability; equal values keep the
/// lower index first.
pub fn rank_classes<T: Scalar>(row: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// First index holding the row maximum.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn categorical_accuracy<T: Scalar>(probs: &Tensor<T>, targets: &[usize]) -> f64 {
    let k = probs.shape()[1];
    let correct = probs
        .data()
        .chunks_exact(k)
        .zip(targets)
        .filter(|(row, &t)| argmax(row) == t)
        .count();
    correct as f64 / targets.len() as f64
}

/// Fraction of rows whose target is among the `k` top-ranked classes.
pub fn topk_accuracy<T: Scalar>(probs: &Tensor<T>, targets: &[usize], k: usize) -> f64 {
    let n_classes = probs.shape()[1];
    let k = k.clamp(1, n_classes);
    let hits = probs
        .data()
        .chunks_exact(n_classes)
        .zip(targets)
        .filter(|(row, &t)| rank_classes(row)[..k].contains(&t))
        .count();
    hits as f64 / targets.len() as f64
}
