//! Untrained ensemble labelers used as comparison points.

use crate::annotator::AnnotatorSignal;

use super::argmax;

/// Label of a single annotator: argmax of its scored-pass distribution.
pub fn single_label(signal: &AnnotatorSignal) -> usize {
    argmax(&signal.z)
}

/// Majority vote over every decoded generation of every annotator.
pub fn vote_label(signals: &[AnnotatorSignal]) -> usize {
    argmax(&sum_rows(signals.iter().map(|s| s.c.as_slice())))
}

/// Argmax of the averaged scored-pass distributions.
pub fn logits_label(signals: &[AnnotatorSignal]) -> usize {
    argmax(&sum_rows(signals.iter().map(|s| s.z.as_slice())))
}

fn sum_rows<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut total: Vec<f64> = Vec::new();
    for row in rows {
        if total.is_empty() {
            total = vec![0.0; row.len()];
        }
        total.iter_mut().zip(row).for_each(|(t, v)| *t += v);
    }
    total
}
