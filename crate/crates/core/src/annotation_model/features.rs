use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::annotator::AnnotatorSignal;
use crate::error::{Error, Result};

/// Fixed layout of the aggregator input: `[z_1, c_1, ..., z_N, c_N]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub annotators: usize,
    pub classes: usize,
}

impl FeatureLayout {
    pub fn new(annotators: usize, classes: usize) -> Self {
        Self {
            annotators,
            classes,
        }
    }

    pub fn width(&self) -> usize {
        2 * self.annotators * self.classes
    }

    /// Offset of `z_i[k]`.
    pub fn z_offset(&self, annotator: usize, class: usize) -> usize {
        2 * annotator * self.classes + class
    }

    /// Offset of `c_i[k]`.
    pub fn c_offset(&self, annotator: usize, class: usize) -> usize {
        (2 * annotator + 1) * self.classes + class
    }

    /// Concatenates signals in annotator order, failing unless exactly
    /// `self.annotators` signals over `self.classes` classes are given.
    pub fn assemble(&self, signals: &[AnnotatorSignal]) -> Result<MolamFeatures> {
        if signals.len() != self.annotators {
            return Err(Error::Shape(format!(
                "expected {} annotator signals, got {}",
                self.annotators,
                signals.len()
            )));
        }
        let features = assemble_features(signals)?;
        if features.layout.classes != self.classes {
            return Err(Error::Shape(format!(
                "expected {} classes, signals have {}",
                self.classes, features.layout.classes
            )));
        }
        Ok(features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MolamFeatures {
    pub values: Vec<f64>,
    pub layout: FeatureLayout,
}

/// Concatenates `[z_1, c_1, ..., z_N, c_N]`.
pub fn assemble_features(signals: &[AnnotatorSignal]) -> Result<MolamFeatures> {
    let first = signals
        .first()
        .ok_or_else(|| Error::Shape("no annotator signals".into()))?;
    let classes = first.z.len();
    let layout = FeatureLayout::new(signals.len(), classes);
    let mut values = Vec::with_capacity(layout.width());
    for (i, s) in signals.iter().enumerate() {
        if s.z.len() != classes || s.c.len() != classes {
            return Err(Error::Shape(format!(
                "annotator {i} reports {}/{} classes, expected {classes}",
                s.z.len(),
                s.c.len()
            )));
        }
        values.extend_from_slice(&s.z);
        values.extend_from_slice(&s.c);
    }
    Ok(MolamFeatures { values, layout })
}

/// Classes every annotator scores strictly below `delta`.
pub fn extract_negative_labels(signals: &[AnnotatorSignal], delta: f64) -> BTreeSet<usize> {
    let Some(first) = signals.first() else {
        return BTreeSet::new();
    };
    (0..first.z.len())
        .filter(|&k| signals.iter().all(|s| s.z.get(k).is_some_and(|&p| p < delta)))
        .collect()
}
