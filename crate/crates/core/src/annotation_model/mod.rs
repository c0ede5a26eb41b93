//! The mixture-of-annotators labeling model.
//!
//! Annotator signals are concatenated into a fixed-width feature vector
//! ([`FeatureLayout`]) and fed to a trained aggregator that predicts the
//! positive label. Negative labels are rule based: the classes every
//! annotator scores below `delta`, minus the predicted positive label.
//!
//! The aggregator is trained once on the gold-labeled seed set and then
//! expanded by self-training: unlabeled instances it scores with confidence
//! at least `sigma` join the training set under their predicted label.

pub mod baselines;
mod features;
pub mod gbdt;
pub mod logistic;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotator::AnnotatorSignal;
use crate::error::{Error, Result};

pub use features::{assemble_features, extract_negative_labels, FeatureLayout, MolamFeatures};
pub use gbdt::{train_gbdt, GbdtModel, GbdtParams};
pub use logistic::{train_logistic, LogisticModel, LogisticParams};

const MODEL_FORMAT_VERSION: u32 = 1;

/// Which learner backs the aggregator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum AggregatorConfig {
    Gbdt(GbdtParams),
    Logistic(LogisticParams),
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        AggregatorConfig::Gbdt(GbdtParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum Aggregator {
    Gbdt(GbdtModel),
    Logistic(LogisticModel),
}

impl Aggregator {
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Aggregator::Gbdt(m) => m.predict_proba(x),
            Aggregator::Logistic(m) => m.predict_proba(x),
        }
    }
}

/// Trains the configured backend. `validation` is used for early stopping
/// where the backend supports it.
pub fn train_aggregator(
    config: &AggregatorConfig,
    x: &[Vec<f64>],
    y: &[usize],
    num_classes: usize,
    validation: Option<(&[Vec<f64>], &[usize])>,
) -> Result<Aggregator> {
    match config {
        AggregatorConfig::Gbdt(p) => {
            train_gbdt(x, y, num_classes, p, validation).map(Aggregator::Gbdt)
        }
        AggregatorConfig::Logistic(p) => {
            train_logistic(x, y, num_classes, p).map(Aggregator::Logistic)
        }
    }
}

/// Positive label, negative labels and aggregator confidence for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub y_plus: usize,
    pub y_minus: BTreeSet<usize>,
    pub confidence: f64,
    /// Full aggregator distribution over classes.
    pub distribution: Vec<f64>,
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Builds an annotation from a class distribution and the rule-based
/// negative set, removing the positive label from the negatives.
pub fn resolve_annotation(distribution: Vec<f64>, mut y_minus: BTreeSet<usize>) -> Annotation {
    let y_plus = argmax(&distribution);
    y_minus.remove(&y_plus);
    Annotation {
        y_plus,
        y_minus,
        confidence: distribution[y_plus],
        distribution,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    /// Index into the unlabeled candidates passed to [`pseudo_label_expand`].
    pub index: usize,
    pub label: usize,
    pub confidence: f64,
    pub round: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoLabelOutcome {
    pub aggregator: Aggregator,
    pub admissions: Vec<Admission>,
    pub rounds_run: usize,
    /// Combined training rows: gold first, then admissions in order.
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<usize>,
}

/// Self-training loop. Each round scores the still-unadmitted candidates;
/// those with top probability `>= sigma` are admitted with their predicted
/// label (hard labels, fixed thereafter) and the aggregator is retrained on
/// gold plus all admissions. Stops when a round admits nothing or after
/// `max_rounds` rounds.
#[allow(clippy::too_many_arguments)]
pub fn pseudo_label_expand(
    initial: Aggregator,
    config: &AggregatorConfig,
    gold_x: &[Vec<f64>],
    gold_y: &[usize],
    unlabeled: &[Vec<f64>],
    num_classes: usize,
    sigma: f64,
    max_rounds: usize,
    validation: Option<(&[Vec<f64>], &[usize])>,
) -> Result<PseudoLabelOutcome> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::Config(vec![format!("sigma must be in (0, 1], got {sigma}")]));
    }
    let mut aggregator = initial;
    let mut train_x = gold_x.to_vec();
    let mut train_y = gold_y.to_vec();
    let mut admitted = vec![false; unlabeled.len()];
    let mut admissions = Vec::new();
    let mut rounds_run = 0;

    for round in 1..=max_rounds {
        let mut new = Vec::new();
        for (i, x) in unlabeled.iter().enumerate() {
            if admitted[i] {
                continue;
            }
            let p = aggregator.predict_proba(x);
            let label = argmax(&p);
            if p[label] >= sigma {
                new.push(Admission {
                    index: i,
                    label,
                    confidence: p[label],
                    round,
                });
            }
        }
        if new.is_empty() {
            break;
        }
        rounds_run = round;
        for a in &new {
            admitted[a.index] = true;
            train_x.push(unlabeled[a.index].clone());
            train_y.push(a.label);
        }
        admissions.extend(new);
        aggregator = train_aggregator(config, &train_x, &train_y, num_classes, validation)?;
    }
    Ok(PseudoLabelOutcome {
        aggregator,
        admissions,
        rounds_run,
        train_x,
        train_y,
    })
}

/// A trained aggregator bound to a feature layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationModel {
    pub layout: FeatureLayout,
    pub aggregator: Aggregator,
    /// Annotator names in feature order.
    pub annotators: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: AnnotationModel,
}

impl AnnotationModel {
    pub fn distribution(&self, signals: &[AnnotatorSignal]) -> Result<Vec<f64>> {
        let h = self.layout.assemble(signals)?;
        Ok(self.aggregator.predict_proba(&h.values))
    }

    /// Labels one instance from its annotator signals.
    pub fn annotate(&self, signals: &[AnnotatorSignal], delta: f64) -> Result<Annotation> {
        let distribution = self.distribution(signals)?;
        Ok(resolve_annotation(
            distribution,
            extract_negative_labels(signals, delta),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        crate::io::write_atomic(path, serde_json::to_string(&file)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported annotation model format {}",
                path.display(),
                file.format_version
            )));
        }
        Ok(file.model)
    }
}

/// Settings for [`fit_annotation_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub aggregator: AggregatorConfig,
    pub sigma: f64,
    pub pseudo_label: bool,
    pub max_rounds: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            aggregator: AggregatorConfig::default(),
            sigma: 0.9,
            pseudo_label: true,
            max_rounds: 5,
        }
    }
}

/// Signals of one instance plus its label, as consumed by [`fit_annotation_model`].
pub struct LabeledSignals<'a> {
    pub signals: &'a [AnnotatorSignal],
    pub label: usize,
}

/// Trains on gold-labeled signals, then optionally self-trains on
/// `unlabeled` signal rows.
pub fn fit_annotation_model(
    config: &FitConfig,
    annotators: Vec<String>,
    num_classes: usize,
    gold: &[LabeledSignals<'_>],
    unlabeled: &[Vec<AnnotatorSignal>],
    validation: &[LabeledSignals<'_>],
) -> Result<(AnnotationModel, Vec<Admission>)> {
    let layout = FeatureLayout::new(annotators.len(), num_classes);
    let rows = |set: &[LabeledSignals<'_>]| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let mut x = Vec::with_capacity(set.len());
        let mut y = Vec::with_capacity(set.len());
        for item in set {
            x.push(layout.assemble(item.signals)?.values);
            y.push(item.label);
        }
        Ok((x, y))
    };
    let (gx, gy) = rows(gold)?;
    let (vx, vy) = rows(validation)?;
    let val = (!vx.is_empty()).then_some((vx.as_slice(), vy.as_slice()));
    let initial = train_aggregator(&config.aggregator, &gx, &gy, num_classes, val)?;

    let (aggregator, admissions) = if config.pseudo_label && !unlabeled.is_empty() {
        let ux = unlabeled
            .iter()
            .map(|s| layout.assemble(s).map(|h| h.values))
            .collect::<Result<Vec<_>>>()?;
        let outcome = pseudo_label_expand(
            initial,
            &config.aggregator,
            &gx,
            &gy,
            &ux,
            num_classes,
            config.sigma,
            config.max_rounds,
            val,
        )?;
        (outcome.aggregator, outcome.admissions)
    } else {
        (initial, Vec::new())
    };
    Ok((
        AnnotationModel {
            layout,
            aggregator,
            annotators,
        },
        admissions,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::simulated::{sample_signal, SimulatedSpec};

    fn perfect_signals(gold: usize, seed: u64) -> Vec<AnnotatorSignal> {
        (0..3)
            .map(|j| sample_signal(&SimulatedSpec::identity(4), gold, 5, seed * 10 + j))
            .collect()
    }

    fn noisy_spec() -> SimulatedSpec {
        let row = |g: usize| (0..4).map(|k| if k == g { 0.7 } else { 0.1 }).collect();
        SimulatedSpec::new((0..4).map(row).collect(), 1.0)
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3, 0.3]), 1);
    }

    #[test]
    fn conflict_resolution_drops_positive_from_negatives() {
        let a = resolve_annotation(vec![0.1, 0.0, 0.2, 0.7], BTreeSet::from([1, 3]));
        assert_eq!(a.y_plus, 3);
        assert_eq!(a.y_minus, BTreeSet::from([1]));
        assert_eq!(a.confidence, 0.7);
    }

    #[test]
    fn perfect_annotators_are_learned() {
        let rows: Vec<(Vec<AnnotatorSignal>, usize)> =
            (0..40).map(|i| (perfect_signals(i % 4, i as u64), i % 4)).collect();
        let gold: Vec<LabeledSignals> = rows
            .iter()
            .map(|(s, l)| LabeledSignals { signals: s, label: *l })
            .collect();
        let config = FitConfig {
            pseudo_label: false,
            ..FitConfig::default()
        };
        let names = vec!["a".into(), "b".into(), "c".into()];
        let (model, admissions) = fit_annotation_model(&config, names, 4, &gold, &[], &[]).unwrap();
        assert!(admissions.is_empty());
        let a = model.annotate(&perfect_signals(2, 999), 0.001).unwrap();
        assert_eq!(a.y_plus, 2);
        assert!(a.confidence > 0.9);
        assert_eq!(a.y_minus, BTreeSet::from([0, 1, 3]));

        let uniform = vec![
            AnnotatorSignal {
                z: vec![0.25; 4],
                c: vec![0.2; 4],
                decoded: vec![]
            };
            3
        ];
        assert!(model.annotate(&uniform, 0.001).unwrap().y_minus.is_empty());
        assert!(matches!(model.annotate(&uniform[..2], 0.001), Err(Error::Shape(_))));
    }

    #[test]
    fn pseudo_labels_respect_sigma() {
        let spec = noisy_spec();
        let sig = |g: usize, s: u64| -> Vec<AnnotatorSignal> {
            (0..3).map(|j| sample_signal(&spec, g, 5, s * 7 + j)).collect()
        };
        let layout = FeatureLayout::new(3, 4);
        let gx: Vec<Vec<f64>> = (0..50).map(|i| layout.assemble(&sig(i % 4, i as u64)).unwrap().values).collect();
        let gy: Vec<usize> = (0..50).map(|i| i % 4).collect();
        let ux: Vec<Vec<f64>> = (0..300)
            .map(|i| layout.assemble(&sig(i % 4, 1000 + i as u64)).unwrap().values)
            .collect();
        let config = AggregatorConfig::Gbdt(GbdtParams::new(0.1, 3, 60));
        let initial = train_aggregator(&config, &gx, &gy, 4, None).unwrap();

        let out = pseudo_label_expand(initial.clone(), &config, &gx, &gy, &ux, 4, 0.9, 5, None).unwrap();
        assert!(!out.admissions.is_empty());
        assert!(out.admissions.iter().all(|a| a.confidence >= 0.9));
        assert_eq!(out.train_x.len(), 50 + out.admissions.len());
        assert_eq!(&out.train_y[..50], &gy[..]);

        let confidences: Vec<f64> = ux
            .iter()
            .map(|x| {
                let p = initial.predict_proba(x);
                p[argmax(&p)]
            })
            .collect();
        assert!(confidences.iter().all(|c| *c < 1.0));
        let none = pseudo_label_expand(initial.clone(), &config, &gx, &gy, &ux, 4, 1.0, 5, None).unwrap();
        assert!(none.admissions.is_empty());
        assert_eq!(none.rounds_run, 0);
        assert_eq!(none.aggregator, initial);

        assert!(pseudo_label_expand(initial, &config, &gx, &gy, &ux, 4, 0.0, 5, None).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let rows: Vec<(Vec<AnnotatorSignal>, usize)> =
            (0..20).map(|i| (perfect_signals(i % 2, i as u64), i % 2)).collect();
        let gold: Vec<LabeledSignals> = rows
            .iter()
            .map(|(s, l)| LabeledSignals { signals: s, label: *l })
            .collect();
        let config = FitConfig {
            aggregator: AggregatorConfig::Gbdt(GbdtParams::new(0.1, 2, 10)),
            pseudo_label: false,
            ..FitConfig::default()
        };
        let (model, _) =
            fit_annotation_model(&config, vec!["a".into(), "b".into(), "c".into()], 4, &gold, &[], &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        assert_eq!(AnnotationModel::load(&path).unwrap(), model);
    }
}
