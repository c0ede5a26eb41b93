//! Offline annotators driven by a confusion matrix.
//!
//! For an instance with gold class `g`, the annotator's belief is drawn as
//! `q ~ Dirichlet(concentration * confusion[g])` over the row's support. The
//! scored pass reports `z = q`; each of the `T` generations decodes a class
//! drawn from `q` (or an invalid output with probability `invalid_rate`).
//! Marginally every decoded label is distributed as `confusion[g]`, while the
//! per-instance belief correlates the repeats the way a real model's would.
//! Small concentrations give spiky, overconfident beliefs; large ones pull
//! `q` toward the row itself.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::AnnotatorSignal;
use crate::corpus::{Instance, LabelSpace};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSpec {
    /// Row `g` is the output distribution when the gold class is `g`.
    pub confusion: Vec<Vec<f64>>,
    pub concentration: f64,
    #[serde(default)]
    pub invalid_rate: f64,
    /// Fraction of instances every annotator with this setting misreads: the
    /// draw is keyed by instance id alone, so misled instances are shared
    /// across a panel. A misled instance of class `g` is answered as if it
    /// were `misleading_target[g]`.
    #[serde(default)]
    pub misleading_rate: f64,
    #[serde(default)]
    pub misleading_target: Option<Vec<usize>>,
}

impl SimulatedSpec {
    pub fn new(confusion: Vec<Vec<f64>>, concentration: f64) -> Self {
        Self {
            confusion,
            concentration,
            invalid_rate: 0.0,
            misleading_rate: 0.0,
            misleading_target: None,
        }
    }

    pub fn with_invalid_rate(mut self, rate: f64) -> Self {
        self.invalid_rate = rate;
        self
    }

    pub fn with_misleading(mut self, rate: f64, target: Vec<usize>) -> Self {
        self.misleading_rate = rate;
        self.misleading_target = Some(target);
        self
    }

    /// A perfect oracle.
    pub fn identity(num_classes: usize) -> Self {
        let confusion = (0..num_classes)
            .map(|g| (0..num_classes).map(|k| if k == g { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(confusion, 1.0)
    }

    pub(crate) fn problems(&self, num_classes: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.confusion.len() != num_classes {
            out.push(format!(
                "confusion matrix has {} rows, expected {num_classes}",
                self.confusion.len()
            ));
        }
        for (g, row) in self.confusion.iter().enumerate() {
            if row.len() != num_classes {
                out.push(format!("confusion row {g} has {} entries", row.len()));
                continue;
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                out.push(format!("confusion row {g} has a negative or non-finite entry"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                out.push(format!("confusion row {g} sums to {sum}, expected 1"));
            }
        }
        if !(self.concentration.is_finite() && self.concentration > 0.0) {
            out.push(format!("concentration must be positive, got {}", self.concentration));
        }
        if !(0.0..1.0).contains(&self.invalid_rate) {
            out.push(format!("invalid_rate must be in [0, 1), got {}", self.invalid_rate));
        }
        if !(0.0..1.0).contains(&self.misleading_rate) {
            out.push(format!("misleading_rate must be in [0, 1), got {}", self.misleading_rate));
        }
        match &self.misleading_target {
            Some(t) if t.len() != num_classes || t.iter().any(|&k| k >= num_classes) => {
                out.push(format!("misleading_target must map each of {num_classes} classes to a class"));
            }
            None if self.misleading_rate > 0.0 => {
                out.push("misleading_rate needs misleading_target".into());
            }
            _ => {}
        }
        out
    }
}

/// Draws an index with probability proportional to `probs`.
pub fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        last = k;
        if u < *p {
            return k;
        }
        u -= p;
    }
    last
}

/// `Dirichlet(concentration * row)` restricted to the support of `row`.
pub fn dirichlet_sample(rng: &mut ChaCha8Rng, row: &[f64], concentration: f64) -> Vec<f64> {
    let mut q: Vec<f64> = row
        .iter()
        .map(|&p| {
            if p <= 0.0 {
                0.0
            } else {
                Gamma::new(concentration * p, 1.0)
                    .map(|g| g.sample(rng))
                    .unwrap_or(0.0)
            }
        })
        .collect();
    let total: f64 = q.iter().sum();
    if total > 0.0 && total.is_finite() {
        q.iter_mut().for_each(|v| *v /= total);
    } else {
        // Every gamma draw underflowed: the belief collapses onto one vertex.
        let k = categorical(rng, row);
        q.iter_mut().enumerate().for_each(|(j, v)| *v = f64::from(u8::from(j == k)));
    }
    q
}

/// Draws a signal for a known gold class. Deterministic in `seed`.
pub fn sample_signal(spec: &SimulatedSpec, gold: usize, repeats: usize, seed: u64) -> AnnotatorSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = dirichlet_sample(&mut rng, &spec.confusion[gold], spec.concentration);
    let decoded = (0..repeats)
        .map(|_| {
            if spec.invalid_rate > 0.0 && rng.random::<f64>() < spec.invalid_rate {
                None
            } else {
                Some(categorical(&mut rng, &z))
            }
        })
        .collect();
    AnnotatorSignal::from_parts(z, decoded).expect("decoded classes come from z's support")
}

pub(crate) fn query(
    name: &str,
    spec: &SimulatedSpec,
    repeats: usize,
    instance: &Instance,
    label_space: &LabelSpace,
    seed: u64,
) -> Result<AnnotatorSignal> {
    let gold = instance.gold_label.ok_or_else(|| {
        Error::Validation(format!(
            "simulated annotator `{name}` needs a gold label for `{}`",
            instance.id
        ))
    })?;
    if gold >= label_space.len() || spec.confusion.len() != label_space.len() {
        return Err(Error::Shape(format!(
            "simulated annotator `{name}` does not match {} classes",
            label_space.len()
        )));
    }
    let perceived = match &spec.misleading_target {
        Some(target) if spec.misleading_rate > 0.0 => {
            let mut shared = rng::stream(rng::derive_seed_parts(seed, "misleading", &[&instance.id]), "draw", 0);
            if shared.random::<f64>() < spec.misleading_rate {
                target[gold]
            } else {
                gold
            }
        }
        _ => gold,
    };
    let cell_seed = rng::derive_seed_parts(seed, "simulated-annotator", &[name, &instance.id]);
    Ok(sample_signal(spec, perceived, repeats, cell_seed))
}
