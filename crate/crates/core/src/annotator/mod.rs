//! Annotator gateway.
//!
//! An annotator is either a remote chat-completions endpoint or a simulated
//! oracle driven by a confusion matrix. Querying one for an instance yields an
//! [`AnnotatorSignal`]: a class probability vector `z` from a single scored
//! pass, and a consistency vector `c` counting how often each class was
//! decoded across `T` sampled generations.

mod prompt;
pub mod remote;
pub mod simulated;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, LabelSpace};
use crate::error::{Error, Result};

pub use prompt::{build_prompt, decode_label};
pub use remote::RemoteSpec;
pub use simulated::SimulatedSpec;

/// Default number of repeated generations per annotator and instance.
pub const DEFAULT_REPEATS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorSpec {
    pub name: String,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(flatten)]
    pub kind: AnnotatorKind,
}

fn default_repeats() -> usize {
    DEFAULT_REPEATS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnnotatorKind {
    Remote(RemoteSpec),
    Simulated(SimulatedSpec),
}

impl AnnotatorSpec {
    pub fn simulated(name: impl Into<String>, repeats: usize, spec: SimulatedSpec) -> Self {
        Self {
            name: name.into(),
            repeats,
            kind: AnnotatorKind::Simulated(spec),
        }
    }

    pub fn remote(name: impl Into<String>, repeats: usize, spec: RemoteSpec) -> Self {
        Self {
            name: name.into(),
            repeats,
            kind: AnnotatorKind::Remote(spec),
        }
    }

    /// Returns every problem found, empty when the annotator is usable for `num_classes`.
    pub fn problems(&self, num_classes: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push("annotator name must be non-empty".to_string());
        }
        if self.repeats == 0 {
            out.push(format!("annotator `{}`: repeats must be >= 1", self.name));
        }
        let kind_problems = match &self.kind {
            AnnotatorKind::Simulated(s) => s.problems(num_classes),
            AnnotatorKind::Remote(r) => r.problems(),
        };
        out.extend(
            kind_problems
                .into_iter()
                .map(|p| format!("annotator `{}`: {p}", self.name)),
        );
        out
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let problems = self.problems(num_classes);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Output of one annotator on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorSignal {
    /// Class probabilities from the scored pass.
    pub z: Vec<f64>,
    /// Per-class fraction of the `T` decoded generations.
    pub c: Vec<f64>,
    /// Decoded generations; `None` marks an invalid output.
    pub decoded: Vec<Option<usize>>,
}

impl AnnotatorSignal {
    /// Builds a signal, deriving `c` from the decoded outputs.
    pub fn from_parts(z: Vec<f64>, decoded: Vec<Option<usize>>) -> Result<Self> {
        let c = consistency(&decoded, z.len())?;
        Ok(Self { z, c, decoded })
    }

    pub fn num_classes(&self) -> usize {
        self.z.len()
    }

    pub fn repeats(&self) -> usize {
        self.decoded.len()
    }

    pub fn invalid_count(&self) -> usize {
        self.decoded.iter().filter(|d| d.is_none()).count()
    }
}

/// `c[k] = (1/T) * #{t : decoded[t] == k}`. Invalid outputs count toward no class.
pub fn consistency(decoded: &[Option<usize>], num_classes: usize) -> Result<Vec<f64>> {
    if decoded.is_empty() {
        return Err(Error::Validation("consistency needs at least one generation".into()));
    }
    let mut counts = vec![0usize; num_classes];
    for d in decoded.iter().flatten() {
        *counts.get_mut(*d).ok_or_else(|| {
            Error::Shape(format!("decoded class {d} outside {num_classes} classes"))
        })? += 1;
    }
    let t = decoded.len() as f64;
    Ok(counts.into_iter().map(|n| n as f64 / t).collect())
}

/// Softmax restricted to the `num_classes` entries present in `logprobs`.
/// Missing classes get probability zero.
pub fn extract_logits(logprobs: &BTreeMap<usize, f64>, num_classes: usize) -> Result<Vec<f64>> {
    let finite = |v: f64| v.is_finite();
    let max = logprobs
        .iter()
        .filter(|(k, v)| **k < num_classes && finite(**v))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateSignal(
            "no class received a finite log-probability".into(),
        ));
    }
    let mut z: Vec<f64> = (0..num_classes)
        .map(|k| match logprobs.get(&k) {
            Some(&v) if finite(v) => (v - max).exp(),
            _ => 0.0,
        })
        .collect();
    let total: f64 = z.iter().sum();
    z.iter_mut().for_each(|p| *p /= total);
    Ok(z)
}

/// Queries one annotator on one instance.
pub fn query_signal(
    annotator: &AnnotatorSpec,
    instance: &Instance,
    label_space: &LabelSpace,
    seed: u64,
) -> Result<AnnotatorSignal> {
    match &annotator.kind {
        AnnotatorKind::Simulated(spec) => {
            simulated::query(&annotator.name, spec, annotator.repeats, instance, label_space, seed)
        }
        AnnotatorKind::Remote(spec) => {
            remote::query(&annotator.name, spec, annotator.repeats, instance, label_space, seed)
        }
    }
}

/// Result grid of a batch query: `cells[i][j]` is instance `i`, annotator `j`.
#[derive(Debug)]
pub struct SignalMatrix {
    pub cells: Vec<Vec<Result<AnnotatorSignal>>>,
}

impl SignalMatrix {
    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_err()).count()
    }

    /// Converts to plain signal rows, failing on the first unavailable cell.
    pub fn into_complete(self) -> Result<Vec<Vec<AnnotatorSignal>>> {
        self.cells
            .into_iter()
            .map(|row| row.into_iter().collect::<Result<Vec<_>>>())
            .collect()
    }
}

/// Queries every annotator on every instance. Cells run concurrently up to
/// `max_in_flight`; output order follows the input order. Per-cell failures
/// stay in the matrix; only invalid specs abort the whole batch.
pub fn annotate_batch(
    annotators: &[AnnotatorSpec],
    instances: &[&Instance],
    label_space: &LabelSpace,
    seed: u64,
    max_in_flight: usize,
) -> Result<SignalMatrix> {
    if annotators.is_empty() {
        return Err(Error::Config(vec!["at least one annotator is required".into()]));
    }
    let problems: Vec<String> = annotators
        .iter()
        .flat_map(|a| a.problems(label_space.len()))
        .collect();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }

    let n = annotators.len();
    let cell = |idx: usize| {
        let (i, j) = (idx / n, idx % n);
        query_signal(&annotators[j], instances[i], label_space, seed)
    };
    let total = instances.len() * n;
    let all_local = annotators
        .iter()
        .all(|a| matches!(a.kind, AnnotatorKind::Simulated(_)));
    let flat: Vec<Result<AnnotatorSignal>> = if all_local || max_in_flight <= 1 {
        (0..total).map(cell).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_in_flight)
            .build()
            .map_err(|e| Error::Config(vec![format!("cannot start annotator workers: {e}")]))?;
        pool.install(|| (0..total).into_par_iter().map(cell).collect())
    };

    let mut cells = Vec::with_capacity(instances.len());
    let mut it = flat.into_iter();
    for _ in 0..instances.len() {
        cells.push(it.by_ref().take(n).collect());
    }
    Ok(SignalMatrix { cells })
}
