//! Task classifier trained on the labeled pool.
//!
//! Text is hashed into sparse n-gram features and classified by a softmax
//! linear model (or a one-hidden-layer ReLU network). Training always starts
//! from a fresh seeded initialization, runs mini-batch gradient descent on the
//! mean robust loss, and keeps the snapshot with the best validation micro-F1.

pub mod featurizer;
pub mod loss;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotation_model::argmax;
use crate::annotation_model::gbdt::softmax;
use crate::error::{Error, Result};
use crate::eval::micro_f1;
use crate::rng;

pub use featurizer::{Normalization, SparseVec, TextFeaturizer};
pub use loss::{
    cross_entropy, discrepancy_weight, negative_loss, total_loss, total_loss_grad, LossParams,
    RobustExample, PROB_EPS,
};

const SNAPSHOT_MAGIC: &[u8; 4] = b"MXCL";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub featurizer: TextFeaturizer,
    pub architecture: Architecture,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub init_std: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            featurizer: TextFeaturizer::default(),
            architecture: Architecture::Linear,
            learning_rate: 2.0,
            batch_size: 8,
            max_epochs: 40,
            patience: 10,
            init_std: 0.01,
        }
    }
}

impl ClassifierConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.featurizer.problems();
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            out.push(format!("classifier learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            out.push("classifier batch_size must be >= 1".into());
        }
        if self.max_epochs == 0 {
            out.push("classifier max_epochs must be >= 1".into());
        }
        if let Architecture::Mlp { hidden: 0 } = self.architecture {
            out.push("mlp hidden width must be >= 1".into());
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            out.push("classifier init_std must be >= 0".into());
        }
        out
    }
}

/// Trained parameters. Immutable once returned from [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub num_classes: usize,
    pub dim: usize,
    pub architecture: Architecture,
    pub seed: u64,
    /// Epoch at which this snapshot was taken (1-based).
    pub epoch: usize,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    num_classes: usize,
    dim: usize,
    architecture: Architecture,
    seed: u64,
    epoch: usize,
    params: usize,
}

struct Forward {
    logits: Vec<f64>,
    hidden: Vec<f64>,
}

impl ClassifierModel {
    fn param_count(arch: Architecture, dim: usize, k: usize) -> usize {
        match arch {
            Architecture::Linear => dim * k + k,
            Architecture::Mlp { hidden } => dim * hidden + hidden + k * hidden + k,
        }
    }

    /// Fresh parameters: weights `N(0, init_std)`, biases zero.
    pub fn initialize(
        num_classes: usize,
        dim: usize,
        architecture: Architecture,
        init_std: f64,
        seed: u64,
    ) -> Self {
        let mut params = vec![0.0; Self::param_count(architecture, dim, num_classes)];
        let weights = match architecture {
            Architecture::Linear => dim * num_classes,
            Architecture::Mlp { hidden } => dim * hidden,
        };
        let mut rng = rng::stream(seed, "classifier-init", 0);
        if init_std > 0.0 {
            let normal = Normal::new(0.0, init_std).expect("positive std");
            params[..weights].iter_mut().for_each(|w| *w = normal.sample(&mut rng));
            if let Architecture::Mlp { hidden } = architecture {
                let start = dim * hidden + hidden;
                let end = start + num_classes * hidden;
                params[start..end].iter_mut().for_each(|w| *w = normal.sample(&mut rng));
            }
        }
        Self {
            num_classes,
            dim,
            architecture,
            seed,
            epoch: 0,
            params,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn forward(&self, x: &SparseVec) -> Forward {
        let k = self.num_classes;
        let d = self.dim;
        match self.architecture {
            Architecture::Linear => {
                let mut logits = self.params[d * k..].to_vec();
                for (j, v) in x.iter() {
                    let row = &self.params[j * k..(j + 1) * k];
                    logits.iter_mut().zip(row).for_each(|(l, w)| *l += w * v);
                }
                Forward {
                    logits,
                    hidden: Vec::new(),
                }
            }
            Architecture::Mlp { hidden: h } => {
                let b1 = d * h;
                let w2 = b1 + h;
                let b2 = w2 + k * h;
                let mut hidden = self.params[b1..b1 + h].to_vec();
                for (j, v) in x.iter() {
                    let row = &self.params[j * h..(j + 1) * h];
                    hidden.iter_mut().zip(row).for_each(|(a, w)| *a += w * v);
                }
                hidden.iter_mut().for_each(|a| *a = a.max(0.0));
                let logits = (0..k)
                    .map(|c| {
                        self.params[b2 + c]
                            + self.params[w2 + c * h..w2 + (c + 1) * h]
                                .iter()
                                .zip(&hidden)
                                .map(|(w, a)| w * a)
                                .sum::<f64>()
                    })
                    .collect();
                Forward { logits, hidden }
            }
        }
    }

    pub fn logits(&self, x: &SparseVec) -> Vec<f64> {
        self.forward(x).logits
    }

    pub fn predict_proba(&self, x: &SparseVec) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// One gradient step on the mean loss of `batch`. All gradients are taken
    /// at the pre-step parameters.
    fn step(&mut self, batch: &[&RobustExample], params: &LossParams, lr: f64) {
        let k = self.num_classes;
        let d = self.dim;
        let scale = lr / batch.len() as f64;
        let passes: Vec<(Forward, Vec<f64>)> = batch
            .iter()
            .map(|ex| {
                let f = self.forward(&ex.features);
                let p = softmax(&f.logits);
                let g = total_loss_grad(ex, &p, params);
                (f, g)
            })
            .collect();
        match self.architecture {
            Architecture::Linear => {
                for (ex, (_, g)) in batch.iter().zip(&passes) {
                    for (j, v) in ex.features.iter() {
                        let row = &mut self.params[j * k..(j + 1) * k];
                        row.iter_mut().zip(g).for_each(|(w, gc)| *w -= scale * gc * v);
                    }
                    let bias = &mut self.params[d * k..];
                    bias.iter_mut().zip(g).for_each(|(b, gc)| *b -= scale * gc);
                }
            }
            Architecture::Mlp { hidden: h } => {
                let b1 = d * h;
                let w2 = b1 + h;
                let b2 = w2 + k * h;
                // Back-propagate through the pre-step output layer first.
                let deltas: Vec<Vec<f64>> = passes
                    .iter()
                    .map(|(f, g)| {
                        (0..h)
                            .map(|u| {
                                if f.hidden[u] <= 0.0 {
                                    0.0
                                } else {
                                    (0..k).map(|c| g[c] * self.params[w2 + c * h + u]).sum()
                                }
                            })
                            .collect()
                    })
                    .collect();
                for ((ex, (f, g)), delta) in batch.iter().zip(&passes).zip(&deltas) {
                    for (c, &gc) in g.iter().enumerate() {
                        self.params[b2 + c] -= scale * gc;
                        let row = &mut self.params[w2 + c * h..w2 + (c + 1) * h];
                        row.iter_mut()
                            .zip(&f.hidden)
                            .for_each(|(w, a)| *w -= scale * gc * a);
                    }
                    self.params[b1..b1 + h]
                        .iter_mut()
                        .zip(delta)
                        .for_each(|(b, dl)| *b -= scale * dl);
                    for (j, v) in ex.features.iter() {
                        let row = &mut self.params[j * h..(j + 1) * h];
                        row.iter_mut().zip(delta).for_each(|(w, dl)| *w -= scale * dl * v);
                    }
                }
            }
        }
    }

    /// Binary snapshot: magic, version, JSON header, little-endian f64 parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&SnapshotHeader {
            num_classes: self.num_classes,
            dim: self.dim,
            architecture: self.architecture,
            seed: self.seed,
            epoch: self.epoch,
            params: self.params.len(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 8 * self.params.len());
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(format!("classifier snapshot: {m}"));
        if bytes.len() < 12 || &bytes[..4] != SNAPSHOT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != SNAPSHOT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12 + hlen..).ok_or_else(|| bad("truncated header"))?;
        let header: SnapshotHeader = serde_json::from_slice(&bytes[12..12 + hlen])?;
        let expected = Self::param_count(header.architecture, header.dim, header.num_classes);
        if header.params != expected || body.len() != 8 * expected {
            return Err(bad("parameter count mismatch"));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            num_classes: header.num_classes,
            dim: header.dim,
            architecture: header.architecture,
            seed: header.seed,
            epoch: header.epoch,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// Argmax, ties to the lowest class index.
    pub label: usize,
}

pub fn predict(model: &ClassifierModel, inputs: &[SparseVec]) -> Vec<Prediction> {
    inputs
        .iter()
        .map(|x| {
            let probs = model.predict_proba(x);
            Prediction {
                label: argmax(&probs),
                probs,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ClassifierModel,
    pub epochs_run: usize,
    pub best_validation_f1: Option<f64>,
    /// Mean training loss per epoch, measured after the epoch's updates.
    pub loss_history: Vec<f64>,
}

pub fn mean_loss(model: &ClassifierModel, examples: &[RobustExample], params: &LossParams) -> f64 {
    let total: f64 = examples
        .iter()
        .map(|ex| total_loss(ex, &model.predict_proba(&ex.features), params))
        .sum();
    total / examples.len().max(1) as f64
}

/// Cold-start training. With a validation set, stops once validation
/// micro-F1 has not improved for `patience` epochs (at least one) and returns
/// the best snapshot; without one, runs `max_epochs` and returns the last.
pub fn train(
    examples: &[RobustExample],
    num_classes: usize,
    config: &ClassifierConfig,
    params: &LossParams,
    seed: u64,
    validation: Option<(&[SparseVec], &[usize])>,
) -> Result<TrainOutcome> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let mut present = vec![false; num_classes];
    for ex in examples {
        *present.get_mut(ex.y_plus).ok_or_else(|| {
            Error::Shape(format!("label {} outside {num_classes} classes", ex.y_plus))
        })? = true;
        if ex.y_minus.iter().any(|&k| k >= num_classes) {
            return Err(Error::Shape("negative label out of range".into()));
        }
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::DegenerateData(
            "classifier training needs at least two classes".into(),
        ));
    }

    let dim = config.featurizer.dim();
    let mut model =
        ClassifierModel::initialize(num_classes, dim, config.architecture, config.init_std, seed);
    let mut best: Option<(f64, ClassifierModel)> = None;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epochs_run = 0;

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        order.sort_unstable();
        order.shuffle(&mut rng::stream(seed, "classifier-epoch", epoch as u64));
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&RobustExample> = chunk.iter().map(|&i| &examples[i]).collect();
            model.step(&batch, params, config.learning_rate);
        }
        model.epoch = epoch;
        history.push(mean_loss(&model, examples, params));

        if let Some((vx, vy)) = validation.filter(|(vx, _)| !vx.is_empty()) {
            let preds: Vec<usize> = predict(&model, vx).into_iter().map(|p| p.label).collect();
            let f1 = micro_f1(&preds, vy)?;
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience.max(1) {
                    break;
                }
            }
        }
    }
    let (best_validation_f1, model) = match best {
        Some((f1, m)) => (Some(f1), m),
        None => (None, model),
    };
    Ok(TrainOutcome {
        model,
        epochs_run,
        best_validation_f1,
        loss_history: history,
    })
}
