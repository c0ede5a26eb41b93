//! Persisted run state and the on-disk checkpoint layout.
//!
//! ```text
//! <run>/config.toml              resolved configuration
//! <run>/annotation_model.json    trained aggregator (MoLAM labeler only)
//! <run>/manifest.json            committed checkpoints, newest last
//! <run>/checkpoints/state-NNNN.json
//! <run>/checkpoints/model-NNNN.bin
//! ```
//!
//! A checkpoint is committed by rewriting the manifest after its state and
//! model files are in place; every write goes through a temp file and rename.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::corpus::{DataPools, LabelSource};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const STATE_FORMAT_VERSION: u32 = 1;

/// Everything recorded about one labeled instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    /// AL iteration (0-based) in which the instance was labeled; `None` for the initial gold pool.
    pub iteration: Option<usize>,
    pub source: LabelSource,
    pub y_plus: usize,
    pub y_minus: Vec<usize>,
    /// 1 when the pre-update classifier disagreed with `y_plus`. Frozen at labeling time.
    pub d_anno: Option<u8>,
    pub w_d: f64,
    pub confidence: Option<f64>,
    /// Entropy of the labeler's class distribution.
    pub entropy: Option<f64>,
    /// Top-1 minus top-2 of the labeler's class distribution.
    pub margin: Option<f64>,
    /// Largest consistency any queried annotator assigned to `y_plus`.
    pub consistency: Option<f64>,
    pub gold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    /// 0-based AL iteration.
    pub iteration: usize,
    pub pool_size: usize,
    pub batch_size: usize,
    /// Test-split micro-F1 of the classifier trained in this iteration.
    pub micro_f1: f64,
    pub validation_f1: Option<f64>,
    /// Fraction of this batch whose `y_plus` matches gold.
    pub annotation_acc: Option<f64>,
    pub cumulative_annotation_acc: Option<f64>,
    pub mean_w_d: f64,
    pub mean_negatives: f64,
    pub lambda: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub format_version: u32,
    /// Completed AL iterations.
    pub iteration: usize,
    pub pools: DataPools,
    pub records: Vec<InstanceRecord>,
    pub metrics: Vec<IterationMetrics>,
    /// Test micro-F1 of the classifier trained on the initial gold pool.
    pub initial_f1: f64,
    /// Model file of the current classifier, relative to the run directory.
    pub model_file: String,
    /// Model file of the classifier from the iteration before.
    pub previous_model_file: Option<String>,
    /// Instances admitted by aggregator self-training.
    pub pseudo_labeled: usize,
    /// Set when the unlabeled pool ran dry before `R` iterations.
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub iteration: usize,
    pub state: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub checkpoints: Vec<ManifestEntry>,
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub fn state_file(iteration: usize) -> String {
    format!("checkpoints/state-{iteration:04}.json")
}

pub fn model_file(iteration: usize) -> String {
    format!("checkpoints/model-{iteration:04}.bin")
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = manifest_path(dir);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.format_version != STATE_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported manifest format {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

/// Writes model, state and then the manifest entry for `state.iteration`.
pub fn write_checkpoint(dir: &Path, state: &RunState, model: &ClassifierModel) -> Result<()> {
    let model_rel = model_file(state.iteration);
    let state_rel = state_file(state.iteration);
    if state.model_file != model_rel {
        return Err(Error::State(format!(
            "state points at {} but checkpoint {} is being written",
            state.model_file, state.iteration
        )));
    }
    model.save(&dir.join(&model_rel))?;
    write_atomic(&dir.join(&state_rel), serde_json::to_string(state)?.as_bytes())?;

    let mut manifest = match read_manifest(dir) {
        Ok(m) => m,
        Err(Error::Io { .. }) => Manifest {
            format_version: STATE_FORMAT_VERSION,
            checkpoints: Vec::new(),
        },
        Err(e) => return Err(e),
    };
    manifest.checkpoints.retain(|c| c.iteration < state.iteration);
    manifest.checkpoints.push(ManifestEntry {
        iteration: state.iteration,
        state: state_rel,
        model: model_rel,
    });
    write_atomic(&manifest_path(dir), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub fn read_state(dir: &Path, entry: &ManifestEntry) -> Result<RunState> {
    let path = dir.join(&entry.state);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let state: RunState = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if state.format_version != STATE_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported state format {}",
            path.display(),
            state.format_version
        )));
    }
    if state.iteration != entry.iteration {
        return Err(Error::Checkpoint(format!(
            "{}: holds iteration {}, manifest says {}",
            path.display(),
            state.iteration,
            entry.iteration
        )));
    }
    Ok(state)
}

/// Newest committed state and its classifier.
pub fn load_latest(dir: &Path) -> Result<(RunState, ClassifierModel)> {
    let manifest = read_manifest(dir)?;
    let entry = manifest
        .checkpoints
        .last()
        .ok_or_else(|| Error::Checkpoint("manifest lists no checkpoints".into()))?;
    let state = read_state(dir, entry)?;
    let model = ClassifierModel::load(&dir.join(&entry.model))?;
    Ok((state, model))
}
