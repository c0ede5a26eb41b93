//! The active-learning loop.
//!
//! Each iteration selects a batch, labels it (with the trained annotation
//! model or a single annotator), moves it into the labeled pool, scores every
//! new label against the classifier from before the update, and retrains the
//! classifier from scratch on the whole labeled pool with the robust loss.
//! State is checkpointed after the initial model and after every iteration,
//! so a run can be resumed at any iteration boundary.

pub mod config;
pub mod state;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::annotation_model::{
    argmax, extract_negative_labels, fit_annotation_model, resolve_annotation, Annotation,
    AnnotationModel, LabeledSignals,
};
use crate::annotator::{annotate_batch, AnnotatorSignal, AnnotatorSpec};
use crate::classifier::{
    discrepancy_weight, predict, train, ClassifierModel, LossParams, RobustExample, SparseVec,
    TrainOutcome,
};
use crate::corpus::{
    load_corpus, seed_pools_with, Corpus, Instance, LabelSource, LabelSpace, LabeledEntry,
};
use crate::error::{Error, Result};
use crate::eval::{self, entropy, margin, micro_f1};
use crate::query::QueryContext;
use crate::rng;
use crate::synthetic;

pub use config::{
    lambda_at, Ablation, AnnotationConfig, DataConfig, Labeler, LossConfig, MolamConfig, RunConfig,
};
pub use state::{load_latest, InstanceRecord, IterationMetrics, RunState};

/// 1 when the classifier's prediction differs from the assigned label.
pub fn compute_discrepancy(model: &ClassifierModel, features: &SparseVec, y_plus: usize) -> u8 {
    u8::from(argmax(&model.predict_proba(features)) != y_plus)
}

/// Splits and annotators resolved from a config.
#[derive(Debug, Clone)]
pub struct RunData {
    pub label_space: LabelSpace,
    pub train: Corpus,
    pub validation: Option<Corpus>,
    pub test: Corpus,
    pub annotators: Vec<AnnotatorSpec>,
}

pub fn load_data(config: &RunConfig) -> Result<RunData> {
    if let Some(syn) = &config.synthetic {
        let data = synthetic::generate(syn, config.seed)?;
        let label_space = match &config.labels {
            Some(l) => LabelSpace::new(l.iter().cloned())?,
            None => data.label_space,
        };
        return Ok(RunData {
            label_space,
            train: data.train,
            validation: (!data.validation.is_empty()).then_some(data.validation),
            test: data.test,
            annotators: if config.annotators.is_empty() {
                data.annotators
            } else {
                config.annotators.clone()
            },
        });
    }
    let data = config
        .data
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["one of [data] or [synthetic] is required".into()]))?;
    let labels = config
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["labels are required with [data]".into()]))?;
    let label_space = LabelSpace::new(labels.iter().cloned())?;
    let load = |p: &Path| load_corpus(p, data.format_for(p), &label_space);
    Ok(RunData {
        train: load(&data.train)?,
        validation: data.validation.as_deref().map(load).transpose()?,
        test: load(&data.test)?,
        annotators: config.annotators.clone(),
        label_space,
    })
}

fn gold_vector(corpus: &Corpus, split: &str) -> Result<Vec<usize>> {
    corpus
        .iter()
        .map(|inst| {
            inst.gold_label.ok_or_else(|| {
                Error::Validation(format!("{split} instance `{}` has no gold label", inst.id))
            })
        })
        .collect()
}

struct FeatureCache {
    train: Vec<SparseVec>,
    index: HashMap<String, usize>,
    validation: Option<(Vec<SparseVec>, Vec<usize>)>,
    test_x: Vec<SparseVec>,
    test_y: Vec<usize>,
}

impl FeatureCache {
    fn build(config: &RunConfig, data: &RunData) -> Result<Self> {
        let f = &config.classifier.featurizer;
        let featurize = |c: &Corpus| c.iter().map(|i| f.transform(&i.text)).collect::<Vec<_>>();
        let validation = match &data.validation {
            Some(v) => Some((featurize(v), gold_vector(v, "validation")?)),
            None => None,
        };
        Ok(Self {
            train: featurize(&data.train),
            index: data
                .train
                .iter()
                .enumerate()
                .map(|(i, inst)| (inst.id.clone(), i))
                .collect(),
            validation,
            test_x: featurize(&data.test),
            test_y: gold_vector(&data.test, "test")?,
        })
    }

    fn of(&self, id: &str) -> &SparseVec {
        &self.train[self.index[id]]
    }
}

/// An annotation plus the signal-level statistics kept in instance records.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledAnnotation {
    pub annotation: Annotation,
    /// Largest consistency any annotator assigned to the chosen label.
    pub consistency: f64,
}

enum ActiveLabeler {
    Molam(AnnotationModel),
    Single(AnnotatorSpec),
}

fn max_consistency(signals: &[AnnotatorSignal], label: usize) -> f64 {
    signals.iter().map(|s| s.c[label]).fold(0.0, f64::max)
}

/// Labels instances with a trained annotation model, querying every annotator.
pub fn annotate_with_model(
    model: &AnnotationModel,
    annotators: &[AnnotatorSpec],
    instances: &[&Instance],
    label_space: &LabelSpace,
    seed: u64,
    delta: f64,
    max_in_flight: usize,
) -> Result<Vec<LabeledAnnotation>> {
    let names: Vec<&str> = annotators.iter().map(|a| a.name.as_str()).collect();
    if names != model.annotators.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Shape(format!(
            "annotation model expects annotators {:?}, got {names:?}",
            model.annotators
        )));
    }
    let rows = annotate_batch(annotators, instances, label_space, seed, max_in_flight)?.into_complete()?;
    rows.iter()
        .map(|signals| {
            let annotation = model.annotate(signals, delta)?;
            Ok(LabeledAnnotation {
                consistency: max_consistency(signals, annotation.y_plus),
                annotation,
            })
        })
        .collect()
}

/// Labels instances with one annotator: argmax of its scores, negatives from its scores alone.
pub fn annotate_single(
    annotator: &AnnotatorSpec,
    instances: &[&Instance],
    label_space: &LabelSpace,
    seed: u64,
    delta: f64,
    max_in_flight: usize,
) -> Result<Vec<LabeledAnnotation>> {
    let rows = annotate_batch(
        std::slice::from_ref(annotator),
        instances,
        label_space,
        seed,
        max_in_flight,
    )?
    .into_complete()?;
    Ok(rows
        .iter()
        .map(|signals| {
            let annotation =
                resolve_annotation(signals[0].z.clone(), extract_negative_labels(signals, delta));
            LabeledAnnotation {
                consistency: max_consistency(signals, annotation.y_plus),
                annotation,
            }
        })
        .collect())
}

/// Fits the annotation model on the gold seed pool (plus self-training
/// candidates drawn from the unlabeled pool).
pub fn fit_molam(
    config: &RunConfig,
    data: &RunData,
    gold: &[LabeledEntry],
    unlabeled: &[String],
) -> Result<(AnnotationModel, usize)> {
    let seed = config.seed;
    let space = &data.label_space;
    let max_in_flight = config.annotation.max_in_flight;
    let instances = |ids: &mut dyn Iterator<Item = &str>| -> Vec<&Instance> {
        ids.map(|id| data.train.get(id).expect("pool ids come from the corpus")).collect()
    };
    let signals_for = |insts: &[&Instance]| -> Result<Vec<Vec<AnnotatorSignal>>> {
        annotate_batch(&data.annotators, insts, space, seed, max_in_flight)?.into_complete()
    };

    let gold_rows = signals_for(&instances(&mut gold.iter().map(|e| e.id.as_str())))?;
    let gold_set: Vec<LabeledSignals<'_>> = gold_rows
        .iter()
        .zip(gold)
        .map(|(s, e)| LabeledSignals { signals: s, label: e.label })
        .collect();

    let mut candidates: Vec<&str> = unlabeled.iter().map(String::as_str).collect();
    candidates.sort_unstable();
    rand::seq::SliceRandom::shuffle(&mut candidates[..], &mut rng::stream(seed, "pseudo-pool", 0));
    let take = if config.molam.pseudo_label { config.molam.pseudo_pool.min(candidates.len()) } else { 0 };
    let pseudo_rows = signals_for(&instances(&mut candidates[..take].iter().copied()))?;

    let (val_rows, val_labels) = match (&data.validation, config.molam.use_validation) {
        (Some(v), true) => {
            let insts: Vec<&Instance> = v.iter().collect();
            (signals_for(&insts)?, gold_vector(v, "validation")?)
        }
        _ => (Vec::new(), Vec::new()),
    };
    let val_set: Vec<LabeledSignals<'_>> = val_rows
        .iter()
        .zip(&val_labels)
        .map(|(s, &label)| LabeledSignals { signals: s, label })
        .collect();

    let names = data.annotators.iter().map(|a| a.name.clone()).collect();
    let (model, admissions) = fit_annotation_model(
        &config.molam.fit_config()?,
        names,
        space.len(),
        &gold_set,
        &pseudo_rows,
        &val_set,
    )?;
    Ok((model, admissions.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// Finished the given 0-based iteration.
    Advanced(usize),
    Finished,
}

/// Owns one run's state and drives it forward one iteration at a time.
pub struct Runner {
    config: RunConfig,
    dir: PathBuf,
    data: RunData,
    cache: FeatureCache,
    labeler: ActiveLabeler,
    state: RunState,
    model: ClassifierModel,
}

const ANNOTATION_MODEL_FILE: &str = "annotation_model.json";
const CONFIG_FILE: &str = "config.toml";

impl Runner {
    /// Seeds the pools, fits the labeler, trains the initial classifier and
    /// writes checkpoint 0 into `dir`, which must not already hold a run.
    pub fn start(mut config: RunConfig, dir: &Path) -> Result<Self> {
        config.validate()?;
        if state::manifest_path(dir).exists() {
            return Err(Error::State(format!(
                "{} already holds a run; resume it or choose another directory",
                dir.display()
            )));
        }
        if let Some(data) = config.data.as_mut() {
            for p in [Some(&mut data.train), data.validation.as_mut(), Some(&mut data.test)]
                .into_iter()
                .flatten()
            {
                *p = fs::canonicalize(&*p).map_err(|e| Error::io(&*p, e))?;
            }
        }
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        crate::io::write_atomic(&dir.join(CONFIG_FILE), config.to_toml()?.as_bytes())?;

        let data = load_data(&config)?;
        let cache = FeatureCache::build(&config, &data)?;
        let k = data.label_space.len();
        let pools = seed_pools_with(&data.train, config.n_init, config.seed, k, config.stratified_init)?;

        let (labeler, pseudo_labeled) = match &config.labeler {
            config::Labeler::Molam => {
                let unlabeled: Vec<String> = pools.unlabeled().iter().cloned().collect();
                let (model, admitted) = fit_molam(&config, &data, pools.labeled(), &unlabeled)?;
                model.save(&dir.join(ANNOTATION_MODEL_FILE))?;
                (ActiveLabeler::Molam(model), admitted)
            }
            config::Labeler::Annotator(name) => (ActiveLabeler::Single(find_annotator(&data, name)?), 0),
        };

        let records: Vec<InstanceRecord> = pools
            .labeled()
            .iter()
            .map(|e| InstanceRecord {
                id: e.id.clone(),
                iteration: None,
                source: LabelSource::Gold,
                y_plus: e.label,
                y_minus: Vec::new(),
                d_anno: None,
                w_d: 1.0,
                confidence: None,
                entropy: None,
                margin: None,
                consistency: None,
                gold: Some(e.label),
            })
            .collect();
        let lambda0 = lambda_at(0, config.iterations, config.loss.lambda_start, config.loss.lambda_end);
        let outcome = train_pool(&config, &cache, pools.labeled(), &records, k, lambda0, 0)?;
        let initial_f1 = test_f1(&cache, &outcome.model)?;
        let state = RunState {
            format_version: state::STATE_FORMAT_VERSION,
            iteration: 0,
            pools,
            records,
            metrics: Vec::new(),
            initial_f1,
            model_file: state::model_file(0),
            previous_model_file: None,
            pseudo_labeled,
            exhausted: false,
        };
        let runner = Self {
            config,
            dir: dir.to_path_buf(),
            data,
            cache,
            labeler,
            state,
            model: outcome.model,
        };
        runner.commit()?;
        Ok(runner)
    }

    /// Reopens a run from its newest committed checkpoint.
    pub fn resume(dir: &Path) -> Result<Self> {
        let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
        config.validate()?;
        let data = load_data(&config)?;
        let cache = FeatureCache::build(&config, &data)?;
        let labeler = match &config.labeler {
            config::Labeler::Molam => {
                ActiveLabeler::Molam(AnnotationModel::load(&dir.join(ANNOTATION_MODEL_FILE))?)
            }
            config::Labeler::Annotator(name) => ActiveLabeler::Single(find_annotator(&data, name)?),
        };
        let (state, model) = load_latest(dir)?;
        state.pools.check(&data.train)?;
        Ok(Self {
            config,
            dir: dir.to_path_buf(),
            data,
            cache,
            labeler,
            state,
            model,
        })
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.data.label_space
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn is_finished(&self) -> bool {
        self.state.exhausted || self.state.iteration >= self.config.iterations
    }

    fn commit(&self) -> Result<()> {
        state::write_checkpoint(&self.dir, &self.state, &self.model)?;
        eval::emit_report(&self.state, &self.data.label_space, &self.dir)
    }

    fn label(&self, ids: &[String]) -> Result<Vec<LabeledAnnotation>> {
        let instances: Vec<&Instance> = ids
            .iter()
            .map(|id| self.data.train.get(id).expect("pool ids come from the corpus"))
            .collect();
        let (seed, delta, limit) = (
            self.config.seed,
            self.config.molam.delta,
            self.config.annotation.max_in_flight,
        );
        match &self.labeler {
            ActiveLabeler::Molam(model) => annotate_with_model(
                model,
                &self.data.annotators,
                &instances,
                &self.data.label_space,
                seed,
                delta,
                limit,
            ),
            ActiveLabeler::Single(spec) => {
                annotate_single(spec, &instances, &self.data.label_space, seed, delta, limit)
            }
        }
    }

    /// Runs one AL iteration and commits its checkpoint. Nothing is changed
    /// if labeling fails, so the run can be resumed from the last checkpoint.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.is_finished() {
            return Ok(StepOutcome::Finished);
        }
        let t = self.state.iteration;
        let unlabeled: Vec<String> = self.state.pools.unlabeled().iter().cloned().collect();
        if unlabeled.is_empty() {
            self.state.exhausted = true;
            self.commit()?;
            return Ok(StepOutcome::Finished);
        }
        let batch_size = self.config.batch_size.min(unlabeled.len());

        // Line 2: selection.
        let strategy = self.config.strategy.build()?;
        let features: Vec<SparseVec> = unlabeled.iter().map(|id| self.cache.of(id).clone()).collect();
        let predictions: Vec<Vec<f64>> = if self.config.strategy.needs_predictions() {
            predict(&self.model, &features).into_iter().map(|p| p.probs).collect()
        } else {
            Vec::new()
        };
        let labeled_features: Vec<SparseVec> = self
            .state
            .pools
            .labeled()
            .iter()
            .map(|e| self.cache.of(&e.id).clone())
            .collect();
        let selected = strategy.select(&QueryContext {
            ids: &unlabeled,
            predictions: &predictions,
            features: &features,
            labeled_features: &labeled_features,
            batch_size,
            seed: rng::derive_seed(self.config.seed, "query", t as u64),
        })?;

        // Line 3: labeling. Fails before any state change.
        let labels = self.label(&selected)?;
        let source = match self.labeler {
            ActiveLabeler::Molam(_) => LabelSource::Molam,
            ActiveLabeler::Single(_) => LabelSource::Annotator,
        };

        // Line 4: pool transfer.
        let entries: Vec<LabeledEntry> = selected
            .iter()
            .zip(&labels)
            .map(|(id, l)| LabeledEntry::new(id.clone(), l.annotation.y_plus, source))
            .collect();
        let mut pools = self.state.pools.clone();
        pools.transfer(&entries)?;

        // Lines 5-8: discrepancy against the pre-update classifier, then weights.
        let alpha = self.config.loss.alpha;
        let mut records = self.state.records.clone();
        for (id, l) in selected.iter().zip(&labels) {
            let a = &l.annotation;
            let d = compute_discrepancy(&self.model, self.cache.of(id), a.y_plus);
            records.push(InstanceRecord {
                id: id.clone(),
                iteration: Some(t),
                source,
                y_plus: a.y_plus,
                y_minus: a.y_minus.iter().copied().collect(),
                d_anno: Some(d),
                w_d: discrepancy_weight(d == 1, alpha),
                confidence: Some(a.confidence),
                entropy: Some(entropy(&a.distribution)),
                margin: Some(margin(&a.distribution)),
                consistency: Some(l.consistency),
                gold: self.data.train.get(id).and_then(|i| i.gold_label),
            });
        }

        // Line 9: cold-start retraining.
        let lambda = lambda_at(
            t,
            self.config.iterations,
            self.config.loss.lambda_start,
            self.config.loss.lambda_end,
        );
        let outcome = train_pool(
            &self.config,
            &self.cache,
            pools.labeled(),
            &records,
            self.data.label_space.len(),
            lambda,
            t + 1,
        )?;
        let f1 = test_f1(&self.cache, &outcome.model)?;

        let batch = &records[records.len() - selected.len()..];
        let annotated: Vec<&InstanceRecord> = records.iter().filter(|r| r.iteration.is_some()).collect();
        let metrics = IterationMetrics {
            iteration: t,
            pool_size: pools.labeled().len(),
            batch_size: selected.len(),
            micro_f1: f1,
            validation_f1: outcome.best_validation_f1,
            annotation_acc: accuracy(batch.iter()),
            cumulative_annotation_acc: accuracy(annotated.iter().copied()),
            mean_w_d: mean(batch.iter().map(|r| r.w_d)),
            mean_negatives: mean(batch.iter().map(|r| r.y_minus.len() as f64)),
            lambda,
            epochs: outcome.epochs_run,
        };

        let previous = std::mem::replace(&mut self.state.model_file, state::model_file(t + 1));
        self.state.previous_model_file = Some(previous);
        self.state.iteration = t + 1;
        self.state.pools = pools;
        self.state.records = records;
        self.state.metrics.push(metrics);
        self.model = outcome.model;
        self.commit()?;
        Ok(StepOutcome::Advanced(t))
    }

    /// Steps until all iterations are done or the pool is exhausted.
    pub fn run_to_end(&mut self) -> Result<&RunState> {
        while let StepOutcome::Advanced(_) = self.step()? {}
        Ok(&self.state)
    }
}

fn find_annotator(data: &RunData, name: &str) -> Result<AnnotatorSpec> {
    data.annotators
        .iter()
        .find(|a| a.name == name)
        .cloned()
        .ok_or_else(|| Error::Config(vec![format!("labeler `{name}` is not a configured annotator")]))
}

fn train_pool(
    config: &RunConfig,
    cache: &FeatureCache,
    labeled: &[LabeledEntry],
    records: &[InstanceRecord],
    num_classes: usize,
    lambda: f64,
    round: usize,
) -> Result<TrainOutcome> {
    let by_id: HashMap<&str, &InstanceRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let examples: Vec<RobustExample> = labeled
        .iter()
        .map(|e| {
            let x = cache.of(&e.id).clone();
            match by_id.get(e.id.as_str()) {
                Some(r) if r.source != LabelSource::Gold => {
                    RobustExample::annotated(x, r.y_plus, r.y_minus.clone(), r.w_d)
                }
                _ => RobustExample::gold(x, e.label),
            }
        })
        .collect();
    let validation = cache.validation.as_ref().map(|(x, y)| (x.as_slice(), y.as_slice()));
    train(
        &examples,
        num_classes,
        &config.classifier,
        &LossParams::new(config.loss.alpha, lambda),
        rng::derive_seed(config.seed, "classifier", round as u64),
        validation,
    )
}

fn test_f1(cache: &FeatureCache, model: &ClassifierModel) -> Result<f64> {
    let preds: Vec<usize> = predict(model, &cache.test_x).into_iter().map(|p| p.label).collect();
    micro_f1(&preds, &cache.test_y)
}

fn accuracy<'a>(records: impl Iterator<Item = &'a InstanceRecord>) -> Option<f64> {
    let mut n = 0;
    let mut hit = 0;
    for r in records {
        let g = r.gold?;
        n += 1;
        hit += usize::from(g == r.y_plus);
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Starts a run in `dir` and drives it to completion.
pub fn run(config: RunConfig, dir: &Path) -> Result<RunState> {
    let mut runner = Runner::start(config, dir)?;
    runner.run_to_end()?;
    Ok(runner.state)
}
