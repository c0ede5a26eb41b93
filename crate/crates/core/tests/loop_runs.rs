//! End-to-end loop runs on small synthetic corpora.

use std::fs;

use mixloop_core::classifier::TextFeaturizer;
use mixloop_core::orchestrator::config::Labeler;
use mixloop_core::orchestrator::{load_latest, StepOutcome};
use mixloop_core::synthetic::{generate, SyntheticConfig};
use mixloop_core::{run, Error, LabelSource, RunConfig, Runner, StrategyName};

fn small(seed: u64) -> RunConfig {
    let mut config = RunConfig {
        seed,
        iterations: 3,
        synthetic: Some(SyntheticConfig {
            train: 400,
            validation: 60,
            test: 200,
            ..SyntheticConfig::default()
        }),
        ..RunConfig::default()
    };
    config.classifier.featurizer = TextFeaturizer::with_buckets(1 << 12);
    config.classifier.max_epochs = 10;
    config
}

#[test]
fn three_iterations_grow_the_pool_to_two_hundred() {
    let dir = tempfile::tempdir().unwrap();
    let state = run(small(1), dir.path()).unwrap();
    assert_eq!(state.iteration, 3);
    assert_eq!(state.pools.labeled().len(), 200);
    assert_eq!(state.metrics.iter().map(|m| m.pool_size).collect::<Vec<_>>(), vec![100, 150, 200]);
    let annotated = state.records.iter().filter(|r| r.source == LabelSource::Molam).count();
    assert_eq!(annotated, 150);
    for r in &state.records {
        assert!(!r.y_minus.contains(&r.y_plus));
    }
    for file in ["metrics.jsonl", "curve.csv", "negative_labels.csv", "discrepancy.csv", "summary.txt", "config.toml"] {
        assert!(dir.path().join(file).is_file(), "{file}");
    }
    let curve = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);
}

#[test]
fn every_strategy_completes() {
    for strategy in [StrategyName::Random, StrategyName::Entropy, StrategyName::Coreset] {
        let mut config = small(2);
        config.iterations = 2;
        config.strategy = strategy;
        let dir = tempfile::tempdir().unwrap();
        let state = run(config, dir.path()).unwrap();
        assert_eq!(state.pools.labeled().len(), 150, "{strategy:?}");
    }
}

#[test]
fn single_annotator_labeler_runs() {
    let mut config = small(3);
    config.labeler = Labeler::Annotator("sim-3".into());
    let dir = tempfile::tempdir().unwrap();
    let state = run(config, dir.path()).unwrap();
    assert_eq!(state.metrics.len(), 3);
    assert!(!dir.path().join("annotation_model.json").exists());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let whole = tempfile::tempdir().unwrap();
    let reference = run(small(4), whole.path()).unwrap();

    let split = tempfile::tempdir().unwrap();
    let mut runner = Runner::start(small(4), split.path()).unwrap();
    assert_eq!(runner.step().unwrap(), StepOutcome::Advanced(0));
    drop(runner);
    let mut runner = Runner::resume(split.path()).unwrap();
    runner.run_to_end().unwrap();
    assert_eq!(runner.step().unwrap(), StepOutcome::Finished);
    assert_eq!(runner.state(), &reference);

    let (latest, _) = load_latest(split.path()).unwrap();
    assert_eq!(latest, reference);
}

#[test]
fn a_run_directory_cannot_be_reused() {
    let dir = tempfile::tempdir().unwrap();
    run(small(5), dir.path()).unwrap();
    assert!(matches!(Runner::start(small(5), dir.path()), Err(Error::State(_))));
}

#[test]
fn pool_exhaustion_stops_early() {
    let mut config = small(6);
    config.synthetic.as_mut().unwrap().train = 120;
    config.iterations = 5;
    let dir = tempfile::tempdir().unwrap();
    let state = run(config, dir.path()).unwrap();
    assert!(state.exhausted);
    assert_eq!(state.pools.labeled().len(), 120);
    assert!(state.pools.unlabeled().is_empty());
}

#[test]
fn misled_instances_fool_the_whole_panel() {
    let config = SyntheticConfig {
        train: 300,
        misleading_rate: Some(0.5),
        ..SyntheticConfig::noisy_benchmark()
    };
    let data = generate(&config, 11).unwrap();
    let instances: Vec<_> = data.train.iter().collect();
    let signals = mixloop_core::annotator::annotate_batch(&data.annotators, &instances, &data.label_space, 11, 1)
        .unwrap()
        .into_complete()
        .unwrap();
    let k = config.classes;
    let mut unanimous_shift = 0;
    for (row, inst) in signals.iter().zip(&instances) {
        let target = (inst.gold_label.unwrap() + 1) % k;
        let leaning: Vec<bool> = row.iter().map(|s| s.z[target] > s.z[inst.gold_label.unwrap()]).collect();
        // Misreading is shared, so a misread instance fools every annotator at once.
        if leaning.iter().all(|&l| l) {
            unanimous_shift += 1;
        }
    }
    let rate = unanimous_shift as f64 / instances.len() as f64;
    assert!(rate > 0.35, "{rate}");
}
