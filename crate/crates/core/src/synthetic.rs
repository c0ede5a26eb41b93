//! Synthetic topic-classification benchmark with simulated annotator panels.
//!
//! Documents mix class topic words with words shared by every class, so a
//! bag-of-n-grams classifier has to see enough examples to separate them.
//! Annotator panels are built from confusion matrices in which some classes
//! are "hard": most annotators systematically relabel them as a neighbouring
//! class, while one annotator per hard class stays reliable on it.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotator::simulated::{categorical, dirichlet_sample};
use crate::annotator::{AnnotatorSignal, AnnotatorSpec, SimulatedSpec, DEFAULT_REPEATS};
use crate::corpus::{Corpus, Instance, LabelSpace};
use crate::error::{Error, Result};
use crate::rng;

const LABEL_NAMES: [&str; 8] = [
    "astronomy", "botany", "cuisine", "dynamics", "economics", "folklore", "geology", "harmony",
];

const SYLLABLES: [&str; 24] = [
    "ba", "ko", "ri", "te", "mu", "sa", "lo", "pe", "di", "na", "vu", "ze", "ga", "fo", "hi",
    "ju", "qe", "wa", "xo", "yi", "ce", "ru", "tha", "bri",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelPreset {
    /// Per-annotator accuracy roughly 0.60 to 0.75 with strong per-instance signal.
    Heterogeneous,
    /// The heterogeneous panel plus a shared fraction of misleading
    /// instances that every annotator labels as the next class.
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub topic_words: usize,
    pub shared_words: usize,
    /// Probability a token is a topic word of the document's class.
    pub topic_rate: f64,
    /// Probability a token is a topic word of some other class.
    pub cross_rate: f64,
    pub panel: PanelPreset,
    /// Overrides the preset's fraction of misread instances.
    pub misleading_rate: Option<f64>,
    pub repeats: usize,
    /// Seed for corpus and panel generation; the run seed when absent.
    pub data_seed: Option<u64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            train: 2000,
            validation: 200,
            test: 1000,
            min_len: 12,
            max_len: 24,
            topic_words: 40,
            shared_words: 400,
            topic_rate: 0.2,
            cross_rate: 0.05,
            panel: PanelPreset::Heterogeneous,
            misleading_rate: None,
            repeats: DEFAULT_REPEATS,
            data_seed: None,
        }
    }
}

impl SyntheticConfig {
    /// The noisy benchmark used for the robust-training comparisons: six
    /// classes and a panel that misreads a shared fraction of instances.
    pub fn noisy_benchmark() -> Self {
        Self {
            classes: 6,
            topic_rate: 0.3,
            panel: PanelPreset::Noisy,
            ..Self::default()
        }
    }

    pub fn effective_misleading_rate(&self) -> f64 {
        self.misleading_rate.unwrap_or(match self.panel {
            PanelPreset::Heterogeneous => 0.0,
            PanelPreset::Noisy => NOISY_MISLEADING_RATE,
        })
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(2..=LABEL_NAMES.len()).contains(&self.classes) {
            out.push(format!(
                "synthetic classes must be in 2..={}, got {}",
                LABEL_NAMES.len(),
                self.classes
            ));
        }
        if self.train == 0 || self.test == 0 {
            out.push("synthetic train and test sizes must be positive".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            out.push("synthetic document lengths need 1 <= min_len <= max_len".into());
        }
        if self.topic_words == 0 || self.shared_words == 0 {
            out.push("synthetic vocabularies must be non-empty".into());
        }
        let rates_ok = (0.0..=1.0).contains(&self.topic_rate)
            && (0.0..=1.0).contains(&self.cross_rate)
            && self.topic_rate + self.cross_rate <= 1.0;
        if !rates_ok {
            out.push("synthetic topic_rate + cross_rate must lie in [0, 1]".into());
        }
        if self.repeats == 0 {
            out.push("synthetic repeats must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.effective_misleading_rate()) {
            out.push("synthetic misleading_rate must be in [0, 1)".into());
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub label_space: LabelSpace,
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Corpus,
    pub annotators: Vec<AnnotatorSpec>,
}

fn pseudo_word(mut n: usize) -> String {
    let mut out = String::new();
    loop {
        out.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
        if n == 0 {
            break;
        }
        n -= 1;
    }
    out
}

struct Vocabulary {
    topics: Vec<Vec<String>>,
    shared: Vec<String>,
}

impl Vocabulary {
    fn new(config: &SyntheticConfig) -> Self {
        // Offsets keep topic and shared words disjoint.
        let per = config.topic_words;
        let topics = (0..config.classes)
            .map(|k| (0..per).map(|j| pseudo_word(1000 + k * per + j)).collect())
            .collect();
        let base = 1000 + config.classes * per;
        let shared = (0..config.shared_words).map(|j| pseudo_word(base + j)).collect();
        Self { topics, shared }
    }
}

fn document(config: &SyntheticConfig, vocab: &Vocabulary, class: usize, rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(config.min_len..=config.max_len);
    let mut words = Vec::with_capacity(len);
    for _ in 0..len {
        let r: f64 = rng.random();
        let word = if r < config.topic_rate {
            vocab.topics[class].choose(rng)
        } else if r < config.topic_rate + config.cross_rate && config.classes > 1 {
            let mut other = rng.random_range(0..config.classes - 1);
            if other >= class {
                other += 1;
            }
            vocab.topics[other].choose(rng)
        } else {
            vocab.shared.choose(rng)
        };
        words.push(word.expect("non-empty vocabulary").as_str());
    }
    words.join(" ")
}

fn split(
    config: &SyntheticConfig,
    vocab: &Vocabulary,
    space: &LabelSpace,
    name: &str,
    n: usize,
    seed: u64,
) -> Result<Corpus> {
    let mut rng = rng::stream(seed, "synthetic-split", rng::fnv1a(name.as_bytes()));
    let instances = (0..n)
        .map(|i| {
            let class = rng.random_range(0..config.classes);
            let text = document(config, vocab, class, &mut rng);
            Instance::new(format!("{name}-{i:05}"), text, Some(class))
        })
        .collect();
    Corpus::new(instances, space)
}

pub fn label_space(classes: usize) -> Result<LabelSpace> {
    if !(2..=LABEL_NAMES.len()).contains(&classes) {
        return Err(Error::Validation(format!("unsupported synthetic class count {classes}")));
    }
    LabelSpace::new(LABEL_NAMES[..classes].iter().copied())
}

pub fn generate(config: &SyntheticConfig, run_seed: u64) -> Result<SyntheticData> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let seed = config.data_seed.unwrap_or(run_seed);
    let space = label_space(config.classes)?;
    let vocab = Vocabulary::new(config);
    Ok(SyntheticData {
        train: split(config, &vocab, &space, "train", config.train, seed)?,
        validation: split(config, &vocab, &space, "val", config.validation, seed)?,
        test: split(config, &vocab, &space, "test", config.test, seed)?,
        annotators: panel(config.classes, config.effective_misleading_rate(), config.repeats),
        label_space: space,
    })
}

/// Parameters of one simulated annotator within a panel.
struct Member {
    easy: f64,
    flip: f64,
    concentration: f64,
}

const PANEL_SIZE: usize = 5;
/// Number of distinct classes the easy rows of the panel spill onto.
const SPILL_SPREAD: usize = 2;
const EXPERT_DIAG: f64 = 0.5;
/// Probability mass spread over every class so no class is impossible.
const ROW_FLOOR: f64 = 0.002;
/// Mass every row keeps on the preceding class. A misread instance (gold
/// `g` perceived as `g + 1`) therefore still shows mass on its gold class
/// and looks exactly like a genuine instance of `g + 1`.
const PREDECESSOR_MASS: f64 = 0.05;
/// Fraction of instances the noisy panel misreads together.
pub const NOISY_MISLEADING_RATE: f64 = 0.17;

/// Classes that most of the panel confuses with their successor.
pub fn hard_classes(num_classes: usize) -> Vec<usize> {
    (0..num_classes).step_by(2).filter(|&k| k + 1 < num_classes).collect()
}

fn confusion_for(member: &Member, index: usize, num_classes: usize) -> Vec<Vec<f64>> {
    let k = num_classes;
    let hard = hard_classes(k);
    (0..k)
        .map(|g| {
            let mut row = vec![0.0; k];
            let spill = |avoid: &[usize], pref: usize| -> Option<usize> {
                (0..k).map(|o| (pref + o) % k).find(|c| !avoid.contains(c))
            };
            match hard.iter().position(|&h| h == g) {
                Some(j) => {
                    let target = g + 1;
                    let expert = (PANEL_SIZE - 1 + j) % PANEL_SIZE;
                    let (diag, to_target) = if index == expert {
                        (EXPERT_DIAG, 0.25)
                    } else {
                        (1.0 - member.flip - 0.04, member.flip)
                    };
                    row[g] = diag;
                    row[target] = to_target;
                    match spill(&[g, target], g + 2) {
                        Some(r) => row[r] = 1.0 - diag - to_target,
                        None => row[target] += 1.0 - diag - to_target,
                    }
                }
                None => {
                    row[g] = member.easy;
                    let r = spill(&[g], g + 1 + index % SPILL_SPREAD).expect("at least two classes");
                    row[r] = 1.0 - member.easy;
                }
            }
            row.iter_mut().for_each(|p| *p *= 1.0 - PREDECESSOR_MASS);
            row[(g + k - 1) % k] += PREDECESSOR_MASS;
            let scale = 1.0 - ROW_FLOOR * k as f64;
            row.iter_mut().for_each(|p| *p = *p * scale + ROW_FLOOR);
            row
        })
        .collect()
}

/// Five simulated annotators with distinct confusion matrices. A positive
/// `misleading_rate` makes the whole panel misread that fraction of
/// instances as the next class.
pub fn panel(num_classes: usize, misleading_rate: f64, repeats: usize) -> Vec<AnnotatorSpec> {
    let easy = [0.92, 0.93, 0.96, 0.94, 0.91];
    let flip = [0.62, 0.60, 0.54, 0.58, 0.64];
    let concentration = [4.0, 3.0, 5.0, 3.5, 4.5];
    let target: Vec<usize> = (0..num_classes).map(|g| (g + 1) % num_classes).collect();
    (0..PANEL_SIZE)
        .map(|i| {
            let member = Member {
                easy: easy[i],
                flip: flip[i],
                concentration: concentration[i],
            };
            let mut spec = SimulatedSpec::new(confusion_for(&member, i, num_classes), member.concentration);
            if misleading_rate > 0.0 {
                spec = spec.with_misleading(misleading_rate, target.clone());
            }
            AnnotatorSpec::simulated(format!("sim-{}", i + 1), repeats, spec)
        })
        .collect()
}

/// Signals from a panel whose members all report the same calibrated
/// posterior: `pi ~ Dirichlet(concentration)`, gold drawn from `pi`, and
/// every annotator's `z = pi` with decodes sampled from `pi`.
pub fn calibrated_signals(
    n: usize,
    num_classes: usize,
    annotators: usize,
    repeats: usize,
    concentration: f64,
    seed: u64,
) -> Vec<(usize, Vec<AnnotatorSignal>)> {
    (0..n)
        .map(|i| {
            let mut rng = rng::stream(seed, "calibrated-panel", i as u64);
            let pi = dirichlet_sample(&mut rng, &vec![1.0; num_classes], concentration);
            let gold = categorical(&mut rng, &pi);
            let signals = (0..annotators)
                .map(|_| {
                    let decoded = (0..repeats).map(|_| Some(categorical(&mut rng, &pi))).collect();
                    AnnotatorSignal::from_parts(pi.clone(), decoded).expect("valid signal")
                })
                .collect();
            (gold, signals)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation_model::baselines::single_label;
    use crate::annotator::query_signal;

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let cfg = SyntheticConfig {
            train: 400,
            validation: 40,
            test: 100,
            ..SyntheticConfig::default()
        };
        let a = generate(&cfg, 3).unwrap();
        let b = generate(&cfg, 3).unwrap();
        assert_eq!(a.train.instances(), b.train.instances());
        assert_ne!(a.train.instances(), generate(&cfg, 4).unwrap().train.instances());
        assert_eq!(a.train.len(), 400);
        let mut counts = [0usize; 4];
        for inst in a.train.iter() {
            counts[inst.gold_label.unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| c > 70), "{counts:?}");
        assert_eq!(a.annotators.len(), 5);
        for spec in &a.annotators {
            spec.validate(4).unwrap();
        }
    }

    #[test]
    fn pseudo_words_are_distinct() {
        let words: std::collections::BTreeSet<_> = (0..5000).map(pseudo_word).collect();
        assert_eq!(words.len(), 5000);
    }

    #[test]
    fn confusion_rows_are_distributions() {
        for k in 2..=8 {
            for spec in panel(k, 0.0, 5) {
                assert!(spec.problems(k).is_empty(), "{k}: {:?}", spec.problems(k));
            }
        }
        assert_eq!(hard_classes(4), vec![0, 2]);
        assert_eq!(hard_classes(5), vec![0, 2]);
    }

    #[test]
    fn heterogeneous_panel_accuracies_fall_in_range() {
        let cfg = SyntheticConfig::default();
        let data = generate(&cfg, 11).unwrap();
        let test: Vec<_> = data.test.iter().collect();
        for spec in &data.annotators {
            let correct = test
                .iter()
                .filter(|inst| {
                    let s = query_signal(spec, inst, &data.label_space, 11).unwrap();
                    single_label(&s) == inst.gold_label.unwrap()
                })
                .count();
            let acc = correct as f64 / test.len() as f64;
            assert!((0.58..=0.77).contains(&acc), "{}: {acc}", spec.name);
        }
    }

    #[test]
    fn calibrated_gold_follows_posterior() {
        let rows = calibrated_signals(2000, 4, 3, 5, 0.3, 1);
        let hits = rows
            .iter()
            .filter(|(g, s)| s[0].z[*g] >= 0.25)
            .count();
        assert!(hits as f64 / rows.len() as f64 > 0.8);
        assert!(rows.iter().all(|(_, s)| s.iter().all(|x| x.z == s[0].z)));
    }
}
