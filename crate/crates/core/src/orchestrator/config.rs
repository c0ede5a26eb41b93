//! Run configuration (TOML) and its validation.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotation_model::{AggregatorConfig, FitConfig, GbdtParams};
use crate::annotator::AnnotatorSpec;
use crate::classifier::ClassifierConfig;
use crate::corpus::DataFormat;
use crate::error::{Error, Result};
use crate::query::StrategyName;
use crate::synthetic::SyntheticConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    #[serde(default)]
    pub validation: Option<PathBuf>,
    pub test: PathBuf,
    #[serde(default)]
    pub format: Option<DataFormat>,
}

impl DataConfig {
    pub fn format_for(&self, path: &Path) -> DataFormat {
        self.format.unwrap_or_else(|| DataFormat::from_path(path))
    }

    /// Resolves relative paths against `base` (the config file's directory).
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train);
        fix(&mut self.test);
        if let Some(v) = self.validation.as_mut() {
            fix(v);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MolamConfig {
    pub sigma: f64,
    pub delta: f64,
    pub pseudo_label: bool,
    pub max_rounds: usize,
    /// Unlabeled instances annotated up front as self-training candidates.
    pub pseudo_pool: usize,
    /// Named gradient-boosting preset; overrides `aggregator` when set.
    pub profile: Option<String>,
    pub aggregator: AggregatorConfig,
    /// Use the validation split for aggregator early stopping.
    pub use_validation: bool,
}

impl Default for MolamConfig {
    fn default() -> Self {
        Self {
            sigma: 0.9,
            delta: 0.001,
            pseudo_label: true,
            max_rounds: 5,
            pseudo_pool: 500,
            profile: None,
            aggregator: AggregatorConfig::default(),
            use_validation: false,
        }
    }
}

impl MolamConfig {
    pub fn aggregator_config(&self) -> Result<AggregatorConfig> {
        match &self.profile {
            None => Ok(self.aggregator.clone()),
            Some(name) => GbdtParams::profile(name)
                .map(AggregatorConfig::Gbdt)
                .ok_or_else(|| Error::Config(vec![format!("unknown aggregator profile `{name}`")])),
        }
    }

    pub fn fit_config(&self) -> Result<FitConfig> {
        Ok(FitConfig {
            aggregator: self.aggregator_config()?,
            sigma: self.sigma,
            pseudo_label: self.pseudo_label,
            max_rounds: self.max_rounds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub lambda_start: f64,
    pub lambda_end: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda_start: 0.4,
            lambda_end: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationConfig {
    /// Concurrent remote requests per batch.
    pub max_in_flight: usize,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        Self { max_in_flight: 4 }
    }
}

/// Who labels the selected batch.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Labeler {
    #[default]
    Molam,
    /// A single annotator: argmax of its scores, negatives from its scores alone.
    Annotator(String),
}

impl From<String> for Labeler {
    fn from(s: String) -> Self {
        if s == "molam" {
            Labeler::Molam
        } else {
            Labeler::Annotator(s)
        }
    }
}

impl From<Labeler> for String {
    fn from(l: Labeler) -> Self {
        match l {
            Labeler::Molam => "molam".into(),
            Labeler::Annotator(name) => name,
        }
    }
}

/// Loss-component switches matching the four ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    /// Negative learning and discrepancy weighting.
    A,
    /// Negative learning only (`alpha = 1`).
    B,
    /// Discrepancy weighting only (`lambda = 0`).
    C,
    /// Neither.
    D,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::A, Ablation::B, Ablation::C, Ablation::D];

    pub fn apply(self, config: &mut RunConfig) {
        if matches!(self, Ablation::B | Ablation::D) {
            config.loss.alpha = 1.0;
        }
        if matches!(self, Ablation::C | Ablation::D) {
            config.loss.lambda_start = 0.0;
            config.loss.lambda_end = 0.0;
        }
    }

    pub fn negative_learning(self) -> bool {
        matches!(self, Ablation::A | Ablation::B)
    }

    pub fn discrepancy(self) -> bool {
        matches!(self, Ablation::A | Ablation::C)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Ablation::A),
            "B" => Ok(Ablation::B),
            "C" => Ok(Ablation::C),
            "D" => Ok(Ablation::D),
            _ => Err(Error::Config(vec![format!("unknown ablation `{s}`, expected A, B, C or D")])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Active-learning iterations `R`.
    pub iterations: usize,
    pub batch_size: usize,
    pub n_init: usize,
    /// Draw the initial gold pool with at least one instance per class when possible.
    pub stratified_init: bool,
    pub strategy: StrategyName,
    pub labeler: Labeler,
    /// Class names; taken from the synthetic generator when `[synthetic]` is used.
    pub labels: Option<Vec<String>>,
    pub data: Option<DataConfig>,
    pub synthetic: Option<SyntheticConfig>,
    pub annotators: Vec<AnnotatorSpec>,
    pub molam: MolamConfig,
    pub loss: LossConfig,
    pub classifier: ClassifierConfig,
    pub annotation: AnnotationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 10,
            batch_size: 50,
            n_init: 50,
            stratified_init: false,
            strategy: StrategyName::Random,
            labeler: Labeler::Molam,
            labels: None,
            data: None,
            synthetic: None,
            annotators: Vec::new(),
            molam: MolamConfig::default(),
            loss: LossConfig::default(),
            classifier: ClassifierConfig::default(),
            annotation: AnnotationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))
    }

    /// Parses a config file, resolving data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(data) = config.data.as_mut() {
            data.resolve(path.parent().unwrap_or(Path::new(".")));
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(vec![format!("cannot serialize config: {e}")]))
    }

    /// Number of classes implied by the config, if determinable.
    pub fn num_classes(&self) -> Option<usize> {
        match (&self.synthetic, &self.labels) {
            (Some(s), _) => Some(s.classes),
            (None, Some(l)) => Some(l.len()),
            _ => None,
        }
    }

    pub fn uses_synthetic_panel(&self) -> bool {
        self.synthetic.is_some() && self.annotators.is_empty()
    }

    /// Every problem with the config, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let m = &self.molam;
        if !(m.sigma > 0.0 && m.sigma <= 1.0) {
            out.push(format!("molam.sigma must satisfy sigma ∈ (0,1], got {}", m.sigma));
        }
        if !(m.delta > 0.0 && m.delta < 1.0) {
            out.push(format!("molam.delta must satisfy delta ∈ (0,1), got {}", m.delta));
        }
        if let Err(Error::Config(p)) = m.aggregator_config() {
            out.extend(p);
        } else if let Ok(AggregatorConfig::Gbdt(p)) = m.aggregator_config() {
            out.extend(p.problems());
        }
        let l = &self.loss;
        // alpha = 1 turns discrepancy weighting off and is allowed for ablations.
        if !(l.alpha > 0.0 && l.alpha <= 1.0) {
            out.push(format!("loss.alpha must satisfy alpha ∈ (0,1], got {}", l.alpha));
        }
        if !(l.lambda_start >= 0.0 && l.lambda_end.is_finite()) {
            out.push(format!(
                "loss.lambda_start must be >= 0 and finite, got {}",
                l.lambda_start
            ));
        }
        if l.lambda_start > l.lambda_end {
            out.push(format!(
                "loss.lambda_start ({}) must not exceed loss.lambda_end ({})",
                l.lambda_start, l.lambda_end
            ));
        }
        if self.iterations == 0 {
            out.push("iterations (R) must be >= 1".into());
        }
        if self.batch_size == 0 {
            out.push("batch_size (B) must be >= 1".into());
        }
        if self.n_init < 2 {
            out.push(format!("n_init must be >= 2, got {}", self.n_init));
        }
        if !self.strategy.is_available() {
            out.push(format!(
                "strategy `{}` is an interface only and has no built-in implementation",
                self.strategy
            ));
        }
        out.extend(self.classifier.problems());

        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => out.push("give either [data] or [synthetic], not both".into()),
            (None, None) => out.push("one of [data] or [synthetic] is required".into()),
            (Some(data), None) => {
                if self.labels.is_none() {
                    out.push("labels are required with [data]".into());
                }
                let files = [Some(&data.train), data.validation.as_ref(), Some(&data.test)];
                for path in files.into_iter().flatten() {
                    if !path.is_file() {
                        out.push(format!("data file not found: {}", path.display()));
                    }
                }
            }
            (None, Some(s)) => out.extend(s.problems()),
        }
        if let Some(labels) = &self.labels {
            if let Err(e) = crate::corpus::LabelSpace::new(labels.iter().cloned()) {
                out.push(e.to_string());
            }
            if self.synthetic.as_ref().is_some_and(|s| s.classes != labels.len()) {
                out.push("labels do not match synthetic.classes".into());
            }
        }

        if self.annotators.is_empty() && self.synthetic.is_none() {
            out.push("at least one [[annotators]] entry is required".into());
        }
        let mut names = BTreeSet::new();
        for a in &self.annotators {
            if !names.insert(a.name.as_str()) {
                out.push(format!("duplicate annotator name `{}`", a.name));
            }
            if let Some(k) = self.num_classes() {
                out.extend(a.problems(k).into_iter().map(|p| format!("annotator `{}`: {p}", a.name)));
            }
        }
        if let Labeler::Annotator(name) = &self.labeler {
            let known = if self.uses_synthetic_panel() {
                let k = self.num_classes().unwrap_or(2);
                crate::synthetic::panel(k, 0.0, 1)
                    .iter()
                    .any(|a| &a.name == name)
            } else {
                names.contains(name.as_str())
            };
            if !known {
                out.push(format!("labeler `{name}` is neither `molam` nor a configured annotator"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// `lambda_start + (lambda_end - lambda_start) * t / (R - 1)`, or
/// `lambda_start` when there is a single iteration.
pub fn lambda_at(t: usize, iterations: usize, lambda_start: f64, lambda_end: f64) -> f64 {
    if iterations <= 1 {
        return lambda_start;
    }
    lambda_start + (lambda_end - lambda_start) * t as f64 / (iterations - 1) as f64
}
