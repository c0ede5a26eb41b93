//! Multiclass gradient-boosted regression trees with a softmax objective.
//!
//! Each boosting round fits one tree per class to the second-order expansion
//! of the softmax cross-entropy (gradient `p - y`, hessian `2 p (1 - p)`, the
//! same diagonal bound XGBoost's `multi:softprob` uses), with
//! L2-regularized Newton leaf weights scaled by the learning rate. Split
//! search is histogram based: features are bucketed once into at most
//! `max_bins` quantile bins and each node scans its rows once per level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN_HESSIAN: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_estimators: usize,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_min_child_weight")]
    pub min_child_weight: f64,
    #[serde(default)]
    pub min_split_gain: f64,
    #[serde(default = "default_max_bins")]
    pub max_bins: usize,
    /// Rounds without validation improvement before stopping. Only used
    /// when a validation set is supplied.
    #[serde(default = "default_early_stopping")]
    pub early_stopping_rounds: usize,
}

fn default_l2() -> f64 {
    1.0
}
fn default_min_child_weight() -> f64 {
    1.0
}
fn default_max_bins() -> usize {
    64
}
fn default_early_stopping() -> usize {
    30
}

impl GbdtParams {
    pub fn new(learning_rate: f64, max_depth: usize, n_estimators: usize) -> Self {
        Self {
            learning_rate,
            max_depth,
            n_estimators,
            l2: default_l2(),
            min_child_weight: default_min_child_weight(),
            min_split_gain: 0.0,
            max_bins: default_max_bins(),
            early_stopping_rounds: default_early_stopping(),
        }
    }

    /// Named presets tuned per benchmark: `ag_news`, `imdb`, `trec`, `pubmed`.
    pub fn profile(name: &str) -> Option<Self> {
        let (lr, depth, trees) = match name.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "ag_news" | "agnews" => (0.07, 5, 300),
            "imdb" => (0.01, 5, 300),
            "trec" => (0.05, 6, 300),
            "pubmed" => (0.01, 3, 500),
            _ => return None,
        };
        Some(Self::new(lr, depth, trees))
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            out.push(format!("gbdt learning_rate must be in (0, 1], got {}", self.learning_rate));
        }
        if self.max_depth == 0 {
            out.push("gbdt max_depth must be >= 1".into());
        }
        if self.n_estimators == 0 {
            out.push("gbdt n_estimators must be >= 1".into());
        }
        if !(2..=256).contains(&self.max_bins) {
            out.push(format!("gbdt max_bins must be in [2, 256], got {}", self.max_bins));
        }
        if self.l2 < 0.0 || self.min_child_weight < 0.0 {
            out.push("gbdt l2 and min_child_weight must be >= 0".into());
        }
        out
    }
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self::profile("ag_news").expect("built-in profile")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub num_classes: usize,
    pub num_features: usize,
    pub params: GbdtParams,
    /// `rounds[r][k]` is the tree for class `k` fitted in round `r`.
    rounds: Vec<Vec<Tree>>,
    /// Mean training cross-entropy after each kept round.
    pub train_loss: Vec<f64>,
    /// Validation cross-entropy after each round, when validating.
    #[serde(default)]
    pub validation_loss: Vec<f64>,
}

impl GbdtModel {
    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut scores = vec![0.0; self.num_classes];
        for round in &self.rounds {
            for (s, tree) in scores.iter_mut().zip(round) {
                *s += tree.predict(x);
            }
        }
        scores
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.scores(x))
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

fn cross_entropy(scores: &[f64], labels: &[usize], k: usize) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &scores[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / n as f64
}

/// Per-feature cut points: bin `b` holds values `<= cuts[b]`, the last bin
/// everything above the final cut.
struct Binner {
    cuts: Vec<Vec<f64>>,
}

impl Binner {
    fn fit(x: &[Vec<f64>], max_bins: usize) -> Self {
        let f = x[0].len();
        let cuts = (0..f)
            .map(|j| {
                let mut values: Vec<f64> = x.iter().map(|row| row[j]).collect();
                values.sort_by(f64::total_cmp);
                values.dedup();
                if values.len() <= max_bins {
                    values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
                } else {
                    let mut cuts: Vec<f64> = (1..max_bins)
                        .map(|b| {
                            let pos = b * (values.len() - 1) / max_bins;
                            0.5 * (values[pos] + values[pos + 1])
                        })
                        .collect();
                    cuts.dedup();
                    cuts
                }
            })
            .collect();
        Self { cuts }
    }

    fn bin(&self, feature: usize, value: f64) -> u8 {
        self.cuts[feature].partition_point(|c| *c < value) as u8
    }

    fn num_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }
}

struct Grower<'a> {
    bins: &'a [u8],
    binner: &'a Binner,
    num_features: usize,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbdtParams,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    bin: usize,
}

impl Grower<'_> {
    fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.params.l2) * self.params.learning_rate
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.l2)
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i], h + self.hess[i]));
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.leaf_weight(g, h)));
        if depth >= self.params.max_depth || rows.len() < 2 {
            return id;
        }
        let Some(best) = self.best_split(&rows, g, h) else {
            return id;
        };
        let threshold = self.binner.cuts[best.feature][best.bin];
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| usize::from(self.bins[i * self.num_features + best.feature]) <= best.bin);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&self, rows: &[usize], g: f64, h: f64) -> Option<BestSplit> {
        let parent = self.score(g, h);
        let mut best: Option<BestSplit> = None;
        let mut hist_g = vec![0.0; 256];
        let mut hist_h = vec![0.0; 256];
        for feature in 0..self.num_features {
            let nb = self.binner.num_bins(feature);
            if nb < 2 {
                continue;
            }
            hist_g[..nb].fill(0.0);
            hist_h[..nb].fill(0.0);
            for &i in rows {
                let b = usize::from(self.bins[i * self.num_features + feature]);
                hist_g[b] += self.grad[i];
                hist_h[b] += self.hess[i];
            }
            let (mut gl, mut hl) = (0.0, 0.0);
            for b in 0..nb - 1 {
                gl += hist_g[b];
                hl += hist_h[b];
                let (gr, hr) = (g - gl, h - hl);
                if hl < self.params.min_child_weight || hr < self.params.min_child_weight {
                    continue;
                }
                let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent)
                    - self.params.min_split_gain;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit { gain, feature, bin: b });
                }
            }
        }
        best
    }
}

/// Fits a boosted ensemble. With a validation set, keeps the round count that
/// minimized validation cross-entropy, stopping after
/// `early_stopping_rounds` rounds without improvement.
pub fn train_gbdt(
    x: &[Vec<f64>],
    y: &[usize],
    num_classes: usize,
    params: &GbdtParams,
    validation: Option<(&[Vec<f64>], &[usize])>,
) -> Result<GbdtModel> {
    let problems = params.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if x.is_empty() {
        return Err(Error::DegenerateData("empty training set".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let num_features = x[0].len();
    if x.iter().any(|r| r.len() != num_features) {
        return Err(Error::Shape("training rows differ in width".into()));
    }
    if let Some(bad) = y.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Shape(format!("label {bad} outside {num_classes} classes")));
    }
    let mut present = vec![false; num_classes];
    y.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::DegenerateData("training labels cover a single class".into()));
    }

    let n = x.len();
    let k = num_classes;
    let binner = Binner::fit(x, params.max_bins);
    let mut bins = Vec::with_capacity(n * num_features);
    for row in x {
        for (j, &v) in row.iter().enumerate() {
            bins.push(binner.bin(j, v));
        }
    }

    let mut scores = vec![0.0; n * k];
    let mut val_scores = validation.map(|(vx, _)| vec![0.0; vx.len() * k]);
    let mut model = GbdtModel {
        num_classes: k,
        num_features,
        params: params.clone(),
        rounds: Vec::new(),
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
    };
    let mut best = (f64::INFINITY, 0usize);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut probs = vec![0.0; n * k];

    for round in 0..params.n_estimators {
        for i in 0..n {
            let p = softmax(&scores[i * k..(i + 1) * k]);
            probs[i * k..(i + 1) * k].copy_from_slice(&p);
        }
        let mut trees = Vec::with_capacity(k);
        for class in 0..k {
            for i in 0..n {
                let p = probs[i * k + class];
                grad[i] = p - f64::from(u8::from(y[i] == class));
                hess[i] = (2.0 * p * (1.0 - p)).max(MIN_HESSIAN);
            }
            let mut grower = Grower {
                bins: &bins,
                binner: &binner,
                num_features,
                grad: &grad,
                hess: &hess,
                params,
                nodes: Vec::new(),
            };
            grower.grow((0..n).collect(), 0);
            trees.push(Tree {
                nodes: grower.nodes,
            });
        }
        for (i, row) in x.iter().enumerate() {
            for (class, tree) in trees.iter().enumerate() {
                scores[i * k + class] += tree.predict(row);
            }
        }
        model.train_loss.push(cross_entropy(&scores, y, k));

        if let (Some((vx, vy)), Some(vs)) = (validation, val_scores.as_mut()) {
            for (i, row) in vx.iter().enumerate() {
                for (class, tree) in trees.iter().enumerate() {
                    vs[i * k + class] += tree.predict(row);
                }
            }
            let loss = cross_entropy(vs, vy, k);
            model.validation_loss.push(loss);
            model.rounds.push(trees);
            if loss < best.0 {
                best = (loss, round + 1);
            } else if round + 1 - best.1 >= params.early_stopping_rounds.max(1) {
                break;
            }
        } else {
            model.rounds.push(trees);
        }
    }
    if validation.is_some_and(|(vx, _)| !vx.is_empty()) && best.1 > 0 {
        model.rounds.truncate(best.1);
        model.train_loss.truncate(best.1);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            // Linearly separable by a + b relative to 1, with a margin.
            let shift = if label == 1 { 0.6 } else { -0.6 };
            x.push(vec![(a + shift).clamp(0.0, 2.0), (b + shift).clamp(0.0, 2.0), rng.random()]);
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn profiles() {
        let p = GbdtParams::profile("AG News").unwrap();
        assert_eq!((p.learning_rate, p.max_depth, p.n_estimators), (0.07, 5, 300));
        let p = GbdtParams::profile("imdb").unwrap();
        assert_eq!((p.learning_rate, p.max_depth, p.n_estimators), (0.01, 5, 300));
        let p = GbdtParams::profile("trec").unwrap();
        assert_eq!((p.learning_rate, p.max_depth, p.n_estimators), (0.05, 6, 300));
        let p = GbdtParams::profile("pubmed").unwrap();
        assert_eq!((p.learning_rate, p.max_depth, p.n_estimators), (0.01, 3, 500));
        assert!(GbdtParams::profile("mnist").is_none());
    }

    #[test]
    fn fits_separable_data() {
        let (x, y) = separable(50, 3);
        let model = train_gbdt(&x, &y, 2, &GbdtParams::default(), None).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(row, &label)| {
                let p = model.predict_proba(row);
                (p.iter().sum::<f64>() - 1.0).abs() < 1e-6 && (p[label] > 0.5)
            })
            .count();
        assert_eq!(correct, 50);
    }

    #[test]
    fn training_loss_never_increases() {
        let (x, y) = separable(80, 9);
        let model = train_gbdt(&x, &y, 3, &GbdtParams::new(0.1, 4, 100), None).unwrap();
        for w in model.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn deterministic() {
        let (x, y) = separable(60, 5);
        let a = train_gbdt(&x, &y, 2, &GbdtParams::new(0.1, 3, 40), None).unwrap();
        let b = train_gbdt(&x, &y, 2, &GbdtParams::new(0.1, 3, 40), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_inputs() {
        let p = GbdtParams::default();
        assert!(matches!(train_gbdt(&[], &[], 2, &p, None), Err(Error::DegenerateData(_))));
        let x = vec![vec![0.1], vec![0.2]];
        assert!(matches!(train_gbdt(&x, &[1, 1], 2, &p, None), Err(Error::DegenerateData(_))));
        assert!(matches!(train_gbdt(&x, &[0, 2], 2, &p, None), Err(Error::Shape(_))));
    }

    #[test]
    fn validation_truncates_to_best_round() {
        let (x, y) = separable(60, 1);
        let (vx, mut vy) = separable(40, 2);
        // Flip half the validation labels so extra rounds start to hurt.
        vy.iter_mut().take(15).for_each(|l| *l = 1 - *l);
        let params = GbdtParams {
            early_stopping_rounds: 5,
            ..GbdtParams::new(0.3, 3, 200)
        };
        let model = train_gbdt(&x, &y, 2, &params, Some((&vx, &vy))).unwrap();
        let best = model
            .validation_loss
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(model.num_rounds(), best + 1);
        assert!(model.validation_loss.len() < 200);
    }

    #[test]
    fn binning_respects_thresholds() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0]).collect();
        let binner = Binner::fit(&x, 4);
        assert!(binner.num_bins(0) <= 4);
        for row in &x {
            let b = usize::from(binner.bin(0, row[0]));
            if b < binner.cuts[0].len() {
                assert!(row[0] <= binner.cuts[0][b]);
            }
            if b > 0 {
                assert!(row[0] > binner.cuts[0][b - 1]);
            }
        }
    }
}
