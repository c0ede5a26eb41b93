//! Acquisition functions for pool-based selection.
//!
//! Every strategy returns exactly `B` distinct ids from the unlabeled pool and
//! breaks ties by id order.

use std::cmp::Ordering;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::SparseVec;
use crate::error::{Error, Result};
use crate::eval::{entropy, margin};
use crate::rng;

/// Read-only view of model state for one selection round.
#[derive(Debug, Clone, Copy)]
pub struct QueryContext<'a> {
    /// Unlabeled ids; rows of `predictions` and `features` align with these.
    pub ids: &'a [String],
    pub predictions: &'a [Vec<f64>],
    pub features: &'a [SparseVec],
    pub labeled_features: &'a [SparseVec],
    pub batch_size: usize,
    pub seed: u64,
}

impl QueryContext<'_> {
    fn check(&self, need_predictions: bool, need_features: bool) -> Result<()> {
        if self.batch_size > self.ids.len() {
            return Err(Error::InsufficientLabels {
                required: self.batch_size,
                available: self.ids.len(),
            });
        }
        if need_predictions && self.predictions.len() != self.ids.len() {
            return Err(Error::Shape(format!(
                "{} prediction rows for {} unlabeled ids",
                self.predictions.len(),
                self.ids.len()
            )));
        }
        if need_features && self.features.len() != self.ids.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} unlabeled ids",
                self.features.len(),
                self.ids.len()
            )));
        }
        Ok(())
    }
}

/// Plug-in point for acquisition functions.
pub trait QueryStrategy: Send + Sync {
    fn name(&self) -> &str;
    fn select(&self, ctx: &QueryContext<'_>) -> Result<Vec<String>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Random,
    Entropy,
    Margin,
    LeastConfidence,
    Coreset,
    Bemps,
    NoiseStability,
}

impl StrategyName {
    pub const ALL: [StrategyName; 7] = [
        Self::Random,
        Self::Entropy,
        Self::Margin,
        Self::LeastConfidence,
        Self::Coreset,
        Self::Bemps,
        Self::NoiseStability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Entropy => "entropy",
            Self::Margin => "margin",
            Self::LeastConfidence => "least_confidence",
            Self::Coreset => "coreset",
            Self::Bemps => "bemps",
            Self::NoiseStability => "noise_stability",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.as_str() == name)
    }

    pub fn is_available(self) -> bool {
        !matches!(self, Self::Bemps | Self::NoiseStability)
    }

    /// Whether the strategy reads classifier predictions over the pool.
    pub fn needs_predictions(self) -> bool {
        matches!(self, Self::Entropy | Self::Margin | Self::LeastConfidence)
    }

    pub fn build(self) -> Result<Box<dyn QueryStrategy>> {
        Ok(match self {
            Self::Random => Box::new(RandomSampling),
            Self::Entropy => Box::new(Uncertainty(UncertaintyMode::Entropy)),
            Self::Margin => Box::new(Uncertainty(UncertaintyMode::Margin)),
            Self::LeastConfidence => Box::new(Uncertainty(UncertaintyMode::LeastConfidence)),
            Self::Coreset => Box::new(Coreset),
            Self::Bemps | Self::NoiseStability => {
                return Err(Error::Config(vec![format!(
                    "strategy `{}` is not built in; implement QueryStrategy to provide it",
                    self.as_str()
                )]))
            }
        })
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomSampling;

impl QueryStrategy for RandomSampling {
    fn name(&self) -> &str {
        "random"
    }

    fn select(&self, ctx: &QueryContext<'_>) -> Result<Vec<String>> {
        ctx.check(false, false)?;
        let mut order: Vec<usize> = (0..ctx.ids.len()).collect();
        order.sort_by(|&a, &b| ctx.ids[a].cmp(&ctx.ids[b]));
        order.shuffle(&mut rng::stream(ctx.seed, "query-random", 0));
        Ok(order[..ctx.batch_size].iter().map(|&i| ctx.ids[i].clone()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncertaintyMode {
    Entropy,
    Margin,
    LeastConfidence,
}

impl UncertaintyMode {
    /// Informativeness: larger is selected first.
    pub fn score(self, p: &[f64]) -> f64 {
        match self {
            Self::Entropy => entropy(p),
            Self::Margin => -margin(p),
            Self::LeastConfidence => 1.0 - p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Uncertainty(pub UncertaintyMode);

/// Indices of the `b` largest scores, ties by id.
pub fn top_b_by_score(ids: &[String], scores: &[f64], b: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then_with(|| ids[x].cmp(&ids[y])));
    order.truncate(b);
    order
}

impl QueryStrategy for Uncertainty {
    fn name(&self) -> &str {
        match self.0 {
            UncertaintyMode::Entropy => "entropy",
            UncertaintyMode::Margin => "margin",
            UncertaintyMode::LeastConfidence => "least_confidence",
        }
    }

    fn select(&self, ctx: &QueryContext<'_>) -> Result<Vec<String>> {
        ctx.check(true, false)?;
        let scores: Vec<f64> = ctx.predictions.iter().map(|p| self.0.score(p)).collect();
        Ok(top_b_by_score(ctx.ids, &scores, ctx.batch_size)
            .into_iter()
            .map(|i| ctx.ids[i].clone())
            .collect())
    }
}

/// Squared Euclidean distance. Greedy max-min selection only compares
/// distances, so the square root is never taken.
pub trait Distance {
    fn distance_sq(&self, other: &Self) -> f64;
}

impl Distance for SparseVec {
    fn distance_sq(&self, other: &Self) -> f64 {
        SparseVec::distance_sq(self, other)
    }
}

impl Distance for Vec<f64> {
    fn distance_sq(&self, other: &Self) -> f64 {
        self.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

fn better(d_a: f64, id_a: &str, d_b: f64, id_b: &str) -> bool {
    match d_a.total_cmp(&d_b) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => id_a < id_b,
    }
}

/// k-center greedy over `points`, returning indices in pick order.
///
/// Each step picks the point whose distance to its nearest center (labeled
/// points plus earlier picks) is largest. With no labeled points the first
/// two picks are the farthest pair, smaller id first.
pub fn k_center_greedy<P: Distance>(
    points: &[P],
    ids: &[String],
    labeled: &[P],
    b: usize,
) -> Vec<usize> {
    let n = points.len();
    let b = b.min(n);
    let mut picked = Vec::with_capacity(b);
    if b == 0 {
        return picked;
    }
    let mut taken = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    for c in labeled {
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(p.distance_sq(c));
        }
    }

    let take = |i: usize, taken: &mut [bool], picked: &mut Vec<usize>, nearest: &mut [f64]| {
        taken[i] = true;
        picked.push(i);
        for (j, p) in points.iter().enumerate() {
            nearest[j] = nearest[j].min(p.distance_sq(&points[i]));
        }
    };

    if labeled.is_empty() {
        if n == 1 {
            take(0, &mut taken, &mut picked, &mut nearest);
            return picked;
        }
        let mut pair = (0, 1);
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let (lo, hi) = if ids[i] <= ids[j] { (i, j) } else { (j, i) };
                let d = points[i].distance_sq(&points[j]);
                let key = |p: (usize, usize)| (ids[p.0].as_str(), ids[p.1].as_str());
                if d > best || (d == best && key((lo, hi)) < key(pair)) {
                    best = d;
                    pair = (lo, hi);
                }
            }
        }
        take(pair.0, &mut taken, &mut picked, &mut nearest);
        if b >= 2 {
            take(pair.1, &mut taken, &mut picked, &mut nearest);
        }
    }

    while picked.len() < b {
        let mut choice: Option<usize> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            if choice.is_none_or(|c| better(nearest[i], &ids[i], nearest[c], &ids[c])) {
                choice = Some(i);
            }
        }
        take(choice.expect("fewer picks than points"), &mut taken, &mut picked, &mut nearest);
    }
    picked
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Coreset;

impl QueryStrategy for Coreset {
    fn name(&self) -> &str {
        "coreset"
    }

    fn select(&self, ctx: &QueryContext<'_>) -> Result<Vec<String>> {
        ctx.check(false, true)?;
        Ok(
            k_center_greedy(ctx.features, ctx.ids, ctx.labeled_features, ctx.batch_size)
                .into_iter()
                .map(|i| ctx.ids[i].clone())
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("u{i:03}")).collect()
    }

    fn ctx<'a>(
        ids: &'a [String],
        preds: &'a [Vec<f64>],
        feats: &'a [SparseVec],
        labeled: &'a [SparseVec],
        b: usize,
    ) -> QueryContext<'a> {
        QueryContext {
            ids,
            predictions: preds,
            features: feats,
            labeled_features: labeled,
            batch_size: b,
            seed: 17,
        }
    }

    #[test]
    fn random_is_seeded_and_bounded() {
        let ids = ids(10);
        let c = ctx(&ids, &[], &[], &[], 3);
        let a = RandomSampling.select(&c).unwrap();
        assert_eq!(a, RandomSampling.select(&c).unwrap());
        assert_eq!(a.len(), 3);
        assert_eq!(a.iter().collect::<std::collections::BTreeSet<_>>().len(), 3);
        let mut all = RandomSampling.select(&ctx(&ids, &[], &[], &[], 10)).unwrap();
        all.sort();
        assert_eq!(all, ids);
        assert!(RandomSampling.select(&ctx(&ids, &[], &[], &[], 0)).unwrap().is_empty());
        assert!(RandomSampling.select(&ctx(&ids, &[], &[], &[], 11)).is_err());
    }

    #[test]
    fn uncertainty_modes() {
        let ids = ids(2);
        let preds = vec![vec![0.5, 0.5], vec![0.9, 0.1]];
        for mode in [UncertaintyMode::Entropy, UncertaintyMode::Margin, UncertaintyMode::LeastConfidence] {
            let picked = Uncertainty(mode).select(&ctx(&ids, &preds, &[], &[], 1)).unwrap();
            assert_eq!(picked, vec!["u000".to_string()]);
        }
        let flipped = vec![vec![0.9, 0.1], vec![0.5, 0.5]];
        let picked = Uncertainty(UncertaintyMode::Entropy)
            .select(&ctx(&ids, &flipped, &[], &[], 1))
            .unwrap();
        assert_eq!(picked, vec!["u001".to_string()]);
        assert!(Uncertainty(UncertaintyMode::Margin)
            .select(&ctx(&ids, &preds[..1], &[], &[], 1))
            .is_err());
    }

    #[test]
    fn uniform_predictions_fall_back_to_id_order() {
        let ids = vec!["c".to_string(), "a".to_string(), "b".to_string()];
        let preds = vec![vec![1.0 / 3.0; 3]; 3];
        let picked = Uncertainty(UncertaintyMode::Entropy)
            .select(&ctx(&ids, &preds, &[], &[], 2))
            .unwrap();
        assert_eq!(picked, vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn coreset_one_dimensional() {
        let ids = vec!["p1".to_string(), "p10".to_string()];
        let pts = vec![vec![1.0], vec![10.0]];
        let labeled = vec![vec![0.0]];
        assert_eq!(k_center_greedy(&pts, &ids, &labeled, 1), vec![1]);
        assert_eq!(k_center_greedy(&pts, &ids, &labeled, 2), vec![1, 0]);
    }

    #[test]
    fn coreset_without_labeled_seeds_with_farthest_pair() {
        let ids = ids(4);
        let pts = vec![vec![0.0], vec![1.0], vec![5.0], vec![-3.0]];
        assert_eq!(k_center_greedy(&pts, &ids, &[], 1), vec![2]);
        assert_eq!(k_center_greedy(&pts, &ids, &[], 3), vec![2, 3, 1]);
    }

    #[test]
    fn unimplemented_strategies_are_config_errors() {
        assert!(StrategyName::Bemps.build().is_err());
        assert!(StrategyName::NoiseStability.build().is_err());
        for s in StrategyName::ALL {
            assert_eq!(StrategyName::parse(s.as_str()), Some(s));
        }
    }

    /// Recomputes every min distance from scratch at every step.
    fn brute_force(points: &[Vec<f64>], ids: &[String], labeled: &[Vec<f64>], b: usize) -> Vec<usize> {
        let dist = |a: &Vec<f64>, c: &Vec<f64>| -> f64 { a.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum() };
        let mut picked: Vec<usize> = Vec::new();
        for _ in 0..b {
            let mut best: Option<(f64, usize)> = None;
            for i in 0..points.len() {
                if picked.contains(&i) {
                    continue;
                }
                let d = labeled
                    .iter()
                    .chain(picked.iter().map(|&j| &points[j]))
                    .map(|c| dist(&points[i], c))
                    .fold(f64::INFINITY, f64::min);
                let wins = match best {
                    None => true,
                    Some((bd, bi)) => d > bd || (d == bd && ids[i] < ids[bi]),
                };
                if wins {
                    best = Some((d, i));
                }
            }
            picked.push(best.unwrap().1);
        }
        picked
    }

    #[test]
    fn coreset_matches_brute_force_on_small_grids() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.random_range(1..30);
            let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0..5) as f64, rng.random_range(0..5) as f64]).collect();
            let labeled: Vec<Vec<f64>> = (0..rng.random_range(1..4)).map(|_| vec![rng.random_range(0..5) as f64, 0.0]).collect();
            let ids = ids(n);
            let b = rng.random_range(0..=n);
            assert_eq!(k_center_greedy(&pts, &ids, &labeled, b), brute_force(&pts, &ids, &labeled, b));
        }
    }

    proptest! {
        #[test]
        fn uncertainty_selection_is_argsort_invariant(
            raw in proptest::collection::vec(0.01f64..1.0, 2..40),
            b in 0usize..10,
        ) {
            let n = raw.len() / 2;
            prop_assume!(n >= 1);
            let ids = ids(n);
            let scores: Vec<f64> = raw[..n].to_vec();
            let b = b.min(n);
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 7.0).collect();
            prop_assert_eq!(top_b_by_score(&ids, &scores, b), top_b_by_score(&ids, &transformed, b));
        }

        #[test]
        fn strategies_return_b_distinct_pool_ids(
            probs in proptest::collection::vec(0.01f64..1.0, 1..30),
            b in 0usize..30,
        ) {
            let n = probs.len();
            let b = b.min(n);
            let ids = ids(n);
            let preds: Vec<Vec<f64>> = probs.iter().map(|&p| vec![p, 1.0 - p]).collect();
            let feats: Vec<SparseVec> = probs.iter().map(|&p| SparseVec::from_pairs(vec![(0, p)])).collect();
            let labeled = vec![SparseVec::default()];
            let c = ctx(&ids, &preds, &feats, &labeled, b);
            for name in [StrategyName::Random, StrategyName::Entropy, StrategyName::Margin, StrategyName::LeastConfidence, StrategyName::Coreset] {
                let got = name.build().unwrap().select(&c).unwrap();
                prop_assert_eq!(got.len(), b);
                let set: std::collections::BTreeSet<_> = got.iter().collect();
                prop_assert_eq!(set.len(), b);
                prop_assert!(got.iter().all(|g| ids.contains(g)));
            }
        }

        #[test]
        fn coreset_ignores_input_order_with_distinct_distances(
            xs in proptest::collection::btree_set(0i32..10_000, 2..25),
            b in 1usize..10,
        ) {
            let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![(x as f64).powf(1.37)]).collect();
            let n = pts.len();
            let ids = ids(n);
            let labeled = vec![vec![-1.0]];
            let b = b.min(n);
            let forward: Vec<&String> = k_center_greedy(&pts, &ids, &labeled, b).into_iter().map(|i| &ids[i]).collect();
            let rev_pts: Vec<Vec<f64>> = pts.iter().rev().cloned().collect();
            let rev_ids: Vec<String> = ids.iter().rev().cloned().collect();
            let backward: Vec<&String> = k_center_greedy(&rev_pts, &rev_ids, &labeled, b).into_iter().map(|i| &rev_ids[i]).collect();
            prop_assert_eq!(forward, backward);
        }
    }
}
