//! Hashed n-gram text features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::fnv1a;

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    /// Builds from unsorted pairs, summing duplicates.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_unstable_by_key(|p| p.0);
        let mut out = SparseVec::default();
        for (i, v) in pairs {
            if out.indices.last() == Some(&i) {
                *out.values.last_mut().expect("parallel vectors") += v;
            } else {
                out.indices.push(i);
                out.values.push(v);
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut a, mut b, mut acc) = (0, 0, 0.0);
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    /// Squared Euclidean distance, computed by merging the index lists.
    pub fn distance_sq(&self, other: &SparseVec) -> f64 {
        let (mut a, mut b, mut acc) = (0, 0, 0.0);
        while a < self.indices.len() || b < other.indices.len() {
            let ia = self.indices.get(a).copied().unwrap_or(u32::MAX);
            let ib = other.indices.get(b).copied().unwrap_or(u32::MAX);
            let d = if ia == ib {
                let d = self.values[a] - other.values[b];
                a += 1;
                b += 1;
                d
            } else if ia < ib {
                a += 1;
                self.values[a - 1]
            } else {
                b += 1;
                other.values[b - 1]
            };
            acc += d * d;
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    L2,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextFeaturizer {
    #[serde(default = "default_ngram_min")]
    pub ngram_min: usize,
    #[serde(default = "default_ngram_max")]
    pub ngram_max: usize,
    #[serde(default = "default_buckets")]
    pub buckets: usize,
    #[serde(default = "default_norm")]
    pub normalization: Normalization,
}

fn default_ngram_min() -> usize {
    1
}
fn default_ngram_max() -> usize {
    2
}
fn default_buckets() -> usize {
    1 << 18
}
fn default_norm() -> Normalization {
    Normalization::L2
}

impl Default for TextFeaturizer {
    fn default() -> Self {
        Self {
            ngram_min: default_ngram_min(),
            ngram_max: default_ngram_max(),
            buckets: default_buckets(),
            normalization: default_norm(),
        }
    }
}

impl TextFeaturizer {
    pub fn with_buckets(buckets: usize) -> Self {
        Self {
            buckets,
            ..Self::default()
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            out.push(format!(
                "n-gram range [{}, {}] is invalid",
                self.ngram_min, self.ngram_max
            ));
        }
        if self.buckets == 0 || self.buckets > u32::MAX as usize {
            out.push(format!("bucket count {} out of range", self.buckets));
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

    pub fn dim(&self) -> usize {
        self.buckets
    }

    /// Lowercased alphanumeric runs.
    pub fn tokenize(text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }

    pub fn transform(&self, text: &str) -> SparseVec {
        let tokens = Self::tokenize(text);
        let mut pairs = Vec::new();
        for n in self.ngram_min..=self.ngram_max {
            for gram in tokens.windows(n) {
                // \u{1f} cannot appear inside a token, so n-grams never collide with unigrams textually.
                let key = gram.join("\u{1f}");
                let bucket = (fnv1a(key.as_bytes()) % self.buckets as u64) as u32;
                pairs.push((bucket, 1.0));
            }
        }
        let mut v = SparseVec::from_pairs(pairs);
        if self.normalization == Normalization::L2 {
            let norm = v.norm_sq().sqrt();
            if norm > 0.0 {
                v.values.iter_mut().for_each(|x| *x /= norm);
            }
        }
        v
    }
}
