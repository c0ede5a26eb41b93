//! Noise-robust training objective.
//!
//! Per example: `w_d * CE(p, y+) + lambda * NL(p, y-)`, where the
//! negative-learning term `NL = -sum_{k in y-} ln(1 - p_k)` pushes mass off
//! classes the annotators ruled out, and `w_d` is 1 for trusted labels and
//! `alpha` for labels the previous model disagreed with.

use serde::{Deserialize, Serialize};

use super::featurizer::SparseVec;

/// Floor applied inside both logarithms.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Weight for disputed labels.
    pub alpha: f64,
    /// Weight of the negative-learning term.
    pub lambda: f64,
}

impl LossParams {
    pub fn new(alpha: f64, lambda: f64) -> Self {
        Self { alpha, lambda }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustExample {
    pub features: SparseVec,
    pub y_plus: usize,
    pub y_minus: Vec<usize>,
    pub w_d: f64,
    pub is_gold: bool,
}

impl RobustExample {
    /// A trusted label: unit weight, no negatives.
    pub fn gold(features: SparseVec, label: usize) -> Self {
        Self {
            features,
            y_plus: label,
            y_minus: Vec::new(),
            w_d: 1.0,
            is_gold: true,
        }
    }

    pub fn annotated(features: SparseVec, y_plus: usize, y_minus: Vec<usize>, w_d: f64) -> Self {
        Self {
            features,
            y_plus,
            y_minus,
            w_d,
            is_gold: false,
        }
    }
}

pub fn cross_entropy(p: &[f64], y: usize) -> f64 {
    -p[y].max(PROB_EPS).ln()
}

pub fn negative_loss(p: &[f64], y_minus: &[usize]) -> f64 {
    y_minus
        .iter()
        .map(|&k| -(1.0 - p[k]).max(PROB_EPS).ln())
        .sum()
}

pub fn discrepancy_weight(disputed: bool, alpha: f64) -> f64 {
    if disputed {
        alpha
    } else {
        1.0
    }
}

pub fn total_loss(example: &RobustExample, p: &[f64], params: &LossParams) -> f64 {
    example.w_d * cross_entropy(p, example.y_plus) + params.lambda * negative_loss(p, &example.y_minus)
}

/// Gradient of [`total_loss`] with respect to the logits that produced `p`.
pub fn total_loss_grad(example: &RobustExample, p: &[f64], params: &LossParams) -> Vec<f64> {
    let k = p.len();
    let mut grad = vec![0.0; k];
    if p[example.y_plus] >= PROB_EPS {
        for (j, g) in grad.iter_mut().enumerate() {
            *g = example.w_d * (p[j] - f64::from(u8::from(j == example.y_plus)));
        }
    }
    if params.lambda != 0.0 {
        for &neg in &example.y_minus {
            let rest = 1.0 - p[neg];
            if rest < PROB_EPS {
                continue;
            }
            // d/dl_j [-ln(1 - p_n)] = p_n (delta_nj - p_j) / (1 - p_n)
            let scale = params.lambda * p[neg] / rest;
            for (j, g) in grad.iter_mut().enumerate() {
                *g += scale * (f64::from(u8::from(j == neg)) - p[j]);
            }
        }
    }
    grad
}
