//! Multinomial logistic regression, the lightweight aggregator backend.

use serde::{Deserialize, Serialize};

use super::gbdt::softmax;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 300,
            l2: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub num_classes: usize,
    /// Row-major `num_classes x num_features`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let f = x.len();
        let scores: Vec<f64> = (0..self.num_classes)
            .map(|k| {
                self.bias[k]
                    + self.weights[k * f..(k + 1) * f]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect();
        softmax(&scores)
    }
}

/// Full-batch gradient descent on mean cross-entropy plus an L2 penalty.
pub fn train_logistic(
    x: &[Vec<f64>],
    y: &[usize],
    num_classes: usize,
    params: &LogisticParams,
) -> Result<LogisticModel> {
    if x.is_empty() {
        return Err(Error::DegenerateData("empty training set".into()));
    }
    let mut present = vec![false; num_classes];
    for &l in y {
        *present
            .get_mut(l)
            .ok_or_else(|| Error::Shape(format!("label {l} outside {num_classes} classes")))? = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::DegenerateData("training labels cover a single class".into()));
    }
    let f = x[0].len();
    let n = x.len() as f64;
    let mut model = LogisticModel {
        num_classes,
        weights: vec![0.0; num_classes * f],
        bias: vec![0.0; num_classes],
    };
    for _ in 0..params.epochs {
        let mut gw = vec![0.0; num_classes * f];
        let mut gb = vec![0.0; num_classes];
        for (row, &label) in x.iter().zip(y) {
            let p = model.predict_proba(row);
            for k in 0..num_classes {
                let d = p[k] - f64::from(u8::from(k == label));
                gb[k] += d;
                for (g, v) in gw[k * f..(k + 1) * f].iter_mut().zip(row) {
                    *g += d * v;
                }
            }
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= params.learning_rate * (g / n + params.l2 * *w);
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= params.learning_rate * g / n;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_a_threshold() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 40.0, 1.0 - i as f64 / 40.0]).collect();
        let y: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let model = train_logistic(&x, &y, 2, &LogisticParams { epochs: 2000, ..Default::default() }).unwrap();
        let acc = x
            .iter()
            .zip(&y)
            .filter(|(r, &l)| {
                let p = model.predict_proba(r);
                usize::from(p[1] > p[0]) == l
            })
            .count();
        assert!(acc >= 38, "{acc}");
        assert!(train_logistic(&x, &vec![0; 40], 2, &LogisticParams::default()).is_err());
    }
}
