//! Metrics and post-hoc diagnostics.

pub mod report;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use report::{aggregate_curves, emit_ablation_table, emit_report, AggregatePoint};

/// Micro-averaged F1 for single-label multiclass predictions.
///
/// Every instance contributes exactly one predicted and one gold label, so
/// micro precision and recall both equal accuracy.
pub fn micro_f1(predictions: &[usize], golds: &[usize]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Validation("micro-F1 of an empty set".into()));
    }
    let correct = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeLabelAudit {
    pub true_negative_rate: f64,
    pub false_negative_rate: f64,
    /// Number of (instance, class) slots, `n * K`.
    pub slots: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

/// Slot-level audit of negative labels: each (instance, class) pair is one
/// slot, a flagged slot is a true negative when the class is not the gold
/// label and a false negative when it is.
pub fn negative_label_audit<'a>(
    records: impl IntoIterator<Item = (&'a [usize], usize)>,
    num_classes: usize,
) -> NegativeLabelAudit {
    let mut n = 0;
    let mut tn = 0;
    let mut fn_ = 0;
    for (y_minus, gold) in records {
        n += 1;
        for &k in y_minus {
            if k == gold {
                fn_ += 1;
            } else {
                tn += 1;
            }
        }
    }
    let slots = n * num_classes;
    let rate = |c: usize| if slots == 0 { 0.0 } else { c as f64 / slots as f64 };
    NegativeLabelAudit {
        true_negative_rate: rate(tn),
        false_negative_rate: rate(fn_),
        slots,
        true_negatives: tn,
        false_negatives: fn_,
    }
}

/// One annotated instance as seen by the discrepancy audit.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyRecord {
    pub id: String,
    pub d_anno: u8,
    pub correct: bool,
    /// Entropy of the aggregator distribution (higher is more suspect).
    pub entropy: f64,
    /// Top-1 minus top-2 aggregator probability (lower is more suspect).
    pub margin: f64,
    /// Largest consistency any annotator gave the chosen label (lower is more suspect).
    pub consistency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRates {
    pub n: usize,
    pub flagged: usize,
    pub discrepancy: f64,
    pub entropy: f64,
    pub margin: f64,
    pub consistency: f64,
}

/// Fraction of instances that are both unflagged and correctly labeled.
fn accepted_correct_rate(records: &[DiscrepancyRecord], flagged: &[bool]) -> f64 {
    let hits = records
        .iter()
        .zip(flagged)
        .filter(|(r, f)| !**f && r.correct)
        .count();
    hits as f64 / records.len() as f64
}

/// Flags the `quota` most suspect records; `suspicion` orders most suspect
/// first, ties broken by id.
fn quota_flags(
    records: &[DiscrepancyRecord],
    quota: usize,
    suspicion: impl Fn(&DiscrepancyRecord, &DiscrepancyRecord) -> Ordering,
) -> Vec<bool> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        suspicion(&records[a], &records[b]).then_with(|| records[a].id.cmp(&records[b].id))
    });
    let mut flags = vec![false; records.len()];
    for &i in order.iter().take(quota) {
        flags[i] = true;
    }
    flags
}

/// Rate at which each detector identifies accurate annotations. Baselines
/// flag as many instances as `d_anno` does.
pub fn discrepancy_detection(records: &[DiscrepancyRecord]) -> Result<DetectionRates> {
    if records.is_empty() {
        return Err(Error::Validation("discrepancy audit of an empty set".into()));
    }
    let d_flags: Vec<bool> = records.iter().map(|r| r.d_anno == 1).collect();
    let quota = d_flags.iter().filter(|f| **f).count();
    let entropy = quota_flags(records, quota, |a, b| b.entropy.total_cmp(&a.entropy));
    let margin = quota_flags(records, quota, |a, b| a.margin.total_cmp(&b.margin));
    let consistency = quota_flags(records, quota, |a, b| a.consistency.total_cmp(&b.consistency));
    Ok(DetectionRates {
        n: records.len(),
        flagged: quota,
        discrepancy: accepted_correct_rate(records, &d_flags),
        entropy: accepted_correct_rate(records, &entropy),
        margin: accepted_correct_rate(records, &margin),
        consistency: accepted_correct_rate(records, &consistency),
    })
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Top-1 minus top-2 probability; a single class has margin equal to its mass.
pub fn margin(p: &[f64]) -> f64 {
    let mut top = [f64::NEG_INFINITY; 2];
    for &x in p {
        if x > top[0] {
            top = [x, top[0]];
        } else if x > top[1] {
            top[1] = x;
        }
    }
    if top[1] == f64::NEG_INFINITY {
        top[0]
    } else {
        top[0] - top[1]
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_f1_is_accuracy() {
        assert_eq!(micro_f1(&[0, 1, 2, 2], &[0, 1, 2, 0]).unwrap(), 0.75);
        assert_eq!(micro_f1(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert_eq!(micro_f1(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert!(micro_f1(&[], &[]).is_err());
        assert!(micro_f1(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn micro_f1_matches_confusion_matrix() {
        let preds = [0, 2, 1, 1, 0, 2, 2, 1];
        let golds = [0, 1, 1, 2, 0, 2, 0, 1];
        let k = 3;
        let mut cm = vec![vec![0usize; k]; k];
        for (&p, &g) in preds.iter().zip(&golds) {
            cm[g][p] += 1;
        }
        let tp: usize = (0..k).map(|c| cm[c][c]).sum();
        let fp: usize = (0..k).map(|c| (0..k).filter(|&g| g != c).map(|g| cm[g][c]).sum::<usize>()).sum();
        let fn_: usize = (0..k).map(|c| (0..k).filter(|&p| p != c).map(|p| cm[c][p]).sum::<usize>()).sum();
        let prec = tp as f64 / (tp + fp) as f64;
        let rec = tp as f64 / (tp + fn_) as f64;
        let f1 = 2.0 * prec * rec / (prec + rec);
        assert!((micro_f1(&preds, &golds).unwrap() - f1).abs() < 1e-15);
    }

    #[test]
    fn slot_audit_counts() {
        let a: Vec<usize> = vec![0, 3];
        let b: Vec<usize> = vec![2];
        let audit = negative_label_audit([(&a[..], 1), (&b[..], 2)], 4);
        assert_eq!(audit.slots, 8);
        assert_eq!(audit.true_negative_rate, 0.25);
        assert_eq!(audit.false_negative_rate, 0.125);

        let e: Vec<usize> = vec![];
        let empty = negative_label_audit([(&e[..], 0), (&e[..], 1)], 3);
        assert_eq!((empty.true_negative_rate, empty.false_negative_rate), (0.0, 0.0));

        let reversed = negative_label_audit([(&b[..], 2), (&a[..], 1)], 4);
        assert_eq!(reversed, audit);
    }

    fn rec(id: &str, d: u8, correct: bool, ent: f64) -> DiscrepancyRecord {
        DiscrepancyRecord {
            id: id.into(),
            d_anno: d,
            correct,
            entropy: ent,
            margin: 1.0 - ent,
            consistency: 1.0 - ent,
        }
    }

    #[test]
    fn detection_extremes() {
        let all_ok: Vec<_> = (0..4).map(|i| rec(&i.to_string(), 0, true, 0.1)).collect();
        assert_eq!(discrepancy_detection(&all_ok).unwrap().discrepancy, 1.0);
        let all_flagged: Vec<_> = (0..4).map(|i| rec(&i.to_string(), 1, true, 0.1)).collect();
        let r = discrepancy_detection(&all_flagged).unwrap();
        assert_eq!(r.discrepancy, 0.0);
        assert_eq!(r.entropy, 0.0);
        assert!(discrepancy_detection(&[]).is_err());
    }

    #[test]
    fn quota_matching_flags_same_count() {
        // d_anno flags the wrong one; entropy flags the most uncertain (a correct one).
        let records = vec![
            rec("a", 0, true, 0.9),
            rec("b", 1, false, 0.2),
            rec("c", 0, true, 0.1),
            rec("d", 0, true, 0.1),
        ];
        let r = discrepancy_detection(&records).unwrap();
        assert_eq!(r.flagged, 1);
        assert_eq!(r.discrepancy, 0.75);
        assert_eq!(r.entropy, 0.5);
        assert_eq!(r.margin, 0.5);
    }

    #[test]
    fn entropy_and_margin_values() {
        assert!((entropy(&[0.5, 0.5]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((entropy(&[0.9, 0.1]) - 0.325_082_973_391_448_2).abs() < 1e-15);
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
        assert!((margin(&[0.9, 0.1]) - 0.8).abs() < 1e-15);
        assert_eq!(margin(&[0.2, 0.5, 0.3]), 0.5 - 0.3);
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }
}
