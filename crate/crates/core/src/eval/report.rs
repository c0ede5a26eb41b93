//! Report files derived from run state.
//!
//! | file | content |
//! |------|---------|
//! | `metrics.jsonl` | one [`IterationMetrics`] object per line |
//! | `curve.csv` | `iteration,pool_size,micro_f1,annotation_acc` |
//! | `negative_labels.csv` | slot audit per iteration and overall |
//! | `discrepancy.csv` | accurate-annotation detection rate per method |
//! | `summary.txt` | short human-readable digest |
//!
//! Output depends only on the state passed in.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{discrepancy_detection, mean_std, negative_label_audit, DiscrepancyRecord};
use crate::corpus::LabelSpace;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::orchestrator::{InstanceRecord, IterationMetrics, RunState};

fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Validation(format!("csv encoding failed: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| Error::Validation(format!("csv encoding failed: {e}")))
}

#[derive(Serialize)]
struct CurveRow {
    iteration: usize,
    pool_size: usize,
    micro_f1: f64,
    annotation_acc: Option<f64>,
}

#[derive(Serialize)]
struct AuditRow {
    scope: String,
    instances: usize,
    slots: usize,
    true_negatives: usize,
    false_negatives: usize,
    tn_rate: f64,
    fn_rate: f64,
}

#[derive(Serialize)]
struct DetectionRow {
    method: &'static str,
    tp_rate: f64,
    instances: usize,
    flagged: usize,
}

fn audited(records: &[InstanceRecord]) -> impl Iterator<Item = &InstanceRecord> {
    records.iter().filter(|r| r.iteration.is_some() && r.gold.is_some())
}

fn audit_row(scope: String, records: &[&InstanceRecord], k: usize) -> AuditRow {
    let a = negative_label_audit(
        records.iter().map(|r| (r.y_minus.as_slice(), r.gold.expect("filtered"))),
        k,
    );
    AuditRow {
        scope,
        instances: records.len(),
        slots: a.slots,
        true_negatives: a.true_negatives,
        false_negatives: a.false_negatives,
        tn_rate: a.true_negative_rate,
        fn_rate: a.false_negative_rate,
    }
}

/// Discrepancy-audit inputs for every annotated instance with a gold label.
pub fn discrepancy_records(records: &[InstanceRecord]) -> Vec<DiscrepancyRecord> {
    audited(records)
        .filter_map(|r| {
            Some(DiscrepancyRecord {
                id: r.id.clone(),
                d_anno: r.d_anno?,
                correct: r.gold == Some(r.y_plus),
                entropy: r.entropy.unwrap_or(0.0),
                margin: r.margin.unwrap_or(1.0),
                consistency: r.consistency.unwrap_or(1.0),
            })
        })
        .collect()
}

pub fn emit_report(state: &RunState, label_space: &LabelSpace, dir: &Path) -> Result<()> {
    let k = label_space.len();
    let mut jsonl = String::new();
    for m in &state.metrics {
        jsonl.push_str(&serde_json::to_string(m)?);
        jsonl.push('\n');
    }
    write_atomic(&dir.join("metrics.jsonl"), jsonl.as_bytes())?;

    let curve = state.metrics.iter().map(|m| CurveRow {
        iteration: m.iteration,
        pool_size: m.pool_size,
        micro_f1: m.micro_f1,
        annotation_acc: m.annotation_acc,
    });
    write_atomic(&dir.join("curve.csv"), &csv_bytes(curve)?)?;

    let all: Vec<&InstanceRecord> = audited(&state.records).collect();
    let mut audit_rows: Vec<AuditRow> = (0..state.iteration)
        .map(|t| {
            let batch: Vec<&InstanceRecord> =
                all.iter().copied().filter(|r| r.iteration == Some(t)).collect();
            audit_row(format!("iteration-{t}"), &batch, k)
        })
        .collect();
    audit_rows.push(audit_row("all".into(), &all, k));
    let overall = audit_rows.last().map(|r| (r.tn_rate, r.fn_rate, r.slots));
    write_atomic(&dir.join("negative_labels.csv"), &csv_bytes(audit_rows)?)?;

    let detection = discrepancy_detection(&discrepancy_records(&state.records)).ok();
    let detection_rows: Vec<DetectionRow> = detection
        .map(|d| {
            [
                ("discrepancy", d.discrepancy),
                ("entropy", d.entropy),
                ("margin", d.margin),
                ("consistency", d.consistency),
            ]
            .into_iter()
            .map(|(method, tp_rate)| DetectionRow {
                method,
                tp_rate,
                instances: d.n,
                flagged: d.flagged,
            })
            .collect()
        })
        .unwrap_or_default();
    write_atomic(&dir.join("discrepancy.csv"), &csv_bytes(detection_rows)?)?;

    let mut s = String::new();
    let _ = writeln!(s, "labels: {}", label_space.names().join(", "));
    let _ = writeln!(s, "iterations completed: {}", state.iteration);
    if state.exhausted {
        let _ = writeln!(s, "unlabeled pool exhausted");
    }
    let _ = writeln!(s, "labeled pool: {}", state.pools.labeled().len());
    let _ = writeln!(s, "self-training admissions: {}", state.pseudo_labeled);
    let _ = writeln!(s, "initial micro-F1: {:.4}", state.initial_f1);
    if let Some(m) = state.metrics.last() {
        let _ = writeln!(s, "final micro-F1: {:.4}", m.micro_f1);
        if let Some(acc) = m.cumulative_annotation_acc {
            let _ = writeln!(s, "annotation accuracy: {acc:.4}");
        }
    }
    if let Some((tn, fn_, slots)) = overall {
        let _ = writeln!(s, "negative labels over {slots} slots: TN {tn:.4}, FN {fn_:.4}");
    }
    if let Some(d) = detection {
        let _ = writeln!(
            s,
            "accurate-annotation detection: discrepancy {:.4}, entropy {:.4}, margin {:.4}, consistency {:.4}",
            d.discrepancy, d.entropy, d.margin, d.consistency
        );
    }
    write_atomic(&dir.join("summary.txt"), s.as_bytes())
}

/// Mean and population standard deviation of one curve point across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatePoint {
    pub iteration: usize,
    pub pool_size: f64,
    pub runs: usize,
    pub micro_f1_mean: f64,
    pub micro_f1_std: f64,
    pub annotation_acc_mean: Option<f64>,
    pub annotation_acc_std: Option<f64>,
}

/// Aligns runs by iteration; an iteration is reported while at least one run reached it.
pub fn aggregate_curves(runs: &[&[IterationMetrics]]) -> Vec<AggregatePoint> {
    let longest = runs.iter().map(|r| r.len()).max().unwrap_or(0);
    (0..longest)
        .map(|i| {
            let points: Vec<&IterationMetrics> = runs.iter().filter_map(|r| r.get(i)).collect();
            let f1: Vec<f64> = points.iter().map(|m| m.micro_f1).collect();
            let pool: Vec<f64> = points.iter().map(|m| m.pool_size as f64).collect();
            let acc: Vec<f64> = points.iter().filter_map(|m| m.annotation_acc).collect();
            let (f1_mean, f1_std) = mean_std(&f1);
            let acc_stats = (!acc.is_empty()).then(|| mean_std(&acc));
            AggregatePoint {
                iteration: points[0].iteration,
                pool_size: mean_std(&pool).0,
                runs: points.len(),
                micro_f1_mean: f1_mean,
                micro_f1_std: f1_std,
                annotation_acc_mean: acc_stats.map(|s| s.0),
                annotation_acc_std: acc_stats.map(|s| s.1),
            }
        })
        .collect()
}

pub fn write_aggregate(path: &Path, points: &[AggregatePoint]) -> Result<()> {
    write_atomic(path, &csv_bytes(points)?)
}

#[derive(Serialize)]
struct AblationRow<'a> {
    config: &'a str,
    runs: usize,
    final_micro_f1_mean: f64,
    final_micro_f1_std: f64,
}

/// Writes `curve_<name>.csv` per configuration and `ablation.csv` comparing
/// final micro-F1 across configurations.
pub fn emit_ablation_table(dir: &Path, configs: &[(String, Vec<Vec<IterationMetrics>>)]) -> Result<()> {
    let mut rows = Vec::new();
    for (name, runs) in configs {
        let slices: Vec<&[IterationMetrics]> = runs.iter().map(Vec::as_slice).collect();
        write_aggregate(&dir.join(format!("curve_{name}.csv")), &aggregate_curves(&slices))?;
        let finals: Vec<f64> = runs.iter().filter_map(|r| r.last()).map(|m| m.micro_f1).collect();
        let (mean, std) = mean_std(&finals);
        rows.push(AblationRow {
            config: name,
            runs: finals.len(),
            final_micro_f1_mean: mean,
            final_micro_f1_std: std,
        });
    }
    write_atomic(&dir.join("ablation.csv"), &csv_bytes(rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metric(t: usize, f1: f64) -> IterationMetrics {
        IterationMetrics {
            iteration: t,
            pool_size: 50 * (t + 2),
            batch_size: 50,
            micro_f1: f1,
            validation_f1: None,
            annotation_acc: Some(0.8),
            cumulative_annotation_acc: Some(0.8),
            mean_w_d: 0.9,
            mean_negatives: 1.0,
            lambda: 0.4,
            epochs: 10,
        }
    }

    #[test]
    fn aggregation_reports_mean_and_std() {
        let a = vec![metric(0, 0.5), metric(1, 0.7)];
        let b = vec![metric(0, 0.7), metric(1, 0.9)];
        let agg = aggregate_curves(&[&a, &b]);
        assert_eq!(agg.len(), 2);
        assert!((agg[0].micro_f1_mean - 0.6).abs() < 1e-12);
        assert!((agg[1].micro_f1_std - 0.1).abs() < 1e-12);
        assert_eq!(agg[0].runs, 2);
    }

    #[test]
    fn ablation_table_has_one_curve_per_config() {
        let dir = tempfile::tempdir().unwrap();
        let configs: Vec<(String, Vec<Vec<IterationMetrics>>)> = ["A", "B", "C", "D"]
            .iter()
            .map(|n| (n.to_string(), vec![vec![metric(0, 0.5)], vec![metric(0, 0.6)]]))
            .collect();
        emit_ablation_table(dir.path(), &configs).unwrap();
        for n in ["A", "B", "C", "D"] {
            assert!(dir.path().join(format!("curve_{n}.csv")).is_file());
        }
        let table = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
        assert_eq!(table.lines().count(), 5);
        assert!(table.starts_with("config,runs,final_micro_f1_mean,final_micro_f1_std"));
    }
}
