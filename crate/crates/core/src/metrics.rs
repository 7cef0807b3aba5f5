//! Accuracy tables, ROC curves and detection reports.

use std::fmt::Write as _;

use crate::detection::DetectionEval;
use crate::error::{Error, Result};

/// Per-class recall and overall accuracy, as fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub correct: Vec<usize>,
    pub total: Vec<usize>,
}

impl AccuracyTable {
    /// `None` for a class that never occurs in the labels.
    pub fn class_accuracy(&self, k: usize) -> Option<f64> {
        (self.total[k] > 0).then(|| self.correct[k] as f64 / self.total[k] as f64)
    }

    pub fn overall(&self) -> f64 {
        let n: usize = self.total.iter().sum();
        if n == 0 {
            0.0
        } else {
            self.correct.iter().sum::<usize>() as f64 / n as f64
        }
    }
}

pub fn per_class_accuracy(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<AccuracyTable> {
    Error::check_dim("predictions", labels.len(), predictions.len())?;
    let mut table = AccuracyTable {
        correct: vec![0; n_classes],
        total: vec![0; n_classes],
    };
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: n_classes,
            });
        }
        table.total[y] += 1;
        if p == y {
            table.correct[y] += 1;
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Sweeps the distinct scores from high to low; a sample is called positive
/// when its score is at least the threshold. The curve starts at `(0, 0)`
/// with threshold `+∞` and ends at `(1, 1)`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    Error::check_dim("ROC labels", scores.len(), labels.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("ROC scores"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "ROC needs at least one positive and one negative sample".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a curve ordered by increasing false-positive rate.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// One-vs-rest curves: class `k` uses column `k` of `probabilities` as the
/// score. Classes absent from `labels` (or present in every sample) get
/// `None`.
pub fn one_vs_rest_roc(
    probabilities: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
) -> Result<Vec<Option<Vec<RocPoint>>>> {
    Error::check_dim("ROC labels", probabilities.len(), labels.len())?;
    (0..n_classes)
        .map(|k| {
            let scores: Vec<f64> = probabilities.iter().map(|p| p[k]).collect();
            let truth: Vec<bool> = labels.iter().map(|&y| y == k).collect();
            let present = truth.iter().any(|&t| t) && truth.iter().any(|&t| !t);
            if present {
                roc_curve(&scores, &truth).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}

fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |a| format!("{:.1}", 100.0 * a))
}

/// Aligned text table: one row per class, then `Total`.
pub fn accuracy_text(table: &AccuracyTable, names: &[String]) -> String {
    let width = names.iter().map(String::len).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>8}  {:>6}\n", "Class", "Accuracy", "Count");
    for (k, name) in names.iter().enumerate() {
        let _ = writeln!(
            out,
            "{name:<width$}  {:>8}  {:>6}",
            percent(table.class_accuracy(k)),
            table.total[k]
        );
    }
    let n: usize = table.total.iter().sum();
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>6}",
        "Total",
        percent(Some(table.overall())),
        n
    );
    out
}

/// Rows for classes that have ground truth, or every non-background class
/// when `background` is given; then a `Total` row.
fn detection_rows(
    eval: &DetectionEval,
    names: &[String],
    background: Option<usize>,
) -> Vec<(String, Option<f64>, usize, usize)> {
    let mut rows: Vec<_> = names
        .iter()
        .enumerate()
        .filter(|&(k, _)| Some(k) != background)
        .map(|(k, name)| {
            (
                name.clone(),
                eval.accuracy(k),
                eval.correct[k],
                eval.total[k],
            )
        })
        .collect();
    let correct = eval.correct.iter().sum();
    let total = eval.total.iter().sum();
    rows.push(("Total".into(), eval.overall(), correct, total));
    rows
}

pub fn detection_report_csv(
    eval: &DetectionEval,
    names: &[String],
    background: Option<usize>,
) -> String {
    let mut out = String::from("class,accuracy_percent,correct,total\n");
    for (name, acc, c, t) in detection_rows(eval, names, background) {
        let acc = acc.map_or_else(String::new, |a| format!("{:.2}", 100.0 * a));
        let _ = writeln!(out, "{name},{acc},{c},{t}");
    }
    out
}

pub fn detection_report_text(
    eval: &DetectionEval,
    names: &[String],
    background: Option<usize>,
) -> String {
    let rows = detection_rows(eval, names, background);
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>8}  {:>9}\n", "Class", "Detected", "Boxes");
    for (name, acc, c, t) in rows {
        let _ = writeln!(
            out,
            "{name:<width$}  {:>8}  {:>9}",
            percent(acc),
            format!("{c}/{t}")
        );
    }
    out
}
