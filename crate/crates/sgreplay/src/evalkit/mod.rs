//! Scoring and continual-learning metrics.
//!
//! Accuracy of a single answer is soft-voted against the sample's ten
//! annotations; sequence-level behavior is summarized from a lower-triangular
//! accuracy matrix `a[k][j]` (performance on task `j` after finishing task
//! `k`) by three aggregates:
//!
//! - average accuracy `A_k`: mean of row `k`;
//! - forgetting `F_k`: mean over `j < k` of the gap between the best earlier
//!   accuracy on task `j` and its current accuracy;
//! - backward transfer `B_k`: mean over `j < k` of current minus just-learned
//!   accuracy on task `j`.

mod report;

pub use report::{render_report, MetricReport};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical answer form used for matching: lowercased, surrounding
/// whitespace trimmed, leading articles (a, an, the) dropped.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.trim().to_lowercase();
    let mut words: Vec<&str> = lowered.split_whitespace().collect();
    while let Some(first) = words.first() {
        if matches!(*first, "a" | "an" | "the") {
            words.remove(0);
        } else {
            break;
        }
    }
    words.join(" ")
}

/// Soft-voted accuracy of one prediction against exactly ten annotations:
/// `min(matches / 3, 1)`. Both sides are normalized before matching.
pub fn answer_accuracy(pred: &str, annotations: &[String]) -> Result<f64> {
    if annotations.len() != 10 {
        return Err(Error::data(format!(
            "{} annotations, want exactly 10",
            annotations.len()
        )));
    }
    let p = normalize_answer(pred);
    let matches = annotations
        .iter()
        .filter(|a| normalize_answer(a) == p)
        .count();
    Ok((matches as f64 / 3.0).min(1.0))
}

/// Lower-triangular accuracy table: `entry(k, j)` is the accuracy on task
/// `j`'s test set after training through task `k` (both 0-based, `j <= k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    labels: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(labels: Vec<String>) -> AccuracyMatrix {
        AccuracyMatrix { labels, rows: Vec::new() }
    }

    /// Appends the evaluation row after one more task: entry `j` of row `k`
    /// scores task `j`, so row `k` must hold exactly `k + 1` values in
    /// `[0, 1]`.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let k = self.rows.len();
        if row.len() != k + 1 {
            return Err(Error::data(format!(
                "row {k} holds {} entries, want {}",
                row.len(),
                k + 1
            )));
        }
        if self.labels.len() < k + 1 {
            return Err(Error::data(format!(
                "row {k} exceeds the {} task labels",
                self.labels.len()
            )));
        }
        if let Some(bad) = row.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::data(format!("accuracy {bad} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Number of completed (filled) rows.
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Accuracy on task `j` after task `k`, 0-based, `j <= k < n_rows`.
    pub fn entry(&self, k: usize, j: usize) -> f64 {
        self.rows[k][j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    /// Renders the matrix as CSV: a label header then one line per row of
    /// the lower triangle. `f64` Display is shortest-round-trip, so equal
    /// matrices always render to identical bytes.
    pub fn to_csv_string(&self) -> String {
        let mut out = self.labels.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv_str(text: &str) -> Result<AccuracyMatrix> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::data("empty accuracy matrix"))?;
        let labels: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut m = AccuracyMatrix::new(labels);
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::data(format!("bad accuracy value '{v}': {e}")))
                })
                .collect::<Result<_>>()?;
            m.push_row(row)?;
        }
        Ok(m)
    }

    pub fn read_csv(path: &Path) -> Result<AccuracyMatrix> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        AccuracyMatrix::from_csv_str(&text)
    }

    fn check_k(&self, k: usize, metric: &str, min_k: usize) -> Result<()> {
        if k < min_k || k > self.rows.len() {
            return Err(Error::data(format!(
                "{metric} needs a filled row k in {min_k}..={}, got k={k}",
                self.rows.len()
            )));
        }
        Ok(())
    }
}

/// `A_k`: mean accuracy over all `k` seen tasks after task `k` (1-based).
pub fn average_accuracy(m: &AccuracyMatrix, k: usize) -> Result<f64> {
    m.check_k(k, "average accuracy", 1)?;
    let row = m.row(k - 1);
    Ok(row.iter().sum::<f64>() / k as f64)
}

/// `F_k`: mean over earlier tasks of (best accuracy any earlier checkpoint
/// reached on the task) minus (its accuracy now). Defined for `k >= 2`.
pub fn forgetting(m: &AccuracyMatrix, k: usize) -> Result<f64> {
    m.check_k(k, "forgetting", 2)?;
    let mut sum = 0.0;
    for j in 0..k - 1 {
        let best = (j..k - 1)
            .map(|l| m.entry(l, j))
            .fold(f64::NEG_INFINITY, f64::max);
        sum += best - m.entry(k - 1, j);
    }
    Ok(sum / (k - 1) as f64)
}

/// `B_k`: mean over earlier tasks of (accuracy now) minus (accuracy right
/// after the task was learned). Defined for `k >= 2`.
pub fn backward_transfer(m: &AccuracyMatrix, k: usize) -> Result<f64> {
    m.check_k(k, "backward transfer", 2)?;
    let mut sum = 0.0;
    for j in 0..k - 1 {
        sum += m.entry(k - 1, j) - m.entry(j, j);
    }
    Ok(sum / (k - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> AccuracyMatrix {
        let labels = (0..rows.len()).map(|i| format!("t{i}")).collect();
        let mut m = AccuracyMatrix::new(labels);
        for r in rows {
            m.push_row(r.to_vec()).unwrap();
        }
        m
    }

    #[test]
    fn accuracy_soft_votes_over_ten_annotations() {
        let tens = |a: &str, n: usize, b: &str| -> Vec<String> {
            let mut v = vec![a.to_string(); n];
            v.extend(std::iter::repeat_n(b.to_string(), 10 - n));
            v
        };
        assert_eq!(answer_accuracy("red", &tens("red", 10, "")).unwrap(), 1.0);
        let two = answer_accuracy("red", &tens("red", 2, "blue")).unwrap();
        assert!((two - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(answer_accuracy("green", &tens("red", 10, "")).unwrap(), 0.0);
        // Normalization: case, whitespace, and leading articles fold away.
        assert_eq!(answer_accuracy(" The Red ", &tens("red", 10, "")).unwrap(), 1.0);
        assert_eq!(answer_accuracy("", &tens("red", 10, "")).unwrap(), 0.0);
        assert!(answer_accuracy("red", &vec!["red".to_string(); 9]).is_err());
    }

    #[test]
    fn normalization_strips_only_leading_articles() {
        assert_eq!(normalize_answer("The stop sign"), "stop sign");
        assert_eq!(normalize_answer("a an the lamp"), "lamp");
        assert_eq!(normalize_answer("sofa near the table"), "sofa near the table");
        assert_eq!(normalize_answer("  An  Apple "), "apple");
        assert_eq!(normalize_answer("the"), "");
    }

    #[test]
    fn rows_are_validated_and_csv_round_trips_bytewise() {
        let mut m = AccuracyMatrix::new(vec!["o".into(), "a".into()]);
        assert!(m.push_row(vec![0.5, 0.5]).is_err(), "row 0 takes one entry");
        m.push_row(vec![0.5]).unwrap();
        assert!(m.push_row(vec![0.4, 1.5]).is_err(), "out of range");
        m.push_row(vec![0.4, 0.625]).unwrap();
        assert!(m.push_row(vec![0.1, 0.2, 0.3]).is_err(), "past the labels");

        let csv = m.to_csv_string();
        let back = AccuracyMatrix::from_csv_str(&csv).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_csv_string(), csv);
        assert_eq!(csv, "o,a\n0.5\n0.4,0.625\n");
    }

    #[test]
    fn metric_formulas_on_pinned_cases() {
        let m = matrix(&[&[0.5], &[0.4, 0.6]]);
        assert!((average_accuracy(&m, 2).unwrap() - 0.5).abs() < 1e-15);
        assert!((average_accuracy(&m, 1).unwrap() - 0.5).abs() < 1e-15);
        // Task 0 slipped from 0.5 to 0.4: forgetting 0.1, transfer -0.1.
        assert!((forgetting(&m, 2).unwrap() - 0.1).abs() < 1e-15);
        assert!((backward_transfer(&m, 2).unwrap() + 0.1).abs() < 1e-15);

        let m = matrix(&[&[0.5], &[0.3, 0.6]]);
        assert!((forgetting(&m, 2).unwrap() - 0.2).abs() < 1e-15);
        assert!((backward_transfer(&m, 2).unwrap() + 0.2).abs() < 1e-15);

        // A task that keeps improving yields negative forgetting…
        let m = matrix(&[&[0.2], &[0.5, 0.4], &[0.9, 0.5, 0.3]]);
        assert!(forgetting(&m, 3).unwrap() < 0.0);
        // …and a diagonal-preserving run transfers nothing.
        let m = matrix(&[&[0.7], &[0.7, 0.2], &[0.7, 0.2, 0.9]]);
        assert_eq!(backward_transfer(&m, 3).unwrap(), 0.0);

        // Constant matrices average to the constant.
        let m = matrix(&[&[0.25], &[0.25, 0.25], &[0.25, 0.25, 0.25]]);
        assert!((average_accuracy(&m, 3).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sequence_metrics_need_two_tasks() {
        let m = matrix(&[&[0.5]]);
        assert!(forgetting(&m, 1).is_err());
        assert!(backward_transfer(&m, 1).is_err());
        assert!(average_accuracy(&m, 2).is_err(), "row 2 is not filled yet");
        assert!(average_accuracy(&m, 0).is_err());
    }

    #[test]
    fn metrics_ignore_task_labels() {
        let mut a = AccuracyMatrix::new(vec!["x".into(), "y".into(), "z".into()]);
        let mut b = AccuracyMatrix::new(vec!["p".into(), "q".into(), "r".into()]);
        for m in [&mut a, &mut b] {
            m.push_row(vec![0.9]).unwrap();
            m.push_row(vec![0.7, 0.8]).unwrap();
            m.push_row(vec![0.6, 0.5, 0.9]).unwrap();
        }
        for k in 1..=3 {
            assert_eq!(average_accuracy(&a, k).unwrap(), average_accuracy(&b, k).unwrap());
        }
        for k in 2..=3 {
            assert_eq!(forgetting(&a, k).unwrap(), forgetting(&b, k).unwrap());
            assert_eq!(backward_transfer(&a, k).unwrap(), backward_transfer(&b, k).unwrap());
        }
    }
}
