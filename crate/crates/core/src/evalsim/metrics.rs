use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are truth, columns are prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let q = classes.len();
        Self {
            classes,
            counts: vec![vec![0; q]; q],
        }
    }

    pub fn from_pairs(classes: Vec<String>, truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::InvalidArgument(format!(
                "{} truths but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        let q = self.classes.len();
        if truth >= q || pred >= q {
            return Err(Error::InvalidArgument(format!(
                "class pair ({truth}, {pred}) outside 0..{q}"
            )));
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth\\pred");
        for c in &self.classes {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True samples of this class.
    pub support: u64,
    /// False when `TP + FP == 0`; precision is then reported as 0.
    pub precision_defined: bool,
    /// False when `TP + FN == 0`; recall is then reported as 0.
    pub recall_defined: bool,
}

impl ClassMetrics {
    /// Never true and never predicted. Such classes are left out of the
    /// macro averages.
    pub fn is_vacuous(&self) -> bool {
        !self.precision_defined && !self.recall_defined
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn precision_recall_f1(cm: &ConfusionMatrix) -> Metrics {
    let q = cm.classes.len();
    let mut per_class = Vec::with_capacity(q);
    for c in 0..q {
        let tp = cm.counts[c][c];
        let fn_: u64 = cm.counts[c].iter().sum::<u64>() - tp;
        let fp: u64 = (0..q).map(|r| cm.counts[r][c]).sum::<u64>() - tp;
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                (0.0, false)
            } else {
                (num as f64 / den as f64, true)
            }
        };
        let (precision, precision_defined) = ratio(tp, tp + fp);
        let (recall, recall_defined) = ratio(tp, tp + fn_);
        per_class.push(ClassMetrics {
            name: cm.classes[c].clone(),
            precision,
            recall,
            f1: f1_score(precision, recall),
            support: tp + fn_,
            precision_defined,
            recall_defined,
        });
    }
    let counted: Vec<&ClassMetrics> = per_class.iter().filter(|m| !m.is_vacuous()).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if counted.is_empty() {
            0.0
        } else {
            counted.iter().map(|m| f(m)).sum::<f64>() / counted.len() as f64
        }
    };
    let total = cm.total();
    let diag: u64 = (0..q).map(|c| cm.counts[c][c]).sum();
    Metrics {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        accuracy: if total == 0 {
            0.0
        } else {
            diag as f64 / total as f64
        },
        per_class,
    }
}

/// Aligned text table: one row per class plus the macro average.
pub fn metrics_table(m: &Metrics) -> String {
    let width = m
        .per_class
        .iter()
        .map(|c| c.name.len())
        .max()
        .unwrap_or(5)
        .max(13);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}\n",
        "class", "precision", "recall", "f1", "support"
    );
    for c in &m.per_class {
        let flag = if c.is_vacuous() { "  (no samples)" } else { "" };
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.3}  {:>9.3}  {:>9.3}  {:>7}{flag}",
            c.name, c.precision, c.recall, c.f1, c.support
        );
    }
    let _ = writeln!(
        out,
        "{:<width$}  {:>9.3}  {:>9.3}  {:>9.3}",
        "macro average", m.macro_precision, m.macro_recall, m.macro_f1
    );
    let _ = writeln!(out, "accuracy {:.3}", m.accuracy);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(q: usize) -> Vec<String> {
        (0..q).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn f1_of_known_pair() {
        assert!((f1_score(0.896, 0.796) - 0.843).abs() < 5e-4);
    }

    #[test]
    fn perfect_diagonal() {
        let t = [0, 1, 2, 2, 1];
        let m = precision_recall_f1(&ConfusionMatrix::from_pairs(names(3), &t, &t).unwrap());
        assert!(m
            .per_class
            .iter()
            .all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
        assert_eq!((m.macro_f1, m.accuracy), (1.0, 1.0));
    }

    #[test]
    fn vacuous_class_excluded_from_macro() {
        let m =
            precision_recall_f1(&ConfusionMatrix::from_pairs(names(3), &[0, 1], &[0, 1]).unwrap());
        assert!(m.per_class[2].is_vacuous());
        assert_eq!(m.per_class[2].f1, 0.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn csv_layout() {
        let cm = ConfusionMatrix::from_pairs(names(2), &[0, 1, 1], &[0, 0, 1]).unwrap();
        assert_eq!(cm.to_csv(), "truth\\pred,c0,c1\nc0,1,0\nc1,1,1\n");
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn out_of_range_class() {
        assert!(ConfusionMatrix::from_pairs(names(2), &[2], &[0]).is_err());
        assert!(ConfusionMatrix::from_pairs(names(2), &[0, 1], &[0]).is_err());
    }
}
