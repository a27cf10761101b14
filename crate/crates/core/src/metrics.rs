//! Confusion matrices and accuracy/precision/recall/F1/Jaccard reports.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ClassRegistry;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{truth} true labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {label} at position {index} is outside the {n_classes}-class registry")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        n_classes: usize,
    },
    #[error("confusion matrix is empty")]
    Empty,
    #[error("unknown averaging mode `{0}`; expected micro, macro or weighted")]
    UnknownAveraging(String),
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: ClassRegistry,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    /// Predicted `c` but truly another class.
    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.n_classes())
            .filter(|&i| i != c)
            .map(|i| self.counts[i][c])
            .sum()
    }

    /// Truly `c` but predicted another class.
    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.n_classes())
            .filter(|&j| j != c)
            .map(|j| self.counts[c][j])
            .sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    /// Header row of class names, then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for n in self.classes.names() {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&self.classes.names()[i]);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], registry: &ClassRegistry) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let n = registry.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (index, (&t, &p)) in truth.iter().zip(pred).enumerate() {
        for label in [t, p] {
            if label >= n {
                return Err(MetricsError::LabelOutOfRange {
                    index,
                    label,
                    n_classes: n,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        classes: registry.clone(),
        counts,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Micro,
    Macro,
    #[default]
    Weighted,
}

impl Averaging {
    pub const ALL: [Averaging; 3] = [Averaging::Micro, Averaging::Macro, Averaging::Weighted];

    pub fn name(self) -> &'static str {
        match self {
            Averaging::Micro => "micro",
            Averaging::Macro => "macro",
            Averaging::Weighted => "weighted",
        }
    }
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Averaging {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| MetricsError::UnknownAveraging(s.to_string()))
    }
}

/// `num / den`, or 0 with `undefined = true` when `den` is 0.
fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

fn f1_of(p: f64, r: f64) -> (f64, bool) {
    ratio(2.0 * p * r, p + r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub jaccard: f64,
    /// Metrics whose defining ratio was 0/0 and were reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

impl ClassMetrics {
    fn from_counts(class: &str, tp: u64, fp: u64, fn_: u64) -> Self {
        let (tpf, fpf, fnf) = (tp as f64, fp as f64, fn_ as f64);
        let (precision, pu) = ratio(tpf, tpf + fpf);
        let (recall, ru) = ratio(tpf, tpf + fnf);
        let (f1, fu) = f1_of(precision, recall);
        let (jaccard, ju) = ratio(tpf, tpf + fpf + fnf);
        let undefined = [("precision", pu), ("recall", ru), ("f1", fu), ("jaccard", ju)]
            .into_iter()
            .filter(|(_, u)| *u)
            .map(|(n, _)| n.to_string())
            .collect();
        Self {
            class: class.to_string(),
            support: tp + fn_,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
            jaccard,
            undefined,
        }
    }
}

/// Precision/recall/F1/Jaccard aggregated over classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub jaccard: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub averaging: Averaging,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub jaccard: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn aggregate(&self) -> Aggregate {
        Aggregate {
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            jaccard: self.jaccard,
        }
    }

    /// Re-aggregates the same per-class values under another mode.
    pub fn with_averaging(&self, averaging: Averaging) -> Self {
        report(&self.confusion, averaging).expect("matrix was already validated")
    }
}

fn aggregate(cm: &ConfusionMatrix, per_class: &[ClassMetrics], mode: Averaging) -> Aggregate {
    match mode {
        Averaging::Micro => {
            let n = cm.n_classes();
            let tp: u64 = per_class.iter().map(|c| c.tp).sum();
            let fp: u64 = per_class.iter().map(|c| c.fp).sum();
            let fn_: u64 = per_class.iter().map(|c| c.fn_).sum();
            debug_assert_eq!(n, per_class.len());
            let m = ClassMetrics::from_counts("micro", tp, fp, fn_);
            Aggregate {
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                jaccard: m.jaccard,
            }
        }
        Averaging::Macro | Averaging::Weighted => {
            let total = cm.total() as f64;
            let k = per_class.len() as f64;
            let weight = |c: &ClassMetrics| match mode {
                Averaging::Macro => 1.0 / k,
                _ => c.support as f64 / total,
            };
            let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|c| weight(c) * f(c)).sum::<f64>();
            Aggregate {
                precision: mean(|c| c.precision),
                recall: mean(|c| c.recall),
                f1: mean(|c| c.f1),
                jaccard: mean(|c| c.jaccard),
            }
        }
    }
}

pub fn report(cm: &ConfusionMatrix, averaging: Averaging) -> Result<MetricsReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let per_class: Vec<ClassMetrics> = (0..cm.n_classes())
        .map(|c| {
            ClassMetrics::from_counts(
                &cm.classes.names()[c],
                cm.true_positives(c),
                cm.false_positives(c),
                cm.false_negatives(c),
            )
        })
        .collect();
    let agg = aggregate(cm, &per_class, averaging);
    Ok(MetricsReport {
        accuracy: cm.correct() as f64 / total as f64,
        averaging,
        precision: agg.precision,
        recall: agg.recall,
        f1: agg.f1,
        jaccard: agg.jaccard,
        per_class,
        confusion: cm.clone(),
    })
}

/// Micro-averaged Jaccard implied by a micro F1 score.
pub fn jaccard_from_f1(f1: f64) -> f64 {
    f1 / (2.0 - f1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg(n: usize) -> ClassRegistry {
        ClassRegistry::new((0..n).map(|i| format!("c{i}")).collect()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2], &reg(3)).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        for mode in Averaging::ALL {
            let r = report(&cm, mode).unwrap();
            assert_eq!(
                (r.accuracy, r.precision, r.recall, r.f1, r.jaccard),
                (1.0, 1.0, 1.0, 1.0, 1.0)
            );
        }
    }

    #[test]
    fn single_cell_and_degenerate_flags() {
        let cm = confusion(&[0, 0], &[1, 1], &reg(2)).unwrap();
        assert_eq!(cm.counts, vec![vec![0, 2], vec![0, 0]]);
        let r = report(&cm, Averaging::Macro).unwrap();
        assert_eq!(r.accuracy, 0.0);
        // class 1 has no support and only false positives: recall is 0/0
        assert_eq!(r.per_class[1].undefined, vec!["recall".to_string(), "f1".to_string()]);
        // class 0 never predicted: precision 0/0
        assert!(r.per_class[0].undefined.contains(&"precision".to_string()));
        assert!([r.precision, r.recall, r.f1, r.jaccard].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn errors() {
        assert_eq!(
            confusion(&[0], &[0, 1], &reg(2)),
            Err(MetricsError::LengthMismatch { truth: 1, pred: 2 })
        );
        assert!(matches!(
            confusion(&[0, 3], &[0, 1], &reg(2)),
            Err(MetricsError::LabelOutOfRange { index: 1, label: 3, .. })
        ));
        let cm = confusion(&[], &[], &reg(2)).unwrap();
        assert_eq!(report(&cm, Averaging::Weighted), Err(MetricsError::Empty));
        assert!("median".parse::<Averaging>().is_err());
        assert_eq!("Micro".parse::<Averaging>().unwrap(), Averaging::Micro);
    }

    #[test]
    fn reported_f1_maps_to_reported_jaccard() {
        let j = jaccard_from_f1(0.9983);
        assert!((j - 0.99661).abs() < 1e-5);
        assert_eq!(format!("{j:.4}"), "0.9966");
    }

    #[test]
    fn weighted_uses_support() {
        // class 0: tp 3 fn 1; class 1: tp 1 fp 1
        let cm = confusion(&[0, 0, 0, 0, 1], &[0, 0, 0, 1, 1], &reg(2)).unwrap();
        let r = report(&cm, Averaging::Weighted).unwrap();
        let want = 0.8 * 0.75 + 0.2 * 1.0;
        assert!((r.recall - want).abs() < 1e-15);
        let csv = cm.to_csv();
        assert_eq!(csv, "true\\pred,c0,c1\nc0,3,1\nc1,0,1\n");
    }
}
