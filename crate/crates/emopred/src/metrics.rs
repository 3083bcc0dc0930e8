//! Confusion-matrix construction and precision/recall/F1/accuracy reports.
//!
//! Per-class precision is the diagonal over the column sum and recall the
//! diagonal over the row sum, each defined as zero when its denominator is
//! zero (such classes still participate in macro averages). Macro metrics
//! are unweighted means over classes; micro metrics pool true/false
//! positives across classes, which for single-label classification makes
//! micro precision, micro recall, and accuracy the same number. Both
//! averages are always reported so downstream comparisons can pick either.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gold-by-predicted count matrix. Rows index the gold class, columns the
/// predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    num_classes: usize,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, gold: usize) -> u64 {
        self.counts[gold * self.num_classes..(gold + 1) * self.num_classes]
            .iter()
            .sum()
    }

    fn col_sum(&self, pred: usize) -> u64 {
        (0..self.num_classes).map(|g| self.count(g, pred)).sum()
    }

    fn trace(&self) -> u64 {
        (0..self.num_classes).map(|k| self.count(k, k)).sum()
    }
}

/// Build the confusion matrix for parallel prediction/gold label arrays.
pub fn confusion(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != golds.len() {
        return Err(Error::Data(format!(
            "{} predictions but {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::Config("confusion matrix with zero classes".into()));
    }
    let mut counts = vec![0u64; num_classes * num_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= num_classes || g >= num_classes {
            return Err(Error::Data(format!(
                "label pair (gold {g}, pred {p}) out of range for {num_classes} classes"
            )));
        }
        counts[g * num_classes + p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        num_classes,
    })
}

/// Harmonic mean of precision and recall, zero when both are zero.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassMetrics {
    /// Class index in the label mapping.
    pub label: usize,
    /// Display form of the class (the emoji); empty until attached.
    pub emoji: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold records in this class.
    pub support: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PrfAggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Comparison rows shown above the per-class table: the accuracy floor of
/// always predicting the most frequent gold class, and (when known) the
/// hash of the evaluation split, so reports computed on byte-identical
/// splits can be matched up.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ReportHeader {
    pub majority_class_accuracy: f64,
    pub split_sha256: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_avg: PrfAggregate,
    pub micro_avg: PrfAggregate,
    pub per_class: Vec<ClassMetrics>,
    pub header: ReportHeader,
}

impl MetricsReport {
    /// Fill the per-class display strings from the label mapping.
    pub fn attach_emoji(&mut self, emoji: &[String]) {
        for class in &mut self.per_class {
            if let Some(e) = emoji.get(class.label) {
                class.emoji = e.clone();
            }
        }
    }

    /// Record which data split these numbers were computed on.
    pub fn set_split_hash(&mut self, hex: impl Into<String>) {
        self.header.split_sha256 = Some(hex.into());
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&Json::from(self))
            .map_err(|e| Error::Data(format!("metrics serialization: {e}")))
    }
}

/// Wire format: {accuracy, macro:{...}, micro:{...}, per_class:[...],
/// header:{...}}.
#[derive(Serialize)]
struct Json<'a> {
    accuracy: f64,
    #[serde(rename = "macro")]
    macro_avg: &'a PrfAggregate,
    #[serde(rename = "micro")]
    micro_avg: &'a PrfAggregate,
    per_class: &'a [ClassMetrics],
    header: &'a ReportHeader,
}

impl<'a> From<&'a MetricsReport> for Json<'a> {
    fn from(r: &'a MetricsReport) -> Self {
        Json {
            accuracy: r.accuracy,
            macro_avg: &r.macro_avg,
            micro_avg: &r.micro_avg,
            per_class: &r.per_class,
            header: &r.header,
        }
    }
}

/// Derive the full report from a confusion matrix.
pub fn report(matrix: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::Data("metrics over an empty confusion matrix".into()));
    }
    let c = matrix.num_classes();
    let mut per_class = Vec::with_capacity(c);
    let mut macro_p = 0.0;
    let mut macro_r = 0.0;
    let mut macro_f1 = 0.0;
    let mut tp_sum = 0u64;
    let mut fp_sum = 0u64;
    let mut fn_sum = 0u64;
    for k in 0..c {
        let tp = matrix.count(k, k);
        let col = matrix.col_sum(k);
        let row = matrix.row_sum(k);
        let precision = if col == 0 { 0.0 } else { tp as f64 / col as f64 };
        let recall = if row == 0 { 0.0 } else { tp as f64 / row as f64 };
        let f1 = f1_from_pr(precision, recall);
        macro_p += precision;
        macro_r += recall;
        macro_f1 += f1;
        tp_sum += tp;
        fp_sum += col - tp;
        fn_sum += row - tp;
        per_class.push(ClassMetrics {
            label: k,
            emoji: String::new(),
            precision,
            recall,
            f1,
            support: row,
        });
    }
    let micro_p = tp_sum as f64 / (tp_sum + fp_sum) as f64;
    let micro_r = tp_sum as f64 / (tp_sum + fn_sum) as f64;
    let majority = (0..c).map(|k| matrix.row_sum(k)).max().unwrap_or(0);
    Ok(MetricsReport {
        accuracy: matrix.trace() as f64 / total as f64,
        macro_avg: PrfAggregate {
            precision: macro_p / c as f64,
            recall: macro_r / c as f64,
            f1: macro_f1 / c as f64,
        },
        micro_avg: PrfAggregate {
            precision: micro_p,
            recall: micro_r,
            f1: f1_from_pr(micro_p, micro_r),
        },
        per_class,
        header: ReportHeader {
            majority_class_accuracy: majority as f64 / total as f64,
            split_sha256: None,
        },
    })
}

/// Naive counting oracle used by the equivalence tests: recompute every
/// quantity directly from the raw (pred, gold) pairs, one full pass per
/// class, with no shared arithmetic with [`report`].
pub fn oracle_report(preds: &[usize], golds: &[usize], num_classes: usize) -> MetricsReport {
    assert_eq!(preds.len(), golds.len());
    let n = preds.len() as f64;
    let mut per_class = Vec::with_capacity(num_classes);
    let mut tp_all = 0usize;
    let mut pred_all = 0usize;
    let mut gold_all = 0usize;
    for k in 0..num_classes {
        let tp = preds
            .iter()
            .zip(golds)
            .filter(|&(&p, &g)| p == k && g == k)
            .count();
        let predicted = preds.iter().filter(|&&p| p == k).count();
        let gold = golds.iter().filter(|&&g| g == k).count();
        let precision = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        tp_all += tp;
        pred_all += predicted;
        gold_all += gold;
        per_class.push(ClassMetrics {
            label: k,
            emoji: String::new(),
            precision,
            recall,
            f1,
            support: gold as u64,
        });
    }
    let correct = preds.iter().zip(golds).filter(|&(&p, &g)| p == g).count();
    let micro_p = tp_all as f64 / pred_all as f64;
    let micro_r = tp_all as f64 / gold_all as f64;
    let micro_f1 = if micro_p + micro_r == 0.0 {
        0.0
    } else {
        2.0 * micro_p * micro_r / (micro_p + micro_r)
    };
    let majority = (0..num_classes)
        .map(|k| golds.iter().filter(|&&g| g == k).count())
        .max()
        .unwrap_or(0);
    MetricsReport {
        accuracy: correct as f64 / n,
        macro_avg: PrfAggregate {
            precision: per_class.iter().map(|c| c.precision).sum::<f64>() / num_classes as f64,
            recall: per_class.iter().map(|c| c.recall).sum::<f64>() / num_classes as f64,
            f1: per_class.iter().map(|c| c.f1).sum::<f64>() / num_classes as f64,
        },
        micro_avg: PrfAggregate {
            precision: micro_p,
            recall: micro_r,
            f1: micro_f1,
        },
        per_class,
        header: ReportHeader {
            majority_class_accuracy: majority as f64 / n,
            split_sha256: None,
        },
    }
}
