//! Evaluation: weighted precision/recall/F1 for question types and entity
//! spans, graded-answer scores, and k-fold cross-validation.

mod cv;
mod grades;

use std::collections::BTreeMap;
use std::fmt::{self, Display, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, EntitySpan, EntityType};

pub use cv::{check_partition, cross_validate, score_classifier, score_tagger, CvReport};
pub use grades::{
    average_score, load_grades, mrr, read_grades, rer, succ_at, summarize, GradeSummary,
    GradedAnswer,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} items but predictions have {predicted}")]
    LengthMismatch { gold: usize, predicted: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("grade {0} is outside 1..=4")]
    GradeOutOfRange(i64),
    #[error("succ@i+ needs 2 <= i <= 4, got {0}")]
    Threshold(u8),
    #[error("grade file line {line}: {message}")]
    GradeFile { line: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("folds do not partition the data: {0}")]
    Partition(String),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-class and support-weighted precision, recall and F1.
///
/// Span reports have no accuracy or confusion matrix, since a span can be
/// missed or invented without a counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub accuracy: Option<f64>,
    /// Rows are gold labels and columns predictions, both in `classes` order.
    pub confusion: Option<Vec<Vec<usize>>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Builds a report from per-class (true positives, predicted, gold) counts.
fn report_from_counts(counts: Vec<(String, usize, usize, usize)>) -> ClassificationReport {
    let classes: Vec<ClassMetrics> = counts
        .into_iter()
        .map(|(label, tp, predicted, gold)| {
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, gold);
            ClassMetrics {
                label,
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: gold,
            }
        })
        .collect();
    let support: usize = classes.iter().map(|c| c.support).sum();
    let weighted = |m: fn(&ClassMetrics) -> f64| {
        if support == 0 {
            0.0
        } else {
            classes.iter().map(|c| m(c) * c.support as f64).sum::<f64>() / support as f64
        }
    };
    ClassificationReport {
        precision: weighted(|c| c.precision),
        recall: weighted(|c| c.recall),
        f1: weighted(|c| c.f1),
        support,
        classes,
        accuracy: None,
        confusion: None,
    }
}

/// Compares label sequences. Classes are every label seen in either list,
/// in sorted order; precision is 0 for a class that is never predicted.
pub fn weighted_prf<L: Ord + Clone + Display>(
    gold: &[L],
    predicted: &[L],
) -> Result<ClassificationReport, EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    let labels: Vec<&L> = {
        let mut all: Vec<&L> = gold.iter().chain(predicted).collect();
        all.sort();
        all.dedup();
        all
    };
    let pos = |l: &L| labels.binary_search(&l).expect("label collected above");
    let mut confusion = vec![vec![0usize; labels.len()]; labels.len()];
    for (g, p) in gold.iter().zip(predicted) {
        confusion[pos(g)][pos(p)] += 1;
    }
    let counts = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let gold_n = confusion[i].iter().sum();
            let pred_n = confusion.iter().map(|row| row[i]).sum();
            (l.to_string(), confusion[i][i], pred_n, gold_n)
        })
        .collect();
    let mut report = report_from_counts(counts);
    let correct: usize = (0..labels.len()).map(|i| confusion[i][i]).sum();
    report.accuracy = Some(correct as f64 / gold.len() as f64);
    report.confusion = Some(confusion);
    Ok(report)
}

/// Exact-match span scoring: a predicted span is correct only if start, end
/// and type all equal a gold span in the same question. Each gold span can
/// be matched once. When there are no gold spans at all the weighted
/// scores are 1 if nothing was predicted and 0 otherwise.
pub fn span_f1(
    gold: &[Vec<EntitySpan>],
    predicted: &[Vec<EntitySpan>],
) -> Result<ClassificationReport, EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    // type -> (tp, predicted, gold)
    let mut counts: BTreeMap<EntityType, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(predicted) {
        let mut unmatched: BTreeMap<(usize, usize, EntityType), usize> = BTreeMap::new();
        for s in g {
            *unmatched.entry((s.start, s.end, s.etype)).or_default() += 1;
            counts.entry(s.etype).or_default().2 += 1;
        }
        for s in p {
            let c = counts.entry(s.etype).or_default();
            c.1 += 1;
            if let Some(n) = unmatched
                .get_mut(&(s.start, s.end, s.etype))
                .filter(|n| **n > 0)
            {
                *n -= 1;
                c.0 += 1;
            }
        }
    }
    let predicted_any = counts.values().any(|c| c.1 > 0);
    let mut report = report_from_counts(
        counts
            .into_iter()
            .map(|(t, (tp, p, g))| (t.to_string(), tp, p, g))
            .collect(),
    );
    if report.support == 0 {
        let v = if predicted_any { 0.0 } else { 1.0 };
        report.precision = v;
        report.recall = v;
        report.f1 = v;
    }
    Ok(report)
}

impl ClassificationReport {
    /// Plain-text table with one row per class and a weighted row.
    pub fn to_table(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.label.len())
            .max()
            .unwrap_or(0)
            .max(8);
        let mut out = format!(
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}\n",
            "", "precision", "recall", "f1", "support"
        );
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
            "weighted", self.precision, self.recall, self.f1, self.support
        );
        if let Some(a) = self.accuracy {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9}  {:>9}  {:>9.4}  {:>7}",
                "accuracy", "", "", a, self.support
            );
        }
        out
    }
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}
