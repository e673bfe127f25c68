use std::error::Error;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{span_f1, weighted_prf, ClassificationReport, EvalError};
use crate::classifier::QuestionClassifier;
use crate::corpus::{stratified_folds, LabeledQuestion};
use crate::ner::{predict_entities, SequenceTagger};

/// Per-fold reports of a k-fold run with mean and population standard
/// deviation of the weighted scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<ClassificationReport>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_accuracy: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    xs.sum::<f64>() / n
}

impl CvReport {
    fn from_folds(k: usize, seed: u64, folds: Vec<ClassificationReport>) -> Self {
        let f1 = folds.iter().map(|r| r.f1);
        let mean_f1 = mean(f1.clone());
        let std_f1 = mean(f1.map(|x| (x - mean_f1).powi(2))).sqrt();
        let mean_accuracy = folds
            .iter()
            .map(|r| r.accuracy)
            .collect::<Option<Vec<f64>>>()
            .map(|a| mean(a.into_iter()));
        CvReport {
            k,
            seed,
            mean_precision: mean(folds.iter().map(|r| r.precision)),
            mean_recall: mean(folds.iter().map(|r| r.recall)),
            mean_f1,
            std_f1,
            mean_accuracy,
            folds,
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>4}  {:>9}  {:>9}  {:>9}  {:>9}\n",
            "fold", "precision", "recall", "f1", "accuracy"
        );
        let acc = |a: Option<f64>| a.map_or("-".to_string(), |a| format!("{a:.4}"));
        for (i, r) in self.folds.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9}",
                i,
                r.precision,
                r.recall,
                r.f1,
                acc(r.accuracy)
            );
        }
        let _ = writeln!(
            out,
            "{:>4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9}",
            "mean",
            self.mean_precision,
            self.mean_recall,
            self.mean_f1,
            acc(self.mean_accuracy)
        );
        let _ = writeln!(
            out,
            "weighted f1 {:.4} ± {:.4} over {} folds",
            self.mean_f1, self.std_f1, self.k
        );
        out
    }
}

/// Checks that `folds` are pairwise disjoint and cover `0..n`.
pub fn check_partition(folds: &[Vec<usize>], n: usize) -> Result<(), EvalError> {
    let mut seen = vec![false; n];
    for (f, fold) in folds.iter().enumerate() {
        for &i in fold {
            match seen.get_mut(i) {
                None => {
                    return Err(EvalError::Partition(format!(
                        "fold {f} holds index {i} of {n}"
                    )))
                }
                Some(true) => return Err(EvalError::Partition(format!("index {i} appears twice"))),
                Some(s) => *s = true,
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(EvalError::Partition(format!("index {i} is in no fold"))),
        None => Ok(()),
    }
}

/// Stratified k-fold cross-validation. Each fold trains on the other k-1
/// folds and scores the held-out one; folds run in parallel and results are
/// returned in fold order.
pub fn cross_validate<M, E, T, S>(
    data: &[LabeledQuestion],
    k: usize,
    seed: u64,
    trainer: T,
    scorer: S,
) -> Result<CvReport, EvalError>
where
    E: Into<Box<dyn Error + Send + Sync>>,
    T: Fn(&[LabeledQuestion]) -> Result<M, E> + Sync,
    S: Fn(&M, &[LabeledQuestion]) -> Result<ClassificationReport, EvalError> + Sync,
{
    let folds = stratified_folds(data, k, seed)?;
    check_partition(&folds, data.len())?;
    let mut fold_of = vec![0; data.len()];
    for (f, fold) in folds.iter().enumerate() {
        for &i in fold {
            fold_of[i] = f;
        }
    }
    let reports = (0..k)
        .into_par_iter()
        .map(|f| {
            let (test, train): (Vec<_>, Vec<_>) =
                data.iter().zip(&fold_of).partition(|(_, &of)| of == f);
            let train: Vec<LabeledQuestion> = train.into_iter().map(|(q, _)| q.clone()).collect();
            let test: Vec<LabeledQuestion> = test.into_iter().map(|(q, _)| q.clone()).collect();
            log::debug!("fold {f}: {} train, {} test", train.len(), test.len());
            let model = trainer(&train).map_err(|e| EvalError::Fold {
                fold: f,
                source: e.into(),
            })?;
            scorer(&model, &test).map_err(|e| EvalError::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CvReport::from_folds(k, seed, reports))
}

/// Question-type report of `model` on `test`.
pub fn score_classifier(
    model: &impl QuestionClassifier,
    test: &[LabeledQuestion],
) -> Result<ClassificationReport, EvalError> {
    let gold: Vec<_> = test.iter().map(|q| q.qtype).collect();
    let predicted: Vec<_> = test
        .iter()
        .map(|q| model.predict_qtype(&q.text).0)
        .collect();
    weighted_prf(&gold, &predicted)
}

/// Entity-span report of `model` on `test`.
pub fn score_tagger(
    model: &impl SequenceTagger,
    test: &[LabeledQuestion],
) -> Result<ClassificationReport, EvalError> {
    let gold: Vec<_> = test.iter().map(|q| q.entities.clone()).collect();
    let predicted: Vec<_> = test
        .iter()
        .map(|q| predict_entities(model, &q.text))
        .collect();
    span_f1(&gold, &predicted)
}
