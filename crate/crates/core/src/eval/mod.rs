//! Binary classification metrics with HOF as the positive class.
//!
//! Division by zero yields 0 and sets the `degenerate` flag on the affected
//! class, so single-class edge cases have a fixed, visible outcome.

mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, TrainedModel, decide};
use crate::corpus::{Label, LabeledCorpus, Language};

pub use table::{TableFormat, TableOptions, render_table, render_table_with};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions ({predictions}) and gold labels ({gold}) differ in length")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("no reports to render")]
    EmptyReportList,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts with NOT treated as the positive class.
    pub fn swapped(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

pub fn confusion(predictions: &[Label], gold: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    if gold.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &g) in predictions.iter().zip(gold) {
        match (p, g) {
            (Label::Hof, Label::Hof) => m.tp += 1,
            (Label::Hof, Label::Not) => m.fp += 1,
            (Label::Not, Label::Hof) => m.fn_ += 1,
            (Label::Not, Label::Not) => m.tn += 1,
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold count for the class.
    pub support: usize,
    /// Some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: usize, den: usize, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 for the positive class of `m`.
fn positive_class(m: &ConfusionMatrix) -> ClassMetrics {
    let mut degenerate = false;
    let precision = ratio(m.tp, m.tp + m.fp, &mut degenerate);
    let recall = ratio(m.tp, m.tp + m.fn_, &mut degenerate);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: m.tp + m.fn_,
        degenerate,
    }
}

/// Metrics for `(HOF, NOT)`.
pub fn class_metrics(m: &ConfusionMatrix) -> (ClassMetrics, ClassMetrics) {
    (positive_class(m), positive_class(&m.swapped()))
}

/// Unweighted mean of the HOF and NOT F1 scores.
pub fn macro_f1(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    if m.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let (hof, not) = class_metrics(m);
    Ok((hof.f1 + not.f1) / 2.0)
}

/// Identifies what was evaluated: data, model and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFingerprint {
    pub corpus: String,
    pub model: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub language: Language,
    pub macro_f1: f64,
    pub hof: ClassMetrics,
    pub not: ClassMetrics,
    pub matrix: ConfusionMatrix,
    pub degenerate: bool,
    pub fingerprint: RunFingerprint,
}

impl EvaluationReport {
    pub fn from_matrix(
        matrix: ConfusionMatrix,
        language: Language,
        fingerprint: RunFingerprint,
    ) -> Result<Self, EvalError> {
        let macro_f1 = macro_f1(&matrix)?;
        let (hof, not) = class_metrics(&matrix);
        Ok(Self {
            language,
            macro_f1,
            hof,
            not,
            matrix,
            degenerate: hof.degenerate || not.degenerate,
            fingerprint,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores `heldout` with `model`, thresholds at `threshold` and computes the
/// report.
pub fn evaluate(
    model: &TrainedModel,
    heldout: &LabeledCorpus,
    threshold: f64,
) -> Result<EvaluationReport, EvalError> {
    if heldout.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let scores = model.predict_scores(&heldout.texts())?;
    let predictions = scores
        .as_slice()
        .iter()
        .map(|&s| decide(s, threshold))
        .collect::<Result<Vec<_>, _>>()?;
    let matrix = confusion(&predictions, &heldout.labels())?;
    EvaluationReport::from_matrix(
        matrix,
        heldout.language(),
        RunFingerprint {
            corpus: heldout.fingerprint().to_string(),
            model: model.train_fingerprint().to_string(),
            threshold,
        },
    )
}
