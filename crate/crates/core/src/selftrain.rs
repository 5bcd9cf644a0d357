//! Self-training: score an unlabeled pool with a trained model, keep only
//! confident predictions under a dual-threshold policy, merge them into the
//! training corpus and retrain.
//!
//! The score is P(HOF). A pool item is labeled HOF when its score is at or
//! above `upper`, NOT when at or below `lower`, and abstains otherwise.
//! Retraining always starts from scratch with the base config.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::classifier::{ClassifierError, TrainConfig, TrainedModel, train_model};
use crate::corpus::{
    CorpusError, Dedup, Label, LabeledCorpus, Provenance, TextSample, UnlabeledPool, merge_corpora,
};
use crate::eval::{EvalError, EvaluationReport, evaluate};

#[derive(Debug, Error)]
pub enum SelfTrainError {
    #[error("invalid threshold policy: {0}")]
    InvalidPolicy(String),
    #[error("unlabeled pool is empty")]
    EmptyPool,
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("pool sample `{id}` overlaps the {split} split by {by}")]
    PoolContamination {
        id: String,
        split: &'static str,
        by: &'static str,
    },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Decision threshold plus the confidence band used for pseudo-labeling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy")]
pub struct ThresholdPolicy {
    decision: f64,
    upper: f64,
    lower: f64,
}

#[derive(Deserialize)]
struct RawPolicy {
    #[serde(default = "default_decision")]
    decision: f64,
    #[serde(default = "default_upper")]
    upper: f64,
    #[serde(default = "default_lower")]
    lower: f64,
}

fn default_decision() -> f64 {
    0.5
}
fn default_upper() -> f64 {
    0.90
}
fn default_lower() -> f64 {
    0.20
}

impl TryFrom<RawPolicy> for ThresholdPolicy {
    type Error = SelfTrainError;

    fn try_from(r: RawPolicy) -> Result<Self, Self::Error> {
        ThresholdPolicy::new(r.decision, r.upper, r.lower)
    }
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            decision: default_decision(),
            upper: default_upper(),
            lower: default_lower(),
        }
    }
}

impl ThresholdPolicy {
    /// Requires `0 <= lower < upper <= 1` and `lower <= decision <= upper`.
    pub fn new(decision: f64, upper: f64, lower: f64) -> Result<Self, SelfTrainError> {
        let err = |msg: String| Err(SelfTrainError::InvalidPolicy(msg));
        if ![decision, upper, lower].iter().all(|x| x.is_finite()) {
            return err("thresholds must be finite".into());
        }
        if !(0.0 <= lower && lower < upper && upper <= 1.0) {
            return err(format!("need 0 <= lower < upper <= 1, got lower={lower} upper={upper}"));
        }
        if !(lower <= decision && decision <= upper) {
            return err(format!(
                "decision {decision} must lie within [{lower}, {upper}]"
            ));
        }
        Ok(Self {
            decision,
            upper,
            lower,
        })
    }

    /// Band `(lower, upper)` with the default decision threshold.
    pub fn band(upper: f64, lower: f64) -> Result<Self, SelfTrainError> {
        Self::new(default_decision(), upper, lower)
    }

    pub fn decision(&self) -> f64 {
        self.decision
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    /// Pseudo-label for `score`, or `None` to abstain. Both bounds are
    /// inclusive.
    pub fn assign(&self, score: f64) -> Option<Label> {
        if score >= self.upper {
            Some(Label::Hof)
        } else if score <= self.lower {
            Some(Label::Not)
        } else {
            None
        }
    }
}

/// Outcome of thresholding one pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelBatch {
    /// Confident samples. Each keeps its pool id, points back at it through
    /// `parent_id`, and carries the model score.
    pub kept: Vec<TextSample>,
    pub abstained: Vec<String>,
    pub policy: ThresholdPolicy,
    pub source_model_fingerprint: String,
}

impl PseudoLabelBatch {
    pub fn kept_count(&self, label: Label) -> usize {
        self.kept.iter().filter(|s| s.label == Some(label)).count()
    }

    pub fn kept_ids(&self) -> HashSet<&str> {
        self.kept.iter().map(|s| s.id.as_str()).collect()
    }
}

/// Applies `policy` to precomputed `scores` (parallel to `pool`). Pure: the
/// same scores give the same batch, whichever model produced them.
pub fn partition_scores(
    pool: &UnlabeledPool,
    scores: &[f64],
    policy: &ThresholdPolicy,
    source_model_fingerprint: &str,
) -> PseudoLabelBatch {
    assert_eq!(pool.len(), scores.len(), "one score per pool sample");
    let mut kept = Vec::new();
    let mut abstained = Vec::new();
    for (s, &score) in pool.samples().iter().zip(scores) {
        match policy.assign(score) {
            Some(label) => kept.push(TextSample {
                label: Some(label),
                provenance: Provenance::PseudoLabeled,
                parent_id: Some(s.id.clone()),
                score: Some(score),
                ..s.clone()
            }),
            None => abstained.push(s.id.clone()),
        }
    }
    PseudoLabelBatch {
        kept,
        abstained,
        policy: *policy,
        source_model_fingerprint: source_model_fingerprint.to_string(),
    }
}

pub fn pseudo_label(
    model: &TrainedModel,
    pool: &UnlabeledPool,
    policy: &ThresholdPolicy,
) -> Result<PseudoLabelBatch, SelfTrainError> {
    if pool.is_empty() {
        return Err(SelfTrainError::EmptyPool);
    }
    let scores = model.predict_scores(&pool.texts())?;
    Ok(partition_scores(
        pool,
        scores.as_slice(),
        policy,
        model.train_fingerprint(),
    ))
}

fn normalized(text: &str) -> String {
    text.nfc()
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Rejects pools that share an id or a normalized text with `train` or
/// `heldout`.
pub fn check_pool_disjoint(
    pool: &UnlabeledPool,
    train: &LabeledCorpus,
    heldout: &LabeledCorpus,
) -> Result<(), SelfTrainError> {
    for (split, corpus) in [("heldout", heldout), ("train", train)] {
        let ids: HashSet<&str> = corpus.samples().iter().map(|s| s.id.as_str()).collect();
        let texts: HashSet<String> = corpus.samples().iter().map(|s| normalized(&s.text)).collect();
        for s in pool.samples() {
            if ids.contains(s.id.as_str()) {
                return Err(SelfTrainError::PoolContamination {
                    id: s.id.clone(),
                    split,
                    by: "id",
                });
            }
            if texts.contains(&normalized(&s.text)) {
                return Err(SelfTrainError::PoolContamination {
                    id: s.id.clone(),
                    split,
                    by: "text",
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub pool_size: usize,
    pub kept: usize,
    pub kept_hof: usize,
    pub kept_not: usize,
    pub corpus_size_before: usize,
    pub corpus_size_after: usize,
    pub pre: EvaluationReport,
    pub post: EvaluationReport,
    /// Nothing was kept; the loop stopped after this round.
    pub terminated_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainReport {
    pub policy: ThresholdPolicy,
    pub rounds: Vec<RoundRecord>,
    pub initial_train_size: usize,
    pub final_train_size: usize,
    /// Final post-retrain macro F1 minus the first pre-retrain macro F1.
    pub macro_f1_delta_abs: f64,
    /// The same change relative to the starting macro F1.
    pub macro_f1_delta_rel: f64,
}

pub struct SelfTrainOutcome {
    pub model: TrainedModel,
    pub corpus: LabeledCorpus,
    pub report: SelfTrainReport,
    pub batches: Vec<PseudoLabelBatch>,
}

/// Runs up to `rounds` rounds of pseudo-label → merge → retrain.
///
/// Each round evaluates on `heldout` before and after retraining. A round
/// that keeps nothing ends the loop; its post-retrain report equals the
/// pre-retrain one since retraining on an unchanged corpus reproduces the
/// same model.
pub fn self_train(
    base_config: &TrainConfig,
    train: &LabeledCorpus,
    heldout: &LabeledCorpus,
    pool: &UnlabeledPool,
    policy: &ThresholdPolicy,
    rounds: usize,
) -> Result<SelfTrainOutcome, SelfTrainError> {
    if rounds == 0 {
        return Err(SelfTrainError::NoRounds);
    }
    if pool.is_empty() {
        return Err(SelfTrainError::EmptyPool);
    }
    check_pool_disjoint(pool, train, heldout)?;

    let mut corpus = train.clone();
    let mut remaining = pool.clone();
    let mut model = train_model(&corpus, base_config)?;
    let mut records = Vec::new();
    let mut batches = Vec::new();

    for round in 1..=rounds {
        if remaining.is_empty() {
            break;
        }
        let pre = evaluate(&model, heldout, policy.decision)?;
        let batch = pseudo_label(&model, &remaining, policy)?;
        let before = corpus.len();
        let mut record = RoundRecord {
            round,
            pool_size: remaining.len(),
            kept: batch.kept.len(),
            kept_hof: batch.kept_count(Label::Hof),
            kept_not: batch.kept_count(Label::Not),
            corpus_size_before: before,
            corpus_size_after: before,
            pre: pre.clone(),
            post: pre,
            terminated_early: false,
        };
        tracing::info!(
            round,
            pool = record.pool_size,
            kept = record.kept,
            "pseudo-labeled pool"
        );
        if batch.kept.is_empty() {
            record.terminated_early = true;
            records.push(record);
            batches.push(batch);
            break;
        }

        let addition = LabeledCorpus::new(batch.kept.clone())?;
        corpus = merge_corpora(&corpus, &addition, Dedup::None)?;
        remaining = remaining.without(&batch.kept_ids());
        model = train_model(&corpus, base_config)?;
        record.post = evaluate(&model, heldout, policy.decision)?;
        record.corpus_size_after = corpus.len();
        records.push(record);
        batches.push(batch);
    }

    let start = records.first().map(|r| r.pre.macro_f1).unwrap_or(0.0);
    let end = records.last().map(|r| r.post.macro_f1).unwrap_or(start);
    let report = SelfTrainReport {
        policy: *policy,
        initial_train_size: train.len(),
        final_train_size: corpus.len(),
        macro_f1_delta_abs: end - start,
        macro_f1_delta_rel: if start > 0.0 { (end - start) / start } else { 0.0 },
        rounds: records,
    };
    Ok(SelfTrainOutcome {
        model,
        corpus,
        report,
        batches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: ThresholdPolicy,
    pub kept: usize,
    pub kept_hof: usize,
    pub kept_not: usize,
    /// Share of HOF among kept samples (0 when nothing is kept).
    pub kept_hof_share: f64,
    pub post_macro_f1: f64,
}

/// One retrain per policy on `train` plus that policy's kept samples.
/// The pool is scored once by `model` and the scores are shared.
pub fn sweep_thresholds(
    model: &TrainedModel,
    pool: &UnlabeledPool,
    heldout: &LabeledCorpus,
    grid: &[ThresholdPolicy],
    base_config: &TrainConfig,
    train: &LabeledCorpus,
) -> Result<Vec<SweepRow>, SelfTrainError> {
    if grid.is_empty() {
        return Err(SelfTrainError::EmptyGrid);
    }
    if pool.is_empty() {
        return Err(SelfTrainError::EmptyPool);
    }
    check_pool_disjoint(pool, train, heldout)?;
    let scores = model.predict_scores(&pool.texts())?;

    grid.par_iter()
        .map(|policy| {
            let batch = partition_scores(pool, scores.as_slice(), policy, model.train_fingerprint());
            let corpus = if batch.kept.is_empty() {
                train.clone()
            } else {
                merge_corpora(train, &LabeledCorpus::new(batch.kept.clone())?, Dedup::None)?
            };
            let retrained = train_model(&corpus, base_config)?;
            let report = evaluate(&retrained, heldout, policy.decision)?;
            let kept = batch.kept.len();
            let kept_hof = batch.kept_count(Label::Hof);
            Ok(SweepRow {
                policy: *policy,
                kept,
                kept_hof,
                kept_not: kept - kept_hof,
                kept_hof_share: if kept == 0 { 0.0 } else { kept_hof as f64 / kept as f64 },
                post_macro_f1: report.macro_f1,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("decision,upper,lower,kept,kept_hof,kept_not,kept_hof_share,post_macro_f1\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.4},{:.6}\n",
            r.policy.decision(),
            r.policy.upper(),
            r.policy.lower(),
            r.kept,
            r.kept_hof,
            r.kept_not,
            r.kept_hof_share,
            r.post_macro_f1
        ));
    }
    out
}
