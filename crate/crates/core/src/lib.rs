//! Experiment toolkit for binary hate/offensive (HOF) vs. not (NOT) text
//! classification in low-resource languages.
//!
//! The crate is organised around the three stages of the pipeline:
//!
//! * [`corpus`]: loading, validating, splitting and merging labeled corpora.
//! * [`classifier`]: pluggable backbones, fine-tuning, scoring and checkpoints.
//! * [`augment`]: LLM-prompted, label-preserving augmentation plus the audit sheet.
//! * [`selftrain`]: dual-threshold pseudo-labeling of an unlabeled pool.
//! * [`eval`]: confusion matrices, macro F1 and comparison tables.
//! * [`pipeline`]: manifest-driven orchestration used by the CLI.

pub mod augment;
pub mod classifier;
pub mod corpus;
pub mod eval;
pub mod hashing;
pub mod pipeline;
pub mod selftrain;
pub mod synthetic;

pub use augment::{
    AugmentConfig, AugmentationRecord, CompletionClient, CompletionParams, MockClient,
    PromptTemplate, RemoteClient, ReviewSheet, Verdict,
};
pub use classifier::{
    BackboneKind, BackboneRegistry, BackboneSpec, Classifier, ScoreVector, TrainConfig,
    TrainedModel, decide,
};
pub use corpus::{
    Label, Language, LabeledCorpus, Provenance, SplitSpec, StatsRecord, TextSample, UnlabeledPool,
};
pub use eval::{ClassMetrics, ConfusionMatrix, EvaluationReport};
pub use selftrain::{PseudoLabelBatch, SelfTrainReport, ThresholdPolicy};
