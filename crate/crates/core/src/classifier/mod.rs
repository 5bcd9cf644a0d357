//! Binary HOF/NOT classifiers over pluggable encoder backbones.
//!
//! Every backbone ends in a two-way softmax head; the score reported for a
//! text is the HOF probability, so the two class probabilities always sum
//! to one and thresholds act on a single number.
//!
//! The `tiny-test` backbone (hashed bag-of-token embeddings) is always
//! available and fully deterministic. Pretrained transformer backbones are
//! available when the crate is built with the `transformer` feature and the
//! registry points at a weights directory.

mod checkpoint;
mod registry;
mod tiny;
mod tokenize;
#[cfg(feature = "transformer")]
mod transformer;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, LabeledCorpus};
use crate::hashing::FieldHasher;

pub use checkpoint::{CHECKPOINT_FORMAT_VERSION, load_model, save_model};
pub use registry::{BackboneEntry, BackboneRegistry, EncoderArch, TINY_TEST};
pub use tiny::TinyNet;
pub use tokenize::tokenize;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("unknown backbone `{0}`")]
    UnknownBackbone(String),
    #[error("weights for backbone `{name}` are unavailable: {reason}")]
    WeightsUnavailable { name: String, reason: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("no texts to score")]
    EmptyInput,
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("corrupt checkpoint at {path}: {reason}")]
    CorruptCheckpoint { path: String, reason: String },
    #[error("checkpoint format version {found} is newer than supported version {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("checkpoint i/o at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("backend error: {0}")]
    Backend(String),
}

pub type Result<T, E = ClassifierError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Multilingual,
    Monolingual,
    Test,
}

/// A resolved registry entry: what to build and where its weights live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: String,
    pub kind: BackboneKind,
    pub max_sequence_length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<EncoderArch>,
    /// Directory with `config.json`, `tokenizer.json` and
    /// `model.safetensors`. Not part of any fingerprint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl BackboneSpec {
    pub fn tiny_test() -> Self {
        BackboneRegistry::builtin()
            .resolve(TINY_TEST)
            .expect("tiny-test is always registered")
    }

    pub fn is_test(&self) -> bool {
        self.kind == BackboneKind::Test
    }
}

/// Hyperparameters for one fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub backbone: BackboneSpec,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub decision_threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

impl TrainConfig {
    /// Defaults for a backbone: 20 epochs / lr 1e-2 / batch 32 for
    /// `tiny-test`, 3 epochs / lr 2e-5 / batch 16 for pretrained encoders.
    pub fn for_backbone(backbone: BackboneSpec, seed: u64) -> Self {
        let (epochs, learning_rate, batch_size) = if backbone.is_test() {
            (20, 1e-2, 32)
        } else {
            (3, 2e-5, 16)
        };
        Self {
            backbone,
            epochs,
            learning_rate,
            batch_size,
            seed,
            decision_threshold: default_threshold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ClassifierError::InvalidConfig(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return bad("decision_threshold must lie in (0, 1)");
        }
        if self.backbone.max_sequence_length == 0 {
            return bad("max_sequence_length must be positive");
        }
        Ok(())
    }

    /// Hash of everything that influences training except machine-local
    /// paths.
    fn fingerprint_into(&self, h: &mut FieldHasher) {
        h.field(&self.backbone.name)
            .field(format!("{:?}", self.backbone.kind))
            .u64(self.backbone.max_sequence_length as u64)
            .u64(self.epochs as u64)
            .u64(self.learning_rate.to_bits())
            .u64(self.batch_size as u64)
            .u64(self.seed)
            .u64(self.decision_threshold.to_bits());
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// HOF probabilities, one per input text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(ClassifierError::OutOfRange(format!("score {bad}")));
        }
        Ok(Self(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn decide(&self, threshold: f64) -> Result<Vec<Label>> {
        self.0.iter().map(|&s| decide(s, threshold)).collect()
    }
}

/// Score at or above the threshold is HOF.
pub fn decide(score: f64, threshold: f64) -> Result<Label> {
    if !(0.0..=1.0).contains(&score) {
        return Err(ClassifierError::OutOfRange(format!("score {score}")));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ClassifierError::OutOfRange(format!("threshold {threshold}")));
    }
    Ok(if score >= threshold {
        Label::Hof
    } else {
        Label::Not
    })
}

pub(crate) enum Network {
    Tiny(TinyNet),
    #[cfg(feature = "transformer")]
    Transformer(Box<transformer::TransformerNet>),
}

impl Network {
    fn scores(&self, texts: &[&str]) -> Result<Vec<f64>> {
        match self {
            Network::Tiny(net) => {
                use rayon::prelude::*;
                Ok(texts.par_iter().map(|t| net.score(t)).collect())
            }
            #[cfg(feature = "transformer")]
            Network::Transformer(net) => net.scores(texts),
        }
    }
}

/// An untrained classifier: encoder plus a fresh binary head.
pub struct Classifier {
    spec: BackboneSpec,
    network: Network,
}

impl std::fmt::Debug for Classifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Classifier")
            .field("backbone", &self.spec.name)
            .finish_non_exhaustive()
    }
}

impl Classifier {
    pub fn backbone(&self) -> &BackboneSpec {
        &self.spec
    }

    /// Parameters of the tiny-test network, if that is the backbone.
    pub fn tiny(&self) -> Option<&TinyNet> {
        match &self.network {
            Network::Tiny(net) => Some(net),
            #[cfg(feature = "transformer")]
            _ => None,
        }
    }
}

/// Builds an untrained classifier for `spec`. The tiny-test backbone is
/// initialised from `config.seed`.
pub fn build_classifier(spec: &BackboneSpec, config: &TrainConfig) -> Result<Classifier> {
    config.validate()?;
    let network = match spec.kind {
        BackboneKind::Test => Network::Tiny(TinyNet::new(spec.max_sequence_length, config.seed)),
        _ => build_pretrained(spec, config)?,
    };
    Ok(Classifier {
        spec: spec.clone(),
        network,
    })
}

fn weights_dir(spec: &BackboneSpec) -> Result<&Path> {
    let unavailable = |reason: String| ClassifierError::WeightsUnavailable {
        name: spec.name.clone(),
        reason,
    };
    let dir = spec
        .weights
        .as_deref()
        .ok_or_else(|| unavailable("no weights location in the registry".into()))?;
    if !dir.is_dir() {
        return Err(unavailable(format!("{} is not a directory", dir.display())));
    }
    Ok(dir)
}

#[cfg(feature = "transformer")]
fn build_pretrained(spec: &BackboneSpec, config: &TrainConfig) -> Result<Network> {
    let dir = weights_dir(spec)?;
    let net = transformer::TransformerNet::from_pretrained(spec, dir, config.seed)?;
    Ok(Network::Transformer(Box::new(net)))
}

#[cfg(not(feature = "transformer"))]
fn build_pretrained(spec: &BackboneSpec, _config: &TrainConfig) -> Result<Network> {
    weights_dir(spec)?;
    Err(ClassifierError::WeightsUnavailable {
        name: spec.name.clone(),
        reason: "built without the `transformer` feature".into(),
    })
}

/// A fine-tuned classifier. Immutable; prediction takes `&self`.
pub struct TrainedModel {
    backbone: BackboneSpec,
    config: TrainConfig,
    train_fingerprint: String,
    training_log: Vec<EpochRecord>,
    degenerate: bool,
    checkpoint_ref: Option<PathBuf>,
    network: Network,
}

impl std::fmt::Debug for TrainedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainedModel")
            .field("backbone", &self.backbone.name)
            .field("train_fingerprint", &self.train_fingerprint)
            .field("epochs", &self.training_log.len())
            .finish_non_exhaustive()
    }
}

impl TrainedModel {
    pub fn backbone(&self) -> &BackboneSpec {
        &self.backbone
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Hash of (training corpus fingerprint, training config).
    pub fn train_fingerprint(&self) -> &str {
        &self.train_fingerprint
    }

    pub fn training_log(&self) -> &[EpochRecord] {
        &self.training_log
    }

    /// True when the training corpus held a single class.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Where this model was last saved or loaded from.
    pub fn checkpoint_ref(&self) -> Option<&Path> {
        self.checkpoint_ref.as_deref()
    }

    pub fn tiny(&self) -> Option<&TinyNet> {
        match &self.network {
            Network::Tiny(net) => Some(net),
            #[cfg(feature = "transformer")]
            _ => None,
        }
    }

    /// HOF probability for each text. Each score depends only on its text.
    pub fn predict_scores(&self, texts: &[&str]) -> Result<ScoreVector> {
        if texts.is_empty() {
            return Err(ClassifierError::EmptyInput);
        }
        ScoreVector::new(self.network.scores(texts)?)
    }

    pub fn predict_labels(&self, texts: &[&str]) -> Result<Vec<Label>> {
        self.predict_scores(texts)?
            .decide(self.config.decision_threshold)
    }
}

pub(crate) fn train_fingerprint(corpus_fingerprint: &str, config: &TrainConfig) -> String {
    let mut h = FieldHasher::new();
    h.field(corpus_fingerprint);
    config.fingerprint_into(&mut h);
    h.hex()
}

/// Fine-tunes `classifier` on `train`.
///
/// Samples are visited in an order derived from their ids and the config
/// seed, so for the tiny-test backbone the result is a pure function of
/// (corpus contents, config). A single-class corpus trains with a warning
/// and marks the model degenerate.
pub fn fine_tune(
    classifier: Classifier,
    train: &LabeledCorpus,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    let degenerate = train.label_count(Label::Hof) == 0 || train.label_count(Label::Not) == 0;
    if degenerate {
        tracing::warn!(
            n = train.len(),
            "training corpus holds a single class; model will be degenerate"
        );
    }

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by(|&a, &b| train.samples()[a].id.cmp(&train.samples()[b].id));
    let texts: Vec<&str> = order
        .iter()
        .map(|&i| train.samples()[i].text.as_str())
        .collect();
    let targets: Vec<bool> = order
        .iter()
        .map(|&i| train.samples()[i].label == Some(Label::Hof))
        .collect();

    let Classifier { spec, mut network } = classifier;
    let training_log = match &mut network {
        Network::Tiny(net) => net.train(&texts, &targets, config)?,
        #[cfg(feature = "transformer")]
        Network::Transformer(net) => net.train(&texts, &targets, config)?,
    };

    Ok(TrainedModel {
        backbone: spec,
        config: config.clone(),
        train_fingerprint: train_fingerprint(train.fingerprint(), config),
        training_log,
        degenerate,
        checkpoint_ref: None,
        network,
    })
}

/// Convenience: build then fine-tune.
pub fn train_model(train: &LabeledCorpus, config: &TrainConfig) -> Result<TrainedModel> {
    let classifier = build_classifier(&config.backbone, config)?;
    fine_tune(classifier, train, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decide_rules() {
        assert_eq!(decide(0.95, 0.5).unwrap(), Label::Hof);
        assert_eq!(decide(0.5, 0.5).unwrap(), Label::Hof);
        assert_eq!(decide(0.2, 0.5).unwrap(), Label::Not);
        assert!(matches!(decide(1.2, 0.5), Err(ClassifierError::OutOfRange(_))));
        assert!(matches!(decide(0.2, 1.0), Err(ClassifierError::OutOfRange(_))));
        assert!(matches!(decide(0.2, 0.0), Err(ClassifierError::OutOfRange(_))));
    }

    #[test]
    fn config_defaults() {
        let tiny = TrainConfig::for_backbone(BackboneSpec::tiny_test(), 1);
        assert_eq!((tiny.epochs, tiny.batch_size), (20, 32));
        assert_eq!(tiny.learning_rate, 1e-2);
        assert_eq!(tiny.decision_threshold, 0.5);
        let xlmr = BackboneRegistry::builtin().resolve("xlm-roberta-large").unwrap();
        let cfg = TrainConfig::for_backbone(xlmr, 1);
        assert_eq!((cfg.epochs, cfg.batch_size), (3, 16));
        assert_eq!(cfg.learning_rate, 2e-5);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = TrainConfig::for_backbone(BackboneSpec::tiny_test(), 1);
        cfg.decision_threshold = 1.0;
        assert!(cfg.validate().is_err());
        cfg.decision_threshold = 0.5;
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pretrained_without_weights_is_unavailable() {
        let spec = BackboneRegistry::builtin().resolve("xlm-roberta-large").unwrap();
        let cfg = TrainConfig::for_backbone(spec.clone(), 1);
        assert!(matches!(
            build_classifier(&spec, &cfg),
            Err(ClassifierError::WeightsUnavailable { .. })
        ));
    }
}
