//! Experiment manifests: the TOML file a user writes, and the fully
//! resolved form (defaults filled, paths absolute, per-stage seeds derived)
//! that is echoed into every run directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentConfig, CompletionParams, PromptTemplate};
use crate::classifier::{BackboneRegistry, TrainConfig};
use crate::corpus::{Format, Language, SplitSpec};
use crate::hashing::derive_seed;
use crate::selftrain::ThresholdPolicy;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot parse manifest {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{what} does not exist: {path}")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("invalid threshold policy: {0}")]
    InvalidPolicy(String),
    #[error("manifest declares no backbones")]
    NoBackbones,
    #[error("manifest schema_version {found} is not supported (expected {supported})")]
    UnsupportedSchema { found: u32, supported: u32 },
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

/// Per-stage seed derived from the global seed. Kept below 2^63 so it
/// survives a TOML round trip.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    derive_seed(seed, stage) & (i64::MAX as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneRun {
    /// Row label in tables and directory name under `checkpoints/`.
    pub label: String,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub client: ClientKind,
    pub config: AugmentConfig,
    pub template: PromptTemplate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub timeout_secs: u64,
    /// Seed for the offline mock client.
    pub mock_seed: u64,
    /// Size of the review sheet to export, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_size: Option<usize>,
    pub audit_seed: u64,
}

impl AugmentationPlan {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainPlan {
    pub pool: PathBuf,
    pub pool_format: Format,
    pub policy: ThresholdPolicy,
    pub rounds: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<ThresholdPolicy>,
}

/// A validated manifest with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub schema_version: u32,
    pub language: Language,
    pub dataset: PathBuf,
    pub format: Format,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub decision_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<PathBuf>,
    pub split: SplitSpec,
    pub backbones: Vec<BackboneRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<AugmentationPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selftrain: Option<SelfTrainPlan>,
}

impl ExperimentManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved manifest serializes")
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ManifestError> {
        toml::from_str(text).map_err(|e| ManifestError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn backbone(&self, label: &str) -> Option<&BackboneRun> {
        self.backbones.iter().find(|b| b.label == label)
    }
}

// ---- the user-facing schema ------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    schema_version: Option<u32>,
    language: Language,
    dataset: PathBuf,
    format: Option<Format>,
    #[serde(default)]
    seed: u64,
    output_dir: Option<PathBuf>,
    decision_threshold: Option<f64>,
    registry: Option<PathBuf>,
    #[serde(default)]
    split: RawSplit,
    #[serde(default)]
    backbones: Vec<RawBackbone>,
    augmentation: Option<RawAugmentation>,
    selftrain: Option<RawSelfTrain>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSplit {
    train_fraction: Option<f64>,
    stratified: Option<bool>,
    validation_fraction: Option<f64>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBackbone {
    name: String,
    label: Option<String>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    max_sequence_length: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAugmentation {
    multiplier: Option<usize>,
    client: Option<ClientKind>,
    template: Option<String>,
    endpoint: Option<String>,
    model: Option<String>,
    timeout_secs: Option<u64>,
    request_n: Option<usize>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    max_in_flight: Option<usize>,
    min_interval_ms: Option<u64>,
    max_retries: Option<u32>,
    backoff_ms: Option<u64>,
    audit_size: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSelfTrain {
    pool: PathBuf,
    pool_format: Option<Format>,
    rounds: Option<usize>,
    #[serde(default)]
    policy: RawPolicy,
    #[serde(default)]
    sweep: Vec<RawPolicy>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    decision: Option<f64>,
    upper: Option<f64>,
    lower: Option<f64>,
}

impl RawPolicy {
    fn resolve(&self, decision: f64) -> Result<ThresholdPolicy, ManifestError> {
        let d = ThresholdPolicy::default();
        ThresholdPolicy::new(
            self.decision.unwrap_or(decision),
            self.upper.unwrap_or(d.upper()),
            self.lower.unwrap_or(d.lower()),
        )
        .map_err(|e| ManifestError::InvalidPolicy(e.to_string()))
    }
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    };
    joined.canonicalize().unwrap_or(joined)
}

fn existing(base: &Path, p: &Path, what: &'static str) -> Result<PathBuf, ManifestError> {
    let path = absolute(base, p);
    if !path.exists() {
        return Err(ManifestError::MissingPath { what, path });
    }
    Ok(path)
}

fn valid_label(label: &str) -> bool {
    let mut chars = label.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphanumeric())
        && chars.all(|c| c.is_ascii_alphanumeric() || "._+-".contains(c))
}

/// Parses and validates the manifest at `path`. Paths inside it are
/// resolved against its directory. `seed_override` replaces the global
/// seed before any per-stage seed is derived.
pub fn load_manifest(path: &Path, seed_override: Option<u64>) -> Result<ExperimentManifest, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let raw: RawManifest = toml::from_str(&text).map_err(|e| ManifestError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(raw, base, seed_override)
}

/// [`load_manifest`] without a seed override.
pub fn validate_manifest(path: &Path) -> Result<ExperimentManifest, ManifestError> {
    load_manifest(path, None)
}

fn resolve(raw: RawManifest, base: &Path, seed_override: Option<u64>) -> Result<ExperimentManifest, ManifestError> {
    let schema_version = raw.schema_version.unwrap_or(SCHEMA_VERSION);
    if schema_version != SCHEMA_VERSION {
        return Err(ManifestError::UnsupportedSchema {
            found: schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    let seed = seed_override.unwrap_or(raw.seed);
    let dataset = existing(base, &raw.dataset, "dataset")?;
    let format = raw.format.unwrap_or_else(|| Format::from_path(&dataset));
    let decision_threshold = raw.decision_threshold.unwrap_or(0.5);
    if !(decision_threshold > 0.0 && decision_threshold < 1.0) {
        return Err(ManifestError::Invalid(format!(
            "decision_threshold {decision_threshold} must lie in (0, 1)"
        )));
    }

    let split = SplitSpec {
        train_fraction: raw.split.train_fraction.unwrap_or(0.9),
        seed: raw.split.seed.unwrap_or_else(|| stage_seed(seed, "split")),
        stratified: raw.split.stratified.unwrap_or(true),
        validation_fraction: raw.split.validation_fraction,
    };
    split
        .validate()
        .map_err(|e| ManifestError::Invalid(e.to_string()))?;

    let registry_path = raw
        .registry
        .as_deref()
        .map(|p| existing(base, p, "backbone registry"))
        .transpose()?;
    let registry = match &registry_path {
        Some(p) => BackboneRegistry::from_manifest(p),
        None => Ok(BackboneRegistry::builtin()),
    }
    .map_err(|e| ManifestError::Invalid(e.to_string()))?;

    if raw.backbones.is_empty() {
        return Err(ManifestError::NoBackbones);
    }
    let mut labels = HashSet::new();
    let mut backbones = Vec::with_capacity(raw.backbones.len());
    for b in raw.backbones {
        let label = b.label.unwrap_or_else(|| b.name.clone());
        if !valid_label(&label) {
            return Err(ManifestError::Invalid(format!(
                "backbone label `{label}` must be ASCII letters, digits, `.`, `_`, `+` or `-`"
            )));
        }
        if !labels.insert(label.clone()) {
            return Err(ManifestError::Invalid(format!("duplicate backbone label `{label}`")));
        }
        let mut spec = registry
            .resolve(&b.name)
            .map_err(|e| ManifestError::Invalid(e.to_string()))?;
        if let Some(len) = b.max_sequence_length {
            spec.max_sequence_length = len;
        }
        let train_seed = b
            .seed
            .unwrap_or_else(|| stage_seed(seed, &format!("train/{label}")));
        let mut config = TrainConfig::for_backbone(spec, train_seed);
        if let Some(e) = b.epochs {
            config.epochs = e;
        }
        if let Some(lr) = b.learning_rate {
            config.learning_rate = lr;
        }
        if let Some(bs) = b.batch_size {
            config.batch_size = bs;
        }
        config.decision_threshold = decision_threshold;
        config
            .validate()
            .map_err(|e| ManifestError::Invalid(format!("backbone `{label}`: {e}")))?;
        backbones.push(BackboneRun { label, config });
    }

    let augmentation = raw
        .augmentation
        .map(|a| -> Result<AugmentationPlan, ManifestError> {
            let defaults = AugmentConfig::default();
            let config = AugmentConfig {
                multiplier: a.multiplier.unwrap_or(defaults.multiplier),
                request_n: a.request_n.unwrap_or(defaults.request_n),
                params: CompletionParams {
                    temperature: a.temperature.unwrap_or(defaults.params.temperature),
                    max_tokens: a.max_tokens.unwrap_or(defaults.params.max_tokens),
                    seed: Some(stage_seed(seed, "augment/params")),
                },
                max_in_flight: a.max_in_flight.unwrap_or(defaults.max_in_flight),
                min_interval_ms: a.min_interval_ms.unwrap_or(defaults.min_interval_ms),
                max_retries: a.max_retries.unwrap_or(defaults.max_retries),
                backoff_ms: a.backoff_ms.unwrap_or(defaults.backoff_ms),
            };
            config
                .validate()
                .map_err(|e| ManifestError::Invalid(e.to_string()))?;
            let template = match a.template {
                Some(t) => PromptTemplate::new(t).map_err(|e| ManifestError::Invalid(e.to_string()))?,
                None => PromptTemplate::default(),
            };
            let client = a.client.unwrap_or(ClientKind::Mock);
            if client == ClientKind::Remote && (a.endpoint.is_none() || a.model.is_none()) {
                return Err(ManifestError::Invalid(
                    "remote augmentation needs `endpoint` and `model`".into(),
                ));
            }
            Ok(AugmentationPlan {
                client,
                config,
                template,
                endpoint: a.endpoint,
                model: a.model,
                timeout_secs: a.timeout_secs.unwrap_or(60),
                mock_seed: stage_seed(seed, "augment/mock"),
                audit_size: a.audit_size,
                audit_seed: stage_seed(seed, "augment/audit"),
            })
        })
        .transpose()?;

    let selftrain = raw
        .selftrain
        .map(|s| -> Result<SelfTrainPlan, ManifestError> {
            let pool = existing(base, &s.pool, "self-training pool")?;
            let rounds = s.rounds.unwrap_or(1);
            if rounds == 0 {
                return Err(ManifestError::Invalid("selftrain.rounds must be at least 1".into()));
            }
            Ok(SelfTrainPlan {
                pool_format: s.pool_format.unwrap_or_else(|| Format::from_path(&pool)),
                pool,
                policy: s.policy.resolve(decision_threshold)?,
                rounds,
                sweep: s
                    .sweep
                    .iter()
                    .map(|p| p.resolve(decision_threshold))
                    .collect::<Result<_, _>>()?,
            })
        })
        .transpose()?;

    Ok(ExperimentManifest {
        schema_version,
        language: raw.language,
        dataset,
        format,
        seed,
        output_dir: absolute(base, raw.output_dir.as_deref().unwrap_or(Path::new("runs"))),
        decision_threshold,
        registry: registry_path,
        split,
        backbones,
        augmentation,
        selftrain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, manifest: &str) -> PathBuf {
        std::fs::write(dir.join("data.tsv"), "text\tlabel\na\tHOF\nb\tNOT\n").unwrap();
        std::fs::write(dir.join("pool.jsonl"), "{\"text\": \"c\"}\n").unwrap();
        let p = dir.join("m.toml");
        std::fs::write(&p, manifest).unwrap();
        p
    }

    const MINIMAL: &str = "language = \"bengali\"\ndataset = \"data.tsv\"\n[[backbones]]\nname = \"tiny-test\"\n";

    #[test]
    fn defaults_are_filled() {
        let dir = tempfile::tempdir().unwrap();
        let m = validate_manifest(&write(dir.path(), MINIMAL)).unwrap();
        assert_eq!(m.split.train_fraction, 0.9);
        assert!(m.split.stratified);
        assert_eq!(m.decision_threshold, 0.5);
        assert_eq!(m.format, Format::Tsv);
        assert_eq!(m.backbones[0].label, "tiny-test");
        assert_eq!(m.backbones[0].config.epochs, 20);
        assert!(m.augmentation.is_none() && m.selftrain.is_none());
    }

    #[test]
    fn policy_and_multiplier_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{MINIMAL}[augmentation]\n[selftrain]\npool = \"pool.jsonl\"\n");
        let m = validate_manifest(&write(dir.path(), &text)).unwrap();
        assert_eq!(m.augmentation.unwrap().config.multiplier, 3);
        let st = m.selftrain.unwrap();
        assert_eq!(st.policy, ThresholdPolicy::default());
        assert_eq!(st.rounds, 1);
    }

    #[test]
    fn inverted_policy_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "{MINIMAL}[selftrain]\npool = \"pool.jsonl\"\npolicy = {{ lower = 0.9, upper = 0.2 }}\n"
        );
        assert!(matches!(
            validate_manifest(&write(dir.path(), &text)),
            Err(ManifestError::InvalidPolicy(_))
        ));
    }

    #[test]
    fn structural_errors() {
        let dir = tempfile::tempdir().unwrap();
        let no_backbones = "language = \"bengali\"\ndataset = \"data.tsv\"\n";
        assert!(matches!(
            validate_manifest(&write(dir.path(), no_backbones)),
            Err(ManifestError::NoBackbones)
        ));
        let missing = MINIMAL.replace("data.tsv", "absent.tsv");
        assert!(matches!(
            validate_manifest(&write(dir.path(), &missing)),
            Err(ManifestError::MissingPath { what: "dataset", .. })
        ));
        let typo = format!("{MINIMAL}epocs = 3\n");
        assert!(matches!(
            validate_manifest(&write(dir.path(), &typo)),
            Err(ManifestError::Parse { .. })
        ));
        let dup = format!("{MINIMAL}[[backbones]]\nname = \"tiny-test\"\n");
        assert!(matches!(
            validate_manifest(&write(dir.path(), &dup)),
            Err(ManifestError::Invalid(_))
        ));
        let future = format!("schema_version = 9\n{MINIMAL}");
        assert!(matches!(
            validate_manifest(&write(dir.path(), &future)),
            Err(ManifestError::UnsupportedSchema { found: 9, .. })
        ));
    }

    #[test]
    fn resolved_round_trips_and_seed_override() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("seed = 5\n{MINIMAL}[augmentation]\naudit_size = 4\n");
        let path = write(dir.path(), &text);
        let m = validate_manifest(&path).unwrap();
        let back = ExperimentManifest::from_toml(&m.to_toml(), &path).unwrap();
        assert_eq!(back, m);
        let other = load_manifest(&path, Some(6)).unwrap();
        assert_eq!(other.seed, 6);
        assert_ne!(other.split.seed, m.split.seed);
        assert_ne!(other.backbones[0].config.seed, m.backbones[0].config.seed);
    }
}
