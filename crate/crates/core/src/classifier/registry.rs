use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BackboneKind, BackboneSpec, ClassifierError, Result};

pub const TINY_TEST: &str = "tiny-test";

/// Encoder family, which decides how weights are laid out on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderArch {
    XlmRoberta,
    Bert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneEntry {
    pub name: String,
    pub kind: BackboneKind,
    #[serde(default = "default_max_len")]
    pub max_sequence_length: usize,
    #[serde(default)]
    pub architecture: Option<EncoderArch>,
    #[serde(default)]
    pub weights: Option<PathBuf>,
}

fn default_max_len() -> usize {
    128
}

#[derive(Deserialize)]
struct RegistryFile {
    #[serde(default, rename = "backbone")]
    backbones: Vec<BackboneEntry>,
}

/// Name → backbone lookup. Loaded from a TOML manifest of `[[backbone]]`
/// tables layered over the built-in entries, so weight locations can be
/// swapped without code changes.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneRegistry {
    entries: BTreeMap<String, BackboneEntry>,
}

impl Default for BackboneRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl BackboneRegistry {
    pub fn builtin() -> Self {
        let entry = |name: &str, kind, arch, len| BackboneEntry {
            name: name.to_string(),
            kind,
            max_sequence_length: len,
            architecture: arch,
            weights: None,
        };
        use BackboneKind::*;
        use EncoderArch::*;
        let entries = [
            entry("xlm-roberta-large", Multilingual, Some(XlmRoberta), 256),
            entry("indic-bert", Multilingual, Some(Bert), 256),
            entry("bangla-bert", Monolingual, Some(Bert), 256),
            entry("bangla-hate-bert", Monolingual, Some(Bert), 256),
            entry("l3-cube", Monolingual, Some(Bert), 256),
            entry(TINY_TEST, Test, None, 64),
        ];
        Self {
            entries: entries.into_iter().map(|e| (e.name.clone(), e)).collect(),
        }
    }

    /// Built-in entries overridden by the manifest at `path`. Relative
    /// weight paths resolve against the manifest's directory.
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ClassifierError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: RegistryFile = toml::from_str(&text).map_err(|e| {
            ClassifierError::InvalidConfig(format!("registry {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut registry = Self::builtin();
        for mut entry in file.backbones {
            if entry.name == TINY_TEST && entry.kind != BackboneKind::Test {
                return Err(ClassifierError::InvalidConfig(
                    "tiny-test must keep kind = \"test\"".into(),
                ));
            }
            if let Some(w) = entry.weights.take() {
                entry.weights = Some(if w.is_relative() { base.join(w) } else { w });
            }
            registry.entries.insert(entry.name.clone(), entry);
        }
        Ok(registry)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn resolve(&self, name: &str) -> Result<BackboneSpec> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| ClassifierError::UnknownBackbone(name.to_string()))?;
        Ok(BackboneSpec {
            name: e.name.clone(),
            kind: e.kind,
            max_sequence_length: e.max_sequence_length,
            architecture: e.architecture,
            weights: e.weights.clone(),
        })
    }
}
