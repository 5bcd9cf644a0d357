//! Checkpoint directories: weight blobs plus a `model.json` sidecar holding
//! the backbone, training config, fingerprint, format version and a digest
//! of every blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    BackboneSpec, ClassifierError, EpochRecord, Network, Result, TinyNet, TrainConfig,
    TrainedModel,
};
use crate::hashing::sha256_hex;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const META_FILE: &str = "model.json";
const TINY_WEIGHTS: &str = "weights.bin";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum NetworkMeta {
    Tiny {
        max_len: usize,
        buckets: usize,
        dim: usize,
    },
    #[cfg_attr(not(feature = "transformer"), allow(dead_code))]
    Transformer,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileDigest {
    len: u64,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format_version: u32,
    backbone: BackboneSpec,
    config: TrainConfig,
    train_fingerprint: String,
    training_log: Vec<EpochRecord>,
    degenerate: bool,
    network: NetworkMeta,
    files: BTreeMap<String, FileDigest>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ClassifierError + '_ {
    move |source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> ClassifierError {
    ClassifierError::CorruptCheckpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn encode_tiny(net: &TinyNet) -> Vec<u8> {
    let params = net.parameters();
    let mut out = Vec::with_capacity(params.len() * 8);
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn decode_tiny(path: &Path, bytes: &[u8], max_len: usize, buckets: usize, dim: usize) -> Result<TinyNet> {
    if !bytes.len().is_multiple_of(8) {
        return Err(corrupt(path, "weights length is not a multiple of 8"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let n_embed = buckets * dim;
    if values.len() != n_embed + 2 * dim + 2 {
        return Err(corrupt(path, "weights length does not match dimensions"));
    }
    let embed = values[..n_embed].to_vec();
    let head_w = values[n_embed..n_embed + 2 * dim].to_vec();
    let head_b = [values[n_embed + 2 * dim], values[n_embed + 2 * dim + 1]];
    TinyNet::from_parts(max_len, buckets, dim, embed, head_w, head_b)
        .ok_or_else(|| corrupt(path, "inconsistent dimensions"))
}

/// Writes `model` into `dir` (created if missing). Returns the checkpoint
/// directory.
pub fn save_model(model: &TrainedModel, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let (network, written): (NetworkMeta, Vec<String>) = match &model.network {
        Network::Tiny(net) => {
            let path = dir.join(TINY_WEIGHTS);
            fs::write(&path, encode_tiny(net)).map_err(io_err(&path))?;
            (
                NetworkMeta::Tiny {
                    max_len: net.max_len(),
                    buckets: net.buckets(),
                    dim: net.dim(),
                },
                vec![TINY_WEIGHTS.to_string()],
            )
        }
        #[cfg(feature = "transformer")]
        Network::Transformer(net) => (NetworkMeta::Transformer, net.save(dir)?),
    };

    let mut files = BTreeMap::new();
    for name in written {
        let path = dir.join(&name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        files.insert(
            name,
            FileDigest {
                len: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            },
        );
    }

    let mut backbone = model.backbone.clone();
    backbone.weights = None;
    let mut config = model.config.clone();
    config.backbone.weights = None;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_FORMAT_VERSION,
        backbone,
        config,
        train_fingerprint: model.train_fingerprint.clone(),
        training_log: model.training_log.clone(),
        degenerate: model.degenerate,
        network,
        files,
    };
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta).expect("checkpoint meta serializes");
    fs::write(&meta_path, json).map_err(io_err(&meta_path))?;
    Ok(dir.to_path_buf())
}

/// Loads a checkpoint written by [`save_model`], verifying every blob
/// against its recorded digest.
pub fn load_model(dir: impl AsRef<Path>) -> Result<TrainedModel> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;

    // Check the version before the full schema so newer layouts report a
    // version mismatch rather than a parse failure.
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| corrupt(&meta_path, e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt(&meta_path, "missing format_version"))?;
    if version > u64::from(CHECKPOINT_FORMAT_VERSION) {
        return Err(ClassifierError::VersionMismatch {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            supported: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let meta: CheckpointMeta =
        serde_json::from_value(value).map_err(|e| corrupt(&meta_path, e.to_string()))?;

    let mut blobs = BTreeMap::new();
    for (name, digest) in &meta.files {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| corrupt(&path, e.to_string()))?;
        if bytes.len() as u64 != digest.len || sha256_hex(&bytes) != digest.sha256 {
            return Err(corrupt(&path, "content does not match recorded digest"));
        }
        blobs.insert(name.clone(), bytes);
    }

    let network = match meta.network {
        NetworkMeta::Tiny {
            max_len,
            buckets,
            dim,
        } => {
            let path = dir.join(TINY_WEIGHTS);
            let bytes = blobs
                .get(TINY_WEIGHTS)
                .ok_or_else(|| corrupt(&path, "weights blob not listed"))?;
            Network::Tiny(decode_tiny(&path, bytes, max_len, buckets, dim)?)
        }
        #[cfg(feature = "transformer")]
        NetworkMeta::Transformer => Network::Transformer(Box::new(
            super::transformer::TransformerNet::load(&meta.backbone, dir)?,
        )),
        #[cfg(not(feature = "transformer"))]
        NetworkMeta::Transformer => {
            return Err(ClassifierError::WeightsUnavailable {
                name: meta.backbone.name.clone(),
                reason: "checkpoint needs the `transformer` feature".into(),
            });
        }
    };

    Ok(TrainedModel {
        backbone: meta.backbone,
        config: meta.config,
        train_fingerprint: meta.train_fingerprint,
        training_log: meta.training_log,
        degenerate: meta.degenerate,
        checkpoint_ref: Some(dir.to_path_buf()),
        network,
    })
}
