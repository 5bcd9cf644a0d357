//! Pretrained encoder backbones (XLM-R and BERT families) via candle.
//!
//! A weights directory holds `config.json`, `tokenizer.json` and
//! `model.safetensors` in the usual hub layout. The encoder is fine-tuned
//! end to end with AdamW; the first token's hidden state feeds a fresh
//! two-way linear head whose initialization is seeded.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, Var};
use candle_nn::{AdamW, Linear, Optimizer, ParamsAdamW, VarBuilder, VarMap};
use candle_transformers::models::{bert, xlm_roberta};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokenizers::{PaddingParams, PaddingStrategy, Tokenizer, TruncationParams};

use super::{BackboneSpec, ClassifierError, EncoderArch, EpochRecord, Result, TrainConfig};
use crate::hashing::derive_seed;

const CONFIG: &str = "config.json";
const TOKENIZER: &str = "tokenizer.json";
const WEIGHTS: &str = "model.safetensors";
const HEAD: &str = "hof_head";

fn backend(e: impl std::fmt::Display) -> ClassifierError {
    ClassifierError::Backend(e.to_string())
}

enum Encoder {
    XlmRoberta(xlm_roberta::XLMRobertaModel),
    Bert(bert::BertModel),
}

impl Encoder {
    fn hidden_size(arch: EncoderArch, config_json: &str) -> Result<usize> {
        Ok(match arch {
            EncoderArch::XlmRoberta => serde_json::from_str::<xlm_roberta::Config>(config_json)
                .map_err(backend)?
                .hidden_size,
            EncoderArch::Bert => serde_json::from_str::<bert::Config>(config_json)
                .map_err(backend)?
                .hidden_size,
        })
    }

    fn build(arch: EncoderArch, config_json: &str, vb: VarBuilder) -> Result<Self> {
        Ok(match arch {
            EncoderArch::XlmRoberta => {
                let cfg: xlm_roberta::Config = serde_json::from_str(config_json).map_err(backend)?;
                Encoder::XlmRoberta(xlm_roberta::XLMRobertaModel::new(&cfg, vb).map_err(backend)?)
            }
            EncoderArch::Bert => {
                let cfg: bert::Config = serde_json::from_str(config_json).map_err(backend)?;
                Encoder::Bert(bert::BertModel::load(vb, &cfg).map_err(backend)?)
            }
        })
    }

    fn forward(&self, ids: &Tensor, mask: &Tensor, types: &Tensor) -> candle_core::Result<Tensor> {
        match self {
            Encoder::XlmRoberta(m) => m.forward(ids, mask, types, None, None, None),
            Encoder::Bert(m) => m.forward(ids, types, Some(mask)),
        }
    }
}

pub(crate) struct TransformerNet {
    arch: EncoderArch,
    max_len: usize,
    config_json: String,
    tokenizer_json: String,
    tokenizer: Tokenizer,
    varmap: VarMap,
    encoder: Encoder,
    head: Linear,
    device: Device,
}

impl TransformerNet {
    fn assemble(spec: &BackboneSpec, dir: &Path) -> Result<Self> {
        let arch = spec.architecture.ok_or_else(|| ClassifierError::WeightsUnavailable {
            name: spec.name.clone(),
            reason: "registry entry has no architecture".into(),
        })?;
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| ClassifierError::WeightsUnavailable {
                name: spec.name.clone(),
                reason: format!("{}: {e}", path.display()),
            })
        };
        let config_json = read(CONFIG)?;
        let tokenizer_json = read(TOKENIZER)?;
        let mut tokenizer = Tokenizer::from_bytes(tokenizer_json.as_bytes()).map_err(backend)?;
        let pad_id = pad_token_id(&config_json);
        let pad_token = tokenizer.id_to_token(pad_id).unwrap_or_else(|| "<pad>".into());
        tokenizer
            .with_truncation(Some(TruncationParams {
                max_length: spec.max_sequence_length,
                ..TruncationParams::default()
            }))
            .map_err(backend)?;
        tokenizer.with_padding(Some(PaddingParams {
            strategy: PaddingStrategy::BatchLongest,
            pad_id,
            pad_token,
            ..PaddingParams::default()
        }));

        let device = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
        let hidden = Encoder::hidden_size(arch, &config_json)?;
        let encoder = Encoder::build(arch, &config_json, vb.clone())?;
        let head = candle_nn::linear(hidden, 2, vb.pp(HEAD)).map_err(backend)?;
        Ok(Self {
            arch,
            max_len: spec.max_sequence_length,
            config_json,
            tokenizer_json,
            tokenizer,
            varmap,
            encoder,
            head,
            device,
        })
    }

    fn vars(&self) -> HashMap<String, Var> {
        self.varmap.data().lock().expect("varmap lock").clone()
    }

    /// Loads hub weights into the encoder and gives the head a seeded
    /// initialization.
    pub(crate) fn from_pretrained(spec: &BackboneSpec, dir: &Path, seed: u64) -> Result<Self> {
        let net = Self::assemble(spec, dir)?;
        let file = candle_core::safetensors::load(dir.join(WEIGHTS), &net.device).map_err(|e| {
            ClassifierError::WeightsUnavailable {
                name: spec.name.clone(),
                reason: e.to_string(),
            }
        })?;
        let prefix = ["", "roberta.", "bert.", "model."]
            .into_iter()
            .find(|p| file.keys().any(|k| k.starts_with(&format!("{p}embeddings."))))
            .unwrap_or("");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "transformer-head"));
        for (name, var) in net.vars() {
            if let Some(rest) = name.strip_prefix(&format!("{HEAD}.")) {
                let dims = var.dims().to_vec();
                let n: usize = dims.iter().product();
                let values: Vec<f32> = if rest == "weight" {
                    (0..n).map(|_| rng.gen_range(-0.02f32..0.02)).collect()
                } else {
                    vec![0.0; n]
                };
                let t = Tensor::from_vec(values, dims, &net.device).map_err(backend)?;
                var.set(&t).map_err(backend)?;
                continue;
            }
            let key = format!("{prefix}{name}");
            let t = file.get(&key).ok_or_else(|| ClassifierError::WeightsUnavailable {
                name: spec.name.clone(),
                reason: format!("tensor `{key}` missing from {WEIGHTS}"),
            })?;
            var.set(&t.to_dtype(DType::F32).map_err(backend)?).map_err(backend)?;
        }
        Ok(net)
    }

    fn encode(&self, texts: &[&str]) -> Result<(Tensor, Tensor, Tensor)> {
        let encodings = self
            .tokenizer
            .encode_batch(texts.to_vec(), true)
            .map_err(backend)?;
        let rows = encodings.len();
        let cols = encodings.first().map_or(0, |e| e.get_ids().len()).min(self.max_len.max(1));
        let mut ids = Vec::with_capacity(rows * cols);
        let mut mask = Vec::with_capacity(rows * cols);
        let mut types = Vec::with_capacity(rows * cols);
        for e in &encodings {
            ids.extend_from_slice(&e.get_ids()[..cols]);
            mask.extend_from_slice(&e.get_attention_mask()[..cols]);
            types.extend_from_slice(&e.get_type_ids()[..cols]);
        }
        let t = |v: Vec<u32>| Tensor::from_vec(v, (rows, cols), &self.device).map_err(backend);
        Ok((t(ids)?, t(mask)?, t(types)?))
    }

    fn logits(&self, texts: &[&str]) -> Result<Tensor> {
        let (ids, mask, types) = self.encode(texts)?;
        let hidden = self.encoder.forward(&ids, &mask, &types).map_err(backend)?;
        let first = hidden.narrow(1, 0, 1).and_then(|h| h.squeeze(1)).map_err(backend)?;
        self.head.forward(&first).map_err(backend)
    }

    pub(crate) fn scores(&self, texts: &[&str]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(32) {
            let probs = candle_nn::ops::softmax_last_dim(&self.logits(chunk)?).map_err(backend)?;
            let hof: Vec<f32> = probs
                .narrow(1, 1, 1)
                .and_then(|p| p.squeeze(1))
                .and_then(|p| p.to_vec1())
                .map_err(backend)?;
            out.extend(hof.into_iter().map(|p| f64::from(p).clamp(0.0, 1.0)));
        }
        Ok(out)
    }

    pub(crate) fn train(
        &mut self,
        texts: &[&str],
        targets: &[bool],
        config: &TrainConfig,
    ) -> Result<Vec<EpochRecord>> {
        let mut opt = AdamW::new(
            self.varmap.all_vars(),
            ParamsAdamW {
                lr: config.learning_rate,
                ..ParamsAdamW::default()
            },
        )
        .map_err(backend)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "transformer-shuffle"));
        let mut order: Vec<usize> = (0..texts.len()).collect();
        let mut log = Vec::with_capacity(config.epochs);
        for epoch in 1..=config.epochs {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            for batch in order.chunks(config.batch_size) {
                let bt: Vec<&str> = batch.iter().map(|&i| texts[i]).collect();
                let labels: Vec<u32> = batch.iter().map(|&i| u32::from(targets[i])).collect();
                let target = Tensor::new(labels.as_slice(), &self.device).map_err(backend)?;
                let logits = self.logits(&bt)?;
                let loss = candle_nn::loss::cross_entropy(&logits, &target).map_err(backend)?;
                let value = f64::from(loss.to_scalar::<f32>().map_err(backend)?);
                if !value.is_finite() {
                    return Err(ClassifierError::NonFiniteLoss { epoch });
                }
                loss_sum += value * batch.len() as f64;
                let predicted: Vec<u32> = logits
                    .argmax(1)
                    .and_then(|t| t.to_vec1())
                    .map_err(backend)?;
                correct += predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
                opt.backward_step(&loss).map_err(backend)?;
            }
            let n = texts.len() as f64;
            log.push(EpochRecord {
                epoch,
                mean_loss: loss_sum / n,
                train_accuracy: correct as f64 / n,
            });
        }
        Ok(log)
    }

    /// Writes weights, config and tokenizer into `dir`; returns the file
    /// names written.
    pub(crate) fn save(&self, dir: &Path) -> Result<Vec<String>> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| ClassifierError::Io { path, source }
        };
        self.varmap.save(dir.join(WEIGHTS)).map_err(backend)?;
        fs::write(dir.join(CONFIG), &self.config_json).map_err(io(&dir.join(CONFIG)))?;
        fs::write(dir.join(TOKENIZER), &self.tokenizer_json).map_err(io(&dir.join(TOKENIZER)))?;
        Ok(vec![WEIGHTS.into(), CONFIG.into(), TOKENIZER.into()])
    }

    /// Restores a network written by [`TransformerNet::save`].
    pub(crate) fn load(spec: &BackboneSpec, dir: &Path) -> Result<Self> {
        let mut net = Self::assemble(spec, dir)?;
        net.varmap.load(dir.join(WEIGHTS)).map_err(|e| ClassifierError::CorruptCheckpoint {
            path: dir.display().to_string(),
            reason: e.to_string(),
        })?;
        debug_assert!(matches!(net.arch, EncoderArch::Bert | EncoderArch::XlmRoberta));
        Ok(net)
    }
}

fn pad_token_id(config_json: &str) -> u32 {
    serde_json::from_str::<serde_json::Value>(config_json)
        .ok()
        .and_then(|v| v.get("pad_token_id").and_then(serde_json::Value::as_u64))
        .and_then(|id| u32::try_from(id).ok())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use tokenizers::models::wordlevel::WordLevel;
    use tokenizers::pre_tokenizers::whitespace::Whitespace;

    use super::*;
    use crate::classifier::{BackboneKind, load_model, save_model, train_model};
    use crate::synthetic::SyntheticGenerator;

    /// Writes a tiny randomly initialised encoder in hub layout.
    fn tiny_weights(dir: &Path, arch: EncoderArch) {
        let mut vocab: HashMap<String, u32> = HashMap::new();
        for (i, w) in ["<pad>", "<unk>"].iter().enumerate() {
            vocab.insert((*w).into(), i as u32);
        }
        for class in ["hof", "not", "neutral"] {
            for k in 0..40 {
                let id = vocab.len() as u32;
                vocab.insert(format!("{class}{k}"), id);
            }
        }
        let model = WordLevel::builder()
            .vocab(vocab.clone().into_iter().collect())
            .unk_token("<unk>".into())
            .build()
            .unwrap();
        let mut tok = Tokenizer::new(model);
        tok.with_pre_tokenizer(Some(Whitespace {}));
        tok.save(dir.join(TOKENIZER), false).unwrap();

        let common = serde_json::json!({
            "vocab_size": vocab.len(),
            "hidden_size": 16,
            "num_hidden_layers": 1,
            "num_attention_heads": 2,
            "intermediate_size": 32,
            "hidden_act": "gelu",
            "hidden_dropout_prob": 0.0,
            "attention_probs_dropout_prob": 0.0,
            "max_position_embeddings": 64,
            "type_vocab_size": 2,
            "initializer_range": 0.02,
            "layer_norm_eps": 1e-12,
            "pad_token_id": 0,
            "position_embedding_type": "absolute",
        });
        fs::write(dir.join(CONFIG), common.to_string()).unwrap();

        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
        Encoder::build(arch, &common.to_string(), vb).unwrap();
        varmap.save(dir.join(WEIGHTS)).unwrap();
    }

    fn spec(arch: EncoderArch, dir: &Path) -> BackboneSpec {
        BackboneSpec {
            name: "tiny-encoder".into(),
            kind: BackboneKind::Multilingual,
            max_sequence_length: 16,
            architecture: Some(arch),
            weights: Some(dir.to_path_buf()),
        }
    }

    #[test]
    fn fine_tune_save_load_round_trip() {
        for arch in [EncoderArch::Bert, EncoderArch::XlmRoberta] {
            let weights = tempfile::tempdir().unwrap();
            tiny_weights(weights.path(), arch);
            let mut config = TrainConfig::for_backbone(spec(arch, weights.path()), 4);
            config.epochs = 3;
            config.learning_rate = 1e-3;
            let corpus = SyntheticGenerator::new(1).labeled(48, 0.5, "t");
            let model = train_model(&corpus, &config).unwrap();
            assert_eq!(model.training_log().len(), 3);

            let probe = ["hof1 hof2 neutral3", "not4 not5", "unknown words"];
            let scores = model.predict_scores(&probe).unwrap();
            assert!(scores.as_slice().iter().all(|s| (0.0..=1.0).contains(s)));

            let ckpt = tempfile::tempdir().unwrap();
            save_model(&model, ckpt.path()).unwrap();
            let loaded = load_model(ckpt.path()).unwrap();
            let again = loaded.predict_scores(&probe).unwrap();
            for (a, b) in scores.as_slice().iter().zip(again.as_slice()) {
                assert!((a - b).abs() <= 1e-6, "{arch:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn missing_tensor_is_unavailable() {
        let weights = tempfile::tempdir().unwrap();
        tiny_weights(weights.path(), EncoderArch::Bert);
        // A BERT file cannot fill an XLM-R graph's differently named layers
        // if they are absent; simulate by emptying the weights.
        candle_core::safetensors::save(&HashMap::<String, Tensor>::new(), weights.path().join(WEIGHTS)).unwrap();
        let s = spec(EncoderArch::Bert, weights.path());
        assert!(matches!(
            TransformerNet::from_pretrained(&s, weights.path(), 0),
            Err(ClassifierError::WeightsUnavailable { .. })
        ));
    }
}
