//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hofdetect::Label;
use hofdetect::corpus::{write_jsonl, write_pool_jsonl};
use hofdetect::synthetic::SyntheticGenerator;

/// Textbook macro F1 written independently of the library: per class,
/// F1 = 2·TP / (predicted + actual), or 0 when that denominator is 0.
pub fn oracle_macro_f1(pred: &[Label], gold: &[Label]) -> f64 {
    assert_eq!(pred.len(), gold.len());
    let mut sum = 0.0;
    for class in [Label::Hof, Label::Not] {
        let mut tp = 0u64;
        let mut predicted = 0u64;
        let mut actual = 0u64;
        for (p, g) in pred.iter().zip(gold) {
            if *p == class {
                predicted += 1;
            }
            if *g == class {
                actual += 1;
            }
            if *p == class && *g == class {
                tp += 1;
            }
        }
        if predicted + actual > 0 {
            sum += 2.0 * tp as f64 / (predicted + actual) as f64;
        }
    }
    sum / 2.0
}

pub fn labels(s: &str) -> Vec<Label> {
    s.chars()
        .map(|c| match c {
            'H' => Label::Hof,
            'N' => Label::Not,
            other => panic!("bad label char {other}"),
        })
        .collect()
}

/// Writes a synthetic dataset and disjoint pool into `dir` plus a manifest
/// with three tiny-test configs, mock augmentation and self-training.
pub fn write_offline_experiment(dir: &Path, n: usize, pool_n: usize) -> PathBuf {
    let mut generator = SyntheticGenerator::new(11);
    let data = generator.labeled(n, 0.5, "d");
    let (pool, _) = generator.pool(pool_n, 0.5, "u");
    write_jsonl(dir.join("data.jsonl"), &data).unwrap();
    write_pool_jsonl(dir.join("pool.jsonl"), &pool).unwrap();
    let manifest = r#"schema_version = 1
language = "bengali"
dataset = "data.jsonl"
seed = 42
output_dir = "runs"

[[backbones]]
name = "tiny-test"
label = "tiny-a"

[[backbones]]
name = "tiny-test"
label = "tiny-b"
epochs = 5

[[backbones]]
name = "tiny-test"
label = "tiny-c"
learning_rate = 0.05

[augmentation]
multiplier = 3
client = "mock"

[selftrain]
pool = "pool.jsonl"
rounds = 1
sweep = [{ upper = 0.9, lower = 0.2 }, { upper = 0.95, lower = 0.1 }]
"#;
    let path = dir.join("experiment.toml");
    std::fs::write(&path, manifest).unwrap();
    path
}

/// Relative path → bytes for every file under `root`, sorted.
pub fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
