//! Fixtures shared by the benchmarks.

use hofdetect::corpus::{Label, Language, TextSample, UnlabeledPool};
use hofdetect::synthetic::SyntheticGenerator;

/// Deterministic (predictions, gold) pair of length `n`.
pub fn label_pairs(n: usize) -> (Vec<Label>, Vec<Label>) {
    let pick = |i: usize, m: usize| if (i * 2654435761) % m < m / 2 { Label::Hof } else { Label::Not };
    ((0..n).map(|i| pick(i, 7)).collect(), (0..n).map(|i| pick(i, 5)).collect())
}

/// Pool of `n` placeholder texts with evenly spread scores.
pub fn scored_pool(n: usize) -> (UnlabeledPool, Vec<f64>) {
    let samples = (0..n)
        .map(|i| TextSample::original(format!("u{i}"), format!("text {i}"), None, Language::Bengali, "pool"))
        .collect();
    let scores = (0..n).map(|i| i as f64 / n.max(1) as f64).collect();
    (UnlabeledPool::new(samples, "pool").expect("valid pool"), scores)
}

pub fn corpus(n: usize) -> hofdetect::LabeledCorpus {
    SyntheticGenerator::new(1).labeled(n, 0.5, "b")
}
