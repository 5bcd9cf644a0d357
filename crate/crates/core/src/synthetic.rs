//! Seeded generator of linearly separable corpora for offline testing.
//!
//! HOF and NOT samples draw their content words from disjoint vocabularies
//! and share a small pool of neutral filler words. Pools keep their gold
//! labels on the side so pseudo-labels can be scored.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Label, LabeledCorpus, Language, TextSample, UnlabeledPool};

pub struct SyntheticGenerator {
    rng: ChaCha8Rng,
    seen: HashSet<String>,
    pub vocab_size: usize,
    pub neutral_size: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub language: Language,
}

impl SyntheticGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seen: HashSet::new(),
            vocab_size: 40,
            neutral_size: 20,
            min_tokens: 5,
            max_tokens: 10,
            language: Language::Bengali,
        }
    }

    /// A fresh text for `label`, never repeated by this generator.
    pub fn text(&mut self, label: Label) -> String {
        let class = match label {
            Label::Hof => "hof",
            Label::Not => "not",
        };
        loop {
            let n = self.rng.gen_range(self.min_tokens..=self.max_tokens);
            let words: Vec<String> = (0..n)
                .map(|_| {
                    if self.rng.gen_bool(0.3) {
                        format!("neutral{}", self.rng.gen_range(0..self.neutral_size))
                    } else {
                        format!("{class}{}", self.rng.gen_range(0..self.vocab_size))
                    }
                })
                .collect();
            let text = words.join(" ");
            // A sample made only of neutral words carries no signal.
            if words.iter().all(|w| w.starts_with("neutral")) {
                continue;
            }
            if self.seen.insert(text.clone()) {
                return text;
            }
        }
    }

    fn label(&mut self, hof_fraction: f64) -> Label {
        if self.rng.gen_bool(hof_fraction) {
            Label::Hof
        } else {
            Label::Not
        }
    }

    /// `n` labeled samples with ids `{prefix}-{i}`.
    pub fn labeled(&mut self, n: usize, hof_fraction: f64, prefix: &str) -> LabeledCorpus {
        let samples = (0..n)
            .map(|i| {
                let label = self.label(hof_fraction);
                TextSample::original(
                    format!("{prefix}-{i:05}"),
                    self.text(label),
                    Some(label),
                    self.language,
                    "synthetic",
                )
            })
            .collect();
        LabeledCorpus::new(samples).expect("generator yields valid samples")
    }

    /// `n` unlabeled samples plus their hidden gold labels.
    pub fn pool(
        &mut self,
        n: usize,
        hof_fraction: f64,
        prefix: &str,
    ) -> (UnlabeledPool, BTreeMap<String, Label>) {
        let mut gold = BTreeMap::new();
        let samples = (0..n)
            .map(|i| {
                let label = self.label(hof_fraction);
                let id = format!("{prefix}-{i:05}");
                gold.insert(id.clone(), label);
                TextSample::original(id, self.text(label), None, self.language, "synthetic-pool")
            })
            .collect();
        (
            UnlabeledPool::new(samples, "synthetic-pool").expect("generator yields valid samples"),
            gold,
        )
    }
}
