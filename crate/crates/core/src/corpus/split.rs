use std::collections::BTreeMap;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Label, LabeledCorpus, TextSample};
use crate::hashing::FieldHasher;

fn default_train_fraction() -> f64 {
    0.9
}

fn default_stratified() -> bool {
    true
}

/// How to partition a labeled corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Preserve the label ratio within each partition.
    #[serde(default = "default_stratified")]
    pub stratified: bool,
    /// When set, a validation slice of this fraction is carved out of the
    /// non-training remainder (see [`split_three_way`]).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_fraction: Option<f64>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: default_train_fraction(),
            seed: 0,
            stratified: true,
            validation_fraction: None,
        }
    }
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self, CorpusError> {
        let spec = Self {
            train_fraction,
            seed,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let ok = |f: f64| f.is_finite() && f > 0.0 && f < 1.0;
        if !ok(self.train_fraction) {
            return Err(CorpusError::InvalidFraction(self.train_fraction));
        }
        if let Some(v) = self.validation_fraction
            && (!ok(v) || self.train_fraction + v >= 1.0) {
                return Err(CorpusError::InvalidFraction(v));
            }
        Ok(())
    }
}

/// Splits `items` (already in a seeded random order, grouped by stratum)
/// so that exactly `take` of them land in the first part.
///
/// Each stratum receives `floor(share)`; leftover slots go to the strata
/// with the largest fractional remainders.
fn allocate(strata: &[usize], take: usize) -> Vec<usize> {
    let n: usize = strata.iter().sum();
    let ideal: Vec<f64> = strata
        .iter()
        .map(|&g| g as f64 * take as f64 / n as f64)
        .collect();
    let mut quota: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut remaining = take - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for i in order.into_iter().cycle() {
        if remaining == 0 {
            break;
        }
        if quota[i] < strata[i] {
            quota[i] += 1;
            remaining -= 1;
        }
    }
    quota
}

/// Picks `take` samples out of `samples` deterministically from `(key, seed)`.
/// Returns a membership mask in input order.
fn choose(samples: &[&TextSample], take: usize, stratified: bool, rng_seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    // Work on indices sorted by id so the outcome depends on content, not on
    // input order.
    let mut by_id: Vec<usize> = (0..samples.len()).collect();
    by_id.sort_by(|&a, &b| samples[a].id.cmp(&samples[b].id));

    let mut strata: BTreeMap<Option<Label>, Vec<usize>> = BTreeMap::new();
    for i in by_id {
        let key = if stratified { samples[i].label } else { None };
        strata.entry(key).or_default().push(i);
    }
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let quotas = allocate(&sizes, take);

    let mut mask = vec![false; samples.len()];
    for (members, quota) in strata.values_mut().zip(quotas) {
        members.shuffle(&mut rng);
        for &i in &members[..quota] {
            mask[i] = true;
        }
    }
    mask
}

fn target_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

fn subset(samples: &[&TextSample], mask: &[bool], keep: bool) -> LabeledCorpus {
    LabeledCorpus::from_validated(
        samples
            .iter()
            .zip(mask)
            .filter(|&(_, &m)| m == keep)
            .map(|(s, _)| (*s).clone())
            .collect(),
    )
}

fn split_seed(corpus_fingerprint: &str, seed: u64, stage: &str) -> u64 {
    FieldHasher::new()
        .field(corpus_fingerprint)
        .u64(seed)
        .field(stage)
        .seed()
}

/// Two-way train/heldout split.
///
/// `|train| = round(train_fraction * n)`, clamped so both partitions are
/// non-empty. Assignment depends only on the corpus fingerprint and the
/// seed; samples keep their input order within each partition.
pub fn split_corpus(
    corpus: &LabeledCorpus,
    spec: &SplitSpec,
) -> Result<(LabeledCorpus, LabeledCorpus), CorpusError> {
    spec.validate()?;
    let n = corpus.len();
    if n < 2 {
        return Err(CorpusError::TooFewSamples(n));
    }
    let refs: Vec<&TextSample> = corpus.samples().iter().collect();
    let take = target_count(n, spec.train_fraction);
    let mask = choose(
        &refs,
        take,
        spec.stratified,
        split_seed(corpus.fingerprint(), spec.seed, "train"),
    );
    Ok((subset(&refs, &mask, true), subset(&refs, &mask, false)))
}

/// Train/validation/heldout split. Requires `validation_fraction` in the spec
/// and at least three samples.
pub fn split_three_way(
    corpus: &LabeledCorpus,
    spec: &SplitSpec,
) -> Result<(LabeledCorpus, LabeledCorpus, LabeledCorpus), CorpusError> {
    spec.validate()?;
    let Some(val_fraction) = spec.validation_fraction else {
        return Err(CorpusError::InvalidFraction(f64::NAN));
    };
    let n = corpus.len();
    if n < 3 {
        return Err(CorpusError::TooFewSamples(n));
    }
    let refs: Vec<&TextSample> = corpus.samples().iter().collect();
    let take = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 2);
    let mask = choose(
        &refs,
        take,
        spec.stratified,
        split_seed(corpus.fingerprint(), spec.seed, "train"),
    );
    let train = subset(&refs, &mask, true);
    let rest: Vec<&TextSample> = refs
        .iter()
        .zip(&mask)
        .filter(|&(_, &m)| !m)
        .map(|(s, _)| *s)
        .collect();
    let val_take = ((val_fraction * n as f64).round() as usize).clamp(1, rest.len() - 1);
    let val_mask = choose(
        &rest,
        val_take,
        spec.stratified,
        split_seed(corpus.fingerprint(), spec.seed, "validation"),
    );
    Ok((
        train,
        subset(&rest, &val_mask, true),
        subset(&rest, &val_mask, false),
    ))
}
