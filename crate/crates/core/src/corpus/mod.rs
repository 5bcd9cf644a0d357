//! Labeled corpora, unlabeled pools, and the operations every pipeline stage
//! shares: loading, splitting, merging and summary statistics.

mod io;
mod split;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::FieldHasher;

pub use io::{
    Format, LoadOptions, load_corpus, load_corpus_with, load_pool, load_pool_with, read_jsonl,
    write_jsonl, write_pool_jsonl,
};
pub use split::{SplitSpec, split_corpus, split_three_way};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("unknown label `{0}` (expected HOF, NOT or NONE)")]
    UnknownLabel(String),
    #[error("unknown language `{0}`")]
    UnknownLanguage(String),
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("invalid sample `{id}`: {reason}")]
    InvalidSample { id: String, reason: String },
    #[error("need at least 2 samples to split, got {0}")]
    TooFewSamples(usize),
    #[error("invalid split fraction {0}")]
    InvalidFraction(f64),
    #[error("id `{0}` present in both corpora with different text")]
    IdCollisionWithDifferentText(String),
}

/// Binary task label. HOF (hate or offensive) is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Label {
    Hof,
    Not,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Hof, Label::Not];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Hof => "HOF",
            Label::Not => "NOT",
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Hof => Label::Not,
            Label::Not => Label::Hof,
        }
    }

    pub fn is_hof(self) -> bool {
        self == Label::Hof
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        normalize_label(s)
    }
}

impl TryFrom<String> for Label {
    type Error = CorpusError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        normalize_label(&value)
    }
}

impl From<Label> for String {
    fn from(label: Label) -> Self {
        label.as_str().to_string()
    }
}

/// Maps a raw label token onto [`Label`], case-insensitively.
///
/// `NONE` is accepted as the negative class since some released data files
/// use it in place of `NOT`.
pub fn normalize_label(raw: &str) -> Result<Label, CorpusError> {
    match raw.trim().to_ascii_uppercase().as_str() {
        "HOF" => Ok(Label::Hof),
        "NOT" | "NONE" => Ok(Label::Not),
        _ => Err(CorpusError::UnknownLabel(raw.to_string())),
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    Bengali,
    Assamese,
    Bodo,
    #[default]
    Other,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::Bengali => "bengali",
            Language::Assamese => "assamese",
            Language::Bodo => "bodo",
            Language::Other => "other",
        }
    }

    /// Capitalised name used in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Language::Bengali => "Bengali",
            Language::Assamese => "Assamese",
            Language::Bodo => "Bodo",
            Language::Other => "Other",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bengali" | "bangla" | "bn" => Ok(Language::Bengali),
            "assamese" | "as" => Ok(Language::Assamese),
            "bodo" | "brx" => Ok(Language::Bodo),
            "other" | "" => Ok(Language::Other),
            _ => Err(CorpusError::UnknownLanguage(s.to_string())),
        }
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Original,
    Augmented,
    PseudoLabeled,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Augmented => "augmented",
            Provenance::PseudoLabeled => "pseudo_labeled",
        }
    }
}

/// One comment plus its label and lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextSample {
    pub id: String,
    pub text: String,
    pub label: Option<Label>,
    pub language: Language,
    pub source: String,
    pub provenance: Provenance,
    pub parent_id: Option<String>,
    pub score: Option<f64>,
}

impl TextSample {
    pub fn original(
        id: impl Into<String>,
        text: impl Into<String>,
        label: Option<Label>,
        language: Language,
        source: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
            language,
            source: source.into(),
            provenance: Provenance::Original,
            parent_id: None,
            score: None,
        }
    }

    /// Checks the per-sample invariants (non-empty text, lineage fields
    /// consistent with provenance, score range).
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |reason: &str| {
            Err(CorpusError::InvalidSample {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.is_empty() {
            return fail("empty id");
        }
        if self.text.trim().is_empty() {
            return fail("text is empty after trimming");
        }
        match (self.provenance, &self.parent_id) {
            (Provenance::Original, Some(_)) => return fail("original sample carries a parent_id"),
            (Provenance::Augmented | Provenance::PseudoLabeled, None) => {
                return fail("derived sample lacks a parent_id");
            }
            _ => {}
        }
        match (self.provenance, self.score) {
            (Provenance::PseudoLabeled, None) => return fail("pseudo-labeled sample lacks a score"),
            (Provenance::PseudoLabeled, Some(_)) if self.label.is_none() => {
                return fail("pseudo-labeled sample lacks a label");
            }
            (Provenance::Original | Provenance::Augmented, Some(_)) => {
                return fail("score is only allowed on pseudo-labeled samples");
            }
            _ => {}
        }
        if let Some(score) = self.score
            && !(0.0..=1.0).contains(&score) {
                return fail("score outside [0, 1]");
            }
        Ok(())
    }

    fn content_hash(&self) -> [u8; 32] {
        let mut h = FieldHasher::new();
        h.field(&self.id)
            .field(&self.text)
            .field(self.label.map(Label::as_str).unwrap_or(""))
            .field(self.language.as_str())
            .field(&self.source)
            .field(self.provenance.as_str())
            .field(self.parent_id.as_deref().unwrap_or(""))
            .field(self.score.map(f64::to_bits).unwrap_or(u64::MAX).to_le_bytes());
        h.finish()
    }
}

/// Order-insensitive hash over sample contents.
fn fingerprint_of(samples: &[TextSample]) -> String {
    let mut hashes: Vec<[u8; 32]> = samples.iter().map(TextSample::content_hash).collect();
    hashes.sort_unstable();
    let mut h = FieldHasher::new();
    h.u64(hashes.len() as u64);
    for digest in &hashes {
        h.field(digest);
    }
    h.hex()
}

fn check_unique_ids(samples: &[TextSample]) -> Result<(), CorpusError> {
    let mut seen = HashSet::with_capacity(samples.len());
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            return Err(CorpusError::DuplicateId(s.id.clone()));
        }
    }
    Ok(())
}

fn dominant_language(samples: &[TextSample]) -> Language {
    let mut counts: BTreeMap<Language, usize> = BTreeMap::new();
    for s in samples {
        *counts.entry(s.language).or_default() += 1;
    }
    // max_by_key keeps the last maximum; iterate in reverse so ties go to the
    // earliest variant.
    counts
        .into_iter()
        .rev()
        .max_by_key(|&(_, n)| n)
        .map(|(lang, _)| lang)
        .unwrap_or_default()
}

/// Validated collection of labeled samples with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    samples: Vec<TextSample>,
    language: Language,
    fingerprint: String,
}

impl LabeledCorpus {
    pub fn new(samples: Vec<TextSample>) -> Result<Self, CorpusError> {
        for s in &samples {
            s.validate()?;
            if s.label.is_none() {
                return Err(CorpusError::InvalidSample {
                    id: s.id.clone(),
                    reason: "labeled corpus sample has no label".into(),
                });
            }
        }
        check_unique_ids(&samples)?;
        Ok(Self::from_validated(samples))
    }

    pub fn empty() -> Self {
        Self::from_validated(Vec::new())
    }

    fn from_validated(samples: Vec<TextSample>) -> Self {
        let language = dominant_language(&samples);
        let fingerprint = fingerprint_of(&samples);
        Self {
            samples,
            language,
            fingerprint,
        }
    }

    pub fn samples(&self) -> &[TextSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<TextSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Most frequent language tag; ties resolve to the earlier variant.
    pub fn language(&self) -> Language {
        self.language
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn get(&self, id: &str) -> Option<&TextSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn texts(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.text.as_str()).collect()
    }

    /// Gold labels in corpus order.
    pub fn labels(&self) -> Vec<Label> {
        self.samples
            .iter()
            .map(|s| s.label.expect("labeled corpus invariant"))
            .collect()
    }

    pub fn label_count(&self, label: Label) -> usize {
        self.samples
            .iter()
            .filter(|s| s.label == Some(label))
            .count()
    }

    /// Ids of augmented samples whose label differs from their parent's,
    /// for parents present in this corpus.
    pub fn augmented_label_violations(&self) -> Vec<String> {
        let by_id: HashMap<&str, &TextSample> =
            self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        self.samples
            .iter()
            .filter(|s| s.provenance == Provenance::Augmented)
            .filter_map(|s| {
                let parent = by_id.get(s.parent_id.as_deref()?)?;
                (parent.label != s.label).then(|| s.id.clone())
            })
            .collect()
    }
}

/// Validated collection of unlabeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPool {
    samples: Vec<TextSample>,
    source: String,
}

impl UnlabeledPool {
    pub fn new(samples: Vec<TextSample>, source: impl Into<String>) -> Result<Self, CorpusError> {
        for s in &samples {
            s.validate()?;
            if s.label.is_some() {
                return Err(CorpusError::InvalidSample {
                    id: s.id.clone(),
                    reason: "pool sample carries a label".into(),
                });
            }
        }
        check_unique_ids(&samples)?;
        Ok(Self {
            samples,
            source: source.into(),
        })
    }

    pub fn samples(&self) -> &[TextSample] {
        &self.samples
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.text.as_str()).collect()
    }

    /// Pool without the samples whose ids are in `ids`.
    pub fn without(&self, ids: &HashSet<&str>) -> UnlabeledPool {
        UnlabeledPool {
            samples: self
                .samples
                .iter()
                .filter(|s| !ids.contains(s.id.as_str()))
                .cloned()
                .collect(),
            source: self.source.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Dedup {
    ById,
    ByText,
    #[default]
    None,
}

/// Appends `addition` to `base`. Base samples always survive; addition
/// samples are filtered by `dedup`.
pub fn merge_corpora(
    base: &LabeledCorpus,
    addition: &LabeledCorpus,
    dedup: Dedup,
) -> Result<LabeledCorpus, CorpusError> {
    let mut samples = base.samples.clone();
    let mut ids: HashMap<String, usize> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.clone(), i))
        .collect();
    let mut texts: HashSet<String> = match dedup {
        Dedup::ByText => samples.iter().map(|s| s.text.clone()).collect(),
        _ => HashSet::new(),
    };

    for s in &addition.samples {
        match dedup {
            Dedup::ById => {
                if let Some(&i) = ids.get(&s.id) {
                    if samples[i].text != s.text {
                        return Err(CorpusError::IdCollisionWithDifferentText(s.id.clone()));
                    }
                    continue;
                }
            }
            Dedup::ByText => {
                if texts.contains(&s.text) {
                    continue;
                }
                if ids.contains_key(&s.id) {
                    return Err(CorpusError::DuplicateId(s.id.clone()));
                }
                texts.insert(s.text.clone());
            }
            Dedup::None => {
                if ids.contains_key(&s.id) {
                    return Err(CorpusError::DuplicateId(s.id.clone()));
                }
            }
        }
        ids.insert(s.id.clone(), samples.len());
        samples.push(s.clone());
    }
    Ok(LabeledCorpus::from_validated(samples))
}

/// Summary counts for a corpus or pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub total: usize,
    pub by_label: BTreeMap<String, usize>,
    pub by_language: BTreeMap<String, usize>,
    pub by_provenance: BTreeMap<String, usize>,
    /// Label shares in percent, derived from `by_label`.
    pub label_share: BTreeMap<String, f64>,
    /// Mean length in Unicode scalar values.
    pub mean_text_chars: f64,
}

impl StatsRecord {
    pub fn label(&self, label: Label) -> usize {
        self.by_label.get(label.as_str()).copied().unwrap_or(0)
    }

    pub fn provenance(&self, provenance: Provenance) -> usize {
        self.by_provenance
            .get(provenance.as_str())
            .copied()
            .unwrap_or(0)
    }
}

pub fn stats_for(samples: &[TextSample]) -> StatsRecord {
    let mut by_label = BTreeMap::new();
    let mut by_language = BTreeMap::new();
    let mut by_provenance = BTreeMap::new();
    let mut chars = 0usize;
    for s in samples {
        if let Some(label) = s.label {
            *by_label.entry(label.as_str().to_string()).or_insert(0) += 1;
        }
        *by_language.entry(s.language.as_str().to_string()).or_insert(0) += 1;
        *by_provenance
            .entry(s.provenance.as_str().to_string())
            .or_insert(0) += 1;
        chars += s.text.chars().count();
    }
    let total = samples.len();
    let label_share = by_label
        .iter()
        .map(|(k, &n)| (k.clone(), 100.0 * n as f64 / total as f64))
        .collect();
    StatsRecord {
        total,
        by_label,
        by_language,
        by_provenance,
        label_share,
        mean_text_chars: if total == 0 {
            0.0
        } else {
            chars as f64 / total as f64
        },
    }
}

pub fn corpus_stats(corpus: &LabeledCorpus) -> StatsRecord {
    stats_for(corpus.samples())
}

pub fn pool_stats(pool: &UnlabeledPool) -> StatsRecord {
    stats_for(pool.samples())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, text: &str, label: Label) -> TextSample {
        TextSample::original(id, text, Some(label), Language::Bengali, "t")
    }

    #[test]
    fn label_normalization() {
        assert_eq!(normalize_label("HOF").unwrap(), Label::Hof);
        assert_eq!(normalize_label("not").unwrap(), Label::Not);
        assert_eq!(normalize_label("none").unwrap(), Label::Not);
        assert_eq!(normalize_label(" NONE ").unwrap(), Label::Not);
        assert!(matches!(
            normalize_label("maybe"),
            Err(CorpusError::UnknownLabel(s)) if s == "maybe"
        ));
    }

    #[test]
    fn sample_invariants() {
        let mut s = sample("a", "  ", Label::Hof);
        assert!(s.validate().is_err());
        s.text = "ok".into();
        s.validate().unwrap();
        s.parent_id = Some("p".into());
        assert!(s.validate().is_err());
        s.provenance = Provenance::Augmented;
        s.validate().unwrap();
        s.score = Some(0.5);
        assert!(s.validate().is_err());
        s.provenance = Provenance::PseudoLabeled;
        s.validate().unwrap();
        s.score = Some(1.5);
        assert!(s.validate().is_err());
    }

    #[test]
    fn fingerprint_is_order_insensitive() {
        let a = sample("a", "x", Label::Hof);
        let b = sample("b", "y", Label::Not);
        let c1 = LabeledCorpus::new(vec![a.clone(), b.clone()]).unwrap();
        let c2 = LabeledCorpus::new(vec![b.clone(), a.clone()]).unwrap();
        assert_eq!(c1.fingerprint(), c2.fingerprint());
        let mut b2 = b;
        b2.text = "z".into();
        let c3 = LabeledCorpus::new(vec![a, b2]).unwrap();
        assert_ne!(c1.fingerprint(), c3.fingerprint());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = LabeledCorpus::new(vec![sample("a", "x", Label::Hof), sample("a", "y", Label::Not)])
            .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn merge_policies() {
        let base = LabeledCorpus::new(vec![sample("a", "x", Label::Hof), sample("b", "y", Label::Not)])
            .unwrap();
        let dup = LabeledCorpus::new(vec![sample("c", "x", Label::Hof)]).unwrap();
        assert_eq!(merge_corpora(&base, &dup, Dedup::ByText).unwrap(), base);
        assert_eq!(merge_corpora(&base, &dup, Dedup::None).unwrap().len(), 3);

        let same_id = LabeledCorpus::new(vec![sample("a", "x", Label::Hof)]).unwrap();
        assert_eq!(merge_corpora(&base, &same_id, Dedup::ById).unwrap(), base);
        let clash = LabeledCorpus::new(vec![sample("a", "other", Label::Hof)]).unwrap();
        assert!(matches!(
            merge_corpora(&base, &clash, Dedup::ById),
            Err(CorpusError::IdCollisionWithDifferentText(_))
        ));
        assert!(matches!(
            merge_corpora(&base, &clash, Dedup::None),
            Err(CorpusError::DuplicateId(_))
        ));
    }

    #[test]
    fn stats_counts_and_shares() {
        let c = LabeledCorpus::new(vec![
            sample("a", "x", Label::Hof),
            sample("b", "xy", Label::Hof),
            sample("c", "xyz", Label::Hof),
            sample("d", "wxyz", Label::Not),
        ])
        .unwrap();
        let st = corpus_stats(&c);
        assert_eq!(st.total, 4);
        assert_eq!(st.label(Label::Hof), 3);
        assert_eq!(st.label(Label::Not), 1);
        assert_eq!(st.label_share["HOF"], 75.0);
        assert_eq!(st.mean_text_chars, 2.5);
        assert_eq!(st.provenance(Provenance::Original), 4);
    }

    #[test]
    fn stats_all_augmented() {
        let samples: Vec<_> = (0..5)
            .map(|i| TextSample {
                provenance: Provenance::Augmented,
                parent_id: Some(format!("p{i}")),
                ..sample(&format!("s{i}"), "t", Label::Not)
            })
            .collect();
        let st = stats_for(&samples);
        assert_eq!(st.provenance(Provenance::Augmented), 5);
        assert_eq!(st.by_provenance.len(), 1);
    }

    #[test]
    fn dominant_language_picks_majority() {
        let mut s = vec![sample("a", "x", Label::Hof)];
        for i in 0..2 {
            let mut t = sample(&format!("b{i}"), "y", Label::Not);
            t.language = Language::Bodo;
            s.push(t);
        }
        assert_eq!(LabeledCorpus::new(s).unwrap().language(), Language::Bodo);
    }
}
