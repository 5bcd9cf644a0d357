//! LLM-prompted, label-preserving augmentation of a training corpus.
//!
//! Each original sample is sent through a [`PromptTemplate`] to a
//! [`CompletionClient`]; the completion is parsed into candidate texts and
//! `multiplier - 1` of them are kept as augmented samples that inherit the
//! parent's label. Every call leaves an [`AugmentationRecord`] behind.

mod audit;
mod client;
mod parse;
mod prompt;

use std::sync::Mutex;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, LabeledCorpus, Provenance, TextSample};

pub use audit::{
    ReviewRow, ReviewSheet, Verdict, compute_agreement, export_audit_sheet, read_sheet_csv,
    write_sheet_csv,
};
pub use client::{
    API_KEY_ENV, ClientError, CompletionClient, CompletionParams, MockClient, RemoteClient,
};
pub use parse::parse_llm_response;
pub use prompt::{DEFAULT_TEMPLATE, LABEL_SET, PromptTemplate, render_prompt};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("sample `{0}` has no label")]
    UnlabeledSample(String),
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("no candidate texts could be extracted from the response")]
    UnparseableResponse,
    #[error("all {attempted} augmentation calls failed")]
    AllCallsFailed { attempted: usize },
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("cannot augment an empty corpus")]
    EmptyCorpus,
    #[error("need {requested} augmented samples for the audit, only {available} available")]
    InsufficientAugmentedSamples { requested: usize, available: usize },
    #[error("parent `{0}` of an augmented sample is not in the corpus")]
    MissingParent(String),
    #[error("{blank} review verdicts are still blank")]
    IncompleteSheet { blank: usize },
    #[error("review sheet has no rows")]
    EmptySheet,
    #[error("row {row}: invalid verdict `{value}` (expected agree or disagree)")]
    InvalidVerdict { row: usize, value: String },
    #[error("review sheet csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Full lineage of one augmentation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub parent_id: String,
    pub prompt: String,
    pub raw_response: String,
    pub extracted_texts: Vec<String>,
    /// Parallel to `extracted_texts`.
    pub kept: Vec<bool>,
    /// Parallel to `extracted_texts`: candidate is identical to the parent.
    pub same_as_parent: Vec<bool>,
    pub params: CompletionParams,
    pub client: String,
    pub attempts: u32,
    pub failure: Option<String>,
}

impl AugmentationRecord {
    fn empty(parent_id: &str, params: &CompletionParams, client: &str) -> Self {
        Self {
            parent_id: parent_id.to_string(),
            prompt: String::new(),
            raw_response: String::new(),
            extracted_texts: Vec::new(),
            kept: Vec::new(),
            same_as_parent: Vec::new(),
            params: params.clone(),
            client: client.to_string(),
            attempts: 0,
            failure: None,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.failure.is_none() && self.kept.iter().any(|&k| k)
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }
}

fn default_multiplier() -> usize {
    3
}
fn default_request() -> usize {
    3
}
fn default_in_flight() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Total-size factor: each original yields itself plus
    /// `multiplier - 1` kept generations.
    #[serde(default = "default_multiplier")]
    pub multiplier: usize,
    /// How many generations the prompt asks for.
    #[serde(default = "default_request")]
    pub request_n: usize,
    #[serde(default)]
    pub params: CompletionParams,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Minimum spacing between call starts.
    #[serde(default)]
    pub min_interval_ms: u64,
    /// Retries after the first attempt for retryable client errors.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            multiplier: default_multiplier(),
            request_n: default_request(),
            params: CompletionParams::default(),
            max_in_flight: default_in_flight(),
            min_interval_ms: 0,
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.multiplier == 0 {
            return Err(AugmentError::InvalidConfig("multiplier must be >= 1".into()));
        }
        if self.multiplier > 1 && self.request_n < self.multiplier - 1 {
            return Err(AugmentError::InvalidConfig(format!(
                "request_n ({}) must be at least multiplier - 1 ({})",
                self.request_n,
                self.multiplier - 1
            )));
        }
        if self.max_in_flight == 0 {
            return Err(AugmentError::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }
}

/// Id of the `k`-th augmentation of `parent_id`.
pub fn augmented_id(parent_id: &str, k: usize) -> String {
    format!("{parent_id}#aug{k}")
}

fn call_with_retries(
    client: &dyn CompletionClient,
    prompt: &str,
    params: &CompletionParams,
    max_retries: u32,
    backoff: Duration,
) -> (Result<String, ClientError>, u32) {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match client.complete(prompt, params) {
            Err(e) if e.is_retryable() && attempts <= max_retries => {
                let delay = backoff * 2u32.saturating_pow(attempts - 1);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
            other => return (other, attempts),
        }
    }
}

/// Requests `request_n` generations and keeps the first `keep` of them.
/// Fewer than `keep` usable candidates counts as a failure.
fn augment_one(
    sample: &TextSample,
    request_n: usize,
    keep: usize,
    client: &dyn CompletionClient,
    template: &PromptTemplate,
    cfg: &AugmentConfig,
) -> Result<(Vec<TextSample>, AugmentationRecord), AugmentError> {
    let label = sample
        .label
        .ok_or_else(|| AugmentError::UnlabeledSample(sample.id.clone()))?;
    let mut record = AugmentationRecord::empty(&sample.id, &cfg.params, client.name());
    if request_n == 0 || keep == 0 {
        return Ok((Vec::new(), record));
    }
    record.prompt = render_prompt(sample, request_n, template)?;
    let (result, attempts) = call_with_retries(
        client,
        &record.prompt,
        &cfg.params,
        cfg.max_retries,
        Duration::from_millis(cfg.backoff_ms),
    );
    record.attempts = attempts;
    let raw = match result {
        Ok(raw) => raw,
        Err(e) => {
            record.failure = Some(e.tag().to_string());
            return Ok((Vec::new(), record));
        }
    };
    record.raw_response = raw;
    let texts = match parse_llm_response(&record.raw_response, request_n) {
        Ok(t) => t,
        Err(_) => {
            record.failure = Some("unparseable_response".into());
            return Ok((Vec::new(), record));
        }
    };
    if texts.len() < keep {
        record.failure = Some("too_few_candidates".into());
        return Ok((Vec::new(), record));
    }

    let mut out = Vec::with_capacity(keep);
    for (k, text) in texts.iter().enumerate() {
        let same = text.trim() == sample.text.trim();
        record.same_as_parent.push(same);
        record.kept.push(k < keep);
        if k < keep {
            out.push(TextSample {
                id: augmented_id(&sample.id, k),
                text: text.clone(),
                label: Some(label),
                language: sample.language,
                source: sample.source.clone(),
                provenance: Provenance::Augmented,
                parent_id: Some(sample.id.clone()),
                score: None,
            });
        }
    }
    record.extracted_texts = texts;
    Ok((out, record))
}

/// Generates `n` label-preserving variants of one sample.
///
/// Client and parse failures do not surface as errors: they yield an empty
/// list and a record whose `failure` is set.
pub fn augment_sample(
    sample: &TextSample,
    n: usize,
    client: &dyn CompletionClient,
    template: &PromptTemplate,
    params: &CompletionParams,
) -> Result<(Vec<TextSample>, AugmentationRecord), AugmentError> {
    let cfg = AugmentConfig {
        params: params.clone(),
        ..AugmentConfig::default()
    };
    augment_one(sample, n, n, client, template, &cfg)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub originals: usize,
    pub multiplier: usize,
    pub successes: usize,
    pub failures: usize,
    pub generated: usize,
    pub kept: usize,
    pub identical_to_parent: usize,
    /// Samples short of `multiplier × originals` because of failures.
    pub deficit: usize,
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub corpus: LabeledCorpus,
    pub records: Vec<AugmentationRecord>,
    pub summary: AugmentSummary,
}

struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn wait(&self) {
        if self.interval.is_zero() {
            return;
        }
        let start = {
            let mut next = self.next.lock().expect("rate limiter lock");
            let now = Instant::now();
            let start = next.map_or(now, |n| n.max(now));
            *next = Some(start + self.interval);
            start
        };
        let now = Instant::now();
        if start > now {
            std::thread::sleep(start - now);
        }
    }
}

/// Augments every sample of `train`.
///
/// Calls run on up to `max_in_flight` threads; results are assembled in
/// corpus order (each original followed by its kept generations), so the
/// output does not depend on completion order.
pub fn augment_corpus(
    train: &LabeledCorpus,
    cfg: &AugmentConfig,
    client: &dyn CompletionClient,
    template: &PromptTemplate,
) -> Result<AugmentOutcome, AugmentError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(AugmentError::EmptyCorpus);
    }
    let keep = cfg.multiplier - 1;
    if keep == 0 {
        return Ok(AugmentOutcome {
            corpus: train.clone(),
            records: Vec::new(),
            summary: AugmentSummary {
                originals: train.len(),
                multiplier: 1,
                ..AugmentSummary::default()
            },
        });
    }

    let samples = train.samples();
    let next = AtomicUsize::new(0);
    let limiter = RateLimiter {
        interval: Duration::from_millis(cfg.min_interval_ms),
        next: Mutex::new(None),
    };
    type Slot = Option<Result<(Vec<TextSample>, AugmentationRecord), AugmentError>>;
    let slots: Vec<Mutex<Slot>> = samples.iter().map(|_| Mutex::new(None)).collect();
    let workers = cfg.max_in_flight.min(samples.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= samples.len() {
                        break;
                    }
                    limiter.wait();
                    let result = augment_one(&samples[i], cfg.request_n, keep, client, template, cfg);
                    *slots[i].lock().expect("slot lock") = Some(result);
                }
            });
        }
    });

    let mut out = Vec::with_capacity(samples.len() * cfg.multiplier);
    let mut records = Vec::with_capacity(samples.len());
    let mut summary = AugmentSummary {
        originals: samples.len(),
        multiplier: cfg.multiplier,
        ..AugmentSummary::default()
    };
    for (sample, slot) in samples.iter().zip(slots) {
        let (generated, record) = slot
            .into_inner()
            .expect("slot lock")
            .expect("every slot is filled")?;
        out.push(sample.clone());
        if record.failure.is_some() {
            summary.failures += 1;
        } else {
            summary.successes += 1;
        }
        summary.generated += record.extracted_texts.len();
        summary.kept += generated.len();
        summary.identical_to_parent += record
            .same_as_parent
            .iter()
            .zip(&record.kept)
            .filter(|&(&s, &k)| s && k)
            .count();
        out.extend(generated);
        records.push(record);
    }
    summary.deficit = samples.len() * cfg.multiplier - out.len();
    if summary.successes == 0 {
        return Err(AugmentError::AllCallsFailed {
            attempted: samples.len(),
        });
    }
    if summary.failures > 0 {
        tracing::warn!(
            failures = summary.failures,
            deficit = summary.deficit,
            "some augmentation calls failed"
        );
    }
    Ok(AugmentOutcome {
        corpus: LabeledCorpus::new(out)?,
        records,
        summary,
    })
}

/// Ids of augmented samples whose parent is not in `originals`.
pub fn unresolved_parents(augmented: &LabeledCorpus, originals: &LabeledCorpus) -> Vec<String> {
    let ids: std::collections::HashSet<&str> =
        originals.samples().iter().map(|s| s.id.as_str()).collect();
    augmented
        .samples()
        .iter()
        .filter(|s| s.provenance == Provenance::Augmented)
        .filter(|s| !s.parent_id.as_deref().is_some_and(|p| ids.contains(p)))
        .map(|s| s.id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, Language};
    use std::sync::atomic::AtomicU32;

    fn corpus(n: usize) -> LabeledCorpus {
        LabeledCorpus::new(
            (0..n)
                .map(|i| {
                    let label = if i % 2 == 0 { Label::Hof } else { Label::Not };
                    TextSample::original(
                        format!("s{i}"),
                        format!("word{i} other{i} more{i}"),
                        Some(label),
                        Language::Assamese,
                        "t",
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn quick() -> AugmentConfig {
        AugmentConfig {
            backoff_ms: 0,
            ..AugmentConfig::default()
        }
    }

    #[test]
    fn sample_inherits_label_and_lineage() {
        let s = TextSample::original("p", "বালের শিক্ষা মন্ত্রী", Some(Label::Hof), Language::Bengali, "t");
        let (out, rec) = augment_sample(
            &s,
            3,
            &MockClient::new(1),
            &PromptTemplate::default(),
            &CompletionParams::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 3);
        for a in &out {
            assert_eq!(a.label, Some(Label::Hof));
            assert_eq!(a.parent_id.as_deref(), Some("p"));
            assert_eq!(a.provenance, Provenance::Augmented);
            a.validate().unwrap();
        }
        assert_eq!(rec.kept, vec![true; 3]);
        assert!(rec.prompt.contains("বালের শিক্ষা মন্ত্রী"));
    }

    struct Counting(AtomicU32);
    impl CompletionClient for Counting {
        fn complete(&self, _: &str, _: &CompletionParams) -> Result<String, ClientError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(ClientError::Timeout)
        }
        fn name(&self) -> &str {
            "counting"
        }
    }

    #[test]
    fn zero_requests_skip_the_client() {
        let s = corpus(1).samples()[0].clone();
        let client = Counting(AtomicU32::new(0));
        let (out, rec) = augment_sample(
            &s,
            0,
            &client,
            &PromptTemplate::default(),
            &CompletionParams::default(),
        )
        .unwrap();
        assert!(out.is_empty() && rec.prompt.is_empty() && rec.failure.is_none());
        assert_eq!(client.0.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn timeouts_are_retried_then_recorded() {
        let s = corpus(1).samples()[0].clone();
        let client = Counting(AtomicU32::new(0));
        let (out, rec) = augment_one(&s, 3, 3, &client, &PromptTemplate::default(), &quick()).unwrap();
        assert!(out.is_empty());
        assert_eq!(rec.failure.as_deref(), Some("timeout"));
        assert!(rec.extracted_texts.is_empty());
        assert_eq!(rec.attempts, 4);
        assert_eq!(client.0.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn corpus_size_accounting() {
        let train = corpus(10);
        let out = augment_corpus(&train, &quick(), &MockClient::new(0), &PromptTemplate::default())
            .unwrap();
        assert_eq!(out.corpus.len(), 30);
        assert_eq!(out.summary.successes, 10);
        assert_eq!(out.summary.deficit, 0);
        assert!(out.corpus.augmented_label_violations().is_empty());
        assert!(unresolved_parents(&out.corpus, &train).is_empty());
        for r in &out.records {
            assert_eq!(r.kept, vec![true, true, false]);
        }
    }

    #[test]
    fn failures_leave_a_deficit() {
        let train = corpus(4);
        let mut mock = MockClient::new(0);
        mock.fail.insert(train.samples()[1].text.clone());
        let out = augment_corpus(&train, &quick(), &mock, &PromptTemplate::default()).unwrap();
        assert_eq!(out.summary.failures, 1);
        assert_eq!(out.corpus.len(), 4 + 3 * 2);
        assert_eq!(out.summary.deficit, 2);
        assert_eq!(
            out.summary.successes * 2 + train.len(),
            out.corpus.len()
        );
    }

    #[test]
    fn all_failures_is_an_error() {
        let client = Counting(AtomicU32::new(0));
        let cfg = AugmentConfig {
            max_retries: 0,
            ..quick()
        };
        assert!(matches!(
            augment_corpus(&corpus(3), &cfg, &client, &PromptTemplate::default()),
            Err(AugmentError::AllCallsFailed { attempted: 3 })
        ));
    }

    #[test]
    fn multiplier_one_is_identity() {
        let train = corpus(5);
        let cfg = AugmentConfig {
            multiplier: 1,
            ..quick()
        };
        let out = augment_corpus(&train, &cfg, &Counting(AtomicU32::new(0)), &PromptTemplate::default())
            .unwrap();
        assert_eq!(out.corpus, train);
        assert!(out.records.is_empty());
    }

    #[test]
    fn output_order_is_deterministic() {
        let train = corpus(25);
        let cfg = AugmentConfig {
            max_in_flight: 8,
            ..quick()
        };
        let a = augment_corpus(&train, &cfg, &MockClient::new(2), &PromptTemplate::default()).unwrap();
        let b = augment_corpus(&train, &quick(), &MockClient::new(2), &PromptTemplate::default()).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.records, b.records);
    }
}
