//! Human review of augmented samples: export a seeded random sheet, read it
//! back once reviewers fill in verdicts, and compute the agreement rate.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::corpus::{Label, LabeledCorpus, Provenance, TextSample};
use crate::hashing::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Agree,
    Disagree,
    Blank,
}

impl Verdict {
    fn as_csv(self) -> &'static str {
        match self {
            Verdict::Agree => "agree",
            Verdict::Disagree => "disagree",
            Verdict::Blank => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRow {
    pub augmented_id: String,
    pub parent_text: String,
    pub parent_label: Label,
    pub augmented_text: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReviewSheet {
    pub rows: Vec<ReviewRow>,
}

impl ReviewSheet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Draws `sample_size` augmented samples uniformly without replacement.
/// Parents are looked up in the same corpus.
pub fn export_audit_sheet(
    augmented: &LabeledCorpus,
    sample_size: usize,
    seed: u64,
) -> Result<ReviewSheet, AugmentError> {
    let by_id: HashMap<&str, &TextSample> = augmented
        .samples()
        .iter()
        .map(|s| (s.id.as_str(), s))
        .collect();
    let mut candidates: Vec<&TextSample> = augmented
        .samples()
        .iter()
        .filter(|s| s.provenance == Provenance::Augmented)
        .collect();
    if candidates.len() < sample_size {
        return Err(AugmentError::InsufficientAugmentedSamples {
            requested: sample_size,
            available: candidates.len(),
        });
    }
    candidates.sort_by(|a, b| a.id.cmp(&b.id));

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "audit"));
    let mut picked = rand::seq::index::sample(&mut rng, candidates.len(), sample_size).into_vec();
    picked.sort_unstable();

    let rows = picked
        .into_iter()
        .map(|i| {
            let s = candidates[i];
            let parent_id = s.parent_id.as_deref().unwrap_or_default();
            let parent = by_id
                .get(parent_id)
                .ok_or_else(|| AugmentError::MissingParent(parent_id.to_string()))?;
            Ok(ReviewRow {
                augmented_id: s.id.clone(),
                parent_text: parent.text.clone(),
                parent_label: parent.label.expect("labeled corpus"),
                augmented_text: s.text.clone(),
                verdict: Verdict::Blank,
            })
        })
        .collect::<Result<_, AugmentError>>()?;
    Ok(ReviewSheet { rows })
}

/// Fraction of reviewed rows where the reviewer agreed the label holds.
pub fn compute_agreement(sheet: &ReviewSheet) -> Result<f64, AugmentError> {
    let blank = sheet
        .rows
        .iter()
        .filter(|r| r.verdict == Verdict::Blank)
        .count();
    if blank > 0 {
        return Err(AugmentError::IncompleteSheet { blank });
    }
    if sheet.rows.is_empty() {
        return Err(AugmentError::EmptySheet);
    }
    let agree = sheet
        .rows
        .iter()
        .filter(|r| r.verdict == Verdict::Agree)
        .count();
    Ok(agree as f64 / sheet.rows.len() as f64)
}

const HEADER: [&str; 5] = [
    "augmented_id",
    "parent_text",
    "parent_label",
    "augmented_text",
    "verdict",
];

pub fn write_sheet_csv(sheet: &ReviewSheet, path: impl AsRef<Path>) -> Result<(), AugmentError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for r in &sheet.rows {
        w.write_record([
            r.augmented_id.as_str(),
            &r.parent_text,
            r.parent_label.as_str(),
            &r.augmented_text,
            r.verdict.as_csv(),
        ])?;
    }
    w.flush().map_err(|e| AugmentError::Csv(e.into()))?;
    Ok(())
}

/// Reads a sheet, accepting `agree`, `disagree` or an empty verdict.
pub fn read_sheet_csv(path: impl AsRef<Path>) -> Result<ReviewSheet, AugmentError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| {
            AugmentError::Csv(csv::Error::from(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("missing column `{name}`"),
            )))
        })
    };
    let idx: Vec<usize> = HEADER.iter().map(|h| col(h)).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let field = |k: usize| rec.get(idx[k]).unwrap_or_default();
        let verdict = match field(4).trim().to_ascii_lowercase().as_str() {
            "agree" => Verdict::Agree,
            "disagree" => Verdict::Disagree,
            "" => Verdict::Blank,
            other => {
                return Err(AugmentError::InvalidVerdict {
                    row,
                    value: other.to_string(),
                });
            }
        };
        rows.push(ReviewRow {
            augmented_id: field(0).to_string(),
            parent_text: field(1).to_string(),
            parent_label: field(2).parse()?,
            augmented_text: field(3).to_string(),
            verdict,
        });
    }
    Ok(ReviewSheet { rows })
}
