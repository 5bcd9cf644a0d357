//! TSV and JSONL readers plus the canonical JSONL writer.
//!
//! TSV files need a header row naming at least `text` (and `label` for
//! labeled corpora). Optional columns are `id`, `language` and `source`;
//! anything else is ignored. Field values may escape tabs and newlines as
//! `\t`, `\n`, `\r` and `\\`. A raw tab inside a field shows up as an extra
//! column and makes the row malformed.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use super::{
    CorpusError, Label, LabeledCorpus, Language, Provenance, TextSample, UnlabeledPool,
    normalize_label,
};
use crate::hashing::short_id;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Jsonl,
}

impl Format {
    /// Guess from the file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => Format::Tsv,
            _ => Format::Jsonl,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(Format::Tsv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown corpus format `{other}`")),
        }
    }
}

/// Defaults applied to rows that do not carry the corresponding column.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub language: Option<Language>,
    /// Defaults to the file name.
    pub source: Option<String>,
}

/// One parsed row before label policy is applied.
struct RawRow {
    line: usize,
    id: Option<String>,
    text: String,
    label: Option<String>,
    language: Option<String>,
    source: Option<String>,
    provenance: Option<Provenance>,
    parent_id: Option<String>,
    score: Option<f64>,
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn unescape(field: &str, line: usize) -> Result<String, CorpusError> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => {
                return Err(CorpusError::MalformedRow {
                    row: line,
                    reason: "dangling escape at end of field".into(),
                });
            }
        }
    }
    Ok(out)
}

fn parse_tsv(content: &str) -> Result<Vec<RawRow>, CorpusError> {
    let mut lines = content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    let Some((_, header)) = lines.next() else {
        return Err(CorpusError::EmptyFile);
    };
    let columns: Vec<String> = header
        .trim_start_matches('\u{feff}')
        .split('\t')
        .map(|c| c.trim().to_ascii_lowercase())
        .collect();
    let col = |name: &str| columns.iter().position(|c| c == name);
    let text_col = col("text").ok_or(CorpusError::MalformedRow {
        row: 1,
        reason: "header lacks a `text` column".into(),
    })?;
    let (label_col, id_col, lang_col, source_col) =
        (col("label"), col("id"), col("language"), col("source"));

    let mut rows = Vec::new();
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(CorpusError::MalformedRow {
                row: line,
                reason: format!(
                    "expected {} tab-separated fields, found {} (unescaped tab?)",
                    columns.len(),
                    fields.len()
                ),
            });
        }
        let get = |c: Option<usize>| -> Result<Option<String>, CorpusError> {
            c.map(|i| unescape(fields[i], line))
                .transpose()
                .map(|v| v.filter(|s| !s.trim().is_empty()))
        };
        rows.push(RawRow {
            line,
            id: get(id_col)?,
            text: unescape(fields[text_col], line)?,
            label: get(label_col)?,
            language: get(lang_col)?,
            source: get(source_col)?,
            provenance: None,
            parent_id: None,
            score: None,
        });
    }
    if rows.is_empty() {
        return Err(CorpusError::EmptyFile);
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct JsonRow {
    id: Option<String>,
    text: Option<String>,
    label: Option<String>,
    language: Option<String>,
    source: Option<String>,
    provenance: Option<Provenance>,
    parent_id: Option<String>,
    score: Option<f64>,
}

fn parse_jsonl(content: &str) -> Result<Vec<RawRow>, CorpusError> {
    let mut rows = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(raw).map_err(|e| CorpusError::MalformedRow {
            row: line,
            reason: e.to_string(),
        })?;
        let text = row.text.ok_or_else(|| CorpusError::MalformedRow {
            row: line,
            reason: "missing `text`".into(),
        })?;
        rows.push(RawRow {
            line,
            id: row.id,
            text,
            label: row.label.filter(|l| !l.trim().is_empty()),
            language: row.language,
            source: row.source,
            provenance: row.provenance,
            parent_id: row.parent_id,
            score: row.score,
        });
    }
    if rows.is_empty() {
        return Err(CorpusError::EmptyFile);
    }
    Ok(rows)
}

fn parse(path: &Path, format: Format) -> Result<Vec<RawRow>, CorpusError> {
    let content = read_file(path)?;
    match format {
        Format::Tsv => parse_tsv(&content),
        Format::Jsonl => parse_jsonl(&content),
    }
}

fn default_source(path: &Path, opts: &LoadOptions) -> String {
    opts.source.clone().unwrap_or_else(|| {
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    })
}

fn build_sample(
    row: RawRow,
    index: usize,
    default_source: &str,
    opts: &LoadOptions,
    label: Option<Label>,
) -> Result<TextSample, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedRow {
        row: row.line,
        reason,
    };
    if row.text.trim().is_empty() {
        return Err(malformed("text is empty after trimming".into()));
    }
    let source = row.source.unwrap_or_else(|| default_source.to_string());
    let language = match row.language {
        Some(l) => Language::from_str(&l).map_err(|e| malformed(e.to_string()))?,
        None => opts.language.unwrap_or_default(),
    };
    let id = row
        .id
        .unwrap_or_else(|| short_id(&[source.as_bytes(), &(index as u64).to_le_bytes()]));
    let sample = TextSample {
        id,
        text: row.text,
        label,
        language,
        source,
        provenance: row.provenance.unwrap_or_default(),
        parent_id: row.parent_id,
        score: row.score,
    };
    sample.validate().map_err(|e| malformed(e.to_string()))?;
    Ok(sample)
}

pub fn load_corpus(path: impl AsRef<Path>, format: Format) -> Result<LabeledCorpus, CorpusError> {
    load_corpus_with(path, format, &LoadOptions::default())
}

/// Loads a labeled corpus. Ids missing from the file are derived from
/// `(source, row index)` so reloading yields the same ids.
pub fn load_corpus_with(
    path: impl AsRef<Path>,
    format: Format,
    opts: &LoadOptions,
) -> Result<LabeledCorpus, CorpusError> {
    let path = path.as_ref();
    let rows = parse(path, format)?;
    let source = default_source(path, opts);
    let mut samples = Vec::with_capacity(rows.len());
    for (index, row) in rows.into_iter().enumerate() {
        let Some(raw_label) = row.label.as_deref() else {
            return Err(CorpusError::MalformedRow {
                row: row.line,
                reason: "missing label".into(),
            });
        };
        let label = normalize_label(raw_label)?;
        samples.push(build_sample(row, index, &source, opts, Some(label))?);
    }
    LabeledCorpus::new(samples)
}

pub fn load_pool(path: impl AsRef<Path>, format: Format) -> Result<UnlabeledPool, CorpusError> {
    load_pool_with(path, format, &LoadOptions::default())
}

/// Loads an unlabeled pool. The `label` column may be absent or empty.
pub fn load_pool_with(
    path: impl AsRef<Path>,
    format: Format,
    opts: &LoadOptions,
) -> Result<UnlabeledPool, CorpusError> {
    let path = path.as_ref();
    let rows = parse(path, format)?;
    let source = default_source(path, opts);
    let mut samples = Vec::with_capacity(rows.len());
    for (index, row) in rows.into_iter().enumerate() {
        if row.label.is_some() {
            return Err(CorpusError::MalformedRow {
                row: row.line,
                reason: "pool rows must be unlabeled".into(),
            });
        }
        samples.push(build_sample(row, index, &source, opts, None)?);
    }
    UnlabeledPool::new(samples, source)
}

fn write_samples(path: &Path, samples: &[TextSample]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for s in samples {
        let line = serde_json::to_string(s).expect("TextSample serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Writes the canonical JSONL interchange form (one sample per line, all
/// keys present).
pub fn write_jsonl(path: impl AsRef<Path>, corpus: &LabeledCorpus) -> Result<(), CorpusError> {
    write_samples(path.as_ref(), corpus.samples())
}

pub fn write_pool_jsonl(path: impl AsRef<Path>, pool: &UnlabeledPool) -> Result<(), CorpusError> {
    write_samples(path.as_ref(), pool.samples())
}

/// Reads back a corpus written by [`write_jsonl`].
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<LabeledCorpus, CorpusError> {
    load_corpus(path, Format::Jsonl)
}
