//! Run directories and the stages that fill them.
//!
//! Every stage reads its inputs from the run directory and writes its
//! outputs back, so running the stages one at a time is equivalent to a
//! single [`run_experiment`] call. A stage refuses to overwrite outputs that
//! already exist.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use super::manifest::{ClientKind, ExperimentManifest, ManifestError, load_manifest};
use crate::augment::{
    CompletionClient, MockClient, RemoteClient, augment_corpus, export_audit_sheet,
    write_sheet_csv,
};
use crate::classifier::{load_model, save_model, train_model};
use crate::corpus::{
    LabeledCorpus, LoadOptions, corpus_stats, load_corpus_with, load_pool_with, read_jsonl,
    split_corpus, split_three_way, write_jsonl,
};
use crate::eval::{
    EvaluationReport, TableFormat, TableOptions, evaluate, render_table_with,
};
use crate::selftrain::{self_train, sweep_csv, sweep_thresholds};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Prepare,
    Augment,
    Train,
    Evaluate,
    Selftrain,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Prepare,
        Stage::Augment,
        Stage::Train,
        Stage::Evaluate,
        Stage::Selftrain,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Augment => "augment",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Selftrain => "selftrain",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
    #[error("{0} is not a run directory (no manifest.resolved)")]
    NotARunDir(PathBuf),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// The underlying error of a failed stage, for downcasting.
    pub fn stage_source(&self) -> Option<&(dyn std::error::Error + Send + Sync + 'static)> {
        match self {
            PipelineError::Stage { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
#[error("{0} already exists; run directories are never overwritten")]
struct ArtifactExists(PathBuf);

#[derive(Debug, Error)]
#[error("missing artifact {0}; run the earlier stages first")]
struct MissingArtifact(PathBuf);

#[derive(Debug, Error)]
#[error("no evaluation reports found")]
struct NoReports;

/// Handle on a run directory and its fixed layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub root: PathBuf,
}

pub const SELFTRAIN_SUFFIX: &str = "+selftrain";

impl RunArtifacts {
    /// Creates a fresh, timestamped directory under `output_dir`.
    pub fn create(output_dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(output_dir).map_err(|source| PipelineError::Io {
            path: output_dir.to_path_buf(),
            source,
        })?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
        for attempt in 0u32.. {
            let name = if attempt == 0 {
                format!("run-{stamp}")
            } else {
                format!("run-{stamp}-{attempt}")
            };
            let root = output_dir.join(name);
            match fs::create_dir(&root) {
                Ok(()) => return Ok(Self { root }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(source) => return Err(PipelineError::Io { path: root, source }),
            }
        }
        unreachable!("run directory names are unbounded")
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let run = Self { root: root.into() };
        if !run.resolved_manifest().is_file() {
            return Err(PipelineError::NotARunDir(run.root));
        }
        Ok(run)
    }

    pub fn manifest_copy(&self) -> PathBuf {
        self.root.join("manifest.toml")
    }
    pub fn resolved_manifest(&self) -> PathBuf {
        self.root.join("manifest.resolved")
    }
    pub fn corpus(&self, name: &str) -> PathBuf {
        self.root.join("corpora").join(format!("{name}.jsonl"))
    }
    pub fn checkpoint(&self, label: &str) -> PathBuf {
        self.root.join("checkpoints").join(label)
    }
    pub fn augmentation(&self, file: &str) -> PathBuf {
        self.root.join("augmentation").join(file)
    }
    pub fn selftrain(&self, file: &str) -> PathBuf {
        self.root.join("selftrain").join(file)
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn eval_report(&self, label: &str) -> PathBuf {
        self.eval_dir().join(format!("{label}.json"))
    }
    pub fn table(&self, format: TableFormat) -> PathBuf {
        let ext = match format {
            TableFormat::Markdown => "md",
            TableFormat::Csv => "csv",
        };
        self.root.join("tables").join(format!("results.{ext}"))
    }
    pub fn log_path(&self) -> PathBuf {
        self.root.join("run.log")
    }
    pub fn partial_marker(&self) -> PathBuf {
        self.root.join("PARTIAL")
    }

    pub fn manifest(&self) -> Result<ExperimentManifest, PipelineError> {
        let path = self.resolved_manifest();
        let text = fs::read_to_string(&path).map_err(|_| PipelineError::NotARunDir(self.root.clone()))?;
        Ok(ExperimentManifest::from_toml(&text, &path)?)
    }

    /// Appends a line to `run.log`. Paths are logged relative to the run
    /// directory and only after they were written.
    fn log(&self, stage: Stage, message: impl fmt::Display) -> Result<(), BoxError> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.log_path())?;
        writeln!(
            f,
            "{}\t{stage}\t{message}",
            chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
        )?;
        Ok(())
    }

    fn wrote(&self, stage: Stage, path: &Path) -> Result<(), BoxError> {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        self.log(stage, format_args!("wrote {}", rel.display()))
    }

    /// Corpus used for training: the augmented one when present.
    pub fn training_corpus_path(&self) -> PathBuf {
        let aug = self.corpus("train_augmented");
        if aug.is_file() { aug } else { self.corpus("train") }
    }

    /// Labels with an evaluation report, sorted by file name.
    pub fn evaluated_labels(&self) -> Result<Vec<String>, PipelineError> {
        let dir = self.eval_dir();
        let Ok(entries) = fs::read_dir(&dir) else {
            return Ok(Vec::new());
        };
        let mut labels: Vec<String> = entries
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".json").map(str::to_string)
            })
            .collect();
        labels.sort();
        Ok(labels)
    }

    pub fn read_report(&self, label: &str) -> Result<EvaluationReport, BoxError> {
        let path = self.eval_report(label);
        let text = fs::read_to_string(&path).map_err(|_| MissingArtifact(path.clone()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn fresh(path: &Path) -> Result<(), BoxError> {
    if path.exists() {
        return Err(ArtifactExists(path.to_path_buf()).into());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn read_corpus(path: &Path) -> Result<LabeledCorpus, BoxError> {
    if !path.is_file() {
        return Err(MissingArtifact(path.to_path_buf()).into());
    }
    Ok(read_jsonl(path)?)
}

fn write_text(run: &RunArtifacts, stage: Stage, path: &Path, text: &str) -> Result<(), BoxError> {
    fresh(path)?;
    fs::write(path, text)?;
    run.wrote(stage, path)
}

fn write_corpus(run: &RunArtifacts, stage: Stage, path: &Path, corpus: &LabeledCorpus) -> Result<(), BoxError> {
    fresh(path)?;
    write_jsonl(path, corpus)?;
    run.wrote(stage, path)
}

/// Runs `body` as `stage`, logging start/finish and leaving a `PARTIAL`
/// marker if it fails.
fn guarded(
    run: &RunArtifacts,
    stage: Stage,
    body: impl FnOnce() -> Result<(), BoxError>,
) -> Result<(), PipelineError> {
    let result = run.log(stage, "start").and_then(|()| body());
    match result {
        Ok(()) => {
            let _ = run.log(stage, "done");
            Ok(())
        }
        Err(source) => {
            let _ = run.log(stage, format_args!("failed: {source}"));
            let _ = fs::write(run.partial_marker(), format!("stage: {stage}\nerror: {source}\n"));
            Err(PipelineError::Stage { stage, source })
        }
    }
}

/// Creates a new run directory with the manifest copy and the resolved
/// manifest, then loads and splits the dataset.
pub fn stage_prepare(
    manifest_path: &Path,
    manifest: &ExperimentManifest,
    out: Option<&Path>,
) -> Result<RunArtifacts, PipelineError> {
    let run = RunArtifacts::create(out.unwrap_or(&manifest.output_dir))?;
    guarded(&run, Stage::Prepare, || {
        let stage = Stage::Prepare;
        fs::copy(manifest_path, run.manifest_copy())?;
        run.wrote(stage, &run.manifest_copy())?;
        write_text(&run, stage, &run.resolved_manifest(), &manifest.to_toml())?;

        let opts = LoadOptions {
            language: Some(manifest.language),
            source: None,
        };
        let full = load_corpus_with(&manifest.dataset, manifest.format, &opts)?;
        write_corpus(&run, stage, &run.corpus("full"), &full)?;

        let mut stats = serde_json::Map::new();
        stats.insert("full".into(), serde_json::to_value(corpus_stats(&full))?);
        let (train, heldout) = if manifest.split.validation_fraction.is_some() {
            let (train, validation, heldout) = split_three_way(&full, &manifest.split)?;
            write_corpus(&run, stage, &run.corpus("validation"), &validation)?;
            stats.insert("validation".into(), serde_json::to_value(corpus_stats(&validation))?);
            (train, heldout)
        } else {
            split_corpus(&full, &manifest.split)?
        };
        write_corpus(&run, stage, &run.corpus("train"), &train)?;
        write_corpus(&run, stage, &run.corpus("heldout"), &heldout)?;
        stats.insert("train".into(), serde_json::to_value(corpus_stats(&train))?);
        stats.insert("heldout".into(), serde_json::to_value(corpus_stats(&heldout))?);
        let stats_path = run.root.join("corpora").join("stats.json");
        write_text(&run, stage, &stats_path, &(serde_json::to_string_pretty(&stats)? + "\n"))?;
        tracing::info!(total = full.len(), train = train.len(), heldout = heldout.len(), "prepared corpora");
        Ok(())
    })?;
    Ok(run)
}

/// Augments the training split. `offline` forces the mock client whatever
/// the manifest says. A manifest without an augmentation section makes this
/// a no-op.
pub fn stage_augment(run: &RunArtifacts, offline: bool) -> Result<(), PipelineError> {
    let manifest = run.manifest()?;
    let Some(plan) = manifest.augmentation else {
        return Ok(());
    };
    guarded(run, Stage::Augment, || {
        let stage = Stage::Augment;
        let train = read_corpus(&run.corpus("train"))?;
        let client: Box<dyn CompletionClient> = if offline || plan.client == ClientKind::Mock {
            Box::new(MockClient::new(plan.mock_seed))
        } else {
            Box::new(RemoteClient::from_env(
                plan.endpoint.clone().unwrap_or_default(),
                plan.model.clone().unwrap_or_default(),
                plan.timeout(),
            )?)
        };
        run.log(stage, format_args!("client {}", client.name()))?;
        let outcome = augment_corpus(&train, &plan.config, client.as_ref(), &plan.template)?;

        let records_path = run.augmentation("records.jsonl");
        let mut lines = String::new();
        for r in &outcome.records {
            lines.push_str(&serde_json::to_string(r)?);
            lines.push('\n');
        }
        write_text(run, stage, &records_path, &lines)?;
        write_text(
            run,
            stage,
            &run.augmentation("summary.json"),
            &(serde_json::to_string_pretty(&outcome.summary)? + "\n"),
        )?;
        write_corpus(run, stage, &run.corpus("train_augmented"), &outcome.corpus)?;
        if let Some(size) = plan.audit_size {
            let sheet = export_audit_sheet(&outcome.corpus, size, plan.audit_seed)?;
            let path = run.augmentation("audit.csv");
            fresh(&path)?;
            write_sheet_csv(&sheet, &path)?;
            run.wrote(stage, &path)?;
        }
        tracing::info!(
            before = train.len(),
            after = outcome.corpus.len(),
            failures = outcome.summary.failures,
            "augmented training split"
        );
        Ok(())
    })
}

/// Fine-tunes every configured backbone (concurrently) and saves the
/// checkpoints.
pub fn stage_train(run: &RunArtifacts) -> Result<(), PipelineError> {
    let manifest = run.manifest()?;
    guarded(run, Stage::Train, || {
        let train_path = run.training_corpus_path();
        let train = read_corpus(&train_path)?;
        run.log(
            Stage::Train,
            format_args!(
                "training on {}",
                train_path.strip_prefix(&run.root).unwrap_or(&train_path).display()
            ),
        )?;
        for b in &manifest.backbones {
            fresh(&run.checkpoint(&b.label).join("model.json"))?;
        }
        let models = manifest
            .backbones
            .par_iter()
            .map(|b| train_model(&train, &b.config))
            .collect::<Result<Vec<_>, _>>()?;
        for (b, model) in manifest.backbones.iter().zip(&models) {
            let dir = save_model(model, run.checkpoint(&b.label))?;
            run.wrote(Stage::Train, &dir)?;
        }
        Ok(())
    })
}

/// Evaluates every trained backbone on the heldout split.
pub fn stage_evaluate(run: &RunArtifacts) -> Result<(), PipelineError> {
    let manifest = run.manifest()?;
    guarded(run, Stage::Evaluate, || {
        let heldout = read_corpus(&run.corpus("heldout"))?;
        for b in &manifest.backbones {
            let dir = run.checkpoint(&b.label);
            if !dir.join("model.json").is_file() {
                return Err(MissingArtifact(dir).into());
            }
            let model = load_model(&dir)?;
            let report = evaluate(&model, &heldout, manifest.decision_threshold)?;
            write_text(run, Stage::Evaluate, &run.eval_report(&b.label), &(report.to_json() + "\n"))?;
            tracing::info!(label = %b.label, macro_f1 = report.macro_f1, "evaluated");
        }
        Ok(())
    })
}

/// Label of the backbone with the highest heldout macro F1; ties go to the
/// earlier manifest entry.
pub fn best_backbone(run: &RunArtifacts, manifest: &ExperimentManifest) -> Result<String, BoxError> {
    let mut best: Option<(String, f64)> = None;
    for b in &manifest.backbones {
        let f1 = run.read_report(&b.label)?.macro_f1;
        if best.as_ref().is_none_or(|(_, top)| f1 > *top) {
            best = Some((b.label.clone(), f1));
        }
    }
    best.map(|(label, _)| label).ok_or_else(|| NoReports.into())
}

/// Self-trains the best backbone on the manifest's pool. A manifest without
/// a self-training section makes this a no-op.
pub fn stage_selftrain(run: &RunArtifacts) -> Result<(), PipelineError> {
    let manifest = run.manifest()?;
    let Some(plan) = manifest.selftrain.clone() else {
        return Ok(());
    };
    guarded(run, Stage::Selftrain, || {
        let stage = Stage::Selftrain;
        let best = best_backbone(run, &manifest)?;
        let config = &manifest.backbone(&best).expect("label from manifest").config;
        run.log(stage, format_args!("best backbone {best}"))?;
        let train = read_corpus(&run.training_corpus_path())?;
        let heldout = read_corpus(&run.corpus("heldout"))?;
        let opts = LoadOptions {
            language: Some(manifest.language),
            source: None,
        };
        let pool = load_pool_with(&plan.pool, plan.pool_format, &opts)?;

        let outcome = self_train(config, &train, &heldout, &pool, &plan.policy, plan.rounds)?;
        let label = format!("{best}{SELFTRAIN_SUFFIX}");
        write_text(
            run,
            stage,
            &run.selftrain("report.json"),
            &(serde_json::to_string_pretty(&outcome.report)? + "\n"),
        )?;
        let mut kept = String::new();
        for batch in &outcome.batches {
            for s in &batch.kept {
                kept.push_str(&serde_json::to_string(s)?);
                kept.push('\n');
            }
        }
        write_text(run, stage, &run.selftrain("kept.jsonl"), &kept)?;
        write_corpus(run, stage, &run.corpus("train_selftrained"), &outcome.corpus)?;
        fresh(&run.checkpoint(&label).join("model.json"))?;
        let dir = save_model(&outcome.model, run.checkpoint(&label))?;
        run.wrote(stage, &dir)?;
        let report = evaluate(&outcome.model, &heldout, plan.policy.decision())?;
        write_text(run, stage, &run.eval_report(&label), &(report.to_json() + "\n"))?;

        if !plan.sweep.is_empty() {
            let base = load_model(run.checkpoint(&best))?;
            let rows = sweep_thresholds(&base, &pool, &heldout, &plan.sweep, config, &train)?;
            write_text(run, stage, &run.selftrain("sweep.csv"), &sweep_csv(&rows))?;
        }
        Ok(())
    })
}

/// Renders every evaluation report in the run into `tables/`.
pub fn stage_report(run: &RunArtifacts) -> Result<(), PipelineError> {
    guarded(run, Stage::Report, || {
        let reports = collect_reports(std::slice::from_ref(run))?;
        for format in [TableFormat::Markdown, TableFormat::Csv] {
            let table = render_table_with(&reports, format, TableOptions::default())?;
            write_text(run, Stage::Report, &run.table(format), &table)?;
        }
        Ok(())
    })
}

/// `(label, report)` pairs from one or more runs. With several runs, labels
/// are prefixed by the run directory name.
pub fn collect_reports(runs: &[RunArtifacts]) -> Result<Vec<(String, EvaluationReport)>, BoxError> {
    let mut out = Vec::new();
    for run in runs {
        let prefix = if runs.len() > 1 {
            run.root
                .file_name()
                .map(|n| format!("{}/", n.to_string_lossy()))
                .unwrap_or_default()
        } else {
            String::new()
        };
        for label in run.evaluated_labels()? {
            out.push((format!("{prefix}{label}"), run.read_report(&label)?));
        }
    }
    if out.is_empty() {
        return Err(NoReports.into());
    }
    Ok(out)
}

/// Merged comparison table over several run directories.
pub fn report_runs(runs: &[PathBuf], format: TableFormat, opts: TableOptions) -> Result<String, PipelineError> {
    let runs = runs
        .iter()
        .map(|r| RunArtifacts::open(r.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let wrap = |source: BoxError| PipelineError::Stage {
        stage: Stage::Report,
        source,
    };
    let reports = collect_reports(&runs).map_err(wrap)?;
    render_table_with(&reports, format, opts).map_err(|e| wrap(e.into()))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Force the mock completion client.
    pub offline: bool,
    /// Parent directory for the run instead of the manifest's `output_dir`.
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Stop after this stage.
    pub stop_after: Option<Stage>,
}

/// Validates the manifest and runs every stage in order in a fresh run
/// directory.
pub fn run_experiment(manifest_path: &Path, opts: &RunOptions) -> Result<RunArtifacts, PipelineError> {
    let mut manifest = load_manifest(manifest_path, opts.seed)?;
    if opts.offline
        && let Some(plan) = manifest.augmentation.as_mut() {
            plan.client = ClientKind::Mock;
        }
    let last = opts.stop_after.unwrap_or(Stage::Report);
    let run = stage_prepare(manifest_path, &manifest, opts.out.as_deref())?;
    for stage in &Stage::ALL[1..] {
        if *stage > last {
            break;
        }
        match stage {
            Stage::Augment => stage_augment(&run, opts.offline)?,
            Stage::Train => stage_train(&run)?,
            Stage::Evaluate => stage_evaluate(&run)?,
            Stage::Selftrain => stage_selftrain(&run)?,
            Stage::Report => stage_report(&run)?,
            Stage::Prepare => unreachable!(),
        }
    }
    Ok(run)
}
