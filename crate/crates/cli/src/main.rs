//! `hofdetect`: run HOF/NOT classification experiments from a manifest.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result, bail};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use hofdetect::augment::{compute_agreement, read_sheet_csv};
use hofdetect::eval::{TableFormat, TableOptions};
use hofdetect::pipeline::{
    RunArtifacts, RunOptions, Stage, load_manifest, report_runs, run_experiment, stage_augment,
    stage_evaluate, stage_prepare, stage_report, stage_selftrain, stage_train,
};

#[derive(Parser)]
#[command(name = "hofdetect", version, about = "Hate/offensive text classification experiments")]
struct Cli {
    /// Log verbosity (overridden by RUST_LOG).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage of a manifest in a fresh run directory.
    Run {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Force the offline mock completion client.
        #[arg(long)]
        offline: bool,
        /// Stop after this stage.
        #[arg(long, value_parser = parse_stage)]
        stage: Option<Stage>,
    },
    /// Check a manifest and print it with every default filled in.
    Validate {
        #[command(flatten)]
        manifest: ManifestArgs,
    },
    /// Create a run directory, load the dataset and split it.
    Prepare {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Record that later stages should use the mock client.
        #[arg(long)]
        offline: bool,
    },
    /// Augment the training split of an existing run.
    Augment {
        #[command(flatten)]
        run: RunArg,
        #[arg(long)]
        offline: bool,
    },
    /// Fine-tune every configured backbone of an existing run.
    Train {
        #[command(flatten)]
        run: RunArg,
    },
    /// Evaluate the trained backbones on the heldout split.
    Evaluate {
        #[command(flatten)]
        run: RunArg,
    },
    /// Self-train the best backbone on the manifest's unlabeled pool.
    Selftrain {
        #[command(flatten)]
        run: RunArg,
    },
    /// Render a comparison table over one or more runs.
    Report {
        /// Run directories; several are merged into one table.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
        format: FormatArg,
        /// Print scores as percentages with one decimal.
        #[arg(long)]
        percent: bool,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Agreement rate of a filled-in augmentation review sheet.
    Audit {
        #[arg(long)]
        sheet: PathBuf,
    },
}

#[derive(Args)]
struct ManifestArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Parent directory for the run instead of the manifest's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the manifest's global seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArg {
    /// Run directory created by `prepare` or `run`.
    #[arg(long = "run")]
    dir: PathBuf,
}

impl RunArg {
    fn open(&self) -> Result<RunArtifacts> {
        Ok(RunArtifacts::open(&self.dir)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Markdown => TableFormat::Markdown,
            FormatArg::Csv => TableFormat::Csv,
        }
    }
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(&cli.log));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_run(run: &RunArtifacts) {
    println!("{}", run.root.display());
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            manifest,
            offline,
            stage,
        } => {
            let opts = RunOptions {
                offline,
                out: manifest.out,
                seed: manifest.seed,
                stop_after: stage,
            };
            let run = run_experiment(&manifest.manifest, &opts)?;
            let table = run.table(TableFormat::Markdown);
            if table.is_file() {
                print!("{}", std::fs::read_to_string(&table)?);
            }
            print_run(&run);
        }
        Command::Validate { manifest } => {
            let m = load_manifest(&manifest.manifest, manifest.seed)?;
            print!("{}", m.to_toml());
        }
        Command::Prepare { manifest, offline } => {
            let mut m = load_manifest(&manifest.manifest, manifest.seed)?;
            if offline
                && let Some(plan) = m.augmentation.as_mut() {
                    plan.client = hofdetect::pipeline::ClientKind::Mock;
                }
            let run = stage_prepare(&manifest.manifest, &m, manifest.out.as_deref())?;
            print_run(&run);
        }
        Command::Augment { run, offline } => stage_augment(&run.open()?, offline)?,
        Command::Train { run } => stage_train(&run.open()?)?,
        Command::Evaluate { run } => stage_evaluate(&run.open()?)?,
        Command::Selftrain { run } => stage_selftrain(&run.open()?)?,
        Command::Report {
            runs,
            format,
            percent,
            out,
        } => report(&runs, format.into(), percent, out.as_deref())?,
        Command::Audit { sheet } => {
            let sheet = read_sheet_csv(&sheet).with_context(|| format!("reading {}", sheet.display()))?;
            let agreement = compute_agreement(&sheet)?;
            println!("{agreement:.3} ({} rows)", sheet.len());
        }
    }
    Ok(())
}

fn report(runs: &[PathBuf], format: TableFormat, percent: bool, out: Option<&Path>) -> Result<()> {
    // A single run gets its own tables/ written if the report stage has
    // not run yet.
    if let [dir] = runs {
        let run = RunArtifacts::open(dir)?;
        if !run.table(TableFormat::Markdown).exists() {
            stage_report(&run)?;
        }
    }
    let table = report_runs(runs, format, TableOptions { percent })?;
    match out {
        Some(path) => {
            if path.exists() {
                bail!("{} already exists", path.display());
            }
            std::fs::write(path, table)?;
        }
        None => print!("{table}"),
    }
    Ok(())
}
