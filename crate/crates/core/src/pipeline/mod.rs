//! Manifest-driven orchestration: load → split → augment → train →
//! evaluate → self-train → report, with every artifact written to a fresh
//! run directory.

mod manifest;
mod run;

pub use manifest::{
    AugmentationPlan, BackboneRun, ClientKind, ExperimentManifest, ManifestError, SCHEMA_VERSION,
    SelfTrainPlan, load_manifest, stage_seed, validate_manifest,
};
pub use run::{
    PipelineError, RunArtifacts, RunOptions, SELFTRAIN_SUFFIX, Stage, best_backbone,
    collect_reports, report_runs, run_experiment, stage_augment, stage_evaluate, stage_prepare,
    stage_report, stage_selftrain, stage_train,
};
