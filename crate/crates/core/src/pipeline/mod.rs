//! End-to-end runs driven by one config file.
//!
//! Shared stages (ingest, join, segment mapping, missing values, encoding,
//! VIF reduction) write under `prep/` and `ingest/`; each factor then gets
//! its own directory holding its split, balanced training set, two models,
//! SHAP exports, segment scores and heat maps. A factor's stages never read
//! another factor's directory.

mod config;
mod manifest;
mod stages;

pub use config::{
    schema_path_for, BalanceSection, ForestSection, InputConfig, PipelineConfig, PreprocessConfig,
    RiskSection, ShapSection, SplitConfig,
};
pub use manifest::{FileRecord, RunManifest, RunStatus, StageRecord, MANIFEST_VERSION};
pub use stages::{
    execute, model_file, read_frame, training_frame, DroppedColumn, StageError, StageKind,
    StageOutput, StageSpec,
};

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use crate::collinearity::ReductionConfig;
use crate::fingerprint;
use crate::runlog::RunLog;

use stages::paths;

/// Directory names that factors may not use.
pub const RESERVED_DIRS: [&str; 2] = [paths::INGEST, paths::PREP];
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_LOG_FILE: &str = "run.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("input file {} does not exist", .0.display())]
    MissingInput(PathBuf),
    #[error("stage {stage} failed: {source}")]
    Stage { stage: String, source: StageError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Problems found before any stage ran.
    pub fn is_validation(&self) -> bool {
        matches!(self, PipelineError::Config(_) | PipelineError::MissingInput(_))
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("stage params serialize")
}

fn pair(stem: &str) -> [String; 2] {
    [paths::csv(stem), paths::schema(stem)]
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// The stages a run executes, in order. External inputs must already be
/// absolute paths.
pub fn plan(config: &PipelineConfig, factors: &[String]) -> Vec<StageSpec> {
    let seed = config.seed;
    let spec = |stage, factor: Option<&str>, inputs: Vec<String>, params: Value| StageSpec {
        stage,
        factor: factor.map(str::to_string),
        inputs,
        params,
        seed,
    };
    let ingested = |name: &str| pair(&format!("{}/{name}", paths::INGEST));
    let coords: Vec<String> = config
        .inputs
        .coordinates
        .as_ref()
        .map(|_| format!("{}/coords.csv", paths::INGEST))
        .into_iter()
        .collect();
    let pre = &config.preprocess;
    let segment_params = stages::SegmentParams {
        begin: config.inputs.segment_begin.clone(),
        end: config.inputs.segment_end.clone(),
    };

    let mut out = vec![
        spec(
            StageKind::Ingest,
            None,
            config.inputs.files().iter().map(|p| path_string(p)).collect(),
            json!({}),
        ),
        spec(
            StageKind::Join,
            None,
            [ingested("crash"), ingested("unit"), ingested("person")].concat(),
            to_value(&stages::JoinParams {
                keys: config.inputs.join_keys.clone(),
            }),
        ),
        spec(
            StageKind::MapSegments,
            None,
            [pair(paths::JOINED).to_vec(), ingested("segments").to_vec(), coords.clone()].concat(),
            to_value(&segment_params),
        ),
        spec(
            StageKind::ResolveMissing,
            None,
            pair(paths::MAPPED).to_vec(),
            to_value(&stages::MissingParams { policy: pre.missing }),
        ),
        spec(StageKind::Encode, None, pair(paths::CLEAN).to_vec(), json!({})),
        spec(
            StageKind::Vif,
            None,
            pair(paths::ENCODED).to_vec(),
            to_value(&ReductionConfig {
                vif_threshold: pre.vif_threshold,
                corr_threshold: pre.corr_threshold,
                max_iters: pre.max_iters,
            }),
        ),
    ];

    for factor in factors {
        let f = Some(factor.as_str());
        let own = |stem: &str| pair(&paths::in_factor(factor, stem)).to_vec();
        let training = [own("balanced"), own("test")].concat();
        out.push(spec(
            StageKind::Split,
            f,
            pair(paths::REDUCED).to_vec(),
            to_value(&stages::SplitParams {
                train_fraction: config.split.train_fraction,
            }),
        ));
        out.push(spec(
            StageKind::Balance,
            f,
            own("train"),
            stages::balance_params(&config.balance.with_seed(seed)),
        ));
        out.push(spec(StageKind::TrainCombined, f, training.clone(), to_value(&config.forest)));
        out.push(spec(StageKind::TrainRoad, f, training, to_value(&config.forest)));
        out.push(spec(
            StageKind::Explain,
            f,
            [
                vec![paths::in_factor(factor, model_file(crate::forest::Flavor::CombinedFeature))],
                own("balanced"),
                own("test"),
            ]
            .concat(),
            to_value(&stages::ExplainParams {
                background: config.shap.background,
                explain_rows: config.shap.explain_rows,
            }),
        ));
        out.push(spec(
            StageKind::Score,
            f,
            [
                vec![paths::in_factor(factor, model_file(crate::forest::Flavor::RoadFeature))],
                ingested("segments").to_vec(),
                coords.clone(),
            ]
            .concat(),
            to_value(&stages::ScoreParams {
                begin: segment_params.begin.clone(),
                end: segment_params.end.clone(),
                missing: pre.missing,
            }),
        ));
        out.push(spec(
            StageKind::Heatmap,
            f,
            vec![paths::in_factor(factor, "scores.csv")],
            to_value(&stages::HeatmapParams {
                threshold: config.risk.threshold,
                formats: config.risk.formats.clone(),
            }),
        ));
    }
    out
}

fn fingerprint_all(out_dir: &Path, files: &[String]) -> Result<Vec<FileRecord>, StageError> {
    files
        .iter()
        .map(|p| FileRecord::of(out_dir, p).map_err(|e| format!("{p}: {e}").into()))
        .collect()
}

/// Runs one stage and builds its manifest record.
pub fn run_stage(spec: &StageSpec, out_dir: &Path) -> Result<(StageRecord, Vec<(String, Value)>), StageError> {
    let start = Instant::now();
    let inputs = fingerprint_all(out_dir, &spec.inputs)?;
    let output = execute(spec, out_dir)?;
    let outputs = fingerprint_all(out_dir, &output.outputs)?;
    let record = StageRecord {
        stage: spec.stage,
        factor: spec.factor.clone(),
        inputs,
        outputs,
        config_digest: fingerprint::bytes(spec.params.to_string().as_bytes()),
        params: spec.params.clone(),
        seed: spec.seed,
        elapsed_ms: start.elapsed().as_millis() as u64,
    };
    Ok((record, output.events))
}

/// Re-executes a recorded stage and returns the fingerprints of what it wrote.
pub fn rerun_stage(record: &StageRecord, out_dir: &Path) -> Result<Vec<FileRecord>, StageError> {
    let spec = StageSpec {
        stage: record.stage,
        factor: record.factor.clone(),
        inputs: record.inputs.iter().map(|f| f.path.clone()).collect(),
        params: record.params.clone(),
        seed: record.seed,
    };
    let (rerun, _) = run_stage(&spec, out_dir)?;
    Ok(rerun.outputs)
}

/// Manifest and log of a finished run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub factors: Vec<String>,
    pub manifest: RunManifest,
    pub log: RunLog,
}

fn absolute(path: &mut PathBuf) -> Result<(), PipelineError> {
    *path = path
        .canonicalize()
        .map_err(|_| PipelineError::MissingInput(path.clone()))?;
    Ok(())
}

/// Validates `config`, then runs every stage in order. The manifest and run
/// log are rewritten after each stage, so a failed run still records the
/// stages that completed.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let factors = config.validate()?;
    let mut config = config.clone();
    let i = &mut config.inputs;
    i.crash_schema = Some(i.crash_schema());
    i.unit_schema = Some(i.unit_schema());
    i.person_schema = Some(i.person_schema());
    i.segments_schema = Some(i.segments_schema());
    for p in [&mut i.crash, &mut i.unit, &mut i.person, &mut i.segments] {
        absolute(p)?;
    }
    for p in [
        &mut i.crash_schema,
        &mut i.unit_schema,
        &mut i.person_schema,
        &mut i.segments_schema,
        &mut i.coordinates,
    ]
    .into_iter()
    .flatten()
    {
        absolute(p)?;
    }

    let out_dir = config.out_dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    let mut manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        seed: config.seed,
        config_digest: fingerprint::bytes(config.to_toml_string().as_bytes()),
        status: RunStatus::Complete,
        failed_stage: None,
        error: None,
        stages: Vec::new(),
    };
    let mut log = RunLog::new();
    log.record("run", "started", &json!({"seed": config.seed, "factors": factors}));
    let save = |manifest: &RunManifest, log: &RunLog| -> std::io::Result<()> {
        std::fs::write(out_dir.join(MANIFEST_FILE), manifest.to_json())?;
        log.save(out_dir.join(RUN_LOG_FILE))
    };

    for spec in plan(&config, &factors) {
        let label = match &spec.factor {
            Some(f) => format!("{}[{f}]", spec.stage.name()),
            None => spec.stage.name().to_string(),
        };
        match run_stage(&spec, &out_dir) {
            Ok((record, events)) => {
                for (event, payload) in &events {
                    log.record(&label, event, payload);
                }
                log.record(&label, "completed", &json!({"elapsed_ms": record.elapsed_ms}));
                manifest.stages.push(record);
                save(&manifest, &log)?;
            }
            Err(source) => {
                log.record(&label, "failed", &json!({"error": source.to_string()}));
                manifest.status = RunStatus::Failed;
                manifest.failed_stage = Some(label.clone());
                manifest.error = Some(source.to_string());
                save(&manifest, &log)?;
                return Err(PipelineError::Stage { stage: label, source });
            }
        }
    }
    Ok(RunReport {
        out_dir,
        factors,
        manifest,
        log,
    })
}

/// Runs the pipeline on a dedicated pool of `threads` workers, or on the
/// global pool when `None`. Results do not depend on the worker count.
pub fn run_with_threads(config: &PipelineConfig, threads: Option<usize>) -> Result<RunReport, PipelineError> {
    match threads {
        None => run_pipeline(config),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
            pool.install(|| run_pipeline(config))
        }
    }
}
