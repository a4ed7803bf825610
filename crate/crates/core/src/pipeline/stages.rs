//! Stage executors. Each stage reads its inputs from disk, writes its
//! outputs under the run directory and returns the paths it wrote, so a
//! stage can be re-run from its manifest record alone.

use std::io::BufWriter;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::collinearity::{reduce_multicollinearity, ReductionConfig};
use crate::dataset::{
    attach_coordinates, encode_dummies, join_records, load_coordinate_sidecar, load_csv,
    map_to_segments, resolve_missing, write_csv_file, ColumnRole, FeatureClass, Frame,
    MissingPolicy, Schema, SegmentSet, SYNTHETIC_COLUMN,
};
use crate::forest::{fit_forest, Flavor, RandomForest, TrainConfig};
use crate::resample::{self, BalanceConfig};
use crate::risk::{self, HeatmapFormat};
use crate::shap;
use crate::svg;

use super::manifest::resolve;

pub type StageError = Box<dyn std::error::Error + Send + Sync>;
pub type StageResult<T> = std::result::Result<T, StageError>;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Ingest,
    Join,
    MapSegments,
    ResolveMissing,
    Encode,
    Vif,
    Split,
    Balance,
    TrainCombined,
    TrainRoad,
    Explain,
    Score,
    Heatmap,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Ingest => "ingest",
            StageKind::Join => "join",
            StageKind::MapSegments => "map_segments",
            StageKind::ResolveMissing => "resolve_missing",
            StageKind::Encode => "encode",
            StageKind::Vif => "vif",
            StageKind::Split => "split",
            StageKind::Balance => "balance",
            StageKind::TrainCombined => "train_combined",
            StageKind::TrainRoad => "train_road",
            StageKind::Explain => "explain",
            StageKind::Score => "score",
            StageKind::Heatmap => "heatmap",
        }
    }

    pub fn is_per_factor(self) -> bool {
        self >= StageKind::Split
    }
}

/// What to run: the manifest records exactly these fields.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub stage: StageKind,
    pub factor: Option<String>,
    pub inputs: Vec<String>,
    pub params: Value,
    pub seed: u64,
}

pub struct StageOutput {
    pub outputs: Vec<String>,
    pub events: Vec<(String, Value)>,
}

pub(crate) mod paths {
    pub const INGEST: &str = "ingest";
    pub const PREP: &str = "prep";
    pub const JOINED: &str = "prep/joined";
    pub const MAPPED: &str = "prep/mapped";
    pub const CLEAN: &str = "prep/clean";
    pub const ENCODED: &str = "prep/encoded";
    pub const REDUCED: &str = "prep/reduced";
    pub const REDUCTION_LOG: &str = "prep/reduction_log.json";
    pub const VIF_REPORT: &str = "prep/vif_report.json";

    pub fn csv(stem: &str) -> String {
        format!("{stem}.csv")
    }

    pub fn schema(stem: &str) -> String {
        format!("{stem}.schema.toml")
    }

    pub fn in_factor(factor: &str, name: &str) -> String {
        format!("{factor}/{name}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JoinParams {
    pub keys: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentParams {
    pub begin: String,
    pub end: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingParams {
    pub policy: MissingPolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitParams {
    pub train_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainParams {
    pub background: usize,
    pub explain_rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreParams {
    pub begin: String,
    pub end: String,
    pub missing: MissingPolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapParams {
    pub threshold: f64,
    pub formats: Vec<HeatmapFormat>,
}

pub fn read_frame(csv: &Path, schema: &Path) -> StageResult<Frame> {
    let schema = Schema::load(schema)?;
    Ok(load_csv(csv, &schema)?)
}

struct Ctx<'a> {
    out_dir: &'a Path,
    spec: &'a StageSpec,
    outputs: Vec<String>,
    events: Vec<(String, Value)>,
}

impl Ctx<'_> {
    fn input(&self, i: usize) -> StageResult<std::path::PathBuf> {
        let p = self
            .spec
            .inputs
            .get(i)
            .ok_or_else(|| format!("stage {} expects input #{}", self.spec.stage.name(), i + 1))?;
        Ok(resolve(self.out_dir, p))
    }

    fn frame(&self, i: usize) -> StageResult<Frame> {
        read_frame(&self.input(i)?, &self.input(i + 1)?)
    }

    fn params<T: DeserializeOwned>(&self) -> StageResult<T> {
        Ok(serde_json::from_value(self.spec.params.clone())?)
    }

    fn factor(&self) -> StageResult<&str> {
        self.spec
            .factor
            .as_deref()
            .ok_or_else(|| format!("stage {} needs a factor", self.spec.stage.name()).into())
    }

    /// Output path for `name`, inside the factor directory for per-factor stages.
    fn out_path(&self, name: &str) -> StageResult<String> {
        Ok(if self.spec.stage.is_per_factor() {
            paths::in_factor(self.factor()?, name)
        } else {
            name.to_string()
        })
    }

    fn create(&mut self, rel: String) -> StageResult<std::path::PathBuf> {
        let path = self.out_dir.join(&rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        self.outputs.push(rel);
        Ok(path)
    }

    fn write_frame(&mut self, frame: &Frame, stem: &str) -> StageResult<()> {
        let stem = self.out_path(stem)?;
        let csv = self.create(paths::csv(&stem))?;
        write_csv_file(frame, csv)?;
        let schema = self.create(paths::schema(&stem))?;
        frame.schema().save(schema)?;
        Ok(())
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> StageResult<()> {
        let rel = self.out_path(name)?;
        let path = self.create(rel)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> StageResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    fn event<T: Serialize>(&mut self, event: &str, payload: &T) -> StageResult<()> {
        self.events.push((event.to_string(), serde_json::to_value(payload)?));
        Ok(())
    }
}

/// Runs one stage.
pub fn execute(spec: &StageSpec, out_dir: &Path) -> StageResult<StageOutput> {
    let mut ctx = Ctx {
        out_dir,
        spec,
        outputs: Vec::new(),
        events: Vec::new(),
    };
    match spec.stage {
        StageKind::Ingest => ingest(&mut ctx)?,
        StageKind::Join => join(&mut ctx)?,
        StageKind::MapSegments => map_segments(&mut ctx)?,
        StageKind::ResolveMissing => missing(&mut ctx)?,
        StageKind::Encode => encode(&mut ctx)?,
        StageKind::Vif => vif(&mut ctx)?,
        StageKind::Split => split(&mut ctx)?,
        StageKind::Balance => balance(&mut ctx)?,
        StageKind::TrainCombined => train(&mut ctx, Flavor::CombinedFeature)?,
        StageKind::TrainRoad => train(&mut ctx, Flavor::RoadFeature)?,
        StageKind::Explain => explain(&mut ctx)?,
        StageKind::Score => score(&mut ctx)?,
        StageKind::Heatmap => heatmap(&mut ctx)?,
    }
    Ok(StageOutput {
        outputs: ctx.outputs,
        events: ctx.events,
    })
}

pub const INGEST_NAMES: [&str; 4] = ["crash", "unit", "person", "segments"];

/// Loads every raw file against its schema and writes canonical copies.
/// Inputs: four (csv, schema) pairs, then the optional coordinate sidecar.
fn ingest(ctx: &mut Ctx) -> StageResult<()> {
    for (i, name) in INGEST_NAMES.iter().enumerate() {
        let frame = ctx.frame(2 * i)?;
        let missing: usize = frame.columns().map(|(_, d)| d.missing_count()).sum();
        ctx.event(
            "loaded",
            &json!({"file": name, "rows": frame.n_rows(), "columns": frame.n_cols(), "missing_cells": missing}),
        )?;
        ctx.write_frame(&frame, &format!("{}/{name}", paths::INGEST))?;
    }
    if ctx.spec.inputs.len() > 8 {
        let sidecar = load_coordinate_sidecar(ctx.input(8)?)?;
        let path = ctx.create(format!("{}/coords.csv", paths::INGEST))?;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["route_id", "begin_mp", "end_mp", "lat", "lon"])?;
        for (r, c) in &sidecar {
            w.write_record([
                r.route_id.clone(),
                r.begin_mp.to_string(),
                r.end_mp.to_string(),
                c.lat.to_string(),
                c.lon.to_string(),
            ])?;
        }
        w.flush()?;
        ctx.event("loaded", &json!({"file": "coords", "rows": sidecar.len()}))?;
    }
    Ok(())
}

fn join(ctx: &mut Ctx) -> StageResult<()> {
    let p: JoinParams = ctx.params()?;
    let (crash, unit, person) = (ctx.frame(0)?, ctx.frame(2)?, ctx.frame(4)?);
    let (joined, report) = join_records(&crash, &unit, &person, &p.keys)?;
    ctx.event("joined", &report)?;
    ctx.write_frame(&joined, paths::JOINED)
}

/// Segments from a (csv, schema) pair plus an optional sidecar input.
fn load_segments(ctx: &mut Ctx, first: usize, begin: &str, end: &str) -> StageResult<SegmentSet> {
    let frame = ctx.frame(first)?;
    let mut set = SegmentSet::from_frame(&frame, begin, end)?;
    if ctx.spec.inputs.len() > first + 2 {
        let sidecar = load_coordinate_sidecar(ctx.input(first + 2)?)?;
        let attached = attach_coordinates(&mut set, &sidecar);
        ctx.event("coordinates_attached", &json!({"segments": set.len(), "attached": attached}))?;
    }
    Ok(set)
}

fn map_segments(ctx: &mut Ctx) -> StageResult<()> {
    let p: SegmentParams = ctx.params()?;
    let crashes = ctx.frame(0)?;
    let segments = load_segments(ctx, 2, &p.begin, &p.end)?;
    let (mapped, report) = map_to_segments(&crashes, &segments)?;
    ctx.event("mapped", &report)?;
    ctx.write_frame(&mapped, paths::MAPPED)
}

fn missing(ctx: &mut Ctx) -> StageResult<()> {
    let p: MissingParams = ctx.params()?;
    let (clean, report) = resolve_missing(&ctx.frame(0)?, p.policy)?;
    ctx.event("resolved", &report)?;
    ctx.write_frame(&clean, paths::CLEAN)
}

fn encode(ctx: &mut Ctx) -> StageResult<()> {
    let frame = ctx.frame(0)?;
    let encoded = encode_dummies(&frame)?;
    let dummies = encoded
        .schema()
        .columns()
        .iter()
        .filter(|c| c.dummy_of.is_some())
        .count();
    ctx.event(
        "encoded",
        &json!({"columns_before": frame.n_cols(), "columns_after": encoded.n_cols(), "dummies": dummies}),
    )?;
    ctx.write_frame(&encoded, paths::ENCODED)
}

fn vif(ctx: &mut Ctx) -> StageResult<()> {
    let p: ReductionConfig = ctx.params()?;
    let reduction = reduce_multicollinearity(&ctx.frame(0)?, &p)?;
    for action in &reduction.log.actions {
        ctx.event("removed", action)?;
    }
    ctx.event(
        "converged",
        &json!({"iterations": reduction.log.iterations, "removed": reduction.log.actions.len()}),
    )?;
    ctx.write_frame(&reduction.frame, paths::REDUCED)?;
    ctx.write_json(paths::REDUCTION_LOG, &reduction.log)?;
    ctx.write_json(paths::VIF_REPORT, &reduction.report)
}

fn split(ctx: &mut Ctx) -> StageResult<()> {
    let p: SplitParams = ctx.params()?;
    let target = ctx.factor()?.to_string();
    let (train, test) = resample::train_test_split(&ctx.frame(0)?, p.train_fraction, &target, ctx.spec.seed)?;
    ctx.event("split", &json!({"train_rows": train.n_rows(), "test_rows": test.n_rows()}))?;
    ctx.write_frame(&train, "train")?;
    ctx.write_frame(&test, "test")
}

#[derive(Serialize, Deserialize)]
struct BalanceParams {
    undersample_ratio: Option<f64>,
    target_ratio: f64,
    k: usize,
}

pub fn balance_params(config: &BalanceConfig) -> Value {
    serde_json::to_value(BalanceParams {
        undersample_ratio: config.undersample_ratio,
        target_ratio: config.target_ratio,
        k: config.k,
    })
    .expect("balance params serialize")
}

fn balance(ctx: &mut Ctx) -> StageResult<()> {
    let p: BalanceParams = ctx.params()?;
    let target = ctx.factor()?.to_string();
    let config = BalanceConfig {
        undersample_ratio: p.undersample_ratio,
        target_ratio: p.target_ratio,
        k: p.k,
        seed: ctx.spec.seed,
    };
    let (balanced, summary) = resample::balance(&ctx.frame(0)?, &target, &config)?;
    ctx.event("balanced", &summary)?;
    ctx.write_frame(&balanced, "balanced")
}

/// A column removed before training, and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub column: String,
    pub reason: String,
}

/// Keeps the target and the model features allowed for `flavor`. Other
/// targets, identifiers, route, milepost and coordinate columns, the
/// provenance flag and (for road-feature models) dynamic features are
/// dropped and listed.
pub fn training_frame(
    frame: &Frame,
    target: &str,
    flavor: Flavor,
) -> crate::dataset::Result<(Frame, Vec<DroppedColumn>)> {
    let spec = frame.spec(target)?;
    if spec.role != ColumnRole::Target {
        return Err(crate::dataset::DatasetError::Invalid(format!(
            "`{target}` is not a target column"
        )));
    }
    let mut dropped = Vec::new();
    for spec in frame.schema().columns() {
        if spec.name == target {
            continue;
        }
        let reason = match spec.role {
            _ if spec.name == SYNTHETIC_COLUMN => "provenance",
            ColumnRole::Target => "non_target_factor",
            ColumnRole::Identifier => "identifier",
            ColumnRole::RouteId | ColumnRole::Milepost | ColumnRole::Coordinate => "location",
            ColumnRole::Categorical => "not_encoded",
            ColumnRole::Continuous | ColumnRole::Binary => {
                if flavor == Flavor::RoadFeature && spec.class == FeatureClass::Dynamic {
                    "dynamic"
                } else {
                    continue;
                }
            }
        };
        dropped.push(DroppedColumn {
            column: spec.name.clone(),
            reason: reason.to_string(),
        });
    }
    let names: Vec<&str> = dropped.iter().map(|d| d.column.as_str()).collect();
    Ok((frame.drop_columns(&names)?, dropped))
}

pub fn model_file(flavor: Flavor) -> &'static str {
    match flavor {
        Flavor::CombinedFeature => "combined_model.json",
        Flavor::RoadFeature => "road_model.json",
    }
}

fn metrics_file(flavor: Flavor) -> &'static str {
    match flavor {
        Flavor::CombinedFeature => "combined_metrics.json",
        Flavor::RoadFeature => "road_metrics.json",
    }
}

/// Inputs: balanced training pair, test pair.
fn train(ctx: &mut Ctx, flavor: Flavor) -> StageResult<()> {
    let mut config: TrainConfig = ctx.params()?;
    config.seed = ctx.spec.seed;
    let target = ctx.factor()?.to_string();
    let (frame, dropped) = training_frame(&ctx.frame(0)?, &target, flavor)?;
    ctx.event("dropped_columns", &json!({"flavor": flavor, "columns": dropped}))?;
    let model = fit_forest(&frame, &target, &config, flavor)?;
    let metrics = model.evaluate(&ctx.frame(2)?, &target)?;
    ctx.event("evaluated", &json!({"flavor": flavor, "features": model.n_features(), "metrics": metrics}))?;
    ctx.write_bytes(model_file(flavor), model.to_json()?.as_bytes())?;
    ctx.write_json(metrics_file(flavor), &metrics)
}

/// Inputs: model, balanced training pair (background), test pair (rows).
fn explain(ctx: &mut Ctx) -> StageResult<()> {
    let p: ExplainParams = ctx.params()?;
    let model = RandomForest::load(ctx.input(0)?)?;
    let background = shap::sample_background(&model.align(&ctx.frame(1)?)?, p.background, ctx.spec.seed);
    let test = model.align(&ctx.frame(3)?)?;
    let rows = shap::sample_rows(test.n_rows, p.explain_rows, ctx.spec.seed);
    let matrix = shap::explain(&model, &test.select_rows(&rows), &rows, &background)?;
    let summary = shap::summarize(&matrix)?;
    ctx.event(
        "explained",
        &json!({
            "rows": rows.len(),
            "background": background.len(),
            "base": matrix.base,
            "value_function": "interventional",
            "note": "features outside a coalition take background values; no model is re-trained per subset",
            "top": summary.importance.iter().take(5).collect::<Vec<_>>(),
        }),
    )?;

    let mut buf = Vec::new();
    shap::write_shap_csv(&matrix, &mut buf)?;
    ctx.write_bytes("shap.csv", &buf)?;
    let mut buf = Vec::new();
    shap::write_summary_csv(&summary, &mut buf)?;
    ctx.write_bytes("shap_summary.csv", &buf)?;
    let mut buf = Vec::new();
    shap::write_beeswarm_csv(&summary, &mut buf)?;
    ctx.write_bytes("shap_beeswarm.csv", &buf)?;

    let factor = ctx.factor()?.to_string();
    let bars: Vec<(String, f64)> = summary
        .importance
        .iter()
        .map(|f| (f.feature.clone(), f.mean_abs_phi))
        .collect();
    let chart = svg::bar_chart(&format!("{factor}: mean |SHAP value|"), &bars);
    ctx.write_bytes("shap_summary.svg", chart.as_bytes())?;
    let groups: Vec<(String, Vec<(f64, f64)>)> = summary
        .importance
        .iter()
        .take(20)
        .map(|f| {
            let pairs = summary.pairs.iter().find(|(n, _)| *n == f.feature).map(|(_, p)| p.clone());
            (f.feature.clone(), pairs.unwrap_or_default())
        })
        .collect();
    let swarm = svg::beeswarm(&format!("{factor}: SHAP values"), &groups);
    ctx.write_bytes("shap_beeswarm.svg", swarm.as_bytes())?;
    let top = &summary.importance[0].feature;
    let slice = shap::dependence_slice(&summary, top)?;
    let plot = svg::scatter(&format!("{factor}: dependence on {top}"), top, "SHAP value", &slice);
    ctx.write_bytes("shap_dependence_top.svg", plot.as_bytes())
}

/// Inputs: road model, segments pair, optional sidecar.
fn score(ctx: &mut Ctx) -> StageResult<()> {
    let p: ScoreParams = ctx.params()?;
    let model = RandomForest::load(ctx.input(0)?)?;
    let raw = ctx.frame(1)?;
    let (frame, report) = resolve_missing(&raw, p.missing)?;
    ctx.event("resolved", &report)?;
    let mut set = SegmentSet::from_frame(&frame, &p.begin, &p.end)?;
    if ctx.spec.inputs.len() > 3 {
        let sidecar = load_coordinate_sidecar(ctx.input(3)?)?;
        attach_coordinates(&mut set, &sidecar);
    }
    let factor = ctx.factor()?.to_string();
    let scores = risk::score_segments(&model, &set, &factor)?;
    let mean = scores.iter().map(|s| s.confidence).sum::<f64>() / scores.len().max(1) as f64;
    ctx.event("scored", &json!({"segments": scores.len(), "mean_confidence": mean}))?;
    let mut buf = Vec::new();
    risk::write_scores_csv(&scores, &mut buf)?;
    ctx.write_bytes("scores.csv", &buf)
}

fn heatmap(ctx: &mut Ctx) -> StageResult<()> {
    let p: HeatmapParams = ctx.params()?;
    let file = std::fs::File::open(ctx.input(0)?)?;
    let scores = risk::read_scores_csv(std::io::BufReader::new(file))?;
    let kept = risk::filter_threshold(&scores, p.threshold);
    for format in &p.formats {
        let rel = ctx.out_path(&format!("heatmap.{}", format.extension()))?;
        let path = ctx.create(rel)?;
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let report = risk::export_heatmap(&kept, *format, &mut w)?;
        std::io::Write::flush(&mut w)?;
        ctx.event("exported", &json!({"format": format, "above_threshold": kept.len(), "report": report}))?;
    }
    Ok(())
}
