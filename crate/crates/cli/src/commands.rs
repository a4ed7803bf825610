use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::anyhow;
use serde_json::{json, Value};

use roadfirst::collinearity::{reduce_multicollinearity, ReductionConfig};
use roadfirst::dataset::{
    attach_coordinates, encode_dummies, join_records, load_coordinate_sidecar, load_csv,
    map_to_segments, resolve_missing, write_csv_file, Frame, MissingPolicy, Schema, SegmentSet,
};
use roadfirst::forest::{fit_forest, Flavor, RandomForest, Vote};
use roadfirst::pipeline::{run_pipeline, schema_path_for, training_frame, PipelineConfig};
use roadfirst::resample;
use roadfirst::risk::{self, HeatmapFormat};
use roadfirst::runlog::RunLog;
use roadfirst::shap::{self, ShapMatrix, MAX_EXACT_FEATURES};
use roadfirst::svg;
use roadfirst::syngen::{self, GenConfig};

use crate::{Cli, Command, Failure, FlavorArg, FormatArg, MissingArg, VoteArg};

type Outcome<T> = Result<T, Failure>;

trait Classify<T> {
    /// Bad arguments, config or input files.
    fn usage(self, what: &str) -> Outcome<T>;
    /// The wrapped operation failed.
    fn stage(self, what: &str) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self, what: &str) -> Outcome<T> {
        self.map_err(|e| Failure::Usage(e.into().context(what.to_string())))
    }

    fn stage(self, what: &str) -> Outcome<T> {
        self.map_err(|e| Failure::Stage(e.into().context(what.to_string())))
    }
}

fn usage_error(message: String) -> Failure {
    Failure::Usage(anyhow!(message))
}

struct Ctx<'a> {
    cli: &'a Cli,
    config: PipelineConfig,
    seed: u64,
    log: Option<File>,
}

impl Ctx<'_> {
    fn out(&self) -> Outcome<&Path> {
        self.cli
            .out
            .as_deref()
            .ok_or_else(|| usage_error("--out is required for this command".into()))
    }

    /// Writes one JSON-lines event to stderr and to the `--log` file.
    fn emit(&mut self, stage: &str, event: &str, payload: Value) -> Outcome<()> {
        let mut log = RunLog::new();
        log.record(stage, event, &payload);
        let mut line = Vec::new();
        log.write_jsonl(&mut line).stage("formatting log event")?;
        let _ = std::io::stderr().write_all(&line);
        if let Some(f) = &mut self.log {
            f.write_all(&line).stage("writing the log file")?;
        }
        Ok(())
    }
}

fn print_json(value: &Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON value prints"));
}

fn load_frame(path: &Path) -> Outcome<Frame> {
    let schema_path = schema_path_for(path);
    let schema = Schema::load(&schema_path).usage(&format!("loading schema {}", schema_path.display()))?;
    load_csv(path, &schema).usage(&format!("loading {}", path.display()))
}

fn write_frame(frame: &Frame, path: &Path) -> Outcome<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).stage("creating the output directory")?;
    }
    write_csv_file(frame, path).stage(&format!("writing {}", path.display()))?;
    frame
        .schema()
        .save(schema_path_for(path))
        .stage("writing the schema")
}

fn create(path: &Path) -> Outcome<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).stage("creating the output directory")?;
    }
    Ok(BufWriter::new(
        File::create(path).stage(&format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Outcome<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).usage(&format!("opening {}", path.display()))?,
    ))
}

fn missing_policy(arg: Option<MissingArg>, default: MissingPolicy) -> MissingPolicy {
    match arg {
        Some(MissingArg::Impute) => MissingPolicy::Impute,
        Some(MissingArg::DropRow) => MissingPolicy::DropRow,
        None => default,
    }
}

pub fn dispatch(cli: &Cli) -> Outcome<()> {
    // `generate` reads its own config format.
    let config = match &cli.config {
        Some(path) if !matches!(cli.command, Command::Generate { .. }) => {
            PipelineConfig::load(path).usage("loading the pipeline config")?
        }
        _ => PipelineConfig::for_generated(),
    };
    let log = match &cli.log {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .usage("opening the log file")?,
        ),
        None => None,
    };
    let mut ctx = Ctx {
        cli,
        seed: cli.seed.unwrap_or(config.seed),
        config,
        log,
    };

    match &cli.command {
        Command::Ingest { data, schema } => {
            let schema_path = schema.clone().unwrap_or_else(|| schema_path_for(data));
            let schema = Schema::load(&schema_path).usage("loading the schema")?;
            let frame = load_csv(data, &schema).usage(&format!("loading {}", data.display()))?;
            let missing: usize = frame.columns().map(|(_, d)| d.missing_count()).sum();
            let summary = json!({"rows": frame.n_rows(), "columns": frame.n_cols(), "missing_cells": missing});
            ctx.emit("ingest", "loaded", summary.clone())?;
            if let Some(out) = &cli.out {
                write_frame(&frame, out)?;
            }
            print_json(&summary);
        }
        Command::Join {
            crash,
            unit,
            person,
            keys,
        } => {
            let keys = if keys.is_empty() {
                ctx.config.inputs.join_keys.clone()
            } else {
                keys.clone()
            };
            let (c, u, p) = (load_frame(crash)?, load_frame(unit)?, load_frame(person)?);
            let (joined, report) = join_records(&c, &u, &p, &keys).stage("join")?;
            let report = serde_json::to_value(&report).expect("report serializes");
            ctx.emit("join", "joined", report.clone())?;
            write_frame(&joined, ctx.out()?)?;
            print_json(&report);
        }
        Command::Map {
            input,
            segments,
            coords,
            begin,
            end,
        } => {
            let begin = begin.clone().unwrap_or_else(|| ctx.config.inputs.segment_begin.clone());
            let end = end.clone().unwrap_or_else(|| ctx.config.inputs.segment_end.clone());
            let crashes = load_frame(input)?;
            let set = load_segments(segments, coords.as_deref(), &begin, &end, None)?;
            let (mapped, report) = map_to_segments(&crashes, &set).stage("segment mapping")?;
            let report = serde_json::to_value(&report).expect("report serializes");
            ctx.emit("map_segments", "mapped", report.clone())?;
            write_frame(&mapped, ctx.out()?)?;
            print_json(&report);
        }
        Command::Clean { input, missing } => {
            let policy = missing_policy(*missing, ctx.config.preprocess.missing);
            let (clean, report) = resolve_missing(&load_frame(input)?, policy).stage("missing values")?;
            let report = serde_json::to_value(&report).expect("report serializes");
            ctx.emit("resolve_missing", "resolved", report.clone())?;
            write_frame(&clean, ctx.out()?)?;
            print_json(&report);
        }
        Command::Encode { input } => {
            let frame = load_frame(input)?;
            let encoded = encode_dummies(&frame).stage("encoding")?;
            let summary = json!({"columns_before": frame.n_cols(), "columns_after": encoded.n_cols()});
            ctx.emit("encode", "encoded", summary.clone())?;
            write_frame(&encoded, ctx.out()?)?;
            print_json(&summary);
        }
        Command::Vif {
            input,
            threshold,
            corr_threshold,
            max_iters,
        } => {
            let pre = &ctx.config.preprocess;
            let config = ReductionConfig {
                vif_threshold: threshold.unwrap_or(pre.vif_threshold),
                corr_threshold: corr_threshold.unwrap_or(pre.corr_threshold),
                max_iters: max_iters.unwrap_or(pre.max_iters),
            };
            let frame = load_frame(input)?;
            let out = ctx.out()?.to_path_buf();
            let reduction = match reduce_multicollinearity(&frame, &config) {
                Ok(r) => r,
                Err(e @ roadfirst::collinearity::CollinearityError::Threshold(_)) => {
                    return Err(Failure::Usage(e.into()))
                }
                Err(e) => return Err(e).stage("multicollinearity reduction"),
            };
            for action in &reduction.log.actions {
                ctx.emit("vif", "removed", serde_json::to_value(action).expect("action serializes"))?;
            }
            write_frame(&reduction.frame, &out)?;
            let log_path = out.with_extension("reduction_log.json");
            let log = serde_json::to_string_pretty(&reduction.log).expect("log serializes");
            std::fs::write(&log_path, format!("{log}\n")).stage("writing the reduction log")?;
            println!("{log}");
        }
        Command::Split {
            input,
            target,
            train_fraction,
        } => {
            let fraction = train_fraction.unwrap_or(ctx.config.split.train_fraction);
            let frame = load_frame(input)?;
            let (train, test) =
                resample::train_test_split(&frame, fraction, target, ctx.seed).stage("split")?;
            let out = ctx.out()?.to_path_buf();
            write_frame(&train, &out.join("train.csv"))?;
            write_frame(&test, &out.join("test.csv"))?;
            let summary = json!({"train_rows": train.n_rows(), "test_rows": test.n_rows()});
            ctx.emit("split", "split", summary.clone())?;
            print_json(&summary);
        }
        Command::Balance {
            input,
            target,
            undersample_ratio,
            target_ratio,
            k,
        } => {
            let mut config = ctx.config.balance.with_seed(ctx.seed);
            if undersample_ratio.is_some() {
                config.undersample_ratio = *undersample_ratio;
            }
            config.target_ratio = target_ratio.unwrap_or(config.target_ratio);
            config.k = k.unwrap_or(config.k);
            config.validate().usage("balance options")?;
            let frame = load_frame(input)?;
            let (balanced, summary) = resample::balance(&frame, target, &config).stage("balancing")?;
            let summary = serde_json::to_value(&summary).expect("summary serializes");
            ctx.emit("balance", "balanced", summary.clone())?;
            write_frame(&balanced, ctx.out()?)?;
            print_json(&summary);
        }
        Command::Train {
            input,
            target,
            flavor,
            trees,
            max_depth,
            min_samples_leaf,
            max_features,
            vote,
            test,
        } => {
            let flavor = match flavor {
                FlavorArg::CombinedFeature => Flavor::CombinedFeature,
                FlavorArg::RoadFeature => Flavor::RoadFeature,
            };
            let mut config = ctx.config.forest.with_seed(ctx.seed);
            config.n_trees = trees.unwrap_or(config.n_trees);
            config.max_depth = max_depth.or(config.max_depth);
            config.min_samples_leaf = min_samples_leaf.unwrap_or(config.min_samples_leaf);
            config.max_features = max_features.or(config.max_features);
            config.vote = match vote {
                Some(VoteArg::Soft) => Vote::Soft,
                Some(VoteArg::Hard) => Vote::Hard,
                None => config.vote,
            };
            let out = ctx.out()?.to_path_buf();
            let frame = load_frame(input)?;
            let (frame, dropped) = training_frame(&frame, target, flavor).usage("selecting training columns")?;
            ctx.emit("train", "dropped_columns", json!({"flavor": flavor, "columns": dropped}))?;
            let model = fit_forest(&frame, target, &config, flavor).stage("training")?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).stage("creating the output directory")?;
            }
            model.save(&out).stage("writing the model")?;
            let mut summary = json!({"flavor": flavor, "trees": model.trees.len(), "features": model.feature_names});
            if let Some(test) = test {
                let metrics = model.evaluate(&load_frame(test)?, target).stage("evaluation")?;
                summary["metrics"] = serde_json::to_value(metrics).expect("metrics serialize");
            }
            ctx.emit("train", "trained", summary.clone())?;
            print_json(&summary);
        }
        Command::Explain {
            model,
            input,
            background,
            background_rows,
            rows,
            exact,
        } => {
            let model = RandomForest::load(model).usage("loading the model")?;
            if *exact && model.n_features() > MAX_EXACT_FEATURES {
                return Err(usage_error(format!(
                    "exact SHAP refused: the model has {} features and exact enumeration is limited to {MAX_EXACT_FEATURES}; run without --exact to use the tree explainer",
                    model.n_features()
                )));
            }
            let frame = load_frame(input)?;
            let bg_frame = match background {
                Some(p) => load_frame(p)?,
                None => frame.clone(),
            };
            let bg = shap::sample_background(
                &model.align(&bg_frame).usage("aligning the background")?,
                background_rows.unwrap_or(ctx.config.shap.background),
                ctx.seed,
            );
            let x = model.align(&frame).usage("aligning the input")?;
            let ids = shap::sample_rows(x.n_rows, rows.unwrap_or(ctx.config.shap.explain_rows), ctx.seed);
            let x = x.select_rows(&ids);
            let matrix = if *exact {
                let values = x.rows();
                let explained = values
                    .iter()
                    .map(|r| shap::exact_shap(&model, r, &bg))
                    .collect::<Result<Vec<_>, _>>()
                    .stage("exact SHAP")?;
                ShapMatrix {
                    feature_names: model.feature_names.clone(),
                    row_ids: ids.clone(),
                    base: explained.first().map_or(0.0, |s| s.base),
                    phi: explained.into_iter().map(|s| s.phi).collect(),
                    values,
                }
            } else {
                shap::explain(&model, &x, &ids, &bg).stage("tree SHAP")?
            };
            let summary = shap::summarize(&matrix).stage("summarizing")?;
            let out = ctx.out()?.to_path_buf();
            shap::write_shap_csv(&matrix, create(&out.join("shap.csv"))?).stage("writing shap.csv")?;
            shap::write_summary_csv(&summary, create(&out.join("shap_summary.csv"))?)
                .stage("writing shap_summary.csv")?;
            shap::write_beeswarm_csv(&summary, create(&out.join("shap_beeswarm.csv"))?)
                .stage("writing shap_beeswarm.csv")?;
            let result = json!({
                "rows": ids.len(),
                "background": bg.len(),
                "base": matrix.base,
                "method": if *exact { "exact" } else { "tree" },
                "importance": summary.importance,
            });
            ctx.emit("explain", "explained", result.clone())?;
            print_json(&result);
        }
        Command::Score {
            model,
            segments,
            coords,
            begin,
            end,
            missing,
        } => {
            let model = RandomForest::load(model).usage("loading the model")?;
            let begin = begin.clone().unwrap_or_else(|| ctx.config.inputs.segment_begin.clone());
            let end = end.clone().unwrap_or_else(|| ctx.config.inputs.segment_end.clone());
            let policy = missing_policy(*missing, ctx.config.preprocess.missing);
            let set = load_segments(segments, coords.as_deref(), &begin, &end, Some(policy))?;
            let scores = risk::score_segments(&model, &set, &model.target).stage("scoring")?;
            risk::write_scores_csv(&scores, create(ctx.out()?)?).stage("writing scores")?;
            let above = risk::filter_threshold(&scores, ctx.config.risk.threshold).len();
            let summary = json!({"segments": scores.len(), "above_threshold": above});
            ctx.emit("score", "scored", summary.clone())?;
            print_json(&summary);
        }
        Command::Heatmap {
            scores,
            threshold,
            format,
        } => {
            let threshold = threshold.unwrap_or(ctx.config.risk.threshold);
            if !(threshold >= risk::DEFAULT_THRESHOLD && threshold < 1.0) {
                return Err(usage_error(format!("threshold must lie in [0.5, 1), got {threshold}")));
            }
            let all = risk::read_scores_csv(open(scores)?).usage("reading scores")?;
            let kept = risk::filter_threshold(&all, threshold);
            let format = match format {
                FormatArg::Csv => HeatmapFormat::Csv,
                FormatArg::Geojson => HeatmapFormat::Geojson,
            };
            let mut w = create(ctx.out()?)?;
            let report = risk::export_heatmap(&kept, format, &mut w).stage("heat-map export")?;
            w.flush().stage("writing the heat map")?;
            let report = serde_json::to_value(report).expect("report serializes");
            ctx.emit("heatmap", "exported", report.clone())?;
            print_json(&report);
        }
        Command::Plot {
            summary,
            beeswarm,
            shap: long,
            feature,
        } => {
            let svg_text = if let Some(p) = summary {
                let rows = shap::read_summary_csv(open(p)?).usage("reading the summary")?;
                let bars: Vec<(String, f64)> = rows.into_iter().map(|r| (r.feature, r.mean_abs_phi)).collect();
                svg::bar_chart("mean |SHAP value|", &bars)
            } else if let Some(p) = beeswarm {
                let points = shap::read_beeswarm_csv(open(p)?).usage("reading the beeswarm export")?;
                let groups: Vec<(String, Vec<(f64, f64)>)> = shap::beeswarm_groups(&points)
                    .into_iter()
                    .map(|(name, _, pts)| (name, pts))
                    .collect();
                svg::beeswarm("SHAP values", &groups)
            } else {
                let p = long.as_ref().expect("clap requires one source");
                let feature = feature.as_ref().expect("clap requires --feature with --shap");
                let records = shap::read_shap_csv(open(p)?).usage("reading the SHAP export")?;
                let mut pairs: Vec<(f64, f64)> = records
                    .iter()
                    .filter(|r| &r.feature == feature)
                    .map(|r| (r.feature_value, r.phi))
                    .collect();
                if pairs.is_empty() {
                    return Err(usage_error(format!("feature `{feature}` is not in the export")));
                }
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                svg::scatter(&format!("dependence on {feature}"), feature, "SHAP value", &pairs)
            };
            let mut w = create(ctx.out()?)?;
            w.write_all(svg_text.as_bytes()).stage("writing the plot")?;
            w.flush().stage("writing the plot")?;
        }
        Command::Generate {
            crashes,
            segments,
            segments_per_route,
            no_effects,
        } => {
            let mut config = match &cli.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).usage("reading the generator config")?;
                    toml::from_str::<GenConfig>(&text).usage("parsing the generator config")?
                }
                None if *no_effects => GenConfig::default(),
                None => GenConfig::default().with_default_effects(),
            };
            if *no_effects {
                config.effects.clear();
            }
            config.crashes = crashes.unwrap_or(config.crashes);
            config.segments = segments.unwrap_or(config.segments);
            config.segments_per_route = segments_per_route.unwrap_or(config.segments_per_route);
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            config.validate().usage("generator config")?;
            let out = ctx.out()?.to_path_buf();
            let data = syngen::generate(&config).stage("generation")?;
            data.write_to(&out).stage("writing generated data")?;
            let mut pipeline = PipelineConfig::for_generated();
            pipeline.seed = config.seed;
            std::fs::write(out.join("pipeline.toml"), pipeline.to_toml_string())
                .stage("writing pipeline.toml")?;
            let truth = serde_json::to_value(&data.truth).expect("truth serializes");
            ctx.emit("generate", "generated", json!({"crashes": config.crashes, "segments": config.segments}))?;
            print_json(&truth);
        }
        Command::Run => {
            if cli.config.is_none() {
                return Err(usage_error("run needs --config".into()));
            }
            let mut config = ctx.config.clone();
            config.seed = ctx.seed;
            if let Some(out) = &cli.out {
                config.out_dir = out.clone();
            }
            let report = run_pipeline(&config).map_err(|e| {
                if e.is_validation() {
                    Failure::Usage(e.into())
                } else {
                    Failure::Stage(e.into())
                }
            })?;
            let summary = json!({
                "out_dir": report.out_dir,
                "factors": report.factors,
                "stages": report.manifest.stages.len(),
            });
            ctx.emit("run", "completed", summary.clone())?;
            print_json(&summary);
        }
    }
    Ok(())
}

/// Segments from a frame file, optionally resolving missing features and
/// attaching sidecar coordinates.
fn load_segments(
    path: &Path,
    coords: Option<&Path>,
    begin: &str,
    end: &str,
    missing: Option<MissingPolicy>,
) -> Outcome<SegmentSet> {
    let mut frame = load_frame(path)?;
    if let Some(policy) = missing {
        frame = resolve_missing(&frame, policy).stage("segment missing values")?.0;
    }
    let mut set = SegmentSet::from_frame(&frame, begin, end).usage("reading segments")?;
    if let Some(c) = coords {
        let sidecar = load_coordinate_sidecar(c).usage("reading the coordinate sidecar")?;
        attach_coordinates(&mut set, &sidecar);
    }
    Ok(set)
}
