use std::path::Path;
use std::process::{Command, Output};

use roadfirst::collinearity::ReductionLog;
use roadfirst::dataset::{write_csv_file, ColumnData, ColumnRole, ColumnSpec, FeatureClass, Frame, Schema};
use roadfirst::pipeline::{RunManifest, RunStatus};

fn roadfirst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadfirst"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = roadfirst(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_frame(frame: &Frame, path: &Path) {
    write_csv_file(frame, path).unwrap();
    frame
        .schema()
        .save(roadfirst::pipeline::schema_path_for(path))
        .unwrap();
}

fn generate(dir: &Path) {
    ok(&[
        "generate", "--crashes", "2000", "--segments", "80", "--segments-per-route", "10", "--seed", "11",
        "--out", s(dir),
    ]);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = roadfirst(&["vif", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(roadfirst(&[]).status.code(), Some(1));
    assert_eq!(roadfirst(&["--help"]).status.code(), Some(0));
}

#[test]
fn vif_removes_a_duplicate_and_writes_its_log() {
    let dir = tempfile::tempdir().unwrap();
    let n = 50;
    let a: Vec<Option<f64>> = (0..n).map(|i| Some((i as f64 * 0.37).sin())).collect();
    let b: Vec<Option<f64>> = (0..n).map(|i| Some((i as f64 * 1.3).cos())).collect();
    let schema = Schema::new(vec![
        ColumnSpec::new("a", ColumnRole::Continuous),
        ColumnSpec::new("b", ColumnRole::Continuous),
        ColumnSpec::new("a_copy", ColumnRole::Continuous),
    ])
    .unwrap();
    let frame = Frame::new(
        schema,
        vec![ColumnData::Numeric(a.clone()), ColumnData::Numeric(b), ColumnData::Numeric(a)],
    )
    .unwrap();
    let input = dir.path().join("x.csv");
    write_frame(&frame, &input);
    let out = dir.path().join("reduced.csv");
    ok(&["vif", "--threshold", "10", "--input", s(&input), "--out", s(&out)]);

    let log: ReductionLog =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("reduced.reduction_log.json")).unwrap()).unwrap();
    assert_eq!(log.removed(), vec!["a_copy"]);
    let header = std::fs::read_to_string(&out).unwrap();
    assert_eq!(header.lines().next(), Some("a,b"));

    let bad = roadfirst(&["vif", "--threshold", "0.5", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn road_feature_training_drops_dynamic_columns() {
    let dir = tempfile::tempdir().unwrap();
    let n = 120;
    let road: Vec<Option<f64>> = (0..n).map(|i| Some((i % 2) as f64)).collect();
    let hour: Vec<Option<f64>> = (0..n).map(|i| Some((i % 24) as f64)).collect();
    let y: Vec<Option<f64>> = (0..n).map(|i| Some((i % 2) as f64)).collect();
    let other: Vec<Option<f64>> = (0..n).map(|i| Some((i % 3 == 0) as u8 as f64)).collect();
    let ids: Vec<Option<String>> = (0..n).map(|i| Some(format!("c{i}"))).collect();
    let schema = Schema::new(vec![
        ColumnSpec::new("crash_id", ColumnRole::Identifier),
        ColumnSpec::new("curve", ColumnRole::Binary).with_class(FeatureClass::StaticRoad),
        ColumnSpec::new("hour", ColumnRole::Continuous),
        ColumnSpec::new("alcohol", ColumnRole::Target),
        ColumnSpec::new("speeding", ColumnRole::Target),
    ])
    .unwrap();
    let frame = Frame::new(
        schema,
        vec![
            ColumnData::Text(ids),
            ColumnData::Numeric(road),
            ColumnData::Numeric(hour),
            ColumnData::Numeric(y),
            ColumnData::Numeric(other),
        ],
    )
    .unwrap();
    let input = dir.path().join("train.csv");
    write_frame(&frame, &input);
    let model = dir.path().join("road.json");
    let log = dir.path().join("log.jsonl");
    ok(&[
        "train", "--flavor", "road_feature", "--target", "alcohol", "--trees", "3", "--input", s(&input),
        "--out", s(&model), "--log", s(&log),
    ]);
    let events: Vec<serde_json::Value> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let drops = events.iter().find(|e| e["event"] == "dropped_columns").unwrap();
    let dropped: Vec<(&str, &str)> = drops["columns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| (d["column"].as_str().unwrap(), d["reason"].as_str().unwrap()))
        .collect();
    assert_eq!(
        dropped,
        vec![("crash_id", "identifier"), ("hour", "dynamic"), ("speeding", "non_target_factor")]
    );
    let model: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(model["feature_names"], serde_json::json!(["curve"]));
}

#[test]
fn subcommands_chain_from_generated_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d);
    let p = |name: &str| d.join(name);
    ok(&["ingest", "--data", s(&p("crash.csv")), "--out", s(&p("crash_copy.csv"))]);
    assert_eq!(
        std::fs::read(p("crash.csv")).unwrap(),
        std::fs::read(p("crash_copy.csv")).unwrap()
    );
    ok(&[
        "join", "--crash", s(&p("crash.csv")), "--unit", s(&p("unit.csv")), "--person", s(&p("person.csv")),
        "--out", s(&p("joined.csv")),
    ]);
    ok(&[
        "map", "--input", s(&p("joined.csv")), "--segments", s(&p("segments.csv")), "--coords",
        s(&p("coords.csv")), "--out", s(&p("mapped.csv")),
    ]);
    ok(&["clean", "--input", s(&p("mapped.csv")), "--out", s(&p("clean.csv"))]);
    ok(&["encode", "--input", s(&p("clean.csv")), "--out", s(&p("encoded.csv"))]);
    ok(&["vif", "--input", s(&p("encoded.csv")), "--out", s(&p("reduced.csv"))]);
    ok(&["split", "--target", "alcohol", "--input", s(&p("reduced.csv")), "--out", s(&p("alcohol"))]);
    ok(&[
        "balance", "--target", "alcohol", "--input", s(&p("alcohol/train.csv")), "--out",
        s(&p("alcohol/balanced.csv")),
    ]);
    for flavor in ["combined_feature", "road_feature"] {
        ok(&[
            "train", "--target", "alcohol", "--flavor", flavor, "--trees", "5", "--input",
            s(&p("alcohol/balanced.csv")), "--test", s(&p("alcohol/test.csv")), "--out",
            s(&p(&format!("alcohol/{flavor}.json"))),
        ]);
    }

    let refused = roadfirst(&[
        "explain", "--exact", "--model", s(&p("alcohol/combined_feature.json")), "--input",
        s(&p("alcohol/test.csv")), "--out", s(&p("alcohol/shap")),
    ]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("tree explainer"));

    ok(&[
        "explain", "--model", s(&p("alcohol/combined_feature.json")), "--input", s(&p("alcohol/test.csv")),
        "--background", s(&p("alcohol/balanced.csv")), "--background-rows", "16", "--rows", "20", "--out",
        s(&p("alcohol/shap")),
    ]);
    for name in ["shap.csv", "shap_summary.csv", "shap_beeswarm.csv"] {
        assert!(p("alcohol/shap").join(name).is_file());
    }

    // The combined model includes crash-time features, so it cannot score segments.
    let wrong = roadfirst(&[
        "score", "--model", s(&p("alcohol/combined_feature.json")), "--segments", s(&p("segments.csv")),
        "--out", s(&p("alcohol/scores.csv")),
    ]);
    assert_eq!(wrong.status.code(), Some(2));
    ok(&[
        "score", "--model", s(&p("alcohol/road_feature.json")), "--segments", s(&p("segments.csv")), "--coords",
        s(&p("coords.csv")), "--out", s(&p("alcohol/scores.csv")),
    ]);
    for format in ["csv", "geojson"] {
        ok(&[
            "heatmap", "--scores", s(&p("alcohol/scores.csv")), "--format", format, "--out",
            s(&p(&format!("alcohol/heatmap.{format}"))),
        ]);
    }
    let shap = p("alcohol/shap");
    ok(&["plot", "--summary", s(&shap.join("shap_summary.csv")), "--out", s(&shap.join("summary.svg"))]);
    ok(&["plot", "--beeswarm", s(&shap.join("shap_beeswarm.csv")), "--out", s(&shap.join("beeswarm.svg"))]);
    ok(&["plot", "--shap", s(&shap.join("shap.csv")), "--feature", "hour", "--out", s(&shap.join("hour.svg"))]);
    assert!(std::fs::read_to_string(shap.join("hour.svg")).unwrap().starts_with("<svg"));
    let no_feature = roadfirst(&["plot", "--shap", s(&shap.join("shap.csv")), "--out", s(&shap.join("x.svg"))]);
    assert_eq!(no_feature.status.code(), Some(1));
}

#[test]
fn run_executes_the_pipeline_and_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d);
    let config = d.join("pipeline.toml");
    let text = std::fs::read_to_string(&config).unwrap();
    let small = text
        .replace("factors = []", "factors = [\"speeding\"]")
        .replace("n_trees = 100", "n_trees = 4")
        .replace("explain_rows = 500", "explain_rows = 20");
    assert_ne!(small, text);
    std::fs::write(&config, &small).unwrap();

    ok(&["run", "--config", s(&config), "--threads", "2"]);
    let manifest = RunManifest::load(d.join("run/manifest.json")).unwrap();
    assert_eq!(manifest.status, RunStatus::Complete);
    manifest.validate_chain().unwrap();
    assert!(d.join("run/speeding/heatmap.geojson").is_file());

    // A missing input fails validation before anything is written.
    let broken = small.replace("unit = \"unit.csv\"", "unit = \"missing.csv\"");
    std::fs::write(&config, &broken).unwrap();
    let out = roadfirst(&["run", "--config", s(&config), "--out", s(&d.join("never"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("never").exists());

    // A failing stage exits with 2 and leaves a manifest of completed stages.
    let failing = small.replace("join_keys = [\"crash_id\"]", "join_keys = [\"crash_id\", \"hour\"]");
    assert_ne!(failing, small);
    std::fs::write(&config, &failing).unwrap();
    let out = roadfirst(&["run", "--config", s(&config), "--out", s(&d.join("failed"))]);
    assert_eq!(out.status.code(), Some(2));
    let manifest = RunManifest::load(d.join("failed/manifest.json")).unwrap();
    assert_eq!(manifest.status, RunStatus::Failed);
    assert_eq!(manifest.failed_stage.as_deref(), Some("join"));
}
