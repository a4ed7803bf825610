//! Library results checked against independent reference computations.

mod common;

use common::*;
use rand::Rng;
use roadfirst::collinearity::{correlation_matrix, vif_report};
use roadfirst::dataset::{ColumnData, ColumnRole, ColumnSpec, Frame, Schema};
use roadfirst::forest::{fit_forest, fit_tree, gini, Flavor, RandomForest, TrainConfig, Vote};
use roadfirst::resample::{
    mixed_distance, smote_nc, train_test_split, BalanceConfig, CategoricalFeature, MixedDistanceContext,
    MixedRow,
};
use roadfirst::shap::{exact_shap, tree_shap, FnPredictor};
use roadfirst::syngen::{generate, GenConfig, PlantedEffect};

#[test]
fn vif_matches_normal_equations_on_a_derived_column() {
    let mut r = rng(1);
    let mut cols = normal_columns(&mut r, 200, 3);
    let noise: Vec<f64> = (0..200).map(|_| 0.1 * gaussian(&mut r)).collect();
    let derived: Vec<f64> = (0..200).map(|i| cols[0][i] + cols[1][i] + noise[i]).collect();
    cols.push(derived);
    let report = vif_report(&continuous_frame(cols.clone())).unwrap();
    for j in 0..4 {
        let expected = vif_normal_equations(&cols, j).unwrap();
        let got = report.columns[j].vif;
        assert!(relative_error(got, expected) < 1e-6, "x{j}: {got} vs {expected}");
    }
    // x0, x1 and x3 are entangled; x2 is not.
    assert!(report.columns[3].vif > 50.0);
    assert!(report.columns[2].vif < 1.2);
}

#[test]
fn vif_matches_normal_equations_on_correlated_frames() {
    let mut r = rng(2);
    for _ in 0..10 {
        let base = normal_columns(&mut r, 120, 5);
        // Mix the columns so they share variance.
        let cols: Vec<Vec<f64>> = (0..5)
            .map(|j| {
                let w: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
                (0..120)
                    .map(|i| base[j][i] + (0..5).map(|k| w[k] * base[k][i]).sum::<f64>())
                    .collect()
            })
            .collect();
        let report = vif_report(&continuous_frame(cols.clone())).unwrap();
        for j in 0..5 {
            let expected = vif_normal_equations(&cols, j).unwrap();
            assert!(relative_error(report.columns[j].vif, expected) < 1e-6);
        }
    }
}

#[test]
fn correlation_matches_two_pass_pearson() {
    let mut r = rng(3);
    let mut cols = normal_columns(&mut r, 100, 3);
    cols[2] = (0..100).map(|i| 2.0 * cols[0][i] - cols[1][i] + 1e3).collect();
    let corr = correlation_matrix(&continuous_frame(cols.clone())).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let expected = if i == j { 1.0 } else { pearson(&cols[i], &cols[j]) };
            assert!((corr.get(i, j) - expected).abs() < 1e-12, "({i},{j})");
        }
    }
}

#[test]
fn mixed_distance_hand_value() {
    // One continuous feature with standard deviation 2 and one categorical
    // mismatch with med 1.5: sqrt((3/2)² + 1.5²) = sqrt(2 · 1.5²).
    let ctx = MixedDistanceContext {
        continuous: vec!["x".into()],
        categorical: vec![CategoricalFeature::Binary("b".into())],
        scale: vec![2.0],
        med: 1.5,
    };
    let a = MixedRow {
        continuous: vec![1.0],
        categorical: vec![0],
    };
    let b = MixedRow {
        continuous: vec![4.0],
        categorical: vec![1],
    };
    let d = mixed_distance(&a, &b, &ctx);
    assert!((d - (2.0f64 * 1.5 * 1.5).sqrt()).abs() < 1e-12);
    assert!((d - 2.1213).abs() < 1e-4);

    // Equal continuous values, two categorical mismatches.
    let ctx = MixedDistanceContext {
        categorical: vec![
            CategoricalFeature::Binary("b".into()),
            CategoricalFeature::Coded("c".into()),
        ],
        ..ctx
    };
    let a = MixedRow {
        continuous: vec![4.0],
        categorical: vec![0, 2],
    };
    let b = MixedRow {
        continuous: vec![4.0],
        categorical: vec![1, 0],
    };
    assert!((mixed_distance(&a, &b, &ctx) - d).abs() < 1e-12);
}

#[test]
fn smote_with_one_neighbor_stays_on_the_segment() {
    let x = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 20.0];
    let z = vec![9.0, 8.0, 7.0, 6.0, 5.0, 4.0, -1.0, 3.0];
    let labels = [0, 0, 0, 0, 0, 0, 1, 1];
    let frame = labelled_frame(vec![x, z], &labels);
    let config = BalanceConfig {
        k: 1,
        seed: 7,
        ..BalanceConfig::default()
    };
    let out = smote_nc(&frame, "y", &config).unwrap();
    assert_eq!(out.n_rows(), 12);
    let flags = out.synthetic_flags();
    let x = out.numeric("x0").unwrap();
    let z = out.numeric("x1").unwrap();
    for r in (0..out.n_rows()).filter(|&r| flags[r]) {
        let (xr, zr) = (x[r].unwrap(), z[r].unwrap());
        let t = (xr - 10.0) / 10.0;
        assert!((0.0..=1.0).contains(&t));
        assert!((zr - (-1.0 + 4.0 * t)).abs() < 1e-9, "row {r} leaves the segment");
    }
}

#[test]
fn stratified_split_counts() {
    let labels: Vec<u8> = (0..1000).map(|i| (i % 5 == 0) as u8).collect();
    let x: Vec<f64> = (0..1000).map(|i| i as f64).collect();
    let frame = labelled_frame(vec![x], &labels);
    let (train, test) = train_test_split(&frame, 0.8, "y", 4).unwrap();
    let positives = |f: &Frame| f.labels("y").unwrap().iter().filter(|&&y| y == 1).count();
    assert_eq!(train.n_rows(), 800);
    assert_eq!(positives(&train), 160);
    assert_eq!(test.n_rows(), 200);
    assert_eq!(positives(&test), 40);
}

#[test]
fn gini_hand_value() {
    assert!((gini(&[2, 6]).unwrap() - (1.0 - (0.25f64.powi(2) + 0.75f64.powi(2)))).abs() < 1e-15);
}

#[test]
fn one_dimensional_split_enumeration() {
    let frame = labelled_frame(vec![vec![1.0, 2.0, 4.0, 5.0]], &[0, 0, 1, 1]);
    let config = TrainConfig {
        min_samples_leaf: 1,
        ..TrainConfig::default()
    };
    let tree = fit_tree(&frame, "y", &config, 0).unwrap();
    // Candidates 1.5, 3 and 4.5; only 3 gives pure children.
    assert_eq!(tree.depth(), 1);
    assert_eq!(tree.nodes[0].threshold, 3.0);
}

fn random_forest(seed: u64, features: usize, trees: usize, vote: Vote) -> (RandomForest, Vec<Vec<f64>>) {
    let mut r = rng(seed);
    let n = 300;
    let cols = normal_columns(&mut r, n, features);
    let labels: Vec<u8> = (0..n)
        .map(|i| {
            let s = cols[0][i] + 0.5 * cols[1 % features][i] + 0.5 * gaussian(&mut r);
            (s > 0.0) as u8
        })
        .collect();
    let frame = labelled_frame(cols.clone(), &labels);
    let config = TrainConfig {
        n_trees: trees,
        max_depth: Some(4),
        vote,
        seed,
        ..TrainConfig::default()
    };
    let model = fit_forest(&frame, "y", &config, Flavor::CombinedFeature).unwrap();
    let rows = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    (model, rows)
}

#[test]
fn predictions_match_a_walk_over_the_serialized_nodes() {
    for vote in [Vote::Soft, Vote::Hard] {
        let (model, rows) = random_forest(5, 4, 3, vote);
        let json: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
        for row in &rows {
            assert_eq!(model.predict_row(row).unwrap(), traverse_json(&json, row));
        }
    }
}

#[test]
fn stump_attribution_by_hand() {
    // a if x0 >= 0.5 else b; three of four background rows are >= 0.5.
    let (a, b) = (0.9, 0.2);
    let model = FnPredictor::new(3, move |x: &[f64]| if x[0] >= 0.5 { a } else { b });
    let background = vec![
        vec![1.0, 0.0, 3.0],
        vec![0.7, 1.0, 2.0],
        vec![0.6, 5.0, 1.0],
        vec![0.1, 2.0, 0.0],
    ];
    let s = exact_shap(&model, &[0.8, 9.0, 9.0], &background).unwrap();
    let p = 0.75;
    assert!((s.phi[0] - (a - (p * a + (1.0 - p) * b))).abs() < 1e-12);
    assert_eq!(&s.phi[1..], &[0.0, 0.0]);
}

#[test]
fn shap_agrees_with_the_subset_formula() {
    for (seed, vote) in [(11, Vote::Soft), (12, Vote::Hard)] {
        let (model, rows) = random_forest(seed, 6, 5, vote);
        let background: Vec<Vec<f64>> = rows.iter().step_by(37).cloned().collect();
        let predict = |x: &[f64]| model.predict_row(x).unwrap();
        for row in rows.iter().take(10) {
            let (base, phi) = shapley_oracle(&predict, row, &background);
            let tree = tree_shap(&model, row, &background).unwrap();
            let exact = exact_shap(&model, row, &background).unwrap();
            assert!((tree.base - base).abs() < 1e-12);
            for j in 0..6 {
                assert!((tree.phi[j] - phi[j]).abs() < 1e-9, "tree φ{j}");
                assert!((exact.phi[j] - phi[j]).abs() < 1e-9, "exact φ{j}");
            }
        }
    }
}

#[test]
fn constant_predictor_metrics() {
    let labels: Vec<u8> = (0..100).map(|i| (i < 30) as u8).collect();
    let frame = labelled_frame(vec![vec![1.0; 100]], &labels);
    // A forest that can only learn the base rate predicts 0.3 everywhere.
    let model = fit_forest(
        &frame,
        "y",
        &TrainConfig {
            n_trees: 1,
            ..TrainConfig::default()
        },
        Flavor::CombinedFeature,
    )
    .unwrap();
    let m = model.evaluate(&frame, "y").unwrap();
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (0, 0, 70, 30));
    assert!((m.accuracy - 0.7).abs() < 1e-12);
    assert_eq!(m.recall, 0.0);
}

fn factor_rate(frame: &Frame, factor: &str, rows: impl Iterator<Item = usize>) -> f64 {
    let y = frame.numeric(factor).unwrap();
    let (mut n, mut pos) = (0, 0.0);
    for r in rows {
        n += 1;
        pos += y[r].unwrap();
    }
    pos / n as f64
}

#[test]
fn generator_base_rate_without_effects() {
    let data = generate(&GenConfig {
        crashes: 50_000,
        segments: 500,
        seed: 21,
        ..GenConfig::default()
    })
    .unwrap();
    let n = data.crash.n_rows();
    for (factor, rate) in &data.truth.base_rates {
        let empirical = factor_rate(&data.crash, factor, 0..n);
        assert!((empirical - rate).abs() <= 0.02, "{factor}: {empirical} vs {rate}");
    }
}

#[test]
fn generator_hour_window_raises_the_rate() {
    let mut config = GenConfig {
        crashes: 50_000,
        segments: 500,
        seed: 22,
        ..GenConfig::default()
    };
    config.effects = vec![PlantedEffect::window("alcohol", "hour", 23.0, 4.0, 6.0)];
    let data = generate(&config).unwrap();
    let hour = data.crash.numeric("hour").unwrap();
    let inside = |r: &usize| {
        let h = hour[*r].unwrap();
        h >= 23.0 || h < 4.0
    };
    let n = data.crash.n_rows();
    let rate_in = factor_rate(&data.crash, "alcohol", (0..n).filter(inside));
    let rate_out = factor_rate(&data.crash, "alcohol", (0..n).filter(|r| !inside(r)));
    // Base odds 0.06/0.94 times 6 gives an inside rate near 0.277, 4.6 times the outside rate.
    assert!(rate_in >= 3.0 * rate_out, "{rate_in} vs {rate_out}");
}

#[test]
fn one_hot_dummies_from_a_categorical_column() {
    let schema = Schema::new(vec![ColumnSpec::new("w", ColumnRole::Categorical).with_levels(["a", "b", "c"])]).unwrap();
    let frame = Frame::new(schema, vec![ColumnData::Categorical(vec![Some(2), Some(0), None])]).unwrap();
    let encoded = roadfirst::dataset::encode_dummies(&frame).unwrap();
    assert_eq!(encoded.names(), vec!["w=a", "w=b", "w=c"]);
    assert_eq!(encoded.numeric("w=c").unwrap(), &[Some(1.0), Some(0.0), None]);
}
