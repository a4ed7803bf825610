//! Independent reference implementations used by the oracle, property and
//! acceptance tests. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadfirst::dataset::{ColumnData, ColumnRole, ColumnSpec, FeatureClass, Frame, Schema};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting. Returns
/// `None` when a pivot vanishes.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// VIF of column `j` by the normal equations of an intercept model on the
/// other columns. `None` when the regressors are singular.
pub fn vif_normal_equations(columns: &[Vec<f64>], j: usize) -> Option<f64> {
    let n = columns[j].len();
    let mut design: Vec<Vec<f64>> = vec![vec![1.0; n]];
    design.extend(columns.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, c)| c.clone()));
    let y = &columns[j];
    let p = design.len();
    let xtx: Vec<Vec<f64>> = (0..p)
        .map(|a| (0..p).map(|b| dot(&design[a], &design[b])).collect())
        .collect();
    let xty: Vec<f64> = (0..p).map(|a| dot(&design[a], y)).collect();
    let beta = solve(xtx, xty)?;
    let mean = y.iter().sum::<f64>() / n as f64;
    let mut rss = 0.0;
    let mut tss = 0.0;
    for r in 0..n {
        let fit: f64 = (0..p).map(|a| beta[a] * design[a][r]).sum();
        rss += (y[r] - fit).powi(2);
        tss += (y[r] - mean).powi(2);
    }
    Some(1.0 / (rss / tss))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-pass Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

pub fn relative_error(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs().max(1e-300)
}

/// A frame of continuous feature columns named `x0, x1, ...`.
pub fn continuous_frame(columns: Vec<Vec<f64>>) -> Frame {
    let names: Vec<String> = (0..columns.len()).map(|i| format!("x{i}")).collect();
    named_frame(&names, columns)
}

pub fn named_frame<S: AsRef<str>>(names: &[S], columns: Vec<Vec<f64>>) -> Frame {
    let schema = Schema::new(
        names
            .iter()
            .map(|n| ColumnSpec::new(n.as_ref(), ColumnRole::Continuous))
            .collect(),
    )
    .unwrap();
    Frame::new(
        schema,
        columns
            .into_iter()
            .map(|c| ColumnData::Numeric(c.into_iter().map(Some).collect()))
            .collect(),
    )
    .unwrap()
}

/// Continuous features plus a binary target `y`.
pub fn labelled_frame(columns: Vec<Vec<f64>>, labels: &[u8]) -> Frame {
    let mut specs: Vec<ColumnSpec> = (0..columns.len())
        .map(|i| ColumnSpec::new(format!("x{i}"), ColumnRole::Continuous).with_class(FeatureClass::StaticRoad))
        .collect();
    specs.push(ColumnSpec::new("y", ColumnRole::Target));
    let mut data: Vec<ColumnData> = columns
        .into_iter()
        .map(|c| ColumnData::Numeric(c.into_iter().map(Some).collect()))
        .collect();
    data.push(ColumnData::Numeric(labels.iter().map(|&v| Some(v as f64)).collect()));
    Frame::new(Schema::new(specs).unwrap(), data).unwrap()
}

pub fn normal_columns(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..cols)
        .map(|_| (0..rows).map(|_| gaussian(rng)).collect())
        .collect()
}

/// Standard normal draw by Box-Muller.
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Forest output computed by walking the serialized JSON node arrays.
pub fn traverse_json(model: &serde_json::Value, row: &[f64]) -> f64 {
    let trees = model["trees"].as_array().unwrap();
    let hard = model["config"]["vote"] == "hard";
    let mut sum = 0.0;
    for tree in trees {
        let nodes = tree["nodes"].as_array().unwrap();
        let mut i = 0usize;
        loop {
            let node = &nodes[i];
            let feature = node["feature"].as_i64().unwrap();
            if feature < 0 {
                let c0 = node["counts"][0].as_f64().unwrap();
                let c1 = node["counts"][1].as_f64().unwrap();
                let p = if c0 + c1 > 0.0 { c1 / (c0 + c1) } else { 0.0 };
                sum += if hard { (p > 0.5) as u8 as f64 } else { p };
                break;
            }
            let threshold = node["threshold"].as_f64().unwrap();
            let next = if row[feature as usize] < threshold { "left" } else { "right" };
            i = node[next].as_i64().unwrap() as usize;
        }
    }
    sum / trees.len() as f64
}

/// Interventional Shapley values by the subset formula, with the value
/// function built from `predict` over hybrid rows.
pub fn shapley_oracle(
    predict: &dyn Fn(&[f64]) -> f64,
    row: &[f64],
    background: &[Vec<f64>],
) -> (f64, Vec<f64>) {
    let p = row.len();
    let masks = 1usize << p;
    let value: Vec<f64> = (0..masks)
        .map(|mask| {
            background
                .iter()
                .map(|z| {
                    let hybrid: Vec<f64> = (0..p)
                        .map(|j| if mask & (1 << j) != 0 { row[j] } else { z[j] })
                        .collect();
                    predict(&hybrid)
                })
                .sum::<f64>()
                / background.len() as f64
        })
        .collect();
    let factorial = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let mut phi = vec![0.0; p];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        for mask in 0..masks {
            if mask & (1 << i) != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = factorial(s) * factorial(p - s - 1) / factorial(p);
            *phi_i += w * (value[mask | (1 << i)] - value[mask]);
        }
    }
    (value[0], phi)
}
