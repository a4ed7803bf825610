//! Shapley-value attributions for model predictions.
//!
//! Both explainers use the interventional value function: `v(S)` is the
//! mean model output over a background set when the features in `S` take
//! the explained row's values and the rest take the background row's.
//! [`exact_shap`] enumerates every subset and works for any [`Predictor`];
//! [`tree_shap`] computes the same quantity for forests by traversal.

mod exact;
mod tree;

pub use exact::{exact_shap, MAX_EXACT_FEATURES};

use std::cmp::Ordering;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::forest::{Node, RandomForest, Tree, Vote};
use crate::rng::{self, Purpose};

/// Background rows sampled by default.
pub const DEFAULT_BACKGROUND: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum ShapError {
    #[error(
        "exact enumeration over {features} features exceeds the limit of {limit}; use tree_shap"
    )]
    TooManyFeatures { features: usize, limit: usize },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("row has {found} values, model expects {expected}")]
    RowLength { expected: usize, found: usize },
    #[error("no rows to summarize")]
    NoRows,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("malformed SHAP export: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ShapError>;

/// A model mapping a feature row to a scalar output.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;
    fn predict(&self, row: &[f64]) -> f64;
}

impl Predictor for RandomForest {
    fn n_features(&self) -> usize {
        RandomForest::n_features(self)
    }

    fn predict(&self, row: &[f64]) -> f64 {
        self.predict_unchecked(row)
    }
}

/// Adapts a closure to [`Predictor`].
pub struct FnPredictor<F> {
    n_features: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnPredictor<F> {
    pub fn new(n_features: usize, f: F) -> Self {
        FnPredictor { n_features, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, row: &[f64]) -> f64 {
        (self.f)(row)
    }
}

/// Attributions of one row. `base + Σ phi` equals the model output.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapValues {
    pub base: f64,
    pub phi: Vec<f64>,
}

impl ShapValues {
    pub fn total(&self) -> f64 {
        self.base + self.phi.iter().sum::<f64>()
    }
}

pub(crate) fn check_inputs(p: usize, row: &[f64], background: &[Vec<f64>]) -> Result<()> {
    if background.is_empty() {
        return Err(ShapError::EmptyBackground);
    }
    for r in std::iter::once(row).chain(background.iter().map(Vec::as_slice)) {
        if r.len() != p {
            return Err(ShapError::RowLength {
                expected: p,
                found: r.len(),
            });
        }
    }
    Ok(())
}

fn leaf_value(vote: Vote) -> impl Fn(&Node) -> f64 {
    move |node: &Node| match vote {
        Vote::Soft => node.probability(),
        Vote::Hard => (node.probability() > 0.5) as u8 as f64,
    }
}

/// Interventional Shapley values of a single tree's leaf probability.
pub fn tree_shap_single(tree: &Tree, row: &[f64], background: &[Vec<f64>]) -> Result<ShapValues> {
    let p = row.len();
    check_inputs(p, row, background)?;
    let value = leaf_value(Vote::Soft);
    Ok(single(tree, row, background, &value))
}

fn single(tree: &Tree, row: &[f64], background: &[Vec<f64>], value: &dyn Fn(&Node) -> f64) -> ShapValues {
    let mut phi = vec![0.0; row.len()];
    let mut base = 0.0;
    for z in background {
        tree::accumulate_pair(tree, row, z, value, &mut phi);
        base += value(&tree.nodes[tree.leaf_index(z)]);
    }
    let n = background.len() as f64;
    ShapValues {
        base: base / n,
        phi: phi.into_iter().map(|v| v / n).collect(),
    }
}

/// Interventional Shapley values of a forest's confidence output: exact
/// per-tree values averaged over trees.
pub fn tree_shap(model: &RandomForest, row: &[f64], background: &[Vec<f64>]) -> Result<ShapValues> {
    check_inputs(model.n_features(), row, background)?;
    let value = leaf_value(model.config.vote);
    let p = row.len();
    let mut phi = vec![0.0; p];
    let mut base = 0.0;
    for t in &model.trees {
        let s = single(t, row, background, &value);
        base += s.base;
        for (acc, v) in phi.iter_mut().zip(s.phi) {
            *acc += v;
        }
    }
    let n = model.trees.len() as f64;
    Ok(ShapValues {
        base: base / n,
        phi: phi.into_iter().map(|v| v / n).collect(),
    })
}

fn sample_indices(n_rows: usize, n: usize, seed: u64, stream: u64) -> Vec<usize> {
    if n >= n_rows {
        return (0..n_rows).collect();
    }
    let mut rng = rng::stream(seed, Purpose::Background, stream);
    let mut idx = rand::seq::index::sample(&mut rng, n_rows, n).into_vec();
    idx.sort_unstable();
    idx
}

/// Samples up to `n` rows of `x` without replacement, in row order.
pub fn sample_background(x: &FeatureMatrix, n: usize, seed: u64) -> Vec<Vec<f64>> {
    sample_indices(x.n_rows, n, seed, 0)
        .into_iter()
        .map(|i| x.row(i))
        .collect()
}

/// Indices of up to `n` rows to explain, ascending. Drawn from a different
/// stream than the background.
pub fn sample_rows(n_rows: usize, n: usize, seed: u64) -> Vec<usize> {
    sample_indices(n_rows, n, seed, 1)
}

/// Attributions for a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapMatrix {
    pub feature_names: Vec<String>,
    pub row_ids: Vec<usize>,
    /// Explained feature values, one vector per row.
    pub values: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub base: f64,
}

/// Tree SHAP for every row of `x` (rows in parallel). `row_ids` label the
/// rows in exports.
pub fn explain(
    model: &RandomForest,
    x: &FeatureMatrix,
    row_ids: &[usize],
    background: &[Vec<f64>],
) -> Result<ShapMatrix> {
    if row_ids.len() != x.n_rows {
        return Err(ShapError::Format("row id count differs from row count".into()));
    }
    let values = x.rows();
    let explained: Vec<ShapValues> = values
        .par_iter()
        .map(|row| tree_shap(model, row, background))
        .collect::<Result<_>>()?;
    let base = match explained.first() {
        Some(s) => s.base,
        None => {
            check_inputs(model.n_features(), &vec![0.0; model.n_features()], background)?;
            background.iter().map(|z| model.predict_unchecked(z)).sum::<f64>() / background.len() as f64
        }
    };
    Ok(ShapMatrix {
        feature_names: model.feature_names.clone(),
        row_ids: row_ids.to_vec(),
        values,
        phi: explained.into_iter().map(|s| s.phi).collect(),
        base,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_phi: f64,
    pub rank: usize,
}

/// Mean |φ| per feature, the ranking, and the scatter pairs behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapSummary {
    /// Sorted by rank (1 = most important).
    pub importance: Vec<FeatureImportance>,
    /// `(feature value, φ)` per feature, in row order.
    pub pairs: Vec<(String, Vec<(f64, f64)>)>,
}

impl ShapSummary {
    pub fn ranking(&self) -> Vec<&str> {
        self.importance.iter().map(|f| f.feature.as_str()).collect()
    }

    pub fn importance_of(&self, feature: &str) -> Option<&FeatureImportance> {
        self.importance.iter().find(|f| f.feature == feature)
    }
}

/// Ranks features by descending mean |φ|; ties by name.
pub fn summarize(matrix: &ShapMatrix) -> Result<ShapSummary> {
    let n = matrix.phi.len();
    if n == 0 {
        return Err(ShapError::NoRows);
    }
    let mut importance: Vec<FeatureImportance> = matrix
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| FeatureImportance {
            feature: name.clone(),
            mean_abs_phi: matrix.phi.iter().map(|r| r[j].abs()).sum::<f64>() / n as f64,
            rank: 0,
        })
        .collect();
    importance.sort_by(|a, b| {
        b.mean_abs_phi
            .total_cmp(&a.mean_abs_phi)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    for (i, f) in importance.iter_mut().enumerate() {
        f.rank = i + 1;
    }
    let pairs = matrix
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let pts = (0..n).map(|r| (matrix.values[r][j], matrix.phi[r][j])).collect();
            (name.clone(), pts)
        })
        .collect();
    Ok(ShapSummary { importance, pairs })
}

/// `(value, φ)` pairs of one feature sorted by value (stable).
pub fn dependence_slice(summary: &ShapSummary, feature: &str) -> Result<Vec<(f64, f64)>> {
    let (_, pairs) = summary
        .pairs
        .iter()
        .find(|(n, _)| n == feature)
        .ok_or_else(|| ShapError::UnknownFeature(feature.to_string()))?;
    let mut out = pairs.clone();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Long-format CSV: `row_id,feature,feature_value,phi`.
pub fn write_shap_csv<W: Write>(matrix: &ShapMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row_id", "feature", "feature_value", "phi"])?;
    for (r, id) in matrix.row_ids.iter().enumerate() {
        for (j, name) in matrix.feature_names.iter().enumerate() {
            w.write_record([
                id.to_string(),
                name.clone(),
                matrix.values[r][j].to_string(),
                matrix.phi[r][j].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One line of the long-format export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapRecord {
    pub row_id: usize,
    pub feature: String,
    pub feature_value: f64,
    pub phi: f64,
}

pub fn read_shap_csv<R: Read>(input: R) -> Result<Vec<ShapRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<std::result::Result<Vec<ShapRecord>, _>>()?;
    Ok(rows)
}

/// `feature,mean_abs_phi,rank`, one line per feature in rank order.
pub fn write_summary_csv<W: Write>(summary: &ShapSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for f in &summary.importance {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<FeatureImportance>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<std::result::Result<Vec<FeatureImportance>, _>>()?;
    Ok(rows)
}

/// One point of a beeswarm plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeeswarmPoint {
    pub feature: String,
    pub rank: usize,
    pub feature_value: f64,
    pub phi: f64,
}

/// `feature,rank,feature_value,phi`, features in rank order and rows in
/// input order within a feature.
pub fn write_beeswarm_csv<W: Write>(summary: &ShapSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for f in &summary.importance {
        let (_, pairs) = summary
            .pairs
            .iter()
            .find(|(n, _)| *n == f.feature)
            .expect("every ranked feature has pairs");
        for &(feature_value, phi) in pairs {
            w.serialize(BeeswarmPoint {
                feature: f.feature.clone(),
                rank: f.rank,
                feature_value,
                phi,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_beeswarm_csv<R: Read>(input: R) -> Result<Vec<BeeswarmPoint>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<std::result::Result<Vec<BeeswarmPoint>, _>>()?;
    Ok(rows)
}

/// Groups beeswarm points back into per-feature pairs, in rank order.
pub fn beeswarm_groups(points: &[BeeswarmPoint]) -> Vec<(String, usize, Vec<(f64, f64)>)> {
    let mut groups: Vec<(String, usize, Vec<(f64, f64)>)> = Vec::new();
    for p in points {
        match groups.iter_mut().find(|(n, _, _)| *n == p.feature) {
            Some(g) => g.2.push((p.feature_value, p.phi)),
            None => groups.push((p.feature.clone(), p.rank, vec![(p.feature_value, p.phi)])),
        }
    }
    groups.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    groups
}

/// Largest componentwise absolute difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .max_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal))
        .unwrap_or(0.0)
}
