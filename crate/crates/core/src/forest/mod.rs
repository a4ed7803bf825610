//! Bagged random forests of CART trees.
//!
//! Each tree is grown on its own bootstrap sample with a random stream
//! keyed by `(seed, tree index)`, so models are bit-identical whatever the
//! thread count. Probabilities are the mean leaf probability over trees
//! (soft vote) unless hard voting is configured.

mod tree;

pub use tree::{gini, Node, Tree};

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, FeatureClass, FeatureMatrix, Frame};
use crate::fingerprint;
use crate::rng::{self, Purpose};
use tree::GrowParams;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ForestError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("gini impurity of an empty node is undefined")]
    EmptyNode,
    #[error("training data is empty")]
    EmptyTraining,
    #[error("training target `{0}` has a single class")]
    SingleClass(String),
    #[error("road-feature model cannot use dynamic feature `{0}`")]
    Flavor(String),
    #[error("input is missing model feature `{0}`")]
    MissingFeature(String),
    #[error("row has {found} values, model expects {expected}")]
    RowLength { expected: usize, found: usize },
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ForestError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    /// Mean leaf probability.
    #[default]
    Soft,
    /// Fraction of trees whose leaf probability exceeds 0.5.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features sampled per split; `None` means `⌈√p⌉`.
    pub max_features: Option<usize>,
    pub vote: Vote,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 5,
            max_features: None,
            vote: Vote::Soft,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn features_per_split(&self, p: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .max(1)
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(ForestError::Config("tree count must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::Config("min samples per leaf must be at least 1".into()));
        }
        let m = self.features_per_split(p);
        if m > p {
            return Err(ForestError::Config(format!(
                "features per split {m} exceeds feature count {p}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    /// Trained on road and crash-context features.
    CombinedFeature,
    /// Trained on static road features only; used to score segments.
    RoadFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub format_version: u32,
    pub flavor: Flavor,
    pub target: String,
    pub feature_names: Vec<String>,
    pub feature_classes: Vec<FeatureClass>,
    pub config: TrainConfig,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub trees: Vec<Tree>,
}

/// Bootstrap sample of size `n` drawn with replacement.
pub fn bootstrap<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Grows one tree on all rows of `train` without bootstrapping.
pub fn fit_tree(train: &Frame, target: &str, config: &TrainConfig, tree_index: u64) -> Result<Tree> {
    let x = train.feature_matrix()?;
    let y = train.labels(target)?;
    if y.is_empty() {
        return Err(ForestError::EmptyTraining);
    }
    config.validate(x.n_features())?;
    let params = grow_params(config, x.n_features());
    let mut rng = rng::stream(config.seed, Purpose::Tree, tree_index);
    Ok(Tree::grow(&x.columns, &y, (0..y.len()).collect(), &params, &mut rng))
}

fn grow_params(config: &TrainConfig, p: usize) -> GrowParams {
    GrowParams {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        max_features: config.features_per_split(p),
    }
}

fn check_flavor(flavor: Flavor, names: &[String], classes: &[FeatureClass]) -> Result<()> {
    if flavor == Flavor::RoadFeature {
        if let Some(i) = classes.iter().position(|c| *c != FeatureClass::StaticRoad) {
            return Err(ForestError::Flavor(names[i].clone()));
        }
    }
    Ok(())
}

/// Trains a forest on every model feature of `train`.
pub fn fit_forest(train: &Frame, target: &str, config: &TrainConfig, flavor: Flavor) -> Result<RandomForest> {
    let x = train.feature_matrix()?;
    let y = train.labels(target)?;
    fit_matrix(&x, &y, target, config, flavor)
}

/// Trains a forest on a dense matrix.
pub fn fit_matrix(
    x: &FeatureMatrix,
    y: &[u8],
    target: &str,
    config: &TrainConfig,
    flavor: Flavor,
) -> Result<RandomForest> {
    if y.is_empty() {
        return Err(ForestError::EmptyTraining);
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(ForestError::SingleClass(target.to_string()));
    }
    config.validate(x.n_features())?;
    check_flavor(flavor, &x.names, &x.classes)?;

    let params = grow_params(config, x.n_features());
    let n = y.len();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(config.seed, Purpose::Tree, t as u64);
            let sample = bootstrap(n, &mut rng);
            Tree::grow(&x.columns, y, sample, &params, &mut rng)
        })
        .collect();
    Ok(RandomForest {
        format_version: FORMAT_VERSION,
        flavor,
        target: target.to_string(),
        feature_names: x.names.clone(),
        feature_classes: x.classes.clone(),
        config: *config,
        seed: config.seed,
        dataset_fingerprint: fingerprint::training_data(&x.columns, y),
        trees,
    })
}

impl RandomForest {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Confidence for one row in model feature order.
    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features() {
            return Err(ForestError::RowLength {
                expected: self.n_features(),
                found: row.len(),
            });
        }
        Ok(self.predict_unchecked(row))
    }

    pub(crate) fn predict_unchecked(&self, row: &[f64]) -> f64 {
        let sum: f64 = match self.config.vote {
            Vote::Soft => self.trees.iter().map(|t| t.predict_proba(row)).sum(),
            Vote::Hard => self
                .trees
                .iter()
                .filter(|t| t.predict_proba(row) > 0.5)
                .count() as f64,
        };
        sum / self.trees.len() as f64
    }

    /// Columns of `frame` in model feature order; fails naming the first
    /// feature the frame lacks.
    pub fn align(&self, frame: &Frame) -> Result<FeatureMatrix> {
        if let Some(missing) = self.feature_names.iter().find(|n| !frame.has_column(n)) {
            return Err(ForestError::MissingFeature(missing.clone()));
        }
        Ok(frame.matrix_for(&self.feature_names)?)
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows)
            .into_par_iter()
            .map(|i| self.predict_unchecked(&x.row(i)))
            .collect()
    }

    pub fn predict_frame(&self, frame: &Frame) -> Result<Vec<f64>> {
        Ok(self.predict_matrix(&self.align(frame)?))
    }

    /// Metrics at the 0.5 decision threshold.
    pub fn evaluate(&self, test: &Frame, target: &str) -> Result<Metrics> {
        let p = self.predict_frame(test)?;
        Ok(Metrics::from_predictions(&p, &test.labels(target)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<RandomForest> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format_version != FORMAT_VERSION {
            return Err(ForestError::UnsupportedVersion(header.format_version));
        }
        let model: RandomForest = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RandomForest> {
        RandomForest::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        let p = self.n_features();
        if self.feature_classes.len() != p {
            return Err(ForestError::Malformed(
                "feature classes do not match feature names".into(),
            ));
        }
        if self.trees.is_empty() {
            return Err(ForestError::Malformed("model has no trees".into()));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            tree.validate(p)
                .map_err(|e| ForestError::Malformed(format!("tree {t}: {e}")))?;
        }
        check_flavor(self.flavor, &self.feature_names, &self.feature_classes)
    }
}

/// Binary classification metrics. Ratios with a zero denominator are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Metrics {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
        }
    }

    /// Predicted positive iff probability > 0.5.
    pub fn from_predictions(probabilities: &[f64], labels: &[u8]) -> Metrics {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &y) in probabilities.iter().zip(labels) {
            match (p > 0.5, y == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Metrics::from_counts(tp, fp, tn, fn_)
    }
}
