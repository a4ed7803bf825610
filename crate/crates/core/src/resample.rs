//! Class rebalancing and the stratified train/test split.
//!
//! Balancing runs random undersampling of the majority class (RUMC) first
//! and then SMOTE-NC until the requested minority:majority ratio is met.
//! Every synthetic row is marked in the `_synthetic` provenance column so a
//! test partition can be checked for leakage.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    ColumnData, ColumnRole, ColumnSpec, DatasetError, Frame, SYNTHETIC_COLUMN,
};
use crate::rng::{self, Purpose};

#[derive(Debug, thiserror::Error)]
pub enum ResampleError {
    #[error("invalid balance config: {0}")]
    Config(String),
    #[error("target `{target}` has a single class")]
    SingleClass { target: String },
    #[error("SMOTE-NC needs more than k={k} minority rows, found {minority}; use a smaller k")]
    TooFewMinority { minority: usize, k: usize },
    #[error("class {class} of `{target}` has {count} row(s); at least 2 are needed to split")]
    ClassTooSmall {
        target: String,
        class: u8,
        count: usize,
    },
    #[error("test partition contains {0} synthetic row(s)")]
    SyntheticInTest(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T> = std::result::Result<T, ResampleError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceConfig {
    /// Fraction of majority rows kept by RUMC. `None` keeps twice the
    /// minority count (or every majority row if there are fewer).
    pub undersample_ratio: Option<f64>,
    /// Minority:majority ratio SMOTE-NC oversamples to.
    pub target_ratio: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            undersample_ratio: None,
            target_ratio: 1.0,
            k: 5,
            seed: 0,
        }
    }
}

impl BalanceConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.undersample_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(ResampleError::Config(format!(
                    "undersample ratio must lie in (0, 1], got {r}"
                )));
            }
        }
        if !(self.target_ratio > 0.0 && self.target_ratio <= 1.0) {
            return Err(ResampleError::Config(format!(
                "target ratio must lie in (0, 1], got {}",
                self.target_ratio
            )));
        }
        if self.k == 0 {
            return Err(ResampleError::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// `⌈x⌉`, forgiving rounding noise just above an integer.
fn ceil_count(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Classes {
    majority: u8,
    minority: u8,
    counts: [usize; 2],
}

impl Classes {
    fn of(labels: &[u8], target: &str) -> Result<Classes> {
        let mut counts = [0usize; 2];
        for &y in labels {
            counts[y as usize] += 1;
        }
        if counts[0] == 0 || counts[1] == 0 {
            return Err(ResampleError::SingleClass {
                target: target.to_string(),
            });
        }
        let majority = if counts[1] > counts[0] { 1 } else { 0 };
        Ok(Classes {
            majority,
            minority: 1 - majority,
            counts,
        })
    }

    fn n_majority(&self) -> usize {
        self.counts[self.majority as usize]
    }

    fn n_minority(&self) -> usize {
        self.counts[self.minority as usize]
    }
}

/// Random undersampling of the majority class. Minority rows are all kept;
/// output rows keep their original relative order.
pub fn rumc(frame: &Frame, target: &str, config: &BalanceConfig) -> Result<Frame> {
    config.validate()?;
    let labels = frame.labels(target)?;
    let classes = Classes::of(&labels, target)?;
    let keep = match config.undersample_ratio {
        Some(r) => ceil_count(r * classes.n_majority() as f64),
        None => (2 * classes.n_minority()).min(classes.n_majority()),
    };

    let majority_rows: Vec<usize> = (0..labels.len())
        .filter(|&r| labels[r] == classes.majority)
        .collect();
    let mut rng = rng::stream(config.seed, Purpose::Undersample, 0);
    let mut kept: Vec<usize> = rand::seq::index::sample(&mut rng, majority_rows.len(), keep)
        .into_iter()
        .map(|i| majority_rows[i])
        .collect();
    kept.extend((0..labels.len()).filter(|&r| labels[r] == classes.minority));
    kept.sort_unstable();
    Ok(frame.select_rows(&kept))
}

/// A categorical feature as SMOTE-NC sees it.
#[derive(Debug, Clone, PartialEq)]
pub enum CategoricalFeature {
    /// Dummies of one source variable. The level key is the index of the
    /// member set to 1, or the member count when every dummy is 0 (the
    /// reference level after a dummy was removed).
    Group { source: String, members: Vec<String> },
    /// A standalone binary column.
    Binary(String),
    /// An un-encoded categorical column.
    Coded(String),
}

/// Continuous values and categorical level keys of one row.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedRow {
    pub continuous: Vec<f64>,
    pub categorical: Vec<u32>,
}

/// Inputs of the SMOTE-NC distance.
///
/// Continuous features are standardized by their standard deviation over the
/// whole frame (a zero deviation counts as 1), and `med` is the median of the
/// minority class's continuous standard deviations in those units.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDistanceContext {
    pub continuous: Vec<String>,
    pub categorical: Vec<CategoricalFeature>,
    pub scale: Vec<f64>,
    pub med: f64,
}

/// Euclidean distance over standardized continuous features plus `med²`
/// for each categorical feature on which the rows differ.
pub fn mixed_distance(a: &MixedRow, b: &MixedRow, ctx: &MixedDistanceContext) -> f64 {
    mixed_distance_sq(a, b, ctx).sqrt()
}

fn mixed_distance_sq(a: &MixedRow, b: &MixedRow, ctx: &MixedDistanceContext) -> f64 {
    let continuous: f64 = a
        .continuous
        .iter()
        .zip(&b.continuous)
        .zip(&ctx.scale)
        .map(|((x, y), s)| ((x - y) / s).powi(2))
        .sum();
    let mismatches = a
        .categorical
        .iter()
        .zip(&b.categorical)
        .filter(|(x, y)| x != y)
        .count();
    continuous + ctx.med * ctx.med * mismatches as f64
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => 0.0,
        _ if n % 2 == 1 => values[n / 2],
        _ => (values[n / 2 - 1] + values[n / 2]) / 2.0,
    }
}

fn complete(frame: &Frame, name: &str) -> Result<Vec<f64>> {
    frame
        .numeric(name)?
        .iter()
        .map(|v| {
            v.ok_or_else(|| {
                DatasetError::MissingValues {
                    column: name.to_string(),
                }
                .into()
            })
        })
        .collect()
}

impl MixedDistanceContext {
    /// Builds the context for `frame`, taking `med` from the rows of class
    /// `minority`.
    pub fn from_frame(frame: &Frame, target: &str, minority: u8) -> Result<Self> {
        let labels = frame.labels(target)?;
        let minority_rows: Vec<usize> =
            (0..labels.len()).filter(|&r| labels[r] == minority).collect();

        let mut continuous = Vec::new();
        let mut scale = Vec::new();
        let mut minority_stds = Vec::new();
        let mut categorical = Vec::new();
        let mut groups: BTreeMap<String, usize> = BTreeMap::new();
        for (spec, _) in frame.columns() {
            if spec.name == SYNTHETIC_COLUMN || spec.name == target {
                continue;
            }
            match spec.role {
                ColumnRole::Continuous => {
                    let values = complete(frame, &spec.name)?;
                    let std = population_std(&values);
                    let s = if std > 0.0 { std } else { 1.0 };
                    let sub: Vec<f64> = minority_rows.iter().map(|&r| values[r]).collect();
                    minority_stds.push(population_std(&sub) / s);
                    continuous.push(spec.name.clone());
                    scale.push(s);
                }
                ColumnRole::Binary => match &spec.dummy_of {
                    Some(source) => match groups.get(source) {
                        Some(&i) => {
                            if let CategoricalFeature::Group { members, .. } = &mut categorical[i] {
                                members.push(spec.name.clone());
                            }
                        }
                        None => {
                            groups.insert(source.clone(), categorical.len());
                            categorical.push(CategoricalFeature::Group {
                                source: source.clone(),
                                members: vec![spec.name.clone()],
                            });
                        }
                    },
                    None => categorical.push(CategoricalFeature::Binary(spec.name.clone())),
                },
                ColumnRole::Categorical => {
                    categorical.push(CategoricalFeature::Coded(spec.name.clone()))
                }
                _ => {}
            }
        }
        // With no continuous features there is no spread to borrow; a unit
        // penalty keeps categorical mismatches meaningful.
        let med = if minority_stds.is_empty() {
            1.0
        } else {
            median(minority_stds)
        };
        Ok(MixedDistanceContext {
            continuous,
            categorical,
            scale,
            med,
        })
    }

    /// Extracts every row of `frame` in this context's layout.
    pub fn rows(&self, frame: &Frame) -> Result<Vec<MixedRow>> {
        let n = frame.n_rows();
        let continuous: Vec<Vec<f64>> = self
            .continuous
            .iter()
            .map(|c| complete(frame, c))
            .collect::<Result<_>>()?;
        let mut keys: Vec<Vec<u32>> = Vec::with_capacity(self.categorical.len());
        for feature in &self.categorical {
            keys.push(match feature {
                CategoricalFeature::Group { members, .. } => {
                    let cols: Vec<Vec<f64>> = members
                        .iter()
                        .map(|m| complete(frame, m))
                        .collect::<Result<_>>()?;
                    (0..n)
                        .map(|r| {
                            cols.iter()
                                .position(|c| c[r] == 1.0)
                                .unwrap_or(members.len()) as u32
                        })
                        .collect()
                }
                CategoricalFeature::Binary(name) => {
                    complete(frame, name)?.iter().map(|&v| v as u32).collect()
                }
                CategoricalFeature::Coded(name) => frame
                    .categorical(name)?
                    .iter()
                    .map(|c| {
                        c.ok_or_else(|| {
                            ResampleError::from(DatasetError::MissingValues {
                                column: name.clone(),
                            })
                        })
                    })
                    .collect::<Result<_>>()?,
            });
        }
        Ok((0..n)
            .map(|r| MixedRow {
                continuous: continuous.iter().map(|c| c[r]).collect(),
                categorical: keys.iter().map(|k| k[r]).collect(),
            })
            .collect())
    }
}

/// The `k` nearest other rows of each row, ties broken by lower index.
fn nearest_neighbors(rows: &[MixedRow], k: usize, ctx: &MixedDistanceContext) -> Vec<Vec<usize>> {
    (0..rows.len())
        .into_par_iter()
        .map(|i| {
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for (j, other) in rows.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = mixed_distance_sq(&rows[i], other, ctx);
                if best.len() == k && d >= best[k - 1].0 {
                    continue;
                }
                let at = best.partition_point(|&(bd, _)| bd <= d);
                best.insert(at, (d, j));
                best.truncate(k);
            }
            best.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Most common level among `neighbors`; ties go to `own` when it is tied,
/// otherwise to the smallest key.
fn majority_level(neighbors: impl Iterator<Item = u32>, own: u32) -> u32 {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for level in neighbors {
        *counts.entry(level).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    if counts.get(&own) == Some(&top) {
        return own;
    }
    counts
        .into_iter()
        .find(|&(_, c)| c == top)
        .map_or(own, |(level, _)| level)
}

/// Frame with a `_synthetic` column, added as all zeros if absent.
fn with_provenance(frame: &Frame) -> Result<Frame> {
    if frame.has_column(SYNTHETIC_COLUMN) {
        return Ok(frame.clone());
    }
    Ok(frame.with_columns(vec![(
        ColumnSpec::new(SYNTHETIC_COLUMN, ColumnRole::Binary),
        ColumnData::Numeric(vec![Some(0.0); frame.n_rows()]),
    )])?)
}

/// Number of synthetic minority rows SMOTE-NC would add.
pub fn synthetic_count(labels: &[u8], target: &str, target_ratio: f64) -> Result<usize> {
    let classes = Classes::of(labels, target)?;
    let wanted = ceil_count(target_ratio * classes.n_majority() as f64);
    Ok(wanted.saturating_sub(classes.n_minority()))
}

/// Appends SMOTE-NC synthetic minority rows until the minority:majority
/// ratio reaches `config.target_ratio`.
///
/// Non-feature columns of a synthetic row are copied from its seed row,
/// except identifiers, which are left missing.
pub fn smote_nc(frame: &Frame, target: &str, config: &BalanceConfig) -> Result<Frame> {
    config.validate()?;
    let labels = frame.labels(target)?;
    let classes = Classes::of(&labels, target)?;
    let out = with_provenance(frame)?;
    let n_synthetic = synthetic_count(&labels, target, config.target_ratio)?;
    if n_synthetic == 0 {
        return Ok(out);
    }
    if classes.n_minority() <= config.k {
        return Err(ResampleError::TooFewMinority {
            minority: classes.n_minority(),
            k: config.k,
        });
    }

    let minority_rows: Vec<usize> = (0..labels.len())
        .filter(|&r| labels[r] == classes.minority)
        .collect();
    let minority = frame.select_rows(&minority_rows);
    let ctx = MixedDistanceContext::from_frame(frame, target, classes.minority)?;
    let rows = ctx.rows(&minority)?;
    let neighbors = nearest_neighbors(&rows, config.k, &ctx);

    let synthetic: Vec<(usize, MixedRow)> = (0..n_synthetic)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng::stream(config.seed, Purpose::Smote, s as u64);
            let seed = rng.gen_range(0..rows.len());
            let neighbor = *neighbors[seed].choose(&mut rng).expect("k >= 1");
            let u: f64 = rng.gen();
            let (a, b) = (&rows[seed], &rows[neighbor]);
            let continuous = a
                .continuous
                .iter()
                .zip(&b.continuous)
                .map(|(&x, &y)| (x + u * (y - x)).clamp(x.min(y), x.max(y)))
                .collect();
            let categorical = (0..a.categorical.len())
                .map(|f| {
                    majority_level(
                        neighbors[seed].iter().map(|&j| rows[j].categorical[f]),
                        a.categorical[f],
                    )
                })
                .collect();
            (
                seed,
                MixedRow {
                    continuous,
                    categorical,
                },
            )
        })
        .collect();

    let seeds: Vec<usize> = synthetic.iter().map(|(s, _)| *s).collect();
    let mut block = with_provenance(&minority)?.select_rows(&seeds);
    block = overwrite(&block, &ctx, &synthetic)?;
    Ok(out.concat_rows(&block)?)
}

/// Writes synthetic feature values into `block`, marks every row as
/// synthetic and clears identifiers.
fn overwrite(
    block: &Frame,
    ctx: &MixedDistanceContext,
    synthetic: &[(usize, MixedRow)],
) -> Result<Frame> {
    let n = block.n_rows();
    let mut replaced: BTreeMap<String, ColumnData> = BTreeMap::new();
    for (i, name) in ctx.continuous.iter().enumerate() {
        let values = synthetic
            .iter()
            .map(|(_, r)| Some(r.continuous[i]))
            .collect();
        replaced.insert(name.clone(), ColumnData::Numeric(values));
    }
    for (f, feature) in ctx.categorical.iter().enumerate() {
        match feature {
            CategoricalFeature::Group { members, .. } => {
                for (m, name) in members.iter().enumerate() {
                    let values = synthetic
                        .iter()
                        .map(|(_, r)| Some(if r.categorical[f] as usize == m { 1.0 } else { 0.0 }))
                        .collect();
                    replaced.insert(name.clone(), ColumnData::Numeric(values));
                }
            }
            CategoricalFeature::Binary(name) => {
                let values = synthetic
                    .iter()
                    .map(|(_, r)| Some(r.categorical[f] as f64))
                    .collect();
                replaced.insert(name.clone(), ColumnData::Numeric(values));
            }
            CategoricalFeature::Coded(name) => {
                let values = synthetic.iter().map(|(_, r)| Some(r.categorical[f])).collect();
                replaced.insert(name.clone(), ColumnData::Categorical(values));
            }
        }
    }
    replaced.insert(
        SYNTHETIC_COLUMN.to_string(),
        ColumnData::Numeric(vec![Some(1.0); n]),
    );

    let columns = block
        .columns()
        .map(|(spec, data)| {
            if let Some(new) = replaced.remove(&spec.name) {
                new
            } else if spec.role == ColumnRole::Identifier {
                ColumnData::Text(vec![None; n])
            } else {
                data.clone()
            }
        })
        .collect();
    Ok(Frame::new(block.schema().clone(), columns)?)
}

/// Class counts before and after each balancing stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceSummary {
    pub target: String,
    pub before: [usize; 2],
    pub after_undersample: [usize; 2],
    pub after_oversample: [usize; 2],
    pub synthetic_rows: usize,
}

fn class_counts(frame: &Frame, target: &str) -> Result<[usize; 2]> {
    let mut counts = [0; 2];
    for y in frame.labels(target)? {
        counts[y as usize] += 1;
    }
    Ok(counts)
}

/// RUMC followed by SMOTE-NC.
pub fn balance(frame: &Frame, target: &str, config: &BalanceConfig) -> Result<(Frame, BalanceSummary)> {
    let before = class_counts(frame, target)?;
    let reduced = rumc(frame, target, config)?;
    let after_undersample = class_counts(&reduced, target)?;
    let out = smote_nc(&reduced, target, config)?;
    let after_oversample = class_counts(&out, target)?;
    let synthetic_rows = out.synthetic_flags().iter().filter(|&&s| s).count();
    Ok((
        out,
        BalanceSummary {
            target: target.to_string(),
            before,
            after_undersample,
            after_oversample,
            synthetic_rows,
        },
    ))
}

/// Stratified split: within each class, `⌈train_fraction · n_class⌉`
/// randomly chosen rows go to the training partition. Both partitions keep
/// the input's row order.
pub fn train_test_split(
    frame: &Frame,
    train_fraction: f64,
    target: &str,
    seed: u64,
) -> Result<(Frame, Frame)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ResampleError::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let labels = frame.labels(target)?;
    Classes::of(&labels, target)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..2u8 {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == class).collect();
        if rows.len() < 2 {
            return Err(ResampleError::ClassTooSmall {
                target: target.to_string(),
                class,
                count: rows.len(),
            });
        }
        let n_train = ceil_count(train_fraction * rows.len() as f64);
        let mut rng = rng::stream(seed, Purpose::Split, class as u64);
        rows.shuffle(&mut rng);
        train.extend_from_slice(&rows[..n_train]);
        test.extend_from_slice(&rows[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((frame.select_rows(&train), frame.select_rows(&test)))
}

/// Fails if any row of `test` came from oversampling.
pub fn check_no_synthetic(test: &Frame) -> Result<()> {
    let n = test.synthetic_flags().iter().filter(|&&s| s).count();
    if n > 0 {
        return Err(ResampleError::SyntheticInTest(n));
    }
    Ok(())
}
