//! Variance inflation factors and iterative multicollinearity reduction.
//!
//! The VIF of feature `i` is `1 / (1 - R²_i)`, where `R²_i` comes from an
//! ordinary least-squares regression of that feature on every other feature
//! plus an intercept. Exactly explained features get `f64::INFINITY`.
//!
//! [`reduce_multicollinearity`] removes features until every VIF is under
//! the threshold. Each iteration performs at most one removal per rule:
//!
//! 1. the most correlated pair with `|r| >= corr_threshold` loses its member
//!    with lower priority;
//! 2. among dummies of one source variable that are all over the VIF
//!    threshold, only the highest-VIF dummy is removed;
//! 3. the highest-VIF remaining feature over the threshold is removed.
//!
//! Ties always remove the lower-priority column, then the lexicographically
//! greater name. Columns are only ever removed; merging is left to analysts,
//! and each correlation removal records the partner so the log shows where
//! a merge was an option.

mod qr;

pub use qr::{residual_sum_of_squares, LeastSquaresFit, RANK_TOLERANCE};

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, FeatureMatrix, Frame};

/// `1 - R²` at or below this is reported as exact collinearity.
pub const EXACT_COLLINEARITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum CollinearityError {
    #[error("need at least 2 feature columns, found {0}")]
    TooFewColumns(usize),
    #[error("rank deficiency: {rows} rows cannot support {columns} feature columns")]
    TooFewRows { rows: usize, columns: usize },
    #[error("`{0}` is not a feature column")]
    NotAFeature(String),
    #[error("invalid threshold: {0}")]
    Threshold(String),
    #[error("VIF still above {threshold} after {iterations} iterations (worst: `{worst}`)")]
    MaxIterations {
        threshold: f64,
        iterations: usize,
        worst: String,
        log: ReductionLog,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T> = std::result::Result<T, CollinearityError>;

/// R² and VIF of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifEntry {
    pub column: String,
    pub r_squared: f64,
    #[serde(with = "infinite_as_string")]
    pub vif: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifReport {
    pub columns: Vec<VifEntry>,
}

impl VifReport {
    pub fn get(&self, column: &str) -> Option<&VifEntry> {
        self.columns.iter().find(|e| e.column == column)
    }

    pub fn max(&self) -> Option<&VifEntry> {
        self.columns
            .iter()
            .max_by(|a, b| a.vif.total_cmp(&b.vif))
    }
}

fn check_shape(matrix: &FeatureMatrix) -> Result<()> {
    let k = matrix.n_features();
    if k < 2 {
        return Err(CollinearityError::TooFewColumns(k));
    }
    if matrix.n_rows <= k {
        return Err(CollinearityError::TooFewRows {
            rows: matrix.n_rows,
            columns: k,
        });
    }
    Ok(())
}

/// Centred feature columns reduced to their triangular factor. Centring
/// stands in for the intercept.
struct Factored {
    r: Vec<Vec<f64>>,
    tss: Vec<f64>,
    raw_ss: Vec<f64>,
}

fn factor(matrix: &FeatureMatrix) -> Factored {
    let n = matrix.n_rows as f64;
    let mut tss = Vec::with_capacity(matrix.n_features());
    let mut raw_ss = Vec::with_capacity(matrix.n_features());
    let centred: Vec<Vec<f64>> = matrix
        .columns
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / n;
            let d: Vec<f64> = c.iter().map(|v| v - mean).collect();
            tss.push(d.iter().map(|v| v * v).sum());
            raw_ss.push(c.iter().map(|v| v * v).sum());
            d
        })
        .collect();
    Factored {
        r: qr::triangular_factor(&centred),
        tss,
        raw_ss,
    }
}

/// VIF of column `j` regressed on the other columns and an intercept.
fn vif_at(f: &Factored, name: &str, j: usize) -> VifEntry {
    let tss = f.tss[j];
    let (r_squared, vif) = if tss <= 1e-24 * f.raw_ss[j].max(f64::MIN_POSITIVE) {
        // A constant column is explained exactly by the intercept.
        (1.0, f64::INFINITY)
    } else {
        let regressors: Vec<&[f64]> = f
            .r
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, c)| c.as_slice())
            .collect();
        let fit = residual_sum_of_squares(&regressors, &f.r[j]);
        let unexplained = (fit.rss / tss).clamp(0.0, 1.0);
        if unexplained <= EXACT_COLLINEARITY_TOLERANCE {
            (1.0, f64::INFINITY)
        } else {
            (1.0 - unexplained, 1.0 / unexplained)
        }
    };
    VifEntry {
        column: name.to_string(),
        r_squared,
        vif,
    }
}

/// R² and VIF of one feature column of `frame`.
pub fn vif(frame: &Frame, column: &str) -> Result<VifEntry> {
    let matrix = frame.feature_matrix()?;
    let j = matrix
        .names
        .iter()
        .position(|n| n == column)
        .ok_or_else(|| CollinearityError::NotAFeature(column.to_string()))?;
    check_shape(&matrix)?;
    Ok(vif_at(&factor(&matrix), column, j))
}

/// VIF of every column of a dense matrix. After one shared factorization
/// the per-column regressions are independent and run in parallel; output
/// order follows the matrix.
pub fn vif_matrix(matrix: &FeatureMatrix) -> Result<VifReport> {
    check_shape(matrix)?;
    let f = factor(matrix);
    let columns = (0..matrix.n_features())
        .into_par_iter()
        .map(|j| vif_at(&f, &matrix.names[j], j))
        .collect();
    Ok(VifReport { columns })
}

pub fn vif_report(frame: &Frame) -> Result<VifReport> {
    vif_matrix(&frame.feature_matrix()?)
}

/// Symmetric matrix of Pearson correlations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    values: Vec<f64>,
    /// Columns with zero variance; their correlations are reported as 0.
    pub zero_variance: Vec<String>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.names.len() + j]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

pub fn correlation_of(matrix: &FeatureMatrix) -> CorrelationMatrix {
    let p = matrix.n_features();
    let mut zero_variance = Vec::new();
    // Unit-norm centred columns; correlation is then a dot product.
    let units: Vec<Option<Vec<f64>>> = matrix
        .columns
        .iter()
        .zip(&matrix.names)
        .map(|(col, name)| {
            let mean = col.iter().sum::<f64>() / col.len().max(1) as f64;
            let centred: Vec<f64> = col.iter().map(|x| x - mean).collect();
            let norm = centred.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                Some(centred.into_iter().map(|x| x / norm).collect())
            } else {
                zero_variance.push(name.clone());
                None
            }
        })
        .collect();

    let mut values = vec![0.0; p * p];
    for i in 0..p {
        values[i * p + i] = 1.0;
        for j in (i + 1)..p {
            let r = match (&units[i], &units[j]) {
                (Some(a), Some(b)) => a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    .clamp(-1.0, 1.0),
                _ => 0.0,
            };
            values[i * p + j] = r;
            values[j * p + i] = r;
        }
    }
    CorrelationMatrix {
        names: matrix.names.clone(),
        values,
        zero_variance,
    }
}

pub fn correlation_matrix(frame: &Frame) -> Result<CorrelationMatrix> {
    Ok(correlation_of(&frame.feature_matrix()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionConfig {
    pub vif_threshold: f64,
    pub corr_threshold: f64,
    pub max_iters: usize,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            vif_threshold: 10.0,
            corr_threshold: 0.95,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalReason {
    PairwiseCorrelation,
    VifOverThreshold,
    DummySiblingMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionAction {
    pub iteration: usize,
    pub column: String,
    pub reason: RemovalReason,
    /// |r| for correlation removals, otherwise the column's VIF.
    #[serde(with = "infinite_as_string")]
    pub statistic: f64,
    /// The retained member of a correlated pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReductionLog {
    pub actions: Vec<ReductionAction>,
    pub iterations: usize,
}

impl ReductionLog {
    /// Re-applies the logged removals to the original frame.
    pub fn replay(&self, frame: &Frame) -> Result<Frame> {
        let mut out = frame.clone();
        for action in &self.actions {
            out = out.drop_columns(&[&action.column])?;
        }
        Ok(out)
    }

    pub fn removed(&self) -> Vec<&str> {
        self.actions.iter().map(|a| a.column.as_str()).collect()
    }
}

/// Result of [`reduce_multicollinearity`].
#[derive(Debug, Clone)]
pub struct Reduction {
    pub frame: Frame,
    pub log: ReductionLog,
    /// VIFs of the retained features at convergence.
    pub report: VifReport,
}

struct Candidate<'a> {
    name: &'a str,
    priority: i32,
    statistic: f64,
}

/// Orders removal candidates: larger statistic first, then lower priority,
/// then the lexicographically greater name.
fn removal_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.statistic
        .total_cmp(&a.statistic)
        .then(a.priority.cmp(&b.priority))
        .then(b.name.cmp(a.name))
}

/// Iteratively removes features until every VIF is below the threshold.
pub fn reduce_multicollinearity(frame: &Frame, config: &ReductionConfig) -> Result<Reduction> {
    if !(config.vif_threshold > 1.0) {
        return Err(CollinearityError::Threshold(format!(
            "VIF threshold must exceed 1, got {}",
            config.vif_threshold
        )));
    }
    if !(config.corr_threshold > 0.0 && config.corr_threshold <= 1.0) {
        return Err(CollinearityError::Threshold(format!(
            "correlation threshold must lie in (0, 1], got {}",
            config.corr_threshold
        )));
    }

    let mut current = frame.clone();
    let mut log = ReductionLog::default();
    for iteration in 1..=config.max_iters {
        log.iterations = iteration;

        let corr_removed = correlation_step(&current, config, iteration)?;
        if let Some(action) = &corr_removed {
            current = current.drop_columns(&[&action.column])?;
        }
        log.actions.extend(corr_removed.clone());

        let mut report = vif_report(&current)?;
        let over = |r: &VifReport| r.columns.iter().any(|e| e.vif >= config.vif_threshold);
        if corr_removed.is_none() && !over(&report) {
            return Ok(Reduction {
                frame: current,
                log,
                report,
            });
        }

        if let Some(action) = sibling_step(&current, &report, config, iteration) {
            current = current.drop_columns(&[&action.column])?;
            log.actions.push(action);
            report = vif_report(&current)?;
        }

        if let Some(action) = vif_step(&current, &report, config, iteration) {
            current = current.drop_columns(&[&action.column])?;
            log.actions.push(action);
        }
    }

    let report = vif_report(&current)?;
    match report.max() {
        Some(worst) if worst.vif >= config.vif_threshold => Err(CollinearityError::MaxIterations {
            threshold: config.vif_threshold,
            iterations: config.max_iters,
            worst: worst.column.clone(),
            log,
        }),
        _ => Ok(Reduction {
            frame: current,
            log,
            report,
        }),
    }
}

fn correlation_step(
    frame: &Frame,
    config: &ReductionConfig,
    iteration: usize,
) -> Result<Option<ReductionAction>> {
    let matrix = frame.feature_matrix()?;
    let corr = correlation_of(&matrix);
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..corr.len() {
        for j in (i + 1)..corr.len() {
            let r = corr.get(i, j).abs();
            if r < config.corr_threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((br, bi, bj)) => {
                    r > br
                        || (r == br
                            && (corr.names[i].as_str(), corr.names[j].as_str())
                                < (corr.names[bi].as_str(), corr.names[bj].as_str()))
                }
            };
            if better {
                best = Some((r, i, j));
            }
        }
    }
    let Some((r, i, j)) = best else {
        return Ok(None);
    };
    let candidate = |k: usize| Candidate {
        name: &corr.names[k],
        priority: frame.spec(&corr.names[k]).map(|s| s.priority).unwrap_or(0),
        statistic: r,
    };
    let (a, b) = (candidate(i), candidate(j));
    let (removed, kept) = if removal_order(&a, &b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    Ok(Some(ReductionAction {
        iteration,
        column: removed.name.to_string(),
        reason: RemovalReason::PairwiseCorrelation,
        statistic: r,
        partner: Some(kept.name.to_string()),
    }))
}

/// Dummy groups with at least two members over the threshold.
fn sibling_groups<'a>(
    frame: &'a Frame,
    report: &'a VifReport,
    config: &ReductionConfig,
) -> BTreeMap<&'a str, Vec<&'a VifEntry>> {
    let mut groups: BTreeMap<&str, Vec<&VifEntry>> = BTreeMap::new();
    for entry in &report.columns {
        if entry.vif < config.vif_threshold {
            continue;
        }
        if let Some(group) = frame
            .spec(&entry.column)
            .ok()
            .and_then(|s| s.dummy_of.as_deref())
        {
            groups.entry(group).or_default().push(entry);
        }
    }
    groups.retain(|_, members| members.len() >= 2);
    groups
}

fn sibling_step(
    frame: &Frame,
    report: &VifReport,
    config: &ReductionConfig,
    iteration: usize,
) -> Option<ReductionAction> {
    let groups = sibling_groups(frame, report, config);
    groups
        .values()
        .flatten()
        .map(|e| candidate(frame, e))
        .min_by(removal_order)
        .map(|c| ReductionAction {
            iteration,
            column: c.name.to_string(),
            reason: RemovalReason::DummySiblingMax,
            statistic: c.statistic,
            partner: None,
        })
}

fn vif_step(
    frame: &Frame,
    report: &VifReport,
    config: &ReductionConfig,
    iteration: usize,
) -> Option<ReductionAction> {
    let groups = sibling_groups(frame, report, config);
    let siblings: Vec<&str> = groups
        .values()
        .flatten()
        .map(|e| e.column.as_str())
        .collect();
    report
        .columns
        .iter()
        .filter(|e| e.vif >= config.vif_threshold && !siblings.contains(&e.column.as_str()))
        .map(|e| candidate(frame, e))
        .min_by(removal_order)
        .map(|c| ReductionAction {
            iteration,
            column: c.name.to_string(),
            reason: RemovalReason::VifOverThreshold,
            statistic: c.statistic,
            partner: None,
        })
}

fn candidate<'a>(frame: &Frame, entry: &'a VifEntry) -> Candidate<'a> {
    Candidate {
        name: &entry.column,
        priority: frame.spec(&entry.column).map(|s| s.priority).unwrap_or(0),
        statistic: entry.vif,
    }
}

/// JSON has no infinity; write it as the string `"inf"`.
mod infinite_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_infinite() && *value > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*value)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(x) => Ok(x),
            Repr::Text(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Text(s) => Err(serde::de::Error::custom(format!("unexpected `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnData, ColumnRole, ColumnSpec, Schema};

    fn frame(cols: Vec<(&str, Vec<f64>)>) -> Frame {
        let specs = cols
            .iter()
            .map(|(n, _)| ColumnSpec::new(*n, ColumnRole::Continuous))
            .collect();
        let data = cols
            .into_iter()
            .map(|(_, v)| ColumnData::Numeric(v.into_iter().map(Some).collect()))
            .collect();
        Frame::new(Schema::new(specs).unwrap(), data).unwrap()
    }

    #[test]
    fn orthogonal_columns_have_unit_vif() {
        let f = frame(vec![
            ("x1", vec![1.0, 1.0, -1.0, -1.0]),
            ("x2", vec![1.0, -1.0, 1.0, -1.0]),
        ]);
        for c in ["x1", "x2"] {
            let e = vif(&f, c).unwrap();
            assert!(e.r_squared.abs() < 1e-15);
            assert!((e.vif - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_column_is_infinite() {
        let x = vec![0.3, 1.2, -0.7, 2.2, 0.9, -1.4];
        let f = frame(vec![
            ("a", x.clone()),
            ("b", vec![1.0, 0.0, 2.0, 1.0, -1.0, 0.5]),
            ("a_copy", x),
        ]);
        let report = vif_report(&f).unwrap();
        assert_eq!(report.get("a").unwrap().vif, f64::INFINITY);
        assert_eq!(report.get("a_copy").unwrap().vif, f64::INFINITY);
        assert_eq!(report.get("a").unwrap().r_squared, 1.0);
        assert!(report.get("b").unwrap().vif.is_finite());
    }

    #[test]
    fn too_few_rows_is_rank_deficient() {
        let f = frame(vec![("a", vec![1.0, 2.0]), ("b", vec![3.0, 1.0])]);
        assert!(matches!(
            vif(&f, "a"),
            Err(CollinearityError::TooFewRows { .. })
        ));
    }

    #[test]
    fn correlation_is_symmetric_with_unit_diagonal() {
        let f = frame(vec![
            ("a", vec![1.0, 2.0, 3.0, 5.0]),
            ("b", vec![2.0, 4.0, 6.0, 10.0]),
            ("c", vec![1.0, 0.0, 1.0, 0.0]),
            ("k", vec![7.0, 7.0, 7.0, 7.0]),
        ]);
        let m = correlation_matrix(&f).unwrap();
        for i in 0..4 {
            assert_eq!(m.get(i, i), 1.0);
            for j in 0..4 {
                assert_eq!(m.get(i, j), m.get(j, i));
                assert!(m.get(i, j).abs() <= 1.0);
            }
        }
        assert!((m.get(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(m.get(3, 0), 0.0);
        assert_eq!(m.zero_variance, vec!["k"]);
    }

    #[test]
    fn infinite_vif_round_trips_through_json() {
        let entry = VifEntry {
            column: "a".into(),
            r_squared: 1.0,
            vif: f64::INFINITY,
        };
        let text = serde_json::to_string(&entry).unwrap();
        assert!(text.contains("\"vif\":\"inf\""));
        let back: VifEntry = serde_json::from_str(&text).unwrap();
        assert_eq!(back, entry);
    }

    #[test]
    fn rejects_bad_thresholds() {
        let f = frame(vec![("a", vec![1.0, 2.0, 3.0]), ("b", vec![3.0, 1.0, 0.0])]);
        let mut cfg = ReductionConfig::default();
        cfg.vif_threshold = 1.0;
        assert!(reduce_multicollinearity(&f, &cfg).is_err());
        let mut cfg = ReductionConfig::default();
        cfg.corr_threshold = 1.5;
        assert!(reduce_multicollinearity(&f, &cfg).is_err());
    }
}
