use serde::{Deserialize, Serialize};

use super::{ColumnData, ColumnRole, DatasetError, Frame, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    DropRow,
    #[default]
    Impute,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImputeAction {
    pub column: String,
    pub cells: usize,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingReport {
    pub policy: MissingPolicy,
    pub rows_dropped: usize,
    pub imputed: Vec<ImputeAction>,
}

/// Removes or fills missing cells.
///
/// `Impute` fills continuous, milepost and coordinate columns with the
/// column median, and categorical, binary and target columns with the mode
/// (ties go to the lexicographically smaller level, or to 0 for binary).
/// Identifier and route columns are left untouched. `DropRow` removes every
/// row that has a missing cell in any column.
pub fn resolve_missing(frame: &Frame, policy: MissingPolicy) -> Result<(Frame, MissingReport)> {
    match policy {
        MissingPolicy::DropRow => {
            let keep: Vec<usize> = (0..frame.n_rows())
                .filter(|&r| frame.columns().all(|(_, d)| !d.is_missing(r)))
                .collect();
            let report = MissingReport {
                policy,
                rows_dropped: frame.n_rows() - keep.len(),
                imputed: Vec::new(),
            };
            Ok((frame.select_rows(&keep), report))
        }
        MissingPolicy::Impute => impute(frame),
    }
}

fn impute(frame: &Frame) -> Result<(Frame, MissingReport)> {
    let mut specs = Vec::new();
    let mut columns = Vec::new();
    let mut actions = Vec::new();
    for (spec, data) in frame.columns() {
        specs.push(spec.clone());
        let missing = data.missing_count();
        let imputable = !matches!(spec.role, ColumnRole::Identifier | ColumnRole::RouteId);
        if missing == 0 || !imputable {
            columns.push(data.clone());
            continue;
        }
        if missing == data.len() {
            return Err(DatasetError::EntirelyMissing(spec.name.clone()));
        }
        let (filled, shown) = match data {
            ColumnData::Numeric(values) => {
                let fill = match spec.role {
                    ColumnRole::Binary | ColumnRole::Target => binary_mode(values),
                    _ => median(values),
                };
                let filled = values.iter().map(|v| Some(v.unwrap_or(fill))).collect();
                (ColumnData::Numeric(filled), fill.to_string())
            }
            ColumnData::Categorical(codes) => {
                let levels = spec.levels();
                let mut counts = vec![0usize; levels.len()];
                for c in codes.iter().flatten() {
                    counts[*c as usize] += 1;
                }
                let mode = (0..levels.len())
                    .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(levels[b].cmp(&levels[a])))
                    .expect("a column with observed values has levels") as u32;
                let filled = codes.iter().map(|c| Some(c.unwrap_or(mode))).collect();
                (ColumnData::Categorical(filled), levels[mode as usize].clone())
            }
            ColumnData::Text(_) => unreachable!("text columns are not imputed"),
        };
        actions.push(ImputeAction {
            column: spec.name.clone(),
            cells: missing,
            value: shown,
        });
        columns.push(filled);
    }
    let out = Frame::new(frame.schema().clone(), columns)?;
    Ok((
        out,
        MissingReport {
            policy: MissingPolicy::Impute,
            rows_dropped: 0,
            imputed: actions,
        },
    ))
}

fn median(values: &[Option<f64>]) -> f64 {
    let mut observed: Vec<f64> = values.iter().flatten().copied().collect();
    observed.sort_by(f64::total_cmp);
    let n = observed.len();
    if n % 2 == 1 {
        observed[n / 2]
    } else {
        (observed[n / 2 - 1] + observed[n / 2]) / 2.0
    }
}

fn binary_mode(values: &[Option<f64>]) -> f64 {
    let ones = values.iter().flatten().filter(|&&x| x == 1.0).count();
    let zeros = values.iter().flatten().count() - ones;
    if ones > zeros {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{read_csv, ColumnSpec, Schema};

    fn schema() -> Schema {
        Schema::new(vec![
            ColumnSpec::new("id", ColumnRole::Identifier),
            ColumnSpec::new("x", ColumnRole::Continuous),
            ColumnSpec::new("c", ColumnRole::Categorical),
        ])
        .unwrap()
    }

    #[test]
    fn median_imputation() {
        let frame = read_csv("id,x,c\n1,1,a\n2,,a\n3,3,b\n".as_bytes(), &schema()).unwrap();
        let (out, report) = resolve_missing(&frame, MissingPolicy::Impute).unwrap();
        assert_eq!(out.numeric("x").unwrap(), &[Some(1.0), Some(2.0), Some(3.0)]);
        assert_eq!(report.imputed.len(), 1);
        assert_eq!(report.imputed[0].cells, 1);
    }

    #[test]
    fn mode_imputation() {
        let frame =
            read_csv("id,x,c\n1,1,a\n2,2,a\n3,3,b\n4,4,\n".as_bytes(), &schema()).unwrap();
        let (out, _) = resolve_missing(&frame, MissingPolicy::Impute).unwrap();
        assert_eq!(out.value(3, 2), crate::dataset::Value::Level("a".into()));
    }

    #[test]
    fn mode_ties_go_to_smaller_level() {
        let frame = read_csv("id,x,c\n1,1,b\n2,2,a\n3,3,\n".as_bytes(), &schema()).unwrap();
        let (out, _) = resolve_missing(&frame, MissingPolicy::Impute).unwrap();
        assert_eq!(out.value(2, 2), crate::dataset::Value::Level("a".into()));
    }

    #[test]
    fn complete_frame_is_unchanged() {
        let frame = read_csv("id,x,c\n1,1,a\n2,2,b\n".as_bytes(), &schema()).unwrap();
        for policy in [MissingPolicy::Impute, MissingPolicy::DropRow] {
            let (out, report) = resolve_missing(&frame, policy).unwrap();
            assert_eq!(out, frame);
            assert_eq!(report.rows_dropped, 0);
            assert!(report.imputed.is_empty());
        }
    }

    #[test]
    fn drop_row_removes_incomplete_rows() {
        let frame = read_csv("id,x,c\n1,1,a\n,2,b\n3,,b\n".as_bytes(), &schema()).unwrap();
        let (out, report) = resolve_missing(&frame, MissingPolicy::DropRow).unwrap();
        assert_eq!(out.n_rows(), 1);
        assert_eq!(report.rows_dropped, 2);
    }

    #[test]
    fn entirely_missing_column_cannot_be_imputed() {
        let frame = read_csv("id,x,c\n1,,a\n2,,b\n".as_bytes(), &schema()).unwrap();
        assert!(matches!(
            resolve_missing(&frame, MissingPolicy::Impute),
            Err(DatasetError::EntirelyMissing(c)) if c == "x"
        ));
    }
}
