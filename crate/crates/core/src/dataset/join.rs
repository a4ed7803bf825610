use std::collections::{HashMap, HashSet};

use serde::Serialize;

use super::{ColumnData, ColumnSpec, DatasetError, Frame, Result};

/// Counts produced by [`join_records`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct JoinReport {
    pub crash_rows: usize,
    pub output_rows: usize,
    pub dropped_no_unit: usize,
    pub dropped_no_person: usize,
    /// Crashes with more than one unit row; the first by file order was used.
    pub multi_unit: usize,
    /// Crashes with more than one person row; the first by file order was used.
    pub multi_person: usize,
}

impl JoinReport {
    pub fn dropped(&self) -> usize {
        self.dropped_no_unit + self.dropped_no_person
    }
}

/// Joins unit and person features onto crash rows by identifier keys.
///
/// One output row per crash that has at least one unit and one person row.
/// The first matching unit/person row (file order) supplies the appended
/// features. Key columns are not repeated.
pub fn join_records<S: AsRef<str>>(
    crash: &Frame,
    unit: &Frame,
    person: &Frame,
    keys: &[S],
) -> Result<(Frame, JoinReport)> {
    let keys: Vec<&str> = keys.iter().map(AsRef::as_ref).collect();
    if keys.is_empty() {
        return Err(DatasetError::Invalid("join needs at least one key column".into()));
    }

    let crash_keys = key_tuples(crash, &keys)?;
    let mut seen = HashSet::new();
    for key in &crash_keys {
        if !seen.insert(key) {
            return Err(DatasetError::DuplicateKey { key: key.clone() });
        }
    }

    let unit_index = first_rows(unit, &keys)?;
    let person_index = first_rows(person, &keys)?;

    let mut report = JoinReport {
        crash_rows: crash.n_rows(),
        ..JoinReport::default()
    };
    let mut crash_rows = Vec::new();
    let mut unit_rows = Vec::new();
    let mut person_rows = Vec::new();
    for (row, key) in crash_keys.iter().enumerate() {
        let Some(&(u, n_units)) = unit_index.get(key) else {
            report.dropped_no_unit += 1;
            continue;
        };
        let Some(&(p, n_persons)) = person_index.get(key) else {
            report.dropped_no_person += 1;
            continue;
        };
        if n_units > 1 {
            report.multi_unit += 1;
        }
        if n_persons > 1 {
            report.multi_person += 1;
        }
        crash_rows.push(row);
        unit_rows.push(u);
        person_rows.push(p);
    }
    report.output_rows = crash_rows.len();

    let base = crash.select_rows(&crash_rows);
    let mut extra: Vec<(ColumnSpec, ColumnData)> = Vec::new();
    for (frame, rows) in [(unit, &unit_rows), (person, &person_rows)] {
        for (spec, data) in frame.columns() {
            if keys.contains(&spec.name.as_str()) {
                continue;
            }
            if base.has_column(&spec.name) || extra.iter().any(|(s, _)| s.name == spec.name) {
                return Err(DatasetError::Schema(format!(
                    "column `{}` appears in more than one joined file",
                    spec.name
                )));
            }
            extra.push((spec.clone(), data.select(rows)));
        }
    }
    Ok((base.with_columns(extra)?, report))
}

fn key_tuples(frame: &Frame, keys: &[&str]) -> Result<Vec<Vec<String>>> {
    let columns = keys
        .iter()
        .map(|k| frame.text(k))
        .collect::<Result<Vec<_>>>()?;
    (0..frame.n_rows())
        .map(|row| {
            columns
                .iter()
                .zip(keys)
                .map(|(col, name)| {
                    col[row].clone().ok_or_else(|| DatasetError::Cell {
                        row: row + 1,
                        column: name.to_string(),
                        message: "missing identifier".into(),
                    })
                })
                .collect()
        })
        .collect()
}

/// Key -> (first row by file order, number of rows sharing the key).
fn first_rows(frame: &Frame, keys: &[&str]) -> Result<HashMap<Vec<String>, (usize, usize)>> {
    let mut index: HashMap<Vec<String>, (usize, usize)> = HashMap::new();
    for (row, key) in key_tuples(frame, keys)?.into_iter().enumerate() {
        index.entry(key).and_modify(|e| e.1 += 1).or_insert((row, 1));
    }
    Ok(index)
}
