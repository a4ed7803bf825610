//! Typed tabular data model.
//!
//! A [`Frame`] is a column-major table whose columns each carry exactly one
//! [`ColumnRole`]. Storage follows the role: numeric roles hold `f64`,
//! categorical columns hold codes into a level list, identifiers and route
//! ids hold strings. A missing cell is `None` in every storage kind.
//!
//! Frames are built once and never mutated in place; every operation in this
//! module returns a new frame.

mod csv_io;
mod encode;
mod join;
mod missing;
mod schema;
mod segments;

pub use csv_io::{load_csv, read_csv, write_csv, write_csv_file};
pub use encode::encode_dummies;
pub use join::{join_records, JoinReport};
pub use missing::{resolve_missing, ImputeAction, MissingPolicy, MissingReport};
pub use schema::{ColumnRole, ColumnSpec, FeatureClass, Schema};
pub use segments::{
    attach_coordinates, load_coordinate_sidecar, map_to_segments, Coordinates, SegmentMatchReport,
    SegmentRecord, SegmentSet,
};

use std::collections::HashSet;

/// Reserved name of the provenance column added by oversampling; 1 marks a
/// synthetic row. Never used as a model feature.
pub const SYNTHETIC_COLUMN: &str = "_synthetic";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("column `{0}` is declared in the schema but missing from the file")]
    MissingColumn(String),
    #[error("column `{0}` is present in the file but not declared in the schema")]
    UndeclaredColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    /// `row` is the 1-based data row (the header is not counted).
    #[error("row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },
    #[error("invalid frame: {0}")]
    Invalid(String),
    #[error("duplicate identifier {key:?} in crash frame")]
    DuplicateKey { key: Vec<String> },
    #[error("overlapping segments on route `{route}`: [{first_begin}, {first_end}) and [{second_begin}, {second_end})")]
    OverlappingSegments {
        route: String,
        first_begin: f64,
        first_end: f64,
        second_begin: f64,
        second_end: f64,
    },
    #[error("column `{0}` has no observed values to impute from")]
    EntirelyMissing(String),
    #[error("column `{column}` contains missing values; resolve them before modeling")]
    MissingValues { column: String },
    #[error("categorical column `{0}` must be dummy-encoded before modeling")]
    NotEncoded(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Per-column storage.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<u32>>),
    Text(Vec<Option<String>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::Categorical(v) => v[row].is_none(),
            ColumnData::Text(v) => v[row].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&r| self.is_missing(r)).count()
    }

    pub fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&r| v[r]).collect())
            }
            ColumnData::Text(v) => ColumnData::Text(rows.iter().map(|&r| v[r].clone()).collect()),
        }
    }

    fn storage_name(&self) -> &'static str {
        match self {
            ColumnData::Numeric(_) => "numeric",
            ColumnData::Categorical(_) => "categorical",
            ColumnData::Text(_) => "text",
        }
    }
}

/// A single typed cell, used where callers need row-wise access.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Missing,
    Number(f64),
    Level(String),
    Text(String),
}

/// Immutable column-major table.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    schema: Schema,
    columns: Vec<ColumnData>,
    n_rows: usize,
}

impl Frame {
    /// Builds a frame and checks every invariant: equal column lengths,
    /// storage matching roles, binary/target cells in {0,1}, finite
    /// non-negative mileposts and valid categorical codes.
    pub fn new(schema: Schema, columns: Vec<ColumnData>) -> Result<Frame> {
        if schema.len() != columns.len() {
            return Err(DatasetError::Invalid(format!(
                "schema has {} columns but {} data columns were supplied",
                schema.len(),
                columns.len()
            )));
        }
        schema.validate()?;
        let n_rows = columns.first().map_or(0, ColumnData::len);
        for (spec, data) in schema.columns().iter().zip(&columns) {
            if data.len() != n_rows {
                return Err(DatasetError::Invalid(format!(
                    "column `{}` has {} rows, expected {}",
                    spec.name,
                    data.len(),
                    n_rows
                )));
            }
            validate_column(spec, data)?;
        }
        Ok(Frame {
            schema,
            columns,
            n_rows,
        })
    }

    pub fn empty(schema: Schema) -> Result<Frame> {
        let columns = schema
            .columns()
            .iter()
            .map(|spec| match spec.role.storage() {
                Storage::Numeric => ColumnData::Numeric(Vec::new()),
                Storage::Categorical => ColumnData::Categorical(Vec::new()),
                Storage::Text => ColumnData::Text(Vec::new()),
            })
            .collect();
        Frame::new(schema, columns)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> impl Iterator<Item = (&ColumnSpec, &ColumnData)> {
        self.schema.columns().iter().zip(&self.columns)
    }

    pub fn names(&self) -> Vec<&str> {
        self.schema.names()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.schema.index_of(name)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    pub fn spec(&self, name: &str) -> Result<&ColumnSpec> {
        self.index_of(name)
            .map(|i| &self.schema.columns()[i])
            .ok_or_else(|| DatasetError::UnknownColumn(name.to_string()))
    }

    pub fn data(&self, name: &str) -> Result<&ColumnData> {
        self.index_of(name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| DatasetError::UnknownColumn(name.to_string()))
    }

    pub fn data_at(&self, index: usize) -> &ColumnData {
        &self.columns[index]
    }

    pub fn numeric(&self, name: &str) -> Result<&[Option<f64>]> {
        match self.data(name)? {
            ColumnData::Numeric(v) => Ok(v),
            other => Err(DatasetError::Invalid(format!(
                "column `{name}` is {} not numeric",
                other.storage_name()
            ))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&[Option<String>]> {
        match self.data(name)? {
            ColumnData::Text(v) => Ok(v),
            other => Err(DatasetError::Invalid(format!(
                "column `{name}` is {} not text",
                other.storage_name()
            ))),
        }
    }

    pub fn categorical(&self, name: &str) -> Result<&[Option<u32>]> {
        match self.data(name)? {
            ColumnData::Categorical(v) => Ok(v),
            other => Err(DatasetError::Invalid(format!(
                "column `{name}` is {} not categorical",
                other.storage_name()
            ))),
        }
    }

    pub fn value(&self, row: usize, col: usize) -> Value {
        let spec = &self.schema.columns()[col];
        match &self.columns[col] {
            ColumnData::Numeric(v) => v[row].map_or(Value::Missing, Value::Number),
            ColumnData::Categorical(v) => match v[row] {
                Some(code) => Value::Level(spec.levels()[code as usize].clone()),
                None => Value::Missing,
            },
            ColumnData::Text(v) => v[row].clone().map_or(Value::Missing, Value::Text),
        }
    }

    /// Binary label vector of a target (or binary) column.
    pub fn labels(&self, target: &str) -> Result<Vec<u8>> {
        let spec = self.spec(target)?;
        if !matches!(spec.role, ColumnRole::Target | ColumnRole::Binary) {
            return Err(DatasetError::Invalid(format!(
                "column `{target}` is not a binary target"
            )));
        }
        self.numeric(target)?
            .iter()
            .map(|v| match v {
                Some(x) => Ok(*x as u8),
                None => Err(DatasetError::MissingValues {
                    column: target.to_string(),
                }),
            })
            .collect()
    }

    /// Provenance flags: `true` for rows produced by oversampling.
    pub fn synthetic_flags(&self) -> Vec<bool> {
        match self.numeric(SYNTHETIC_COLUMN) {
            Ok(v) => v.iter().map(|x| *x == Some(1.0)).collect(),
            Err(_) => vec![false; self.n_rows],
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Frame {
        Frame {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n_rows: rows.len(),
        }
    }

    /// Returns the frame without the named columns. Unknown names are an error.
    pub fn drop_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Frame> {
        let mut drop = HashSet::new();
        for name in names {
            let name = name.as_ref();
            if !self.has_column(name) {
                return Err(DatasetError::UnknownColumn(name.to_string()));
            }
            drop.insert(name);
        }
        let mut specs = Vec::new();
        let mut columns = Vec::new();
        for (spec, data) in self.columns() {
            if !drop.contains(spec.name.as_str()) {
                specs.push(spec.clone());
                columns.push(data.clone());
            }
        }
        Ok(Frame {
            schema: Schema::new(specs)?,
            columns,
            n_rows: self.n_rows,
        })
    }

    /// Appends columns to the right of the frame.
    pub fn with_columns(&self, extra: Vec<(ColumnSpec, ColumnData)>) -> Result<Frame> {
        let mut specs = self.schema.columns().to_vec();
        let mut columns = self.columns.clone();
        for (spec, data) in extra {
            specs.push(spec);
            columns.push(data);
        }
        Frame::new(Schema::new(specs)?, columns)
    }

    /// Stacks `other` below `self`. Both frames must share the same schema.
    pub fn concat_rows(&self, other: &Frame) -> Result<Frame> {
        if self.schema != other.schema {
            return Err(DatasetError::Invalid(
                "cannot stack frames with different schemas".into(),
            ));
        }
        let columns = self
            .columns
            .iter()
            .zip(&other.columns)
            .map(|(a, b)| match (a, b) {
                (ColumnData::Numeric(a), ColumnData::Numeric(b)) => {
                    ColumnData::Numeric(a.iter().chain(b).copied().collect())
                }
                (ColumnData::Categorical(a), ColumnData::Categorical(b)) => {
                    ColumnData::Categorical(a.iter().chain(b).copied().collect())
                }
                (ColumnData::Text(a), ColumnData::Text(b)) => {
                    ColumnData::Text(a.iter().chain(b).cloned().collect())
                }
                _ => unreachable!("equal schemas imply equal storage"),
            })
            .collect();
        Ok(Frame {
            schema: self.schema.clone(),
            columns,
            n_rows: self.n_rows + other.n_rows,
        })
    }

    /// Indices of the columns a model may use: continuous and binary roles,
    /// excluding the provenance column.
    pub fn feature_indices(&self) -> Vec<usize> {
        self.schema
            .columns()
            .iter()
            .enumerate()
            .filter(|(_, spec)| spec.is_model_feature())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.feature_indices()
            .into_iter()
            .map(|i| self.schema.columns()[i].name.clone())
            .collect()
    }

    /// Dense feature matrix of every model feature. Fails on un-encoded
    /// categorical columns and on missing cells.
    pub fn feature_matrix(&self) -> Result<FeatureMatrix> {
        for spec in self.schema.columns() {
            if spec.role == ColumnRole::Categorical {
                return Err(DatasetError::NotEncoded(spec.name.clone()));
            }
        }
        let indices = self.feature_indices();
        let names: Vec<String> = indices
            .iter()
            .map(|&i| self.schema.columns()[i].name.clone())
            .collect();
        self.matrix_for(&names)
    }

    /// Dense matrix of the named numeric columns, in the given order.
    pub fn matrix_for<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureMatrix> {
        let mut out = FeatureMatrix {
            names: Vec::with_capacity(names.len()),
            classes: Vec::with_capacity(names.len()),
            columns: Vec::with_capacity(names.len()),
            n_rows: self.n_rows,
        };
        for name in names {
            let name = name.as_ref();
            let spec = self.spec(name)?;
            let values = self.numeric(name)?;
            let column = values
                .iter()
                .map(|v| {
                    v.ok_or_else(|| DatasetError::MissingValues {
                        column: name.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            out.names.push(name.to_string());
            out.classes.push(spec.class);
            out.columns.push(column);
        }
        Ok(out)
    }
}

/// Column-major dense matrix of model features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub classes: Vec<FeatureClass>,
    pub columns: Vec<Vec<f64>>,
    pub n_rows: usize,
}

impl FeatureMatrix {
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> FeatureMatrix {
        let n_rows = columns.first().map_or(0, Vec::len);
        assert!(columns.iter().all(|c| c.len() == n_rows), "ragged columns");
        assert_eq!(names.len(), columns.len());
        FeatureMatrix {
            classes: vec![FeatureClass::default(); names.len()],
            names,
            columns,
            n_rows,
        }
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows).map(|i| self.row(i)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            classes: self.classes.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            n_rows: rows.len(),
        }
    }
}

pub(crate) enum Storage {
    Numeric,
    Categorical,
    Text,
}

fn validate_column(spec: &ColumnSpec, data: &ColumnData) -> Result<()> {
    let storage_ok = matches!(
        (spec.role.storage(), data),
        (Storage::Numeric, ColumnData::Numeric(_))
            | (Storage::Categorical, ColumnData::Categorical(_))
            | (Storage::Text, ColumnData::Text(_))
    );
    if !storage_ok {
        return Err(DatasetError::Invalid(format!(
            "column `{}` with role {} cannot hold {} data",
            spec.name,
            spec.role,
            data.storage_name()
        )));
    }
    match data {
        ColumnData::Numeric(values) => {
            for (row, v) in values.iter().enumerate() {
                if let Some(x) = v {
                    check_numeric(spec, *x).map_err(|message| DatasetError::Cell {
                        row: row + 1,
                        column: spec.name.clone(),
                        message,
                    })?;
                }
            }
        }
        ColumnData::Categorical(codes) => {
            let k = spec.levels().len() as u32;
            if let Some(row) = codes.iter().position(|c| matches!(c, Some(c) if *c >= k)) {
                return Err(DatasetError::Cell {
                    row: row + 1,
                    column: spec.name.clone(),
                    message: "level code out of range".into(),
                });
            }
        }
        ColumnData::Text(_) => {}
    }
    Ok(())
}

pub(crate) fn check_numeric(spec: &ColumnSpec, x: f64) -> std::result::Result<(), String> {
    if !x.is_finite() {
        return Err(format!("non-finite value {x}"));
    }
    match spec.role {
        ColumnRole::Binary | ColumnRole::Target if x != 0.0 && x != 1.0 => {
            Err(format!("binary value must be 0 or 1, found {x}"))
        }
        ColumnRole::Milepost if x < 0.0 => Err(format!("negative milepost {x}")),
        _ => Ok(()),
    }
}
