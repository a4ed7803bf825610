use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use super::{
    check_numeric, ColumnData, ColumnRole, ColumnSpec, DatasetError, Frame, Result, Schema,
    Storage,
};

/// Loads an RFC-4180 CSV file with a header row. The header must name
/// exactly the schema's columns, in any order; columns are stored in schema
/// order and row order is preserved. Empty cells are missing values.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Frame> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(std::io::BufReader::new(file), schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Frame> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();

    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        if schema.index_of(name).is_none() {
            return Err(DatasetError::UndeclaredColumn(name.to_string()));
        }
        if position.insert(name, i).is_some() {
            return Err(DatasetError::Schema(format!(
                "column `{name}` appears twice in the header"
            )));
        }
    }
    let source: Vec<usize> = schema
        .columns()
        .iter()
        .map(|spec| {
            position
                .get(spec.name.as_str())
                .copied()
                .ok_or_else(|| DatasetError::MissingColumn(spec.name.clone()))
        })
        .collect::<Result<_>>()?;

    let mut builders: Vec<Builder> = schema.columns().iter().map(Builder::new).collect();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        for ((spec, builder), &src) in schema.columns().iter().zip(&mut builders).zip(&source) {
            let cell = record.get(src).unwrap_or("");
            builder
                .push(spec, cell.trim())
                .map_err(|message| DatasetError::Cell {
                    row,
                    column: spec.name.clone(),
                    message,
                })?;
        }
    }

    let mut specs = Vec::with_capacity(schema.len());
    let mut columns = Vec::with_capacity(schema.len());
    for (spec, builder) in schema.columns().iter().zip(builders) {
        let (spec, data) = builder.finish(spec.clone());
        specs.push(spec);
        columns.push(data);
    }
    Frame::new(Schema::new(specs)?, columns)
}

enum Builder {
    Numeric(Vec<Option<f64>>),
    Declared {
        index: HashMap<String, u32>,
        codes: Vec<Option<u32>>,
    },
    Observed(Vec<Option<String>>),
    Text(Vec<Option<String>>),
}

impl Builder {
    fn new(spec: &ColumnSpec) -> Builder {
        match spec.role.storage() {
            Storage::Numeric => Builder::Numeric(Vec::new()),
            Storage::Text => Builder::Text(Vec::new()),
            Storage::Categorical => match &spec.levels {
                Some(levels) => Builder::Declared {
                    index: levels
                        .iter()
                        .enumerate()
                        .map(|(i, l)| (l.clone(), i as u32))
                        .collect(),
                    codes: Vec::new(),
                },
                None => Builder::Observed(Vec::new()),
            },
        }
    }

    fn push(&mut self, spec: &ColumnSpec, cell: &str) -> std::result::Result<(), String> {
        let missing = cell.is_empty();
        match self {
            Builder::Numeric(values) => {
                if missing {
                    if spec.role == ColumnRole::Target {
                        return Err("target value is missing".into());
                    }
                    values.push(None);
                } else {
                    let x: f64 = cell
                        .parse()
                        .map_err(|_| format!("cannot parse `{cell}` as a number"))?;
                    check_numeric(spec, x)?;
                    values.push(Some(x));
                }
            }
            Builder::Declared { index, codes } => {
                if missing {
                    codes.push(None);
                } else {
                    let code = index
                        .get(cell)
                        .ok_or_else(|| format!("`{cell}` is not a declared level"))?;
                    codes.push(Some(*code));
                }
            }
            Builder::Observed(values) | Builder::Text(values) => {
                values.push((!missing).then(|| cell.to_string()));
            }
        }
        Ok(())
    }

    fn finish(self, mut spec: ColumnSpec) -> (ColumnSpec, ColumnData) {
        match self {
            Builder::Numeric(v) => (spec, ColumnData::Numeric(v)),
            Builder::Text(v) => (spec, ColumnData::Text(v)),
            Builder::Declared { codes, .. } => (spec, ColumnData::Categorical(codes)),
            Builder::Observed(values) => {
                let levels: Vec<String> = values
                    .iter()
                    .flatten()
                    .cloned()
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let index: HashMap<&str, u32> = levels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l.as_str(), i as u32))
                    .collect();
                let codes = values
                    .iter()
                    .map(|v| v.as_deref().map(|s| index[s]))
                    .collect();
                spec.levels = Some(levels);
                (spec, ColumnData::Categorical(codes))
            }
        }
    }
}

/// Writes a frame as CSV in schema order. Missing cells are written empty;
/// numbers use the shortest representation that parses back exactly.
pub fn write_csv<W: Write>(frame: &Frame, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(frame.names())?;
    let mut record: Vec<String> = Vec::with_capacity(frame.n_cols());
    for row in 0..frame.n_rows() {
        record.clear();
        for (spec, data) in frame.columns() {
            let cell = match data {
                ColumnData::Numeric(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
                ColumnData::Categorical(v) => v[row]
                    .map(|c| spec.levels()[c as usize].clone())
                    .unwrap_or_default(),
                ColumnData::Text(v) => v[row].clone().unwrap_or_default(),
            };
            record.push(cell);
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_csv_file(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv(frame, std::io::BufWriter::new(file))
}
