use super::{ColumnData, ColumnRole, ColumnSpec, Frame, Result, Schema};

/// Replaces every categorical column with one binary column per level,
/// named `<column>=<level>`, in place of the original. Each dummy records
/// its source column in `dummy_of` and inherits class and priority. A
/// missing categorical cell yields missing dummies.
pub fn encode_dummies(frame: &Frame) -> Result<Frame> {
    let mut specs = Vec::new();
    let mut columns = Vec::new();
    for (spec, data) in frame.columns() {
        match data {
            ColumnData::Categorical(codes) if spec.role == ColumnRole::Categorical => {
                for (level_idx, level) in spec.levels().iter().enumerate() {
                    let mut dummy = ColumnSpec::new(format!("{}={}", spec.name, level), ColumnRole::Binary);
                    dummy.class = spec.class;
                    dummy.priority = spec.priority;
                    dummy.dummy_of = Some(spec.name.clone());
                    let values = codes
                        .iter()
                        .map(|c| c.map(|c| if c as usize == level_idx { 1.0 } else { 0.0 }))
                        .collect();
                    specs.push(dummy);
                    columns.push(ColumnData::Numeric(values));
                }
            }
            _ => {
                specs.push(spec.clone());
                columns.push(data.clone());
            }
        }
    }
    Frame::new(Schema::new(specs)?, columns)
}
