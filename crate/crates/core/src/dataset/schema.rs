//! Column roles and the schema config file.
//!
//! Schemas are supplied per dataset as TOML, one `[[column]]` table per
//! column:
//!
//! ```toml
//! [[column]]
//! name = "surface"
//! role = "categorical"   # continuous | categorical | binary | identifier |
//!                        # route_id | milepost | coordinate | target
//! class = "dynamic"      # static_road | dynamic (default: dynamic)
//! levels = ["dry", "ice", "wet"]   # optional, categorical only
//! priority = 0           # optional interpretive priority (higher is kept)
//! ```
//!
//! `dummy_of` is written by dummy encoding and names the source column of a
//! dummy; it is not normally set by hand.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result, Storage, SYNTHETIC_COLUMN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Continuous,
    Categorical,
    Binary,
    Identifier,
    RouteId,
    Milepost,
    Coordinate,
    Target,
}

impl ColumnRole {
    pub(crate) fn storage(self) -> Storage {
        match self {
            ColumnRole::Categorical => Storage::Categorical,
            ColumnRole::Identifier | ColumnRole::RouteId => Storage::Text,
            _ => Storage::Numeric,
        }
    }
}

impl fmt::Display for ColumnRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ColumnRole::Continuous => "continuous",
            ColumnRole::Categorical => "categorical",
            ColumnRole::Binary => "binary",
            ColumnRole::Identifier => "identifier",
            ColumnRole::RouteId => "route_id",
            ColumnRole::Milepost => "milepost",
            ColumnRole::Coordinate => "coordinate",
            ColumnRole::Target => "target",
        };
        f.write_str(s)
    }
}

/// Whether a feature describes the road itself (usable by the road-feature
/// model) or the circumstances of a crash.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureClass {
    StaticRoad,
    #[default]
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
    #[serde(default)]
    pub class: FeatureClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub priority: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dummy_of: Option<String>,
}

fn is_zero(v: &i32) -> bool {
    *v == 0
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, role: ColumnRole) -> ColumnSpec {
        ColumnSpec {
            name: name.into(),
            role,
            class: FeatureClass::default(),
            levels: None,
            priority: 0,
            dummy_of: None,
        }
    }

    pub fn with_class(mut self, class: FeatureClass) -> ColumnSpec {
        self.class = class;
        self
    }

    pub fn with_levels<S: Into<String>>(mut self, levels: impl IntoIterator<Item = S>) -> Self {
        self.levels = Some(levels.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_priority(mut self, priority: i32) -> ColumnSpec {
        self.priority = priority;
        self
    }

    pub fn levels(&self) -> &[String] {
        self.levels.as_deref().unwrap_or(&[])
    }

    /// Continuous and binary columns feed models; the provenance column never does.
    pub fn is_model_feature(&self) -> bool {
        matches!(self.role, ColumnRole::Continuous | ColumnRole::Binary)
            && self.name != SYNTHETIC_COLUMN
    }
}

/// Ordered column declarations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schema {
    #[serde(rename = "column", default)]
    columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Schema> {
        let schema = Schema { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for spec in &self.columns {
            if spec.name.is_empty() {
                return Err(DatasetError::Schema("empty column name".into()));
            }
            if !seen.insert(spec.name.as_str()) {
                return Err(DatasetError::Schema(format!(
                    "duplicate column name `{}`",
                    spec.name
                )));
            }
            if let Some(levels) = &spec.levels {
                if spec.role != ColumnRole::Categorical {
                    return Err(DatasetError::Schema(format!(
                        "column `{}` declares levels but has role {}",
                        spec.name, spec.role
                    )));
                }
                let mut distinct = HashSet::new();
                if let Some(dup) = levels.iter().find(|l| !distinct.insert(l.as_str())) {
                    return Err(DatasetError::Schema(format!(
                        "column `{}` lists level `{dup}` twice",
                        spec.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Schema> {
        let schema: Schema =
            toml::from_str(text).map_err(|e| DatasetError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes to TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Schema> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            DatasetError::Schema(format!("cannot read schema {}: {e}", path.display()))
        })?;
        Schema::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Columns of the given role, in schema order.
    pub fn with_role(&self, role: ColumnRole) -> Vec<&ColumnSpec> {
        self.columns.iter().filter(|c| c.role == role).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_config_grammar() {
        let text = r#"
            [[column]]
            name = "crash_id"
            role = "identifier"

            [[column]]
            name = "surface"
            role = "categorical"
            class = "static_road"
            levels = ["dry", "wet"]
            priority = 2
        "#;
        let schema = Schema::from_toml_str(text).unwrap();
        assert_eq!(schema.names(), vec!["crash_id", "surface"]);
        let surface = schema.get("surface").unwrap();
        assert_eq!(surface.class, FeatureClass::StaticRoad);
        assert_eq!(surface.levels(), ["dry", "wet"]);
        assert_eq!(surface.priority, 2);
        assert_eq!(schema.get("crash_id").unwrap().class, FeatureClass::Dynamic);

        let back = Schema::from_toml_str(&schema.to_toml_string()).unwrap();
        assert_eq!(back, schema);
    }

    #[test]
    fn rejects_duplicate_names_and_levels() {
        let dup = vec![
            ColumnSpec::new("a", ColumnRole::Continuous),
            ColumnSpec::new("a", ColumnRole::Binary),
        ];
        assert!(Schema::new(dup).is_err());
        let levels =
            vec![ColumnSpec::new("s", ColumnRole::Categorical).with_levels(["x", "y", "x"])];
        assert!(Schema::new(levels).is_err());
    }

    #[test]
    fn rejects_unknown_role() {
        let text = "[[column]]\nname = \"a\"\nrole = \"weird\"\n";
        assert!(matches!(
            Schema::from_toml_str(text),
            Err(DatasetError::Schema(_))
        ));
    }
}
