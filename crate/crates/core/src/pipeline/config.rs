use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnRole, MissingPolicy, Schema};
use crate::forest::{TrainConfig, Vote};
use crate::resample::BalanceConfig;
use crate::risk::{HeatmapFormat, DEFAULT_THRESHOLD};
use crate::shap::DEFAULT_BACKGROUND;
use crate::syngen::files;

use super::PipelineError;

/// Schema file paired with a data file: `dir/crash.csv` → `dir/crash.schema.toml`.
pub fn schema_path_for(data: &Path) -> PathBuf {
    let stem = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    data.with_file_name(format!("{stem}.schema.toml"))
}

/// Everything one run needs. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Target columns to model. Empty means every target column of the
    /// crash schema.
    #[serde(default)]
    pub factors: Vec<String>,
    pub inputs: InputConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub balance: BalanceSection,
    #[serde(default)]
    pub forest: ForestSection,
    #[serde(default)]
    pub shap: ShapSection,
    #[serde(default)]
    pub risk: RiskSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub crash: PathBuf,
    pub unit: PathBuf,
    pub person: PathBuf,
    pub segments: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash_schema: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_schema: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_schema: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments_schema: Option<PathBuf>,
    /// Optional `route_id,begin_mp,end_mp,lat,lon` sidecar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<PathBuf>,
    #[serde(default = "default_join_keys")]
    pub join_keys: Vec<String>,
    #[serde(default = "default_begin")]
    pub segment_begin: String,
    #[serde(default = "default_end")]
    pub segment_end: String,
}

fn default_join_keys() -> Vec<String> {
    vec!["crash_id".into()]
}

fn default_begin() -> String {
    "begin_mp".into()
}

fn default_end() -> String {
    "end_mp".into()
}

impl InputConfig {
    pub fn crash_schema(&self) -> PathBuf {
        self.crash_schema.clone().unwrap_or_else(|| schema_path_for(&self.crash))
    }

    pub fn unit_schema(&self) -> PathBuf {
        self.unit_schema.clone().unwrap_or_else(|| schema_path_for(&self.unit))
    }

    pub fn person_schema(&self) -> PathBuf {
        self.person_schema.clone().unwrap_or_else(|| schema_path_for(&self.person))
    }

    pub fn segments_schema(&self) -> PathBuf {
        self.segments_schema
            .clone()
            .unwrap_or_else(|| schema_path_for(&self.segments))
    }

    /// Every file the run reads, in ingest order.
    pub fn files(&self) -> Vec<PathBuf> {
        let mut out = vec![
            self.crash.clone(),
            self.crash_schema(),
            self.unit.clone(),
            self.unit_schema(),
            self.person.clone(),
            self.person_schema(),
            self.segments.clone(),
            self.segments_schema(),
        ];
        out.extend(self.coordinates.clone());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub missing: MissingPolicy,
    pub vif_threshold: f64,
    pub corr_threshold: f64,
    pub max_iters: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            missing: MissingPolicy::Impute,
            vif_threshold: 10.0,
            corr_threshold: 0.95,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_fraction: 0.8 }
    }
}

/// [`BalanceConfig`] without the seed, which comes from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undersample_ratio: Option<f64>,
    pub target_ratio: f64,
    pub k: usize,
}

impl Default for BalanceSection {
    fn default() -> Self {
        let d = BalanceConfig::default();
        BalanceSection {
            undersample_ratio: d.undersample_ratio,
            target_ratio: d.target_ratio,
            k: d.k,
        }
    }
}

impl BalanceSection {
    pub fn with_seed(&self, seed: u64) -> BalanceConfig {
        BalanceConfig {
            undersample_ratio: self.undersample_ratio,
            target_ratio: self.target_ratio,
            k: self.k,
            seed,
        }
    }
}

/// [`TrainConfig`] without the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub n_trees: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_features: Option<usize>,
    pub vote: Vote,
}

impl Default for ForestSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        ForestSection {
            n_trees: d.n_trees,
            max_depth: d.max_depth,
            min_samples_leaf: d.min_samples_leaf,
            max_features: d.max_features,
            vote: d.vote,
        }
    }
}

impl ForestSection {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            max_features: self.max_features,
            vote: self.vote,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapSection {
    /// Background rows sampled from the balanced training set.
    pub background: usize,
    /// Test rows explained.
    pub explain_rows: usize,
}

impl Default for ShapSection {
    fn default() -> Self {
        ShapSection {
            background: DEFAULT_BACKGROUND,
            explain_rows: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskSection {
    pub threshold: f64,
    pub formats: Vec<HeatmapFormat>,
}

impl Default for RiskSection {
    fn default() -> Self {
        RiskSection {
            threshold: DEFAULT_THRESHOLD,
            formats: vec![HeatmapFormat::Csv, HeatmapFormat::Geojson],
        }
    }
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl PipelineConfig {
    /// Config for the files [`crate::syngen::Generated::write_to`] writes,
    /// with paths relative to that directory.
    pub fn for_generated() -> PipelineConfig {
        PipelineConfig {
            seed: 0,
            out_dir: PathBuf::from("run"),
            factors: Vec::new(),
            inputs: InputConfig {
                crash: files::CRASH.into(),
                unit: files::UNIT.into(),
                person: files::PERSON.into(),
                segments: files::SEGMENTS.into(),
                crash_schema: None,
                unit_schema: None,
                person_schema: None,
                segments_schema: None,
                coordinates: Some(files::COORDINATES.into()),
                join_keys: default_join_keys(),
                segment_begin: default_begin(),
                segment_end: default_end(),
            },
            preprocess: PreprocessConfig::default(),
            split: SplitConfig::default(),
            balance: BalanceSection::default(),
            forest: ForestSection::default(),
            shap: ShapSection::default(),
            risk: RiskSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<PipelineConfig, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = PipelineConfig::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.out_dir);
        let i = &mut self.inputs;
        for p in [&mut i.crash, &mut i.unit, &mut i.person, &mut i.segments] {
            resolve(base, p);
        }
        for p in [
            &mut i.crash_schema,
            &mut i.unit_schema,
            &mut i.person_schema,
            &mut i.segments_schema,
            &mut i.coordinates,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
    }

    /// Checks values, input files and factors. Returns the factors to model.
    pub fn validate(&self) -> Result<Vec<String>, PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let p = &self.preprocess;
        if !(p.vif_threshold > 1.0) {
            return bad(format!("vif_threshold must exceed 1, got {}", p.vif_threshold));
        }
        if !(p.corr_threshold > 0.0 && p.corr_threshold <= 1.0) {
            return bad(format!("corr_threshold must lie in (0, 1], got {}", p.corr_threshold));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.split.train_fraction
            ));
        }
        self.balance
            .with_seed(self.seed)
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.forest.n_trees == 0 || self.forest.min_samples_leaf == 0 {
            return bad("n_trees and min_samples_leaf must be at least 1".into());
        }
        if self.shap.background == 0 || self.shap.explain_rows == 0 {
            return bad("shap background and explain_rows must be at least 1".into());
        }
        if !(self.risk.threshold >= DEFAULT_THRESHOLD && self.risk.threshold < 1.0) {
            return bad(format!(
                "risk threshold must lie in [0.5, 1), got {}",
                self.risk.threshold
            ));
        }
        if self.inputs.join_keys.is_empty() {
            return bad("join_keys must name at least one column".into());
        }
        for file in self.inputs.files() {
            if !file.is_file() {
                return Err(PipelineError::MissingInput(file));
            }
        }

        let schema = Schema::load(self.inputs.crash_schema())
            .map_err(|e| PipelineError::Config(format!("crash schema: {e}")))?;
        let targets: Vec<String> = schema
            .with_role(ColumnRole::Target)
            .into_iter()
            .map(|c| c.name.clone())
            .collect();
        let factors = if self.factors.is_empty() {
            targets.clone()
        } else {
            self.factors.clone()
        };
        if factors.is_empty() {
            return bad("the crash schema declares no target columns".into());
        }
        for (i, f) in factors.iter().enumerate() {
            if !targets.contains(f) {
                return bad(format!("factor `{f}` is not a target column of the crash schema"));
            }
            if factors[..i].contains(f) {
                return bad(format!("factor `{f}` is listed twice"));
            }
            let safe = f.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !safe || super::RESERVED_DIRS.contains(&f.as_str()) {
                return bad(format!("factor `{f}` cannot be used as a directory name"));
            }
        }
        Ok(factors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_config_round_trips() {
        let cfg = PipelineConfig::for_generated();
        let text = cfg.to_toml_string();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[inputs]\ncrash='a'\nunit='b'\nperson='c'\nsegments='d'\n[forest]\ntrees=3\n";
        assert!(matches!(
            PipelineConfig::from_toml_str(text),
            Err(PipelineError::Config(_))
        ));
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let mut cfg = PipelineConfig::for_generated();
        cfg.resolve_paths(Path::new("/data/nc"));
        assert_eq!(cfg.inputs.crash, PathBuf::from("/data/nc/crash.csv"));
        assert_eq!(cfg.inputs.crash_schema(), PathBuf::from("/data/nc/crash.schema.toml"));
        assert_eq!(cfg.out_dir, PathBuf::from("/data/nc/run"));
    }
}
