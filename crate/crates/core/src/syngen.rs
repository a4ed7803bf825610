//! Synthetic crash, unit, person and roadway files with planted effects.
//!
//! Routes are chains of contiguous segments starting at milepost 0. Each
//! crash lands on a uniformly chosen segment at a milepost inside it, and
//! every contributing-factor label is drawn from a logistic model whose
//! log-odds add `ln(multiplier)` for each planted effect that applies.
//!
//! The column template is fixed:
//!
//! | file    | column           | role        | class       |
//! |---------|------------------|-------------|-------------|
//! | crash   | crash_id         | identifier  |             |
//! | crash   | route_id         | route_id    |             |
//! | crash   | milepost         | milepost    |             |
//! | crash   | hour             | continuous  | dynamic     |
//! | crash   | weekend          | binary      | dynamic     |
//! | crash   | light_condition  | categorical | dynamic     |
//! | crash   | weather          | categorical | dynamic     |
//! | crash   | surface          | categorical | dynamic     |
//! | crash   | one per factor   | target      |             |
//! | unit    | crash_id         | identifier  |             |
//! | unit    | unit_id          | identifier  |             |
//! | unit    | traffic_control  | categorical | dynamic     |
//! | unit    | vehicle_type     | categorical | dynamic     |
//! | person  | crash_id         | identifier  |             |
//! | person  | person_id        | identifier  |             |
//! | person  | driver_age       | continuous  | dynamic     |
//! | person  | belted           | binary      | dynamic     |
//! | segment | route_id         | route_id    |             |
//! | segment | begin_mp, end_mp | milepost    |             |
//! | segment | aadt_per_lane    | continuous  | static_road |
//! | segment | speed_limit      | continuous  | static_road |
//! | segment | lanes            | continuous  | static_road |
//! | segment | terrain          | categorical | static_road |
//! | segment | access_control   | categorical | static_road |
//! | segment | urban            | binary      | static_road |
//! | segment | curve            | binary      | static_road |
//! | segment | lighting_present | binary      | static_road |
//!
//! Planted effects may reference any feature column above. Effects on unit
//! or person features apply to the first unit/person row of a crash, the
//! one a join keeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    write_csv_file, ColumnData, ColumnRole, ColumnSpec, DatasetError, FeatureClass, Frame, Schema,
};
use crate::rng::{self, Purpose};

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GenError>;

/// How a planted effect selects crashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectKind {
    /// `lo <= x < hi`; when `lo > hi` the window wraps (`x >= lo || x < hi`).
    Window { lo: f64, hi: f64 },
    /// A categorical level, or `"0"`/`"1"` for a binary feature.
    Level { level: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub factor: String,
    pub feature: String,
    #[serde(flatten)]
    pub kind: EffectKind,
    /// Odds multiplier applied when the effect is active.
    pub multiplier: f64,
}

impl PlantedEffect {
    pub fn window(factor: &str, feature: &str, lo: f64, hi: f64, multiplier: f64) -> Self {
        PlantedEffect {
            factor: factor.into(),
            feature: feature.into(),
            kind: EffectKind::Window { lo, hi },
            multiplier,
        }
    }

    pub fn level(factor: &str, feature: &str, level: &str, multiplier: f64) -> Self {
        PlantedEffect {
            factor: factor.into(),
            feature: feature.into(),
            kind: EffectKind::Level {
                level: level.into(),
            },
            multiplier,
        }
    }

    fn applies(&self, value: &Cell) -> bool {
        match (&self.kind, value) {
            (EffectKind::Window { lo, hi }, Cell::Number(x)) => {
                if lo <= hi {
                    *lo <= *x && *x < *hi
                } else {
                    *x >= *lo || *x < *hi
                }
            }
            (EffectKind::Level { level }, Cell::Number(x)) => level.parse::<f64>().ok() == Some(*x),
            (EffectKind::Level { level }, Cell::Level(l)) => level == l,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub crashes: usize,
    pub segments: usize,
    pub segments_per_route: usize,
    /// Positive rate of each contributing factor with no effect active.
    pub base_rates: BTreeMap<String, f64>,
    pub effects: Vec<PlantedEffect>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            crashes: 10_000,
            segments: 1_000,
            segments_per_route: 25,
            base_rates: [("alcohol", 0.06), ("distracted", 0.15), ("speeding", 0.10)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            effects: Vec::new(),
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Three effects on `alcohol`: a late-night hour window (23:00 to 04:00,
    /// odds ×6), curved segments (×5) and rain (×4).
    pub fn with_default_effects(mut self) -> Self {
        self.effects = vec![
            PlantedEffect::window("alcohol", "hour", 23.0, 4.0, 6.0),
            PlantedEffect::level("alcohol", "curve", "1", 5.0),
            PlantedEffect::level("alcohol", "weather", "rain", 4.0),
        ];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GenError::Config(m));
        if self.crashes < 100 {
            return bad(format!("crash count must be at least 100, got {}", self.crashes));
        }
        if self.segments == 0 || self.segments_per_route == 0 {
            return bad("segment and segments-per-route counts must be positive".into());
        }
        if self.base_rates.is_empty() {
            return bad("at least one contributing factor is required".into());
        }
        for (factor, rate) in &self.base_rates {
            if !(*rate > 0.0 && *rate < 1.0) {
                return bad(format!("base rate of `{factor}` must lie in (0, 1), got {rate}"));
            }
            if TEMPLATE.iter().any(|c| c.name == factor.as_str()) {
                return bad(format!("factor `{factor}` clashes with a template column"));
            }
        }
        for e in &self.effects {
            if !self.base_rates.contains_key(&e.factor) {
                return bad(format!("effect targets unknown factor `{}`", e.factor));
            }
            if !(e.multiplier > 0.0 && e.multiplier.is_finite()) {
                return bad(format!("odds multiplier of `{}` must be positive", e.feature));
            }
            let Some(col) = TEMPLATE.iter().find(|c| c.name == e.feature && c.is_feature()) else {
                return bad(format!("effect references unknown feature `{}`", e.feature));
            };
            match (&e.kind, col.kind) {
                (EffectKind::Window { lo, hi }, Kind::Continuous { .. }) if lo.is_finite() && hi.is_finite() => {}
                (EffectKind::Level { level }, Kind::Categorical(levels))
                    if levels.contains(&level.as_str()) => {}
                (EffectKind::Level { level }, Kind::Binary { .. }) if level == "0" || level == "1" => {}
                _ => {
                    return bad(format!(
                        "effect kind does not fit feature `{}`",
                        e.feature
                    ))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum File {
    Crash,
    Unit,
    Person,
    Segment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Id,
    Route,
    Milepost,
    /// Uniform integer in `[lo, hi]` times `step`.
    Continuous { lo: i64, hi: i64, step: f64 },
    Binary { p: f64 },
    Categorical(&'static [&'static str]),
}

struct TemplateColumn {
    file: File,
    name: &'static str,
    kind: Kind,
    class: FeatureClass,
}

impl TemplateColumn {
    fn is_feature(&self) -> bool {
        matches!(
            self.kind,
            Kind::Continuous { .. } | Kind::Binary { .. } | Kind::Categorical(_)
        )
    }
}

const fn col(file: File, name: &'static str, kind: Kind, class: FeatureClass) -> TemplateColumn {
    TemplateColumn {
        file,
        name,
        kind,
        class,
    }
}

use FeatureClass::{Dynamic as D, StaticRoad as S};

const TEMPLATE: &[TemplateColumn] = &[
    col(File::Crash, "crash_id", Kind::Id, D),
    col(File::Crash, "route_id", Kind::Route, D),
    col(File::Crash, "milepost", Kind::Milepost, D),
    col(File::Crash, "hour", Kind::Continuous { lo: 0, hi: 23, step: 1.0 }, D),
    col(File::Crash, "weekend", Kind::Binary { p: 0.3 }, D),
    col(
        File::Crash,
        "light_condition",
        Kind::Categorical(&["dark_lit", "dark_unlit", "daylight", "dusk_dawn"]),
        D,
    ),
    col(File::Crash, "weather", Kind::Categorical(&["clear", "cloudy", "rain", "snow"]), D),
    col(File::Crash, "surface", Kind::Categorical(&["dry", "ice", "wet"]), D),
    col(File::Unit, "crash_id", Kind::Id, D),
    col(File::Unit, "unit_id", Kind::Id, D),
    col(File::Unit, "traffic_control", Kind::Categorical(&["none", "signal", "stop_sign"]), D),
    col(File::Unit, "vehicle_type", Kind::Categorical(&["car", "motorcycle", "truck"]), D),
    col(File::Person, "crash_id", Kind::Id, D),
    col(File::Person, "person_id", Kind::Id, D),
    col(File::Person, "driver_age", Kind::Continuous { lo: 16, hi: 85, step: 1.0 }, D),
    col(File::Person, "belted", Kind::Binary { p: 0.85 }, D),
    col(File::Segment, "route_id", Kind::Route, S),
    col(File::Segment, "begin_mp", Kind::Milepost, S),
    col(File::Segment, "end_mp", Kind::Milepost, S),
    col(File::Segment, "aadt_per_lane", Kind::Continuous { lo: 5, hi: 120, step: 100.0 }, S),
    col(File::Segment, "speed_limit", Kind::Continuous { lo: 5, hi: 14, step: 5.0 }, S),
    col(File::Segment, "lanes", Kind::Continuous { lo: 1, hi: 4, step: 1.0 }, S),
    col(File::Segment, "terrain", Kind::Categorical(&["flat", "mountainous", "rolling"]), S),
    col(File::Segment, "access_control", Kind::Categorical(&["full", "none", "partial"]), S),
    col(File::Segment, "urban", Kind::Binary { p: 0.4 }, S),
    col(File::Segment, "curve", Kind::Binary { p: 0.3 }, S),
    col(File::Segment, "lighting_present", Kind::Binary { p: 0.35 }, S),
];

/// Rough bounding box of North Carolina, used for segment coordinates.
const LAT_RANGE: (f64, f64) = (33.9, 36.5);
const LON_RANGE: (f64, f64) = (-84.2, -75.6);
const DEGREES_PER_MILE: f64 = 1.0 / 69.0;

/// A sampled feature value.
#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Number(f64),
    Level(String),
}

fn sample_cell<R: Rng>(kind: Kind, rng: &mut R) -> Cell {
    match kind {
        Kind::Continuous { lo, hi, step } => Cell::Number(rng.gen_range(lo..=hi) as f64 * step),
        Kind::Binary { p } => Cell::Number(if rng.gen_bool(p) { 1.0 } else { 0.0 }),
        Kind::Categorical(levels) => Cell::Level(levels[rng.gen_range(0..levels.len())].to_string()),
        Kind::Id | Kind::Route | Kind::Milepost => unreachable!("sampled by the generator"),
    }
}

fn spec_for(c: &TemplateColumn) -> ColumnSpec {
    match c.kind {
        Kind::Id => ColumnSpec::new(c.name, ColumnRole::Identifier),
        Kind::Route => ColumnSpec::new(c.name, ColumnRole::RouteId),
        Kind::Milepost => ColumnSpec::new(c.name, ColumnRole::Milepost),
        Kind::Continuous { .. } => ColumnSpec::new(c.name, ColumnRole::Continuous).with_class(c.class),
        Kind::Binary { .. } => ColumnSpec::new(c.name, ColumnRole::Binary).with_class(c.class),
        Kind::Categorical(levels) => ColumnSpec::new(c.name, ColumnRole::Categorical)
            .with_class(c.class)
            .with_levels(levels.iter().copied()),
    }
}

/// Schema of one generated file. The crash file ends with one target
/// column per factor.
fn schema_of(file: File, factors: &[String]) -> Schema {
    let mut specs: Vec<ColumnSpec> = TEMPLATE
        .iter()
        .filter(|c| c.file == file)
        .map(spec_for)
        .collect();
    if file == File::Crash {
        specs.extend(factors.iter().map(|f| ColumnSpec::new(f.clone(), ColumnRole::Target)));
    }
    Schema::new(specs).expect("template schema is valid")
}

/// Column builder keyed by template column name.
struct Columns {
    schema: Schema,
    data: Vec<ColumnData>,
}

impl Columns {
    fn new(schema: Schema) -> Self {
        let data = schema
            .columns()
            .iter()
            .map(|s| match s.role {
                ColumnRole::Identifier | ColumnRole::RouteId => ColumnData::Text(Vec::new()),
                ColumnRole::Categorical => ColumnData::Categorical(Vec::new()),
                _ => ColumnData::Numeric(Vec::new()),
            })
            .collect();
        Columns { schema, data }
    }

    fn push(&mut self, name: &str, value: Cell) {
        let i = self.schema.index_of(name).expect("template column");
        match (&mut self.data[i], value) {
            (ColumnData::Numeric(v), Cell::Number(x)) => v.push(Some(x)),
            (ColumnData::Categorical(v), Cell::Level(l)) => {
                let code = self.schema.columns()[i]
                    .levels()
                    .iter()
                    .position(|x| *x == l)
                    .expect("declared level");
                v.push(Some(code as u32));
            }
            _ => unreachable!("cell kind matches column role"),
        }
    }

    fn push_text(&mut self, name: &str, value: String) {
        let i = self.schema.index_of(name).expect("template column");
        match &mut self.data[i] {
            ColumnData::Text(v) => v.push(Some(value)),
            _ => unreachable!("text column"),
        }
    }

    fn finish(self) -> Frame {
        Frame::new(self.schema, self.data).expect("generated frame is valid")
    }
}

/// Empirical positive rates for one planted effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectOutcome {
    #[serde(flatten)]
    pub effect: PlantedEffect,
    pub crashes_inside: usize,
    pub rate_inside: f64,
    pub crashes_outside: usize,
    pub rate_outside: f64,
}

/// Ground-truth table written alongside the generated files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub crashes: usize,
    pub segments: usize,
    pub base_rates: BTreeMap<String, f64>,
    pub positive_rates: BTreeMap<String, f64>,
    pub effects: Vec<EffectOutcome>,
}

/// Segment location with its sidecar coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SidecarRow {
    pub route_id: String,
    pub begin_mp: f64,
    pub end_mp: f64,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub crash: Frame,
    pub unit: Frame,
    pub person: Frame,
    pub segments: Frame,
    pub sidecar: Vec<SidecarRow>,
    pub truth: GroundTruth,
}

/// File names written by [`Generated::write_to`].
pub mod files {
    pub const CRASH: &str = "crash.csv";
    pub const UNIT: &str = "unit.csv";
    pub const PERSON: &str = "person.csv";
    pub const SEGMENTS: &str = "segments.csv";
    pub const COORDINATES: &str = "coords.csv";
    pub const TRUTH: &str = "truth.json";

    /// Schema file paired with a data file: `crash.csv` → `crash.schema.toml`.
    pub fn schema_for(data: &str) -> String {
        format!("{}.schema.toml", data.trim_end_matches(".csv"))
    }
}

struct Segment {
    route: String,
    begin: i64,
    end: i64,
    cells: Vec<(&'static str, Cell)>,
    lat: f64,
    lon: f64,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn segments<R: Rng>(config: &GenConfig, rng: &mut R) -> Vec<Segment> {
    let mut out = Vec::with_capacity(config.segments);
    let per_route = config.segments_per_route;
    let n_routes = config.segments.div_ceil(per_route);
    for r in 0..n_routes {
        let route = format!("R{:04}", r + 1);
        let lat0 = rng.gen_range(LAT_RANGE.0..LAT_RANGE.1);
        let lon0 = rng.gen_range(LON_RANGE.0..LON_RANGE.1);
        let heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut begin = 0i64;
        let count = per_route.min(config.segments - r * per_route);
        for _ in 0..count {
            // Lengths in thousandths of a mile keep boundaries exact in CSV.
            let end = begin + rng.gen_range(200..=2000);
            let cells = TEMPLATE
                .iter()
                .filter(|c| c.file == File::Segment && c.is_feature())
                .map(|c| (c.name, sample_cell(c.kind, rng)))
                .collect();
            let mid = (begin + end) as f64 / 2000.0 * DEGREES_PER_MILE;
            out.push(Segment {
                route: route.clone(),
                begin,
                end,
                cells,
                lat: round6((lat0 + mid * heading.sin()).clamp(LAT_RANGE.0, LAT_RANGE.1)),
                lon: round6((lon0 + mid * heading.cos()).clamp(LON_RANGE.0, LON_RANGE.1)),
            });
            begin = end;
        }
    }
    out
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generates crash, unit, person and segment frames from `config`.
pub fn generate(config: &GenConfig) -> Result<Generated> {
    config.validate()?;
    let factors: Vec<String> = config.base_rates.keys().cloned().collect();
    let mut seg_rng: ChaCha8Rng = rng::stream(config.seed, Purpose::Generator, 0);
    let mut crash_rng: ChaCha8Rng = rng::stream(config.seed, Purpose::Generator, 1);
    let mut label_rng: ChaCha8Rng = rng::stream(config.seed, Purpose::Generator, 2);

    let segs = segments(config, &mut seg_rng);
    let mut seg_cols = Columns::new(schema_of(File::Segment, &factors));
    let mut sidecar = Vec::with_capacity(segs.len());
    for s in &segs {
        seg_cols.push_text("route_id", s.route.clone());
        seg_cols.push("begin_mp", Cell::Number(s.begin as f64 / 1000.0));
        seg_cols.push("end_mp", Cell::Number(s.end as f64 / 1000.0));
        for (name, cell) in &s.cells {
            seg_cols.push(name, cell.clone());
        }
        sidecar.push(SidecarRow {
            route_id: s.route.clone(),
            begin_mp: s.begin as f64 / 1000.0,
            end_mp: s.end as f64 / 1000.0,
            lat: s.lat,
            lon: s.lon,
        });
    }

    let mut crash_cols = Columns::new(schema_of(File::Crash, &factors));
    let mut unit_cols = Columns::new(schema_of(File::Unit, &factors));
    let mut person_cols = Columns::new(schema_of(File::Person, &factors));
    let mut positives: BTreeMap<&str, usize> = factors.iter().map(|f| (f.as_str(), 0)).collect();
    let mut outcomes = vec![[0usize; 4]; config.effects.len()];

    for c in 0..config.crashes {
        let id = format!("C{:07}", c + 1);
        let seg = &segs[crash_rng.gen_range(0..segs.len())];
        let mp = crash_rng.gen_range(seg.begin..seg.end) as f64 / 1000.0;
        crash_cols.push_text("crash_id", id.clone());
        crash_cols.push_text("route_id", seg.route.clone());
        crash_cols.push("milepost", Cell::Number(mp));

        let mut values: BTreeMap<&str, Cell> = seg.cells.iter().cloned().collect();
        for file in [File::Crash, File::Unit, File::Person] {
            for t in TEMPLATE.iter().filter(|t| t.file == file && t.is_feature()) {
                values.insert(t.name, sample_cell(t.kind, &mut crash_rng));
            }
        }
        for t in TEMPLATE.iter().filter(|t| t.file == File::Crash && t.is_feature()) {
            crash_cols.push(t.name, values[t.name].clone());
        }

        let mut log_odds: BTreeMap<&str, f64> =
            config.base_rates.iter().map(|(f, p)| (f.as_str(), logit(*p))).collect();
        let active: Vec<bool> = config
            .effects
            .iter()
            .map(|e| e.applies(&values[e.feature.as_str()]))
            .collect();
        for (e, &on) in config.effects.iter().zip(&active) {
            if on {
                *log_odds.get_mut(e.factor.as_str()).expect("validated factor") += e.multiplier.ln();
            }
        }
        let mut labels: BTreeMap<&str, bool> = BTreeMap::new();
        for (factor, lo) in &log_odds {
            let y = label_rng.gen_bool(sigmoid(*lo));
            labels.insert(factor, y);
            if y {
                *positives.get_mut(factor).expect("factor") += 1;
            }
            crash_cols.push(factor, Cell::Number(if y { 1.0 } else { 0.0 }));
        }
        for ((e, &on), counts) in config.effects.iter().zip(&active).zip(&mut outcomes) {
            let y = labels[e.factor.as_str()] as usize;
            if on {
                counts[0] += 1;
                counts[1] += y;
            } else {
                counts[2] += 1;
                counts[3] += y;
            }
        }

        // The first unit and person carry the sampled values; extra rows
        // get fresh draws, as the join ignores them.
        for u in 0..crash_rng.gen_range(1..=3) {
            unit_cols.push_text("crash_id", id.clone());
            unit_cols.push_text("unit_id", format!("{id}-U{}", u + 1));
            for t in TEMPLATE.iter().filter(|t| t.file == File::Unit && t.is_feature()) {
                let v = if u == 0 { values[t.name].clone() } else { sample_cell(t.kind, &mut crash_rng) };
                unit_cols.push(t.name, v);
            }
        }
        for p in 0..crash_rng.gen_range(1..=4) {
            person_cols.push_text("crash_id", id.clone());
            person_cols.push_text("person_id", format!("{id}-P{}", p + 1));
            for t in TEMPLATE.iter().filter(|t| t.file == File::Person && t.is_feature()) {
                let v = if p == 0 { values[t.name].clone() } else { sample_cell(t.kind, &mut crash_rng) };
                person_cols.push(t.name, v);
            }
        }
    }

    let rate = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let truth = GroundTruth {
        seed: config.seed,
        crashes: config.crashes,
        segments: segs.len(),
        base_rates: config.base_rates.clone(),
        positive_rates: positives
            .iter()
            .map(|(f, k)| (f.to_string(), rate(*k, config.crashes)))
            .collect(),
        effects: config
            .effects
            .iter()
            .zip(&outcomes)
            .map(|(e, c)| EffectOutcome {
                effect: e.clone(),
                crashes_inside: c[0],
                rate_inside: rate(c[1], c[0]),
                crashes_outside: c[2],
                rate_outside: rate(c[3], c[2]),
            })
            .collect(),
    };
    Ok(Generated {
        crash: crash_cols.finish(),
        unit: unit_cols.finish(),
        person: person_cols.finish(),
        segments: seg_cols.finish(),
        sidecar,
        truth,
    })
}

impl Generated {
    /// Writes every file plus its schema into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (name, frame) in [
            (files::CRASH, &self.crash),
            (files::UNIT, &self.unit),
            (files::PERSON, &self.person),
            (files::SEGMENTS, &self.segments),
        ] {
            write_csv_file(frame, dir.join(name))?;
            frame.schema().save(dir.join(files::schema_for(name)))?;
        }
        let mut coords = String::from("route_id,begin_mp,end_mp,lat,lon\n");
        for r in &self.sidecar {
            let _ = writeln!(coords, "{},{},{},{},{}", r.route_id, r.begin_mp, r.end_mp, r.lat, r.lon);
        }
        std::fs::write(dir.join(files::COORDINATES), coords)?;
        let mut truth = serde_json::to_string_pretty(&self.truth)?;
        truth.push('\n');
        std::fs::write(dir.join(files::TRUTH), truth)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            crashes: 2000,
            segments: 60,
            segments_per_route: 7,
            seed: 4,
            ..GenConfig::default()
        }
    }

    #[test]
    fn unknown_feature_is_a_config_error() {
        let mut cfg = small();
        cfg.effects = vec![PlantedEffect::level("alcohol", "moon_phase", "full", 2.0)];
        assert!(matches!(generate(&cfg), Err(GenError::Config(m)) if m.contains("moon_phase")));
        cfg.effects = vec![PlantedEffect::level("alcohol", "weather", "hail", 2.0)];
        assert!(generate(&cfg).is_err());
        cfg.effects = vec![PlantedEffect::window("alcohol", "weather", 0.0, 1.0, 2.0)];
        assert!(generate(&cfg).is_err());
        cfg.effects = vec![PlantedEffect::level("drowsy", "curve", "1", 2.0)];
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn small_configs_are_rejected() {
        let cfg = GenConfig {
            crashes: 99,
            ..small()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn crashes_lie_inside_their_segment() {
        let g = generate(&small()).unwrap();
        assert_eq!(g.segments.n_rows(), 60);
        let seg_routes = g.segments.text("route_id").unwrap();
        let begins = g.segments.numeric("begin_mp").unwrap();
        let ends = g.segments.numeric("end_mp").unwrap();
        let routes = g.crash.text("route_id").unwrap();
        let mps = g.crash.numeric("milepost").unwrap();
        for (route, mp) in routes.iter().zip(mps) {
            let hits = (0..g.segments.n_rows())
                .filter(|&s| {
                    seg_routes[s] == *route && begins[s].unwrap() <= mp.unwrap() && mp.unwrap() < ends[s].unwrap()
                })
                .count();
            assert_eq!(hits, 1);
        }
    }

    #[test]
    fn window_wraps_midnight() {
        let e = PlantedEffect::window("alcohol", "hour", 23.0, 4.0, 6.0);
        for (h, inside) in [(23.0, true), (0.0, true), (3.0, true), (4.0, false), (22.0, false)] {
            assert_eq!(e.applies(&Cell::Number(h)), inside, "hour {h}");
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.crash, b.crash);
        assert_eq!(a.person, b.person);
        assert_eq!(a.truth, b.truth);
    }
}
