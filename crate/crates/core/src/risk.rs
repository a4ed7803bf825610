//! Segment risk scoring and heat-map export.
//!
//! A road-feature model scores each inventory segment from its static
//! features. Scores over 0.5 become heat-map points weighted by the raw
//! confidence; rendering is left to GIS tools.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::dataset::{encode_dummies, Coordinates, DatasetError, SegmentSet};
use crate::forest::{Flavor, RandomForest};

/// Scores must exceed this to appear on a heat map.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum RiskError {
    #[error("segment scoring needs a road-feature model, got a combined-feature model")]
    Flavor,
    #[error("segment {segment} has no value for model feature `{feature}`")]
    MissingFeature { segment: String, feature: String },
    #[error("invalid coordinates ({lat}, {lon}) for segment {segment}")]
    Coordinates { segment: String, lat: f64, lon: f64 },
    #[error("heat-map weight {weight} for segment {segment} is not in (0.5, 1]")]
    Weight { segment: String, weight: f64 },
    #[error("malformed heat map: {0}")]
    Format(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RiskError>;

/// Confidence that a crash on this segment involves `factor`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskScore {
    pub route_id: String,
    pub begin_mp: f64,
    pub end_mp: f64,
    pub factor: String,
    pub confidence: f64,
    pub coordinates: Option<Coordinates>,
}

impl RiskScore {
    pub fn label(&self) -> String {
        format!("{}:[{}, {})", self.route_id, self.begin_mp, self.end_mp)
    }
}

/// Scores every segment with a road-feature model, in segment order.
pub fn score_segments(model: &RandomForest, segments: &SegmentSet, factor: &str) -> Result<Vec<RiskScore>> {
    if model.flavor != Flavor::RoadFeature {
        return Err(RiskError::Flavor);
    }
    let encoded = encode_dummies(segments.features())?;
    let records = segments.records();
    let mut columns = Vec::with_capacity(model.n_features());
    for name in &model.feature_names {
        let values = encoded.numeric(name).map_err(|_| RiskError::MissingFeature {
            segment: records.first().map_or_else(String::new, |r| r.label()),
            feature: name.clone(),
        })?;
        if let Some(row) = values.iter().position(Option::is_none) {
            return Err(RiskError::MissingFeature {
                segment: records[row].label(),
                feature: name.clone(),
            });
        }
        columns.push(values.iter().map(|v| v.unwrap_or_default()).collect::<Vec<f64>>());
    }
    Ok(records
        .par_iter()
        .enumerate()
        .map(|(i, record)| {
            let row: Vec<f64> = columns.iter().map(|c| c[i]).collect();
            RiskScore {
                route_id: record.route_id.clone(),
                begin_mp: record.begin_mp,
                end_mp: record.end_mp,
                factor: factor.to_string(),
                confidence: model
                    .predict_row(&row)
                    .expect("row built in model feature order"),
                coordinates: record.coordinates,
            }
        })
        .collect())
}

/// Scores strictly above `threshold`, order preserved.
pub fn filter_threshold(scores: &[RiskScore], threshold: f64) -> Vec<RiskScore> {
    scores
        .iter()
        .filter(|s| s.confidence > threshold)
        .cloned()
        .collect()
}

/// Confidence of each segment under each model: one row per segment, one
/// column per model. Models are evaluated independently.
pub fn risk_profile(models: &[(&str, &RandomForest)], segments: &SegmentSet) -> Result<Vec<Vec<f64>>> {
    let per_factor = models
        .iter()
        .map(|(factor, model)| score_segments(model, segments, factor))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..segments.len())
        .map(|i| per_factor.iter().map(|s| s[i].confidence).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapFormat {
    Csv,
    Geojson,
}

impl HeatmapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            HeatmapFormat::Csv => "csv",
            HeatmapFormat::Geojson => "geojson",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapPoint {
    pub lat: f64,
    pub lon: f64,
    pub weight: f64,
    pub factor: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExportReport {
    pub exported: usize,
    pub skipped_no_coordinates: usize,
}

/// Heat-map points of the scores that have coordinates. Every score must
/// already be thresholded (weight in (0.5, 1]).
pub fn heatmap_points(scores: &[RiskScore]) -> Result<(Vec<HeatmapPoint>, ExportReport)> {
    let mut points = Vec::new();
    let mut report = ExportReport::default();
    for s in scores {
        if !(s.confidence > DEFAULT_THRESHOLD && s.confidence <= 1.0) {
            return Err(RiskError::Weight {
                segment: s.label(),
                weight: s.confidence,
            });
        }
        let Some(c) = s.coordinates else {
            report.skipped_no_coordinates += 1;
            continue;
        };
        if !((-90.0..=90.0).contains(&c.lat) && (-180.0..=180.0).contains(&c.lon)) {
            return Err(RiskError::Coordinates {
                segment: s.label(),
                lat: c.lat,
                lon: c.lon,
            });
        }
        points.push(HeatmapPoint {
            lat: c.lat,
            lon: c.lon,
            weight: s.confidence,
            factor: s.factor.clone(),
        });
    }
    report.exported = points.len();
    Ok((points, report))
}

/// Writes thresholded scores as CSV (`lat,lon,weight,factor`) or as a
/// GeoJSON FeatureCollection of points.
pub fn export_heatmap<W: Write>(scores: &[RiskScore], format: HeatmapFormat, mut out: W) -> Result<ExportReport> {
    let (points, report) = heatmap_points(scores)?;
    match format {
        HeatmapFormat::Csv => {
            // Header written by hand so an empty export still has one.
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(["lat", "lon", "weight", "factor"])?;
            for p in &points {
                w.serialize(p)?;
            }
            w.flush()?;
        }
        HeatmapFormat::Geojson => {
            let features: Vec<Json> = points
                .iter()
                .map(|p| {
                    json!({
                        "type": "Feature",
                        "geometry": {"type": "Point", "coordinates": [p.lon, p.lat]},
                        "properties": {"weight": p.weight, "factor": p.factor},
                    })
                })
                .collect();
            let doc = json!({"type": "FeatureCollection", "features": features});
            serde_json::to_writer_pretty(&mut out, &doc)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(report)
}

pub fn read_heatmap_csv<R: Read>(input: R) -> Result<Vec<HeatmapPoint>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()? != vec!["lat", "lon", "weight", "factor"] {
        return Err(RiskError::Format("expected header lat,lon,weight,factor".into()));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_heatmap_geojson<R: Read>(input: R) -> Result<Vec<HeatmapPoint>> {
    let doc: Json = serde_json::from_reader(input)?;
    if doc["type"] != "FeatureCollection" {
        return Err(RiskError::Format("not a FeatureCollection".into()));
    }
    let features = doc["features"]
        .as_array()
        .ok_or_else(|| RiskError::Format("missing features".into()))?;
    features
        .iter()
        .map(|f| {
            let coords = &f["geometry"]["coordinates"];
            let num = |v: &Json, what: &str| {
                v.as_f64()
                    .ok_or_else(|| RiskError::Format(format!("missing {what}")))
            };
            Ok(HeatmapPoint {
                lon: num(&coords[0], "longitude")?,
                lat: num(&coords[1], "latitude")?,
                weight: num(&f["properties"]["weight"], "weight")?,
                factor: f["properties"]["factor"]
                    .as_str()
                    .ok_or_else(|| RiskError::Format("missing factor".into()))?
                    .to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    route_id: String,
    begin_mp: f64,
    end_mp: f64,
    factor: String,
    confidence: f64,
    lat: Option<f64>,
    lon: Option<f64>,
}

const SCORE_HEADER: [&str; 7] = ["route_id", "begin_mp", "end_mp", "factor", "confidence", "lat", "lon"];

/// Every score, thresholded or not, as CSV. Missing coordinates are empty cells.
pub fn write_scores_csv<W: Write>(scores: &[RiskScore], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SCORE_HEADER)?;
    for s in scores {
        w.serialize(ScoreRow {
            route_id: s.route_id.clone(),
            begin_mp: s.begin_mp,
            end_mp: s.end_mp,
            factor: s.factor.clone(),
            confidence: s.confidence,
            lat: s.coordinates.map(|c| c.lat),
            lon: s.coordinates.map(|c| c.lon),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(input: R) -> Result<Vec<RiskScore>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()? != SCORE_HEADER.to_vec() {
        return Err(RiskError::Format(format!("expected header {}", SCORE_HEADER.join(","))));
    }
    r.deserialize()
        .map(|row| {
            let row: ScoreRow = row?;
            let coordinates = match (row.lat, row.lon) {
                (Some(lat), Some(lon)) => Some(Coordinates { lat, lon }),
                (None, None) => None,
                _ => return Err(RiskError::Format(format!("segment {} has half a coordinate", row.route_id))),
            };
            Ok(RiskScore {
                route_id: row.route_id,
                begin_mp: row.begin_mp,
                end_mp: row.end_mp,
                factor: row.factor,
                confidence: row.confidence,
                coordinates,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(confidence: f64, coords: Option<(f64, f64)>) -> RiskScore {
        RiskScore {
            route_id: "R1".into(),
            begin_mp: 0.0,
            end_mp: 1.0,
            factor: "speeding".into(),
            confidence,
            coordinates: coords.map(|(lat, lon)| Coordinates { lat, lon }),
        }
    }

    #[test]
    fn scores_round_trip() {
        let scores = vec![score(0.25, None), score(0.9, Some((35.5, -79.125)))];
        let mut buf = Vec::new();
        write_scores_csv(&scores, &mut buf).unwrap();
        assert_eq!(read_scores_csv(buf.as_slice()).unwrap(), scores);
        let mut empty = Vec::new();
        write_scores_csv(&[], &mut empty).unwrap();
        assert!(read_scores_csv(empty.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn threshold_is_strict() {
        let scores = vec![score(0.5, None), score(0.9, None), score(0.50001, None)];
        let kept = filter_threshold(&scores, 0.5);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].confidence, 0.9);
        assert!(filter_threshold(&[], 0.5).is_empty());
    }

    #[test]
    fn geojson_point() {
        let mut buf = Vec::new();
        let report = export_heatmap(&[score(0.8, Some((35.78, -78.64)))], HeatmapFormat::Geojson, &mut buf).unwrap();
        assert_eq!(report.exported, 1);
        let doc: Json = serde_json::from_slice(&buf).unwrap();
        let f = &doc["features"][0];
        assert_eq!(f["geometry"]["type"], "Point");
        assert_eq!(f["geometry"]["coordinates"][0], -78.64);
        assert_eq!(f["properties"]["weight"], 0.8);
        assert_eq!(read_heatmap_geojson(buf.as_slice()).unwrap()[0].lat, 35.78);
    }

    #[test]
    fn csv_round_trip_and_skips() {
        let scores = vec![
            score(0.8, Some((35.78, -78.64))),
            score(0.7, None),
            score(0.6, Some((36.1, -80.25))),
        ];
        let mut buf = Vec::new();
        let report = export_heatmap(&scores, HeatmapFormat::Csv, &mut buf).unwrap();
        assert_eq!(report, ExportReport { exported: 2, skipped_no_coordinates: 1 });
        assert!(buf.starts_with(b"lat,lon,weight,factor\n"));
        let (points, _) = heatmap_points(&scores).unwrap();
        assert_eq!(read_heatmap_csv(buf.as_slice()).unwrap(), points);
    }

    #[test]
    fn rejects_bad_coordinates_and_weights() {
        let mut buf = Vec::new();
        assert!(matches!(
            export_heatmap(&[score(0.8, Some((95.0, 0.0)))], HeatmapFormat::Csv, &mut buf),
            Err(RiskError::Coordinates { .. })
        ));
        assert!(matches!(
            export_heatmap(&[score(0.5, Some((35.0, -80.0)))], HeatmapFormat::Csv, &mut buf),
            Err(RiskError::Weight { .. })
        ));
    }
}
