//! Road inventory segments and milepost matching.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ColumnRole, DatasetError, Frame, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coordinates {
    pub lat: f64,
    pub lon: f64,
}

/// Location of one inventory segment. `[begin_mp, end_mp)` is half-open.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub route_id: String,
    pub begin_mp: f64,
    pub end_mp: f64,
    pub coordinates: Option<Coordinates>,
}

impl SegmentRecord {
    pub fn label(&self) -> String {
        format!("{}:[{}, {})", self.route_id, self.begin_mp, self.end_mp)
    }
}

/// Segment records plus their static feature values, one feature row per
/// record in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    records: Vec<SegmentRecord>,
    features: Frame,
}

impl SegmentSet {
    pub fn new(records: Vec<SegmentRecord>, features: Frame) -> Result<SegmentSet> {
        if records.len() != features.n_rows() {
            return Err(DatasetError::Invalid(format!(
                "{} segment records but {} feature rows",
                records.len(),
                features.n_rows()
            )));
        }
        for r in &records {
            if !(r.begin_mp.is_finite() && r.end_mp.is_finite() && r.begin_mp >= 0.0) {
                return Err(DatasetError::Invalid(format!(
                    "segment {} has an invalid milepost",
                    r.label()
                )));
            }
            if r.begin_mp >= r.end_mp {
                return Err(DatasetError::Invalid(format!(
                    "segment {} must have begin < end",
                    r.label()
                )));
            }
        }
        let set = SegmentSet { records, features };
        set.check_overlaps()?;
        Ok(set)
    }

    /// Splits a roadway frame into records and features. The route is the
    /// frame's single `route_id` column; `begin` and `end` name milepost
    /// columns; coordinate columns named `lat` and `lon`, if present, give
    /// the segment position. Identifier columns are not features.
    pub fn from_frame(frame: &Frame, begin: &str, end: &str) -> Result<SegmentSet> {
        let route = single_role(frame, ColumnRole::RouteId)?;
        let routes = frame.text(&route)?;
        let begins = frame.numeric(begin)?;
        let ends = frame.numeric(end)?;
        let lats = frame.numeric("lat").ok();
        let lons = frame.numeric("lon").ok();

        let mut records = Vec::with_capacity(frame.n_rows());
        for row in 0..frame.n_rows() {
            let missing = |column: &str| DatasetError::Cell {
                row: row + 1,
                column: column.to_string(),
                message: "missing segment location".into(),
            };
            let coordinates = match (lats, lons) {
                (Some(la), Some(lo)) => match (la[row], lo[row]) {
                    (Some(lat), Some(lon)) => Some(Coordinates { lat, lon }),
                    _ => None,
                },
                _ => None,
            };
            records.push(SegmentRecord {
                route_id: routes[row].clone().ok_or_else(|| missing(&route))?,
                begin_mp: begins[row].ok_or_else(|| missing(begin))?,
                end_mp: ends[row].ok_or_else(|| missing(end))?,
                coordinates,
            });
        }

        let mut location: Vec<String> = vec![route, begin.to_string(), end.to_string()];
        for (spec, _) in frame.columns() {
            let is_coordinate = spec.role == ColumnRole::Coordinate
                && (spec.name == "lat" || spec.name == "lon");
            if spec.role == ColumnRole::Identifier || is_coordinate {
                location.push(spec.name.clone());
            }
        }
        let features = frame.drop_columns(&location)?;
        SegmentSet::new(records, features)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SegmentRecord] {
        &self.records
    }

    pub fn features(&self) -> &Frame {
        &self.features
    }

    fn check_overlaps(&self) -> Result<()> {
        for (route, intervals) in self.by_route() {
            for pair in intervals.windows(2) {
                let (a, b) = (&self.records[pair[0]], &self.records[pair[1]]);
                if b.begin_mp < a.end_mp {
                    return Err(DatasetError::OverlappingSegments {
                        route: route.to_string(),
                        first_begin: a.begin_mp,
                        first_end: a.end_mp,
                        second_begin: b.begin_mp,
                        second_end: b.end_mp,
                    });
                }
            }
        }
        Ok(())
    }

    /// Route -> record indices sorted by begin milepost.
    fn by_route(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            map.entry(r.route_id.as_str()).or_default().push(i);
        }
        for indices in map.values_mut() {
            indices.sort_by(|&a, &b| {
                self.records[a]
                    .begin_mp
                    .total_cmp(&self.records[b].begin_mp)
            });
        }
        map
    }

    /// Index of the segment on `route` with `begin <= milepost < end`.
    pub fn locate(&self, route: &str, milepost: f64) -> Option<usize> {
        // Linear in the number of segments on the route; map_to_segments
        // builds its own index for bulk lookups.
        self.records
            .iter()
            .position(|r| r.route_id == route && r.begin_mp <= milepost && milepost < r.end_mp)
    }
}

fn single_role(frame: &Frame, role: ColumnRole) -> Result<String> {
    let cols = frame.schema().with_role(role);
    match cols.as_slice() {
        [one] => Ok(one.name.clone()),
        [] => Err(DatasetError::Schema(format!("frame has no {role} column"))),
        _ => Err(DatasetError::Schema(format!(
            "frame has more than one {role} column"
        ))),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SegmentMatchReport {
    pub crash_rows: usize,
    pub matched: usize,
    pub dropped_unmatched: usize,
    pub dropped_missing_position: usize,
}

/// Appends each crash's segment features, matching on route and the
/// half-open milepost interval. Unmatched crashes are dropped and counted.
pub fn map_to_segments(crashes: &Frame, segments: &SegmentSet) -> Result<(Frame, SegmentMatchReport)> {
    let route_col = single_role(crashes, ColumnRole::RouteId)?;
    let mp_col = single_role(crashes, ColumnRole::Milepost)?;
    let routes = crashes.text(&route_col)?;
    let mileposts = crashes.numeric(&mp_col)?;

    let index: BTreeMap<&str, Vec<(f64, f64, usize)>> = segments
        .by_route()
        .into_iter()
        .map(|(route, idx)| {
            let intervals = idx
                .into_iter()
                .map(|i| {
                    let r = &segments.records[i];
                    (r.begin_mp, r.end_mp, i)
                })
                .collect();
            (route, intervals)
        })
        .collect();

    let mut report = SegmentMatchReport {
        crash_rows: crashes.n_rows(),
        ..SegmentMatchReport::default()
    };
    let mut crash_rows = Vec::new();
    let mut segment_rows = Vec::new();
    for row in 0..crashes.n_rows() {
        let (Some(route), Some(mp)) = (routes[row].as_deref(), mileposts[row]) else {
            report.dropped_missing_position += 1;
            continue;
        };
        let hit = index.get(route).and_then(|intervals| {
            let pos = intervals.partition_point(|&(begin, _, _)| begin <= mp);
            (pos > 0 && mp < intervals[pos - 1].1).then(|| intervals[pos - 1].2)
        });
        match hit {
            Some(seg) => {
                crash_rows.push(row);
                segment_rows.push(seg);
            }
            None => report.dropped_unmatched += 1,
        }
    }
    report.matched = crash_rows.len();

    let base = crashes.select_rows(&crash_rows);
    let seg_features = segments.features.select_rows(&segment_rows);
    let mut extra = Vec::new();
    for (spec, data) in seg_features.columns() {
        if base.has_column(&spec.name) {
            return Err(DatasetError::Schema(format!(
                "segment feature `{}` clashes with a crash column",
                spec.name
            )));
        }
        extra.push((spec.clone(), data.clone()));
    }
    Ok((base.with_columns(extra)?, report))
}

#[derive(Debug, Deserialize)]
struct SidecarRow {
    route_id: String,
    begin_mp: f64,
    end_mp: f64,
    lat: f64,
    lon: f64,
}

/// Reads a coordinate sidecar with header `route_id,begin_mp,end_mp,lat,lon`.
pub fn load_coordinate_sidecar(path: impl AsRef<Path>) -> Result<Vec<(SegmentRecord, Coordinates)>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: SidecarRow = row?;
        let coords = Coordinates {
            lat: row.lat,
            lon: row.lon,
        };
        out.push((
            SegmentRecord {
                route_id: row.route_id,
                begin_mp: row.begin_mp,
                end_mp: row.end_mp,
                coordinates: Some(coords),
            },
            coords,
        ));
    }
    Ok(out)
}

/// Copies sidecar coordinates onto segments with the same route and
/// interval. Returns the number of segments that received coordinates.
pub fn attach_coordinates(segments: &mut SegmentSet, sidecar: &[(SegmentRecord, Coordinates)]) -> usize {
    let lookup: BTreeMap<(&str, u64, u64), Coordinates> = sidecar
        .iter()
        .map(|(r, c)| ((r.route_id.as_str(), r.begin_mp.to_bits(), r.end_mp.to_bits()), *c))
        .collect();
    let mut attached = 0;
    for record in &mut segments.records {
        let key = (
            record.route_id.as_str(),
            record.begin_mp.to_bits(),
            record.end_mp.to_bits(),
        );
        if let Some(c) = lookup.get(&key) {
            record.coordinates = Some(*c);
            attached += 1;
        }
    }
    attached
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{read_csv, ColumnSpec, FeatureClass, Schema};

    fn roadway(text: &str) -> SegmentSet {
        let schema = Schema::new(vec![
            ColumnSpec::new("route", ColumnRole::RouteId),
            ColumnSpec::new("begin_mp", ColumnRole::Milepost),
            ColumnSpec::new("end_mp", ColumnRole::Milepost),
            ColumnSpec::new("lanes", ColumnRole::Continuous).with_class(FeatureClass::StaticRoad),
        ])
        .unwrap();
        let frame = read_csv(text.as_bytes(), &schema).unwrap();
        SegmentSet::from_frame(&frame, "begin_mp", "end_mp").unwrap()
    }

    fn crashes(text: &str) -> Frame {
        let schema = Schema::new(vec![
            ColumnSpec::new("crash_id", ColumnRole::Identifier),
            ColumnSpec::new("route", ColumnRole::RouteId),
            ColumnSpec::new("milepost", ColumnRole::Milepost),
        ])
        .unwrap();
        read_csv(text.as_bytes(), &schema).unwrap()
    }

    #[test]
    fn crash_inside_interval_matches() {
        let segs = roadway("route,begin_mp,end_mp,lanes\nA,5.0,6.0,2\nA,6.0,7.0,4\n");
        let (out, report) = map_to_segments(&crashes("crash_id,route,milepost\n1,A,5.2\n"), &segs).unwrap();
        assert_eq!(report.matched, 1);
        assert_eq!(out.numeric("lanes").unwrap(), &[Some(2.0)]);
    }

    #[test]
    fn end_milepost_is_exclusive() {
        let segs = roadway("route,begin_mp,end_mp,lanes\nA,5.0,6.0,2\n");
        let (out, report) = map_to_segments(&crashes("crash_id,route,milepost\n1,A,6.0\n"), &segs).unwrap();
        assert_eq!(out.n_rows(), 0);
        assert_eq!(report.dropped_unmatched, 1);

        let segs = roadway("route,begin_mp,end_mp,lanes\nA,5.0,6.0,2\nA,6.0,7.0,4\n");
        let (out, _) = map_to_segments(&crashes("crash_id,route,milepost\n1,A,6.0\n"), &segs).unwrap();
        assert_eq!(out.numeric("lanes").unwrap(), &[Some(4.0)]);
    }

    #[test]
    fn overlapping_segments_are_rejected() {
        let schema = Schema::new(vec![
            ColumnSpec::new("route", ColumnRole::RouteId),
            ColumnSpec::new("begin_mp", ColumnRole::Milepost),
            ColumnSpec::new("end_mp", ColumnRole::Milepost),
        ])
        .unwrap();
        let frame = read_csv(
            "route,begin_mp,end_mp\nA,5.0,6.0\nA,5.5,6.5\n".as_bytes(),
            &schema,
        )
        .unwrap();
        match SegmentSet::from_frame(&frame, "begin_mp", "end_mp") {
            Err(DatasetError::OverlappingSegments {
                route,
                first_begin,
                second_begin,
                ..
            }) => {
                assert_eq!(route, "A");
                assert_eq!((first_begin, second_begin), (5.0, 5.5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn other_route_does_not_match() {
        let segs = roadway("route,begin_mp,end_mp,lanes\nA,0,10,2\n");
        let (out, report) = map_to_segments(&crashes("crash_id,route,milepost\n1,B,5\n2,A,5\n"), &segs).unwrap();
        assert_eq!(out.n_rows(), 1);
        assert_eq!(report.dropped_unmatched, 1);
        assert_eq!(segs.locate("A", 9.99), Some(0));
        assert_eq!(segs.locate("A", 10.0), None);
    }

    #[test]
    fn sidecar_coordinates_attach_by_interval() {
        let mut segs = roadway("route,begin_mp,end_mp,lanes\nA,0,1.5,2\nA,1.5,3,2\n");
        let sidecar = vec![(
            SegmentRecord {
                route_id: "A".into(),
                begin_mp: 1.5,
                end_mp: 3.0,
                coordinates: None,
            },
            Coordinates { lat: 35.0, lon: -78.0 },
        )];
        assert_eq!(attach_coordinates(&mut segs, &sidecar), 1);
        assert_eq!(segs.records()[0].coordinates, None);
        assert_eq!(
            segs.records()[1].coordinates,
            Some(Coordinates { lat: 35.0, lon: -78.0 })
        );
    }
}
