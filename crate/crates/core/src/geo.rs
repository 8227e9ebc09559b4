//! Atomic-segment street graph, functional classes and nearest-segment snapping.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use geojson::{Feature, FeatureCollection, GeoJson, Geometry, JsonObject, JsonValue, Value};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::RecordError;

pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
pub const METERS_PER_MILE: f64 = 1_609.344;
pub const DEFAULT_SNAP_DISTANCE_M: f64 = 25.0;
/// Vertices are identified after rounding to 1e-7 degrees (~1 cm).
const VERTEX_SCALE: f64 = 1e7;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid GeoJSON: {0}")]
    GeoJson(String),
    #[error("graph has no segments")]
    EmptyGraph,
    #[error("segment {segment_id} touches another segment at interior vertex ({lat}, {lon})")]
    NotAtomic { segment_id: u32, lat: f64, lon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    fn key(&self) -> (i64, i64) {
        ((self.lat * VERTEX_SCALE).round() as i64, (self.lon * VERTEX_SCALE).round() as i64)
    }
}

/// Great-circle distance on a spherical earth.
pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

pub fn polyline_length_m(points: &[LatLon]) -> f64 {
    points.windows(2).map(|w| haversine_m(w[0], w[1])).sum()
}

/// Tangent-plane offset of `p` from `origin`, meters east and north.
pub fn local_xy(origin: LatLon, p: LatLon) -> (f64, f64) {
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    ((p.lon - origin.lon) * k * origin.lat.to_radians().cos(), (p.lat - origin.lat) * k)
}

/// Inverse of [`local_xy`].
pub fn from_local_xy(origin: LatLon, x: f64, y: f64) -> LatLon {
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    LatLon::new(origin.lat + y / k, origin.lon + x / (k * origin.lat.to_radians().cos()))
}

/// Shortest distance from `p` to a polyline, evaluated in the tangent plane at `p`.
pub fn point_polyline_distance_m(p: LatLon, line: &[LatLon]) -> f64 {
    line.windows(2)
        .map(|w| {
            let (ax, ay) = local_xy(p, w[0]);
            let (bx, by) = local_xy(p, w[1]);
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (-(ax * dx + ay * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (ax + t * dx, ay + t * dy);
            (cx * cx + cy * cy).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalClass {
    Arterial,
    Collector,
    Local,
    SharedUsePath,
    Sidewalk,
    Other,
}

impl FunctionalClass {
    pub const ALL: [FunctionalClass; 6] = [
        FunctionalClass::Arterial,
        FunctionalClass::Collector,
        FunctionalClass::Local,
        FunctionalClass::SharedUsePath,
        FunctionalClass::Sidewalk,
        FunctionalClass::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FunctionalClass::Arterial => "arterial",
            FunctionalClass::Collector => "collector",
            FunctionalClass::Local => "local",
            FunctionalClass::SharedUsePath => "shared_use_path",
            FunctionalClass::Sidewalk => "sidewalk",
            FunctionalClass::Other => "other",
        }
    }

    /// Row label used in the metrics table.
    pub fn label(&self) -> &'static str {
        match self {
            FunctionalClass::Arterial => "Arterial Streets",
            FunctionalClass::Collector => "Collector Streets",
            FunctionalClass::Local => "Local Streets",
            FunctionalClass::SharedUsePath => "Shared-use Paths",
            FunctionalClass::Sidewalk => "Sidewalks",
            FunctionalClass::Other => "Other/Unclassified",
        }
    }
}

impl fmt::Display for FunctionalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FunctionalClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FunctionalClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| format!("unknown functional class `{s}`"))
    }
}

/// OSM `highway` tag → functional class. Anything unlisted is `Other`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalClassMap {
    pub table: BTreeMap<String, FunctionalClass>,
}

impl Default for FunctionalClassMap {
    fn default() -> Self {
        use FunctionalClass::*;
        let table = [
            ("primary", Arterial),
            ("secondary", Arterial),
            ("tertiary", Collector),
            ("residential", Local),
            ("service", Local),
            ("path", SharedUsePath),
            ("cycleway", SharedUsePath),
            ("footway", Sidewalk),
            ("pedestrian", Sidewalk),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        FunctionalClassMap { table }
    }
}

impl FunctionalClassMap {
    pub fn classify(&self, tag: &str) -> FunctionalClass {
        self.table
            .get(tag.trim().to_ascii_lowercase().as_str())
            .copied()
            .unwrap_or(FunctionalClass::Other)
    }
}

pub type SegmentId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicSegment {
    pub segment_id: SegmentId,
    pub polyline: Vec<LatLon>,
    pub length_miles: f64,
    pub functional_class: FunctionalClass,
    pub raw_tag: String,
    /// Index of the input feature this piece came from.
    pub source_feature: usize,
}

impl AtomicSegment {
    pub fn start(&self) -> LatLon {
        self.polyline[0]
    }

    pub fn end(&self) -> LatLon {
        *self.polyline.last().unwrap()
    }

    pub fn midpoint(&self) -> LatLon {
        let total = self.length_miles * METERS_PER_MILE;
        let mut walked = 0.0;
        for w in self.polyline.windows(2) {
            let d = haversine_m(w[0], w[1]);
            if walked + d >= total / 2.0 && d > 0.0 {
                let t = (total / 2.0 - walked) / d;
                return LatLon::new(w[0].lat + t * (w[1].lat - w[0].lat), w[0].lon + t * (w[1].lon - w[0].lon));
            }
            walked += d;
        }
        self.end()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub feature_index: usize,
    pub message: String,
}

/// A line-feature input, before splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLine {
    pub feature_index: usize,
    pub tag: String,
    pub points: Vec<LatLon>,
}

/// Extracts `(highway tag, polyline)` lines from a GeoJSON FeatureCollection.
/// Multi-line features contribute one line per part.
pub fn parse_network_geojson(text: &str) -> Result<(Vec<RawLine>, Vec<Diagnostic>), GeoError> {
    let gj: GeoJson = text.parse().map_err(|e: geojson::Error| GeoError::GeoJson(e.to_string()))?;
    let GeoJson::FeatureCollection(fc) = gj else {
        return Err(GeoError::GeoJson("expected a FeatureCollection".into()));
    };
    let mut lines = Vec::new();
    let mut diags = Vec::new();
    for (idx, feature) in fc.features.iter().enumerate() {
        let tag = feature
            .property("highway")
            .and_then(|v| v.as_str())
            .map(str::to_string);
        let tag = match tag {
            Some(t) => t,
            None => {
                diags.push(Diagnostic {
                    feature_index: idx,
                    message: "missing `highway` property; classified as other".into(),
                });
                String::new()
            }
        };
        let parts: Vec<Vec<Vec<f64>>> = match feature.geometry.as_ref().map(|g| &g.value) {
            Some(Value::LineString(coords)) => vec![coords.iter().map(|p| p.to_vec()).collect()],
            Some(Value::MultiLineString(parts)) => parts
                .iter()
                .map(|coords| coords.iter().map(|p| p.to_vec()).collect())
                .collect(),
            _ => {
                diags.push(Diagnostic {
                    feature_index: idx,
                    message: "geometry is not a LineString or MultiLineString; skipped".into(),
                });
                continue;
            }
        };
        for coords in parts {
            lines.push(RawLine {
                feature_index: idx,
                tag: tag.clone(),
                points: coords.iter().map(|c| LatLon::new(c[1], c[0])).collect(),
            });
        }
    }
    Ok((lines, diags))
}

fn dedupe_consecutive(points: &[LatLon]) -> Vec<LatLon> {
    let mut out: Vec<LatLon> = Vec::with_capacity(points.len());
    for &p in points {
        if out.last().is_none_or(|q| q.key() != p.key()) {
            out.push(p);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub graph: StreetGraph,
    pub diagnostics: Vec<Diagnostic>,
}

/// Splits lines at every vertex they share with another line (or revisit
/// themselves), so that pieces meet only at their ends.
pub fn split_lines(lines: &[RawLine], classes: &FunctionalClassMap) -> (Vec<AtomicSegment>, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let cleaned: Vec<(usize, Vec<LatLon>)> = lines
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let pts = dedupe_consecutive(&l.points);
            if pts.len() < 2 {
                diags.push(Diagnostic {
                    feature_index: l.feature_index,
                    message: format!("line has {} distinct vertices; need at least 2", pts.len()),
                });
                None
            } else {
                Some((i, pts))
            }
        })
        .collect();

    let mut occurrences: HashMap<(i64, i64), usize> = HashMap::new();
    for (_, pts) in &cleaned {
        for p in pts {
            *occurrences.entry(p.key()).or_default() += 1;
        }
    }

    let mut segments = Vec::new();
    for (i, pts) in &cleaned {
        let line = &lines[*i];
        let class = classes.classify(&line.tag);
        let mut piece = vec![pts[0]];
        for (j, &p) in pts.iter().enumerate().skip(1) {
            piece.push(p);
            let is_last = j == pts.len() - 1;
            if is_last || occurrences[&p.key()] > 1 {
                let length_m = polyline_length_m(&piece);
                if length_m > 0.0 {
                    segments.push(AtomicSegment {
                        segment_id: segments.len() as SegmentId,
                        polyline: std::mem::take(&mut piece),
                        length_miles: length_m / METERS_PER_MILE,
                        functional_class: class,
                        raw_tag: line.tag.clone(),
                        source_feature: line.feature_index,
                    });
                } else {
                    diags.push(Diagnostic {
                        feature_index: line.feature_index,
                        message: "zero-length piece dropped".into(),
                    });
                    piece.clear();
                }
                piece.push(p);
            }
        }
    }
    (segments, diags)
}

/// Checks that no segment's interior vertex is a vertex of any other segment.
pub fn validate_atomic(segments: &[AtomicSegment]) -> Result<(), GeoError> {
    let mut count: HashMap<(i64, i64), usize> = HashMap::new();
    for s in segments {
        for p in &s.polyline {
            *count.entry(p.key()).or_default() += 1;
        }
    }
    for s in segments {
        let n = s.polyline.len();
        for p in &s.polyline[1..n - 1] {
            if count[&p.key()] > 1 {
                return Err(GeoError::NotAtomic {
                    segment_id: s.segment_id,
                    lat: p.lat,
                    lon: p.lon,
                });
            }
        }
    }
    Ok(())
}

pub fn build_graph(geojson_text: &str, classes: &FunctionalClassMap) -> Result<BuildReport, GeoError> {
    let (lines, mut diagnostics) = parse_network_geojson(geojson_text)?;
    build_graph_from_lines(&lines, classes).map(|mut report| {
        diagnostics.append(&mut report.diagnostics);
        report.diagnostics = diagnostics;
        report
    })
}

pub fn build_graph_from_lines(lines: &[RawLine], classes: &FunctionalClassMap) -> Result<BuildReport, GeoError> {
    let (segments, diagnostics) = split_lines(lines, classes);
    validate_atomic(&segments)?;
    Ok(BuildReport {
        graph: StreetGraph::new(segments),
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnapResult {
    Matched { segment_id: SegmentId, distance_m: f64 },
    Unmatched { nearest_m: f64 },
}

impl SnapResult {
    pub fn segment(&self) -> Option<SegmentId> {
        match self {
            SnapResult::Matched { segment_id, .. } => Some(*segment_id),
            SnapResult::Unmatched { .. } => None,
        }
    }
}

/// Uniform lat/lon grid over segment bounding boxes.
#[derive(Debug, Clone)]
struct GridIndex {
    cell_deg: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl GridIndex {
    fn new(segments: &[AtomicSegment], cell_deg: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, s) in segments.iter().enumerate() {
            let (lo, hi) = bbox(&s.polyline);
            for cy in cell_of(lo.lat, cell_deg)..=cell_of(hi.lat, cell_deg) {
                for cx in cell_of(lo.lon, cell_deg)..=cell_of(hi.lon, cell_deg) {
                    cells.entry((cy, cx)).or_default().push(i);
                }
            }
        }
        GridIndex { cell_deg, cells }
    }

    fn candidates(&self, p: LatLon, radius_m: f64) -> BTreeSet<usize> {
        let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        // generous margin: the tangent-plane metric differs slightly from degrees
        let dlat = radius_m / k * 1.05 + 1e-9;
        let dlon = radius_m / (k * p.lat.to_radians().cos().max(1e-6)) * 1.05 + 1e-9;
        let mut out = BTreeSet::new();
        for cy in cell_of(p.lat - dlat, self.cell_deg)..=cell_of(p.lat + dlat, self.cell_deg) {
            for cx in cell_of(p.lon - dlon, self.cell_deg)..=cell_of(p.lon + dlon, self.cell_deg) {
                if let Some(v) = self.cells.get(&(cy, cx)) {
                    out.extend(v.iter().copied());
                }
            }
        }
        out
    }
}

fn cell_of(v: f64, cell: f64) -> i64 {
    (v / cell).floor() as i64
}

fn bbox(points: &[LatLon]) -> (LatLon, LatLon) {
    let mut lo = LatLon::new(f64::INFINITY, f64::INFINITY);
    let mut hi = LatLon::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.lat = lo.lat.min(p.lat);
        lo.lon = lo.lon.min(p.lon);
        hi.lat = hi.lat.max(p.lat);
        hi.lon = hi.lon.max(p.lon);
    }
    (lo, hi)
}

/// Immutable set of atomic segments with a snapping index.
#[derive(Debug, Clone)]
pub struct StreetGraph {
    segments: Vec<AtomicSegment>,
    index: GridIndex,
}

impl StreetGraph {
    pub fn new(segments: Vec<AtomicSegment>) -> Self {
        let index = GridIndex::new(&segments, 0.001);
        StreetGraph { segments, index }
    }

    pub fn segments(&self) -> &[AtomicSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment(&self, id: SegmentId) -> Option<&AtomicSegment> {
        self.segments.iter().find(|s| s.segment_id == id)
    }

    /// Restricts the graph to segments whose midpoint falls inside any of `campuses`.
    pub fn within(&self, campuses: &[Campus]) -> StreetGraph {
        let kept = self
            .segments
            .iter()
            .filter(|s| campuses.iter().any(|c| c.contains(s.midpoint())))
            .cloned()
            .collect();
        StreetGraph::new(kept)
    }

    /// Nearest segment within `max_distance_m`; ties go to the lowest id.
    pub fn snap(&self, p: LatLon, max_distance_m: f64) -> Result<SnapResult, GeoError> {
        if self.segments.is_empty() {
            return Err(GeoError::EmptyGraph);
        }
        let best = self
            .index
            .candidates(p, max_distance_m)
            .into_iter()
            .map(|i| (point_polyline_distance_m(p, &self.segments[i].polyline), self.segments[i].segment_id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(match best {
            Some((d, id)) if d <= max_distance_m => SnapResult::Matched {
                segment_id: id,
                distance_m: d,
            },
            Some((d, _)) => SnapResult::Unmatched { nearest_m: d },
            None => SnapResult::Unmatched { nearest_m: f64::INFINITY },
        })
    }
}

/// Free-function form of [`StreetGraph::snap`].
pub fn snap_to_segment(p: LatLon, graph: &StreetGraph, max_distance_m: f64) -> Result<SnapResult, GeoError> {
    graph.snap(p, max_distance_m)
}

/// A named campus boundary (outer ring plus optional holes).
#[derive(Debug, Clone, PartialEq)]
pub struct Campus {
    pub name: String,
    pub rings: Vec<Vec<LatLon>>,
}

fn ring_contains(ring: &[LatLon], p: LatLon) -> bool {
    let mut inside = false;
    let n = ring.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if p.lon < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

impl Campus {
    pub fn contains(&self, p: LatLon) -> bool {
        match self.rings.split_first() {
            Some((outer, holes)) => ring_contains(outer, p) && !holes.iter().any(|h| ring_contains(h, p)),
            None => false,
        }
    }
}

/// Reads Polygon / MultiPolygon features; the `name` property labels each campus.
pub fn parse_campuses_geojson(text: &str) -> Result<Vec<Campus>, GeoError> {
    let gj: GeoJson = text.parse().map_err(|e: geojson::Error| GeoError::GeoJson(e.to_string()))?;
    let GeoJson::FeatureCollection(fc) = gj else {
        return Err(GeoError::GeoJson("expected a FeatureCollection".into()));
    };
    let to_ring = |r: &Vec<geojson::Position>| r.iter().map(|c| LatLon::new(c[1], c[0])).collect::<Vec<_>>();
    let mut out = Vec::new();
    for (idx, f) in fc.features.iter().enumerate() {
        let name = f
            .property("name")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("campus_{idx}"));
        match f.geometry.as_ref().map(|g| &g.value) {
            Some(Value::Polygon(rings)) => out.push(Campus {
                name,
                rings: rings.iter().map(to_ring).collect(),
            }),
            Some(Value::MultiPolygon(polys)) => {
                for (k, rings) in polys.iter().enumerate() {
                    out.push(Campus {
                        name: if k == 0 { name.clone() } else { format!("{name}#{k}") },
                        rings: rings.iter().map(to_ring).collect(),
                    });
                }
            }
            _ => return Err(GeoError::GeoJson(format!("feature {idx}: campus must be a polygon"))),
        }
    }
    Ok(out)
}

/// Line features with a `highway` property, for writing synthetic networks.
pub fn network_to_geojson(lines: &[(String, Vec<LatLon>)]) -> String {
    let features = lines
        .iter()
        .map(|(tag, pts)| {
            let mut props = JsonObject::new();
            props.insert("highway".into(), JsonValue::from(tag.as_str()));
            Feature {
                bbox: None,
                geometry: Some(Geometry::new(Value::LineString(
                    pts.iter().map(|p| vec![p.lon, p.lat]).collect(),
                ))),
                id: None,
                properties: Some(props),
                foreign_members: None,
            }
        })
        .collect();
    GeoJson::FeatureCollection(FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    })
    .to_string()
}

pub fn write_segments_csv<W: Write>(w: W, graph: &StreetGraph) -> Result<(), RecordError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "segment_id",
        "functional_class",
        "raw_tag",
        "length_miles",
        "vertex_count",
        "start_lat",
        "start_lon",
        "end_lat",
        "end_lon",
    ])?;
    for s in graph.segments() {
        wtr.write_record([
            s.segment_id.to_string(),
            s.functional_class.to_string(),
            s.raw_tag.clone(),
            format!("{:.6}", s.length_miles),
            s.polyline.len().to_string(),
            s.start().lat.to_string(),
            s.start().lon.to_string(),
            s.end().lat.to_string(),
            s.end().lon.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
