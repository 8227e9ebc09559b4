//! Street network in the local frame, routing, the built-in campus grid and
//! the built-in class timetable.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};

use chrono::{NaiveTime, Weekday};
use petgraph::graph::{NodeIndex, UnGraph};
use petgraph::unionfind::UnionFind;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::motion::{dist, Xy};
use crate::binning::WEEK;
use crate::geo::{from_local_xy, local_xy, LatLon, RawLine, StreetGraph};
use crate::metrics::{PoiEvent, PoiKind, ScheduleSlot};

/// A position along a segment: index into the graph's segment list and arc
/// length from its start, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spot {
    pub seg: usize,
    pub s: f64,
}

pub struct RoadNet {
    pub graph: StreetGraph,
    pub origin: LatLon,
    seg_xy: Vec<Vec<Xy>>,
    seg_cum: Vec<Vec<f64>>,
    seg_nodes: Vec<(NodeIndex, NodeIndex)>,
    g: UnGraph<Xy, usize>,
    routes: RefCell<HashMap<(NodeIndex, NodeIndex), Option<(f64, Vec<NodeIndex>)>>>,
}

fn vertex_key(p: LatLon) -> (i64, i64) {
    ((p.lat * 1e7).round() as i64, (p.lon * 1e7).round() as i64)
}

impl RoadNet {
    pub fn new(graph: StreetGraph, origin: LatLon) -> Self {
        let mut g: UnGraph<Xy, usize> = UnGraph::default();
        let mut nodes: HashMap<(i64, i64), NodeIndex> = HashMap::new();
        let mut seg_xy = Vec::new();
        let mut seg_cum = Vec::new();
        let mut seg_nodes = Vec::new();
        for (i, seg) in graph.segments().iter().enumerate() {
            let xy: Vec<Xy> = seg.polyline.iter().map(|p| local_xy(origin, *p)).collect();
            let mut cum = vec![0.0];
            for w in xy.windows(2) {
                cum.push(cum.last().unwrap() + dist(w[0], w[1]));
            }
            let mut node = |p: LatLon, at: Xy| *nodes.entry(vertex_key(p)).or_insert_with(|| g.add_node(at));
            let a = node(seg.start(), xy[0]);
            let b = node(seg.end(), *xy.last().unwrap());
            g.add_edge(a, b, i);
            seg_xy.push(xy);
            seg_cum.push(cum);
            seg_nodes.push((a, b));
        }
        RoadNet {
            graph,
            origin,
            seg_xy,
            seg_cum,
            seg_nodes,
            g,
            routes: RefCell::new(HashMap::new()),
        }
    }

    pub fn n_segments(&self) -> usize {
        self.seg_xy.len()
    }

    pub fn seg_length(&self, seg: usize) -> f64 {
        *self.seg_cum[seg].last().unwrap()
    }

    pub fn to_latlon(&self, p: Xy) -> LatLon {
        from_local_xy(self.origin, p.0, p.1)
    }

    pub fn to_xy(&self, p: LatLon) -> Xy {
        local_xy(self.origin, p)
    }

    pub fn node_xy(&self, n: NodeIndex) -> Xy {
        self.g[n]
    }

    pub fn segment_midpoint(&self, seg: usize) -> Xy {
        self.point_at(Spot {
            seg,
            s: self.seg_length(seg) / 2.0,
        })
        .0
    }

    /// Position and unit tangent at a spot.
    pub fn point_at(&self, spot: Spot) -> (Xy, Xy) {
        let xy = &self.seg_xy[spot.seg];
        let cum = &self.seg_cum[spot.seg];
        let s = spot.s.clamp(0.0, *cum.last().unwrap());
        let i = cum.partition_point(|c| *c <= s).clamp(1, xy.len() - 1) - 1;
        let (a, b) = (xy[i], xy[i + 1]);
        let len = dist(a, b).max(1e-12);
        let f = ((s - cum[i]) / len).clamp(0.0, 1.0);
        let tangent = ((b.0 - a.0) / len, (b.1 - a.1) / len);
        ((a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f), tangent)
    }

    /// Spot shifted sideways by `offset` meters (positive = left of the
    /// segment's digitized direction).
    pub fn offset_point(&self, spot: Spot, offset: f64) -> Xy {
        let (p, t) = self.point_at(spot);
        (p.0 - t.1 * offset, p.1 + t.0 * offset)
    }

    /// Polyline along a segment between two arc positions, either direction.
    fn sub_polyline(&self, seg: usize, from: f64, to: f64) -> Vec<Xy> {
        let cum = &self.seg_cum[seg];
        let xy = &self.seg_xy[seg];
        let mut out = vec![self.point_at(Spot { seg, s: from }).0];
        let (lo, hi) = (from.min(to), from.max(to));
        let mut inner: Vec<Xy> = (1..xy.len() - 1).filter(|&i| cum[i] > lo && cum[i] < hi).map(|i| xy[i]).collect();
        if from > to {
            inner.reverse();
        }
        out.extend(inner);
        out.push(self.point_at(Spot { seg, s: to }).0);
        out
    }

    pub fn nearest_node(&self, p: Xy) -> NodeIndex {
        self.g
            .node_indices()
            .min_by(|a, b| dist(self.g[*a], p).total_cmp(&dist(self.g[*b], p)).then(a.cmp(b)))
            .expect("non-empty network")
    }

    fn node_route(&self, a: NodeIndex, b: NodeIndex) -> Option<(f64, Vec<NodeIndex>)> {
        if let Some(r) = self.routes.borrow().get(&(a, b)) {
            return r.clone();
        }
        let target = self.g[b];
        let r = petgraph::algo::astar(
            &self.g,
            a,
            |n| n == b,
            |e| self.seg_length(*e.weight()),
            |n| dist(self.g[n], target),
        );
        self.routes.borrow_mut().insert((a, b), r.clone());
        r
    }

    /// Shortest edge joining two adjacent nodes, with its direction.
    fn edge_between(&self, a: NodeIndex, b: NodeIndex) -> (usize, bool) {
        self.g
            .edges_connecting(a, b)
            .map(|e| *e.weight())
            .min_by(|x, y| self.seg_length(*x).total_cmp(&self.seg_length(*y)).then(x.cmp(y)))
            .map(|seg| (seg, self.seg_nodes[seg].0 == a))
            .expect("adjacent nodes")
    }

    fn expand(&self, nodes: &[NodeIndex]) -> Vec<Xy> {
        let mut out = vec![self.g[nodes[0]]];
        for w in nodes.windows(2) {
            let (seg, forward) = self.edge_between(w[0], w[1]);
            let len = self.seg_length(seg);
            let part = if forward {
                self.sub_polyline(seg, 0.0, len)
            } else {
                self.sub_polyline(seg, len, 0.0)
            };
            out.extend(part.into_iter().skip(1));
        }
        out
    }

    pub fn route_nodes(&self, a: NodeIndex, b: NodeIndex) -> Option<Vec<Xy>> {
        let (_, nodes) = self.node_route(a, b)?;
        Some(self.expand(&nodes))
    }

    /// A spot sitting on node `n`, at the end of one of its segments.
    pub fn node_spot(&self, n: NodeIndex) -> Spot {
        let e = self.g.edges(n).map(|e| *e.weight()).min().expect("node has a segment");
        let s = if self.seg_nodes[e].0 == n { 0.0 } else { self.seg_length(e) };
        Spot { seg: e, s }
    }

    /// Shortest polyline from one spot to another through the network.
    pub fn route_spots(&self, from: Spot, to: Spot) -> Option<Vec<Xy>> {
        if from.seg == to.seg {
            return Some(self.sub_polyline(from.seg, from.s, to.s));
        }
        let ends = |spot: Spot| {
            let (a, b) = self.seg_nodes[spot.seg];
            [(a, spot.s, 0.0), (b, self.seg_length(spot.seg) - spot.s, self.seg_length(spot.seg))]
        };
        let mut best: Option<(f64, Vec<Xy>)> = None;
        for (na, da, sa) in ends(from) {
            for (nb, db, sb) in ends(to) {
                let Some((dn, nodes)) = self.node_route(na, nb) else { continue };
                let cost = da + dn + db;
                if best.as_ref().is_none_or(|(c, _)| cost < *c - 1e-9) {
                    let mut pts = self.sub_polyline(from.seg, from.s, sa);
                    pts.extend(self.expand(&nodes).into_iter().skip(1));
                    pts.extend(self.sub_polyline(to.seg, sb, to.s).into_iter().skip(1));
                    best = Some((cost, pts));
                }
            }
        }
        best.map(|(_, p)| p)
    }

    /// Connected-component label per node.
    pub fn components(&self) -> impl Fn(NodeIndex) -> usize {
        let mut uf = UnionFind::<usize>::new(self.g.node_count());
        for e in self.g.edge_indices() {
            let (a, b) = self.g.edge_endpoints(e).unwrap();
            uf.union(a.index(), b.index());
        }
        let labels = uf.into_labeling();
        move |n: NodeIndex| labels[n.index()]
    }

    /// Segment whose polyline passes closest to `p`.
    pub fn nearest_segment(&self, p: Xy) -> usize {
        let d = |seg: usize| {
            self.seg_xy[seg]
                .windows(2)
                .map(|w| point_segment_dist(p, w[0], w[1]))
                .fold(f64::INFINITY, f64::min)
        };
        (0..self.n_segments()).min_by(|a, b| d(*a).total_cmp(&d(*b))).expect("non-empty network")
    }

    pub fn segments_within(&self, p: Xy, radius_m: f64) -> BTreeSet<usize> {
        (0..self.n_segments())
            .filter(|&s| {
                let (a, b) = self.seg_nodes[s];
                let near_end = dist(self.g[a], p).min(dist(self.g[b], p)) <= radius_m;
                near_end && dist(self.segment_midpoint(s), p) <= radius_m
            })
            .collect()
    }
}

fn point_segment_dist(p: Xy, a: Xy, b: Xy) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, (a.0 + t * dx, a.1 + t * dy))
}

/// Rectangular street grid with POIs at intersections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampusLayout {
    pub origin: LatLon,
    pub columns: usize,
    pub rows: usize,
    pub block_m: f64,
    pub n_buildings: usize,
    pub n_generators: usize,
}

impl Default for CampusLayout {
    fn default() -> Self {
        CampusLayout {
            origin: LatLon::new(29.5830, -98.6190),
            columns: 9,
            rows: 7,
            block_m: 80.0,
            n_buildings: 6,
            n_generators: 2,
        }
    }
}

pub struct Campus {
    pub lines: Vec<RawLine>,
    pub buildings: Vec<(String, LatLon)>,
    pub generators: Vec<(String, LatLon)>,
}

impl CampusLayout {
    pub fn validate(&self) -> Result<(), String> {
        if self.columns < 3 || self.rows < 3 {
            return Err("campus grid needs at least 3 x 3 intersections".into());
        }
        if !(self.block_m > 10.0) {
            return Err("campus block_m must exceed 10 m".into());
        }
        let interior = (self.columns - 2) * (self.rows - 2);
        if self.n_buildings == 0 || self.n_buildings > interior {
            return Err(format!("n_buildings must be in 1..={interior}"));
        }
        let boundary = 2 * (self.columns + self.rows) - 4;
        if self.n_generators == 0 || self.n_generators > boundary {
            return Err(format!("n_generators must be in 1..={boundary}"));
        }
        Ok(())
    }

    fn tag(&self, horizontal: bool, line: usize) -> &'static str {
        let last = if horizontal { self.rows - 1 } else { self.columns - 1 };
        let mid = last / 2;
        if line == 0 || line == last {
            "primary"
        } else if line == mid {
            "tertiary"
        } else {
            match line % 4 {
                0 => "footway",
                1 => "residential",
                2 => "cycleway",
                _ => "service_road",
            }
        }
    }

    pub fn generate<R: Rng>(&self, rng: &mut R) -> Campus {
        let at = |c: usize, r: usize| from_local_xy(self.origin, c as f64 * self.block_m, r as f64 * self.block_m);
        let mut lines = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.columns - 1 {
                lines.push((self.tag(true, r), vec![at(c, r), at(c + 1, r)]));
            }
        }
        for c in 0..self.columns {
            for r in 0..self.rows - 1 {
                lines.push((self.tag(false, c), vec![at(c, r), at(c, r + 1)]));
            }
        }
        let lines = lines
            .into_iter()
            .enumerate()
            .map(|(i, (tag, points))| RawLine {
                feature_index: i,
                tag: tag.to_string(),
                points,
            })
            .collect();

        let mut interior: Vec<(usize, usize)> = (1..self.columns - 1)
            .flat_map(|c| (1..self.rows - 1).map(move |r| (c, r)))
            .collect();
        let picks = rand::seq::index::sample(rng, interior.len(), self.n_buildings).into_vec();
        let mut chosen: Vec<(usize, usize)> = picks.into_iter().map(|i| interior[i]).collect();
        chosen.sort();
        interior.clear();
        let buildings = chosen
            .iter()
            .enumerate()
            .map(|(i, (c, r))| (format!("bldg{:02}", i + 1), at(*c, *r)))
            .collect();

        let mut boundary: Vec<(usize, usize)> = Vec::new();
        for c in 0..self.columns {
            boundary.push((c, 0));
            boundary.push((c, self.rows - 1));
        }
        for r in 1..self.rows - 1 {
            boundary.push((0, r));
            boundary.push((self.columns - 1, r));
        }
        let step = boundary.len() as f64 / self.n_generators as f64;
        let offset = rng.gen_range(0..boundary.len());
        boundary.sort();
        let generators = (0..self.n_generators)
            .map(|i| {
                let (c, r) = boundary[(offset + (i as f64 * step) as usize) % boundary.len()];
                (format!("stop{:02}", i + 1), at(c, r))
            })
            .collect();
        Campus {
            lines,
            buildings,
            generators,
        }
    }
}

/// Relative number of class meetings starting in each hour, 06:00 to 22:00.
const HOURLY_CLASS_WEIGHT: [f64; 17] = [
    0.0, 0.3, 0.9, 1.0, 1.0, 0.9, 0.5, 0.8, 0.9, 0.7, 0.5, 0.35, 0.3, 0.2, 0.1, 0.0, 0.0,
];

/// Timetable parameters for the built-in schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimetableParams {
    /// Mean class meetings starting in a peak hour, across all buildings.
    pub peak_classes_per_hour: f64,
    /// Saturday load relative to weekdays.
    pub saturday_factor: f64,
    pub class_size: (f64, f64),
    /// Generator weight in the `magnitude` column.
    pub generator_magnitude: f64,
}

impl Default for TimetableParams {
    fn default() -> Self {
        TimetableParams {
            peak_classes_per_hour: 8.0,
            saturday_factor: 0.25,
            class_size: (20.0, 120.0),
            generator_magnitude: 100.0,
        }
    }
}

/// Weekly timetable: 50-minute meetings Mon/Wed/Fri and Saturday, 75-minute
/// meetings Tue/Thu, each starting on a quarter hour drawn by hourly weight.
pub fn builtin_timetable<R: Rng>(
    buildings: &[(String, LatLon)],
    generators: &[(String, LatLon)],
    params: &TimetableParams,
    rng: &mut R,
) -> Vec<PoiEvent> {
    let mut pois: Vec<PoiEvent> = buildings
        .iter()
        .map(|(id, loc)| PoiEvent {
            poi_id: id.clone(),
            kind: PoiKind::Attractor,
            location: *loc,
            schedule: Vec::new(),
            magnitude: rng.gen_range(params.class_size.0..=params.class_size.1).round(),
        })
        .collect();
    let share: Vec<f64> = pois.iter().map(|p| p.magnitude).collect();
    let pick = rand_distr::WeightedIndex::new(&share).expect("positive class sizes");
    let hm = |h: u32, m: u32| NaiveTime::from_hms_opt(h, m, 0).unwrap();
    for day in WEEK {
        let (len_min, factor, last_hour): (i64, f64, u32) = match day {
            Weekday::Mon | Weekday::Wed | Weekday::Fri => (50, 1.0, 21),
            Weekday::Tue | Weekday::Thu => (75, 1.0, 21),
            Weekday::Sat => (50, params.saturday_factor, 12),
            Weekday::Sun => (50, 0.0, 0),
        };
        for h in 7..=last_hour {
            let w = HOURLY_CLASS_WEIGHT[(h - 6) as usize] * factor;
            if w <= 0.0 {
                continue;
            }
            let n = Poisson::new(params.peak_classes_per_hour * w)
                .map(|p| p.sample(rng) as usize)
                .unwrap_or(0);
            for _ in 0..n {
                let start = hm(h, 15 * rng.gen_range(0..4));
                let end = (start + chrono::Duration::minutes(len_min)).min(hm(22, 59));
                pois[pick.sample(rng)].schedule.push(ScheduleSlot { day, start, end });
            }
        }
    }
    for p in &mut pois {
        p.schedule.sort_by_key(|s| (s.day.num_days_from_monday(), s.start));
    }
    for (id, loc) in generators {
        pois.push(PoiEvent {
            poi_id: id.clone(),
            kind: PoiKind::Generator,
            location: *loc,
            schedule: WEEK
                .iter()
                .map(|&day| ScheduleSlot {
                    day,
                    start: hm(6, 0),
                    end: hm(22, 59),
                })
                .collect(),
            magnitude: params.generator_magnitude,
        });
    }
    pois
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{build_graph_from_lines, FunctionalClassMap};
    use rand::SeedableRng;

    fn campus_net() -> (RoadNet, Campus) {
        let layout = CampusLayout::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let campus = layout.generate(&mut rng);
        let graph = build_graph_from_lines(&campus.lines, &FunctionalClassMap::default()).unwrap().graph;
        (RoadNet::new(graph, layout.origin), campus)
    }

    #[test]
    fn grid_segment_count_and_lengths() {
        let (net, campus) = campus_net();
        assert_eq!(net.n_segments(), 8 * 7 + 9 * 6);
        for s in 0..net.n_segments() {
            assert!((net.seg_length(s) - 80.0).abs() < 0.5, "{}", net.seg_length(s));
        }
        assert_eq!(campus.buildings.len(), CampusLayout::default().n_buildings);
        let labels = net.components();
        let first = labels(NodeIndex::new(0));
        assert!(net.g.node_indices().all(|n| labels(n) == first));
    }

    #[test]
    fn route_across_grid_is_manhattan() {
        let (net, _) = campus_net();
        let a = net.nearest_node((0.0, 0.0));
        let b = net.nearest_node((160.0, 240.0));
        let pts = net.route_nodes(a, b).unwrap();
        let len: f64 = pts.windows(2).map(|w| dist(w[0], w[1])).sum();
        assert!((len - 400.0).abs() < 2.0, "{len}");
    }

    #[test]
    fn spot_route_same_segment() {
        let (net, _) = campus_net();
        let pts = net.route_spots(Spot { seg: 0, s: 60.0 }, Spot { seg: 0, s: 10.0 }).unwrap();
        let len: f64 = pts.windows(2).map(|w| dist(w[0], w[1])).sum();
        assert!((len - 50.0).abs() < 1e-6);
    }

    #[test]
    fn timetable_has_no_sunday_or_late_classes() {
        let (_, campus) = campus_net();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let pois = builtin_timetable(&campus.buildings, &campus.generators, &TimetableParams::default(), &mut rng);
        let slots: Vec<&ScheduleSlot> = pois.iter().filter(|p| p.kind.attracts()).flat_map(|p| &p.schedule).collect();
        assert!(slots.len() > 100);
        assert!(slots.iter().all(|s| s.day != Weekday::Sun));
        assert!(slots.iter().all(|s| s.end <= NaiveTime::from_hms_opt(23, 0, 0).unwrap()));
    }
}
