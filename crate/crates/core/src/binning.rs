//! 15-minute and hourly time bins over `[06:00, 23:00)`, spatial / temporal /
//! spatio-temporal key universes, frequency distributions and the high/low
//! encounter-count split.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, Datelike, FixedOffset, TimeZone, Timelike, Weekday};
use chrono_tz::Tz;
use geojson::{Feature, FeatureCollection, GeoJson, Geometry, JsonObject, JsonValue, Value};
use serde::{Deserialize, Serialize};

use crate::geo::{SegmentId, StreetGraph};
use crate::io::RecordError;

pub const WINDOW_START_MIN: u32 = 6 * 60;
pub const WINDOW_END_MIN: u32 = 23 * 60;
pub const SLOTS_PER_DAY: usize = 68;
pub const HOURS_PER_DAY: usize = 17;
pub const SLOTS_PER_WEEK: usize = SLOTS_PER_DAY * 7;

pub const WEEK: [Weekday; 7] = [
    Weekday::Mon,
    Weekday::Tue,
    Weekday::Wed,
    Weekday::Thu,
    Weekday::Fri,
    Weekday::Sat,
    Weekday::Sun,
];

/// A 15-minute slot of a given weekday; `index` 0 is 06:00–06:15.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeBin {
    pub day: Weekday,
    pub index: u8,
}

impl PartialOrd for TimeBin {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TimeBin {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.week_index().cmp(&other.week_index())
    }
}

impl TimeBin {
    pub fn week_index(&self) -> usize {
        self.day.num_days_from_monday() as usize * SLOTS_PER_DAY + self.index as usize
    }

    /// `HH:MM` of the slot start.
    pub fn start_label(&self) -> String {
        let m = WINDOW_START_MIN + self.index as u32 * 15;
        format!("{:02}:{:02}", m / 60, m % 60)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HourBin {
    pub day: Weekday,
    pub index: u8,
}

impl PartialOrd for HourBin {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HourBin {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.week_index().cmp(&other.week_index())
    }
}

impl HourBin {
    pub fn week_index(&self) -> usize {
        self.day.num_days_from_monday() as usize * HOURS_PER_DAY + self.index as usize
    }
}

fn minutes_into_window<T: TimeZone>(ts: &DateTime<T>) -> Option<u32> {
    let m = ts.hour() * 60 + ts.minute();
    (WINDOW_START_MIN..WINDOW_END_MIN)
        .contains(&m)
        .then(|| m - WINDOW_START_MIN)
}

/// Slot of a timestamp in its own local time; `None` outside the window.
pub fn bin_time<T: TimeZone>(ts: &DateTime<T>) -> Option<TimeBin> {
    minutes_into_window(ts).map(|m| TimeBin {
        day: ts.weekday(),
        index: (m / 15) as u8,
    })
}

pub fn bin_hourly<T: TimeZone>(ts: &DateTime<T>) -> Option<HourBin> {
    minutes_into_window(ts).map(|m| HourBin {
        day: ts.weekday(),
        index: (m / 60) as u8,
    })
}

pub fn bin_time_in(ts: &DateTime<FixedOffset>, tz: Tz) -> Option<TimeBin> {
    bin_time(&ts.with_timezone(&tz))
}

pub fn bin_hourly_in(ts: &DateTime<FixedOffset>, tz: Tz) -> Option<HourBin> {
    bin_hourly(&ts.with_timezone(&tz))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keying {
    Space,
    Time,
    SpaceTime,
}

impl Keying {
    pub fn as_str(&self) -> &'static str {
        match self {
            Keying::Space => "space",
            Keying::Time => "time",
            Keying::SpaceTime => "space_time",
        }
    }
}

/// An encounter reduced to what binning needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinnedEvent {
    pub segment: Option<SegmentId>,
    pub bin: Option<TimeBin>,
}

/// Dense enumeration of every key for a keying: segments (in graph order),
/// day-agnostic slots, or segment × slot zones.
#[derive(Debug, Clone)]
pub struct KeyUniverse {
    keying: Keying,
    segment_ids: Vec<SegmentId>,
    position: BTreeMap<SegmentId, usize>,
}

impl KeyUniverse {
    pub fn new(keying: Keying, segment_ids: &[SegmentId]) -> Self {
        let position = segment_ids.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        KeyUniverse {
            keying,
            segment_ids: segment_ids.to_vec(),
            position,
        }
    }

    pub fn for_graph(keying: Keying, graph: &StreetGraph) -> Self {
        let ids: Vec<SegmentId> = graph.segments().iter().map(|s| s.segment_id).collect();
        Self::new(keying, &ids)
    }

    pub fn keying(&self) -> Keying {
        self.keying
    }

    pub fn size(&self) -> usize {
        match self.keying {
            Keying::Space => self.segment_ids.len(),
            Keying::Time => SLOTS_PER_DAY,
            Keying::SpaceTime => self.segment_ids.len() * SLOTS_PER_DAY,
        }
    }

    /// `None` when the event lacks the segment or slot this keying needs.
    pub fn index_of(&self, e: &BinnedEvent) -> Option<usize> {
        let seg = || e.segment.and_then(|s| self.position.get(&s).copied());
        let slot = || e.bin.map(|b| b.index as usize);
        match self.keying {
            Keying::Space => {
                // spatial counts still only cover the study window
                e.bin?;
                seg()
            }
            Keying::Time => slot(),
            Keying::SpaceTime => Some(seg()? * SLOTS_PER_DAY + slot()?),
        }
    }

    pub fn label(&self, index: usize) -> String {
        match self.keying {
            Keying::Space => format!("{}", self.segment_ids[index]),
            Keying::Time => TimeBin { day: Weekday::Mon, index: index as u8 }.start_label(),
            Keying::SpaceTime => {
                let slot = TimeBin {
                    day: Weekday::Mon,
                    index: (index % SLOTS_PER_DAY) as u8,
                };
                format!("{}@{}", self.segment_ids[index / SLOTS_PER_DAY], slot.start_label())
            }
        }
    }

    /// Segment of a space or space-time key.
    pub fn segment_of(&self, index: usize) -> Option<SegmentId> {
        match self.keying {
            Keying::Space => Some(self.segment_ids[index]),
            Keying::Time => None,
            Keying::SpaceTime => Some(self.segment_ids[index / SLOTS_PER_DAY]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub keying: Keying,
    pub universe: usize,
    pub total_events: u64,
    pub excluded_events: u64,
    pub nonzero_keys: usize,
    pub zero_fraction: f64,
    pub at_most_five_fraction: f64,
    pub max: u32,
    pub mean: f64,
    pub p50: u32,
    pub p90: u32,
    pub p95: u32,
    pub p99: u32,
}

#[derive(Debug, Clone)]
pub struct FrequencyDistribution {
    pub universe: KeyUniverse,
    /// One count per key, dense over the universe.
    pub counts: Vec<u32>,
    /// Events missing a segment or slot for this keying.
    pub excluded: u64,
}

impl FrequencyDistribution {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Encounter count → number of keys with that count (zeros included).
    pub fn histogram(&self) -> BTreeMap<u32, u64> {
        let mut h = BTreeMap::new();
        for &c in &self.counts {
            *h.entry(c).or_default() += 1;
        }
        h
    }

    pub fn summary(&self) -> DistributionSummary {
        let n = self.counts.len();
        let mut sorted = self.counts.clone();
        sorted.sort_unstable();
        // nearest-rank percentile
        let pct = |q: f64| -> u32 {
            if n == 0 {
                return 0;
            }
            let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
            sorted[rank - 1]
        };
        let frac = |pred: &dyn Fn(u32) -> bool| {
            if n == 0 {
                0.0
            } else {
                self.counts.iter().filter(|&&c| pred(c)).count() as f64 / n as f64
            }
        };
        let total = self.total();
        DistributionSummary {
            keying: self.universe.keying(),
            universe: n,
            total_events: total,
            excluded_events: self.excluded,
            nonzero_keys: self.counts.iter().filter(|&&c| c > 0).count(),
            zero_fraction: frac(&|c| c == 0),
            at_most_five_fraction: frac(&|c| c <= 5),
            max: self.max(),
            mean: if n == 0 { 0.0 } else { total as f64 / n as f64 },
            p50: pct(0.50),
            p90: pct(0.90),
            p95: pct(0.95),
            p99: pct(0.99),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), RecordError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["key", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            wtr.write_record([self.universe.label(i), c.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn frequency_distribution(events: &[BinnedEvent], universe: KeyUniverse) -> FrequencyDistribution {
    let mut counts = vec![0u32; universe.size()];
    let mut excluded = 0;
    for e in events {
        match universe.index_of(e) {
            Some(i) => counts[i] += 1,
            None => excluded += 1,
        }
    }
    FrequencyDistribution {
        universe,
        counts,
        excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountGroup {
    Low,
    High,
}

/// Keys with count in `[1, floor(M/2)]` are low, `(floor(M/2), M]` high.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighLowSplit {
    pub max_count: u32,
    pub low_range: Option<(u32, u32)>,
    pub high_range: Option<(u32, u32)>,
}

impl HighLowSplit {
    pub fn from_max(max_count: u32) -> Self {
        if max_count == 0 {
            return HighLowSplit {
                max_count,
                low_range: None,
                high_range: None,
            };
        }
        let cut = max_count / 2;
        HighLowSplit {
            max_count,
            low_range: (cut >= 1).then_some((1, cut)),
            high_range: Some((cut + 1, max_count)),
        }
    }

    pub fn group_of(&self, count: u32) -> Option<CountGroup> {
        let within = |r: Option<(u32, u32)>| r.is_some_and(|(lo, hi)| (lo..=hi).contains(&count));
        if within(self.low_range) {
            Some(CountGroup::Low)
        } else if within(self.high_range) {
            Some(CountGroup::High)
        } else {
            None
        }
    }
}

/// Split plus per-key group assignment (zero-count keys have none).
pub fn split_high_low(dist: &FrequencyDistribution) -> (HighLowSplit, Vec<Option<CountGroup>>) {
    let split = HighLowSplit::from_max(dist.max());
    let groups = dist.counts.iter().map(|&c| split.group_of(c)).collect();
    (split, groups)
}

/// Group inherited by each event from its key.
pub fn event_groups(events: &[BinnedEvent], dist: &FrequencyDistribution) -> Vec<Option<CountGroup>> {
    let (_, key_groups) = split_high_low(dist);
    events
        .iter()
        .map(|e| dist.universe.index_of(e).and_then(|i| key_groups[i]))
        .collect()
}

/// Counts per slot of the week (476 bins, Monday 06:00 first).
pub fn weekly_slot_counts(events: &[BinnedEvent]) -> Vec<u64> {
    let mut out = vec![0u64; SLOTS_PER_WEEK];
    for b in events.iter().filter_map(|e| e.bin) {
        out[b.week_index()] += 1;
    }
    out
}

/// Counts per hour of the week (7 × 17 bins).
pub fn hourly_week_counts(times: &[DateTime<FixedOffset>], tz: Tz) -> Vec<u64> {
    let mut out = vec![0u64; HOURS_PER_DAY * 7];
    for h in times.iter().filter_map(|t| bin_hourly_in(t, tz)) {
        out[h.week_index()] += 1;
    }
    out
}

/// Per-segment counts with a sparse per-slot breakdown, one feature per segment.
pub fn heatmap_geojson(graph: &StreetGraph, events: &[BinnedEvent]) -> String {
    let mut per_seg: BTreeMap<SegmentId, BTreeMap<u8, u64>> = BTreeMap::new();
    for e in events {
        if let (Some(s), Some(b)) = (e.segment, e.bin) {
            *per_seg.entry(s).or_default().entry(b.index).or_default() += 1;
        }
    }
    let features = graph
        .segments()
        .iter()
        .map(|s| {
            let slots = per_seg.get(&s.segment_id);
            let mut props = JsonObject::new();
            props.insert("segment_id".into(), JsonValue::from(s.segment_id));
            props.insert("functional_class".into(), JsonValue::from(s.functional_class.as_str()));
            props.insert("total".into(), JsonValue::from(slots.map_or(0, |m| m.values().sum::<u64>())));
            let bins: serde_json::Map<String, JsonValue> = slots
                .into_iter()
                .flatten()
                .map(|(idx, n)| (idx.to_string(), JsonValue::from(*n)))
                .collect();
            props.insert("slots".into(), JsonValue::Object(bins));
            Feature {
                bbox: None,
                geometry: Some(Geometry::new(Value::LineString(
                    s.polyline.iter().map(|p| vec![p.lon, p.lat]).collect(),
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
