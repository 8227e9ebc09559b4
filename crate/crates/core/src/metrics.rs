//! Safety metrics per functional class: total encounters per segment (TES),
//! mean encounters per mile (MEM), percent encounters per mile (PEM); RSSI
//! distribution by high/low group; and alignment of hourly encounters with the
//! class schedule.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{NaiveTime, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::{CountGroup, Keying, HOURS_PER_DAY, WEEK, WINDOW_START_MIN};
use crate::ble::Provider;
use crate::geo::{FunctionalClass, LatLon, SegmentId, StreetGraph};
use crate::io::RecordError;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot form percentages: values sum to zero")]
    ZeroTotal,
    #[error("cannot form percentages: value for `{0}` is negative or not finite")]
    BadValue(String),
}

/// Sum by recursive halving; fixed order, so results are reproducible.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TesTable {
    /// Every segment of the graph, zero counts included.
    pub per_segment: BTreeMap<SegmentId, u64>,
    pub per_class: BTreeMap<FunctionalClass, u64>,
    /// Encounters that did not snap to any segment.
    pub unmatched: u64,
}

impl TesTable {
    pub fn matched_total(&self) -> u64 {
        self.per_class.values().sum()
    }
}

/// Group-by counts of snapped encounters.
pub fn tes(snapped: &[Option<SegmentId>], graph: &StreetGraph) -> TesTable {
    let mut per_segment: BTreeMap<SegmentId, u64> = graph.segments().iter().map(|s| (s.segment_id, 0)).collect();
    let class_of: BTreeMap<SegmentId, FunctionalClass> = graph
        .segments()
        .iter()
        .map(|s| (s.segment_id, s.functional_class))
        .collect();
    let mut per_class: BTreeMap<FunctionalClass, u64> = FunctionalClass::ALL.iter().map(|c| (*c, 0)).collect();
    let mut unmatched = 0;
    for s in snapped {
        match s.and_then(|id| class_of.get(&id).map(|c| (id, *c))) {
            Some((id, class)) => {
                *per_segment.get_mut(&id).unwrap() += 1;
                *per_class.get_mut(&class).unwrap() += 1;
            }
            None => unmatched += 1,
        }
    }
    TesTable {
        per_segment,
        per_class,
        unmatched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemMode {
    /// Mean over the class's segments of `TES_s / length_s`.
    #[default]
    MeanOfRatios,
    /// Class TES divided by class miles.
    RatioOfTotals,
}

/// MEM per class. Classes without segments are omitted and named in the warnings.
pub fn mem(table: &TesTable, graph: &StreetGraph, mode: MemMode) -> (BTreeMap<FunctionalClass, f64>, Vec<String>) {
    let mut ratios: BTreeMap<FunctionalClass, Vec<f64>> = BTreeMap::new();
    let mut miles: BTreeMap<FunctionalClass, Vec<f64>> = BTreeMap::new();
    for s in graph.segments() {
        let n = table.per_segment.get(&s.segment_id).copied().unwrap_or(0) as f64;
        ratios.entry(s.functional_class).or_default().push(n / s.length_miles);
        miles.entry(s.functional_class).or_default().push(s.length_miles);
    }
    let mut out = BTreeMap::new();
    let mut warnings = Vec::new();
    for class in FunctionalClass::ALL {
        let Some(r) = ratios.get(&class) else {
            warnings.push(format!("no segments of class {class}; MEM undefined"));
            continue;
        };
        let value = match mode {
            MemMode::MeanOfRatios => pairwise_sum(r) / r.len() as f64,
            MemMode::RatioOfTotals => table.per_class[&class] as f64 / pairwise_sum(&miles[&class]),
        };
        out.insert(class, value);
    }
    (out, warnings)
}

/// Each value's share of the total, in percent.
pub fn pem<K: Ord + Clone + std::fmt::Debug>(values: &BTreeMap<K, f64>) -> Result<BTreeMap<K, f64>, MetricsError> {
    if let Some((k, _)) = values.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
        return Err(MetricsError::BadValue(format!("{k:?}")));
    }
    let parts: Vec<f64> = values.values().copied().collect();
    let total = pairwise_sum(&parts);
    if total <= 0.0 {
        return Err(MetricsError::ZeroTotal);
    }
    Ok(values.iter().map(|(k, v)| (k.clone(), 100.0 * v / total)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PemFormula {
    /// Share of the summed class MEM.
    #[default]
    MemShare,
    /// Share of total TES.
    TesShare,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub mem_mode: MemMode,
    pub pem_formula: PemFormula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub tes_p: u64,
    pub tes_o: u64,
    pub mem_p: Option<f64>,
    pub mem_o: Option<f64>,
    pub pem_p: Option<f64>,
    pub pem_o: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    /// One row per functional class, then `Unmatched` and `Total`.
    pub rows: Vec<MetricsRow>,
    pub warnings: Vec<String>,
}

fn pem_column(
    table: &TesTable,
    mems: &BTreeMap<FunctionalClass, f64>,
    formula: PemFormula,
    tag: &str,
    warnings: &mut Vec<String>,
) -> BTreeMap<FunctionalClass, f64> {
    let basis: BTreeMap<FunctionalClass, f64> = match formula {
        PemFormula::MemShare => mems.clone(),
        PemFormula::TesShare => table.per_class.iter().map(|(c, n)| (*c, *n as f64)).collect(),
    };
    match pem(&basis) {
        Ok(p) => p,
        Err(e) => {
            warnings.push(format!("PEM ({tag}): {e}; reported as zero"));
            basis.keys().map(|c| (*c, 0.0)).collect()
        }
    }
}

pub fn metrics_table(predicted: &TesTable, observed: &TesTable, graph: &StreetGraph, cfg: &MetricsConfig) -> MetricsTable {
    let (mem_p, mut warnings) = mem(predicted, graph, cfg.mem_mode);
    let (mem_o, _) = mem(observed, graph, cfg.mem_mode);
    let pem_p = pem_column(predicted, &mem_p, cfg.pem_formula, "E_P", &mut warnings);
    let pem_o = pem_column(observed, &mem_o, cfg.pem_formula, "E_O", &mut warnings);

    let mut rows: Vec<MetricsRow> = FunctionalClass::ALL
        .iter()
        .map(|c| MetricsRow {
            label: c.label().to_string(),
            tes_p: predicted.per_class[c],
            tes_o: observed.per_class[c],
            mem_p: mem_p.get(c).copied(),
            mem_o: mem_o.get(c).copied(),
            pem_p: pem_p.get(c).copied(),
            pem_o: pem_o.get(c).copied(),
        })
        .collect();
    rows.push(MetricsRow {
        label: "Unmatched".into(),
        tes_p: predicted.unmatched,
        tes_o: observed.unmatched,
        mem_p: None,
        mem_o: None,
        pem_p: None,
        pem_o: None,
    });
    let mean = |m: &BTreeMap<FunctionalClass, f64>| {
        (!m.is_empty()).then(|| pairwise_sum(&m.values().copied().collect::<Vec<_>>()) / m.len() as f64)
    };
    let sum = |m: &BTreeMap<FunctionalClass, f64>| Some(pairwise_sum(&m.values().copied().collect::<Vec<_>>()));
    rows.push(MetricsRow {
        label: "Total".into(),
        tes_p: predicted.matched_total(),
        tes_o: observed.matched_total(),
        mem_p: mean(&mem_p),
        mem_o: mean(&mem_o),
        pem_p: sum(&pem_p),
        pem_o: sum(&pem_o),
    });
    MetricsTable { rows, warnings }
}

pub fn write_metrics_csv<W: Write>(w: W, table: &MetricsTable) -> Result<(), RecordError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["class", "TES_P", "TES_O", "MEM_P", "MEM_O", "PEM_P", "PEM_O"])?;
    let f = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_default();
    for r in &table.rows {
        wtr.write_record([
            r.label.clone(),
            r.tes_p.to_string(),
            r.tes_o.to_string(),
            f(r.mem_p),
            f(r.mem_o),
            f(r.pem_p),
            f(r.pem_o),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn distribution_stats(values: &[f64]) -> Option<DistributionStats> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(DistributionStats {
        n: values.len(),
        mean: pairwise_sum(values) / values.len() as f64,
        median: quantile(&sorted, 0.5),
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssiGroupRow {
    pub provider: Provider,
    pub group: CountGroup,
    /// `None` when the group has no encounters for this provider.
    pub stats: Option<DistributionStats>,
}

/// Max-RSSI distribution per (provider, group). Encounters without a group are ignored.
pub fn rssi_group_comparison(encounters: &[(Provider, Option<CountGroup>, f64)]) -> Vec<RssiGroupRow> {
    let mut buckets: BTreeMap<(Provider, CountGroup), Vec<f64>> = BTreeMap::new();
    let mut providers: Vec<Provider> = vec![Provider::Bird, Provider::Lime];
    for &(p, g, rssi) in encounters {
        if !providers.contains(&p) {
            providers.push(p);
        }
        if let Some(g) = g {
            buckets.entry((p, g)).or_default().push(rssi);
        }
    }
    providers.sort();
    let mut out = Vec::new();
    for p in providers {
        for g in [CountGroup::Low, CountGroup::High] {
            out.push(RssiGroupRow {
                provider: p,
                group: g,
                stats: buckets.get(&(p, g)).and_then(|v| distribution_stats(v)),
            });
        }
    }
    out
}

/// One block of rows per keying, tagged in the first column.
pub fn write_rssi_groups_csv<W: Write>(w: W, blocks: &[(Keying, Vec<RssiGroupRow>)]) -> Result<(), RecordError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["keying", "provider", "group", "n", "mean_db", "median_db", "q1_db", "q3_db", "flag"])?;
    for (keying, rows) in blocks {
        for r in rows {
            let group = match r.group {
                CountGroup::Low => "low",
                CountGroup::High => "high",
            };
            let mut rec = vec![keying.as_str().to_string(), r.provider.to_string(), group.to_string()];
            match r.stats {
                Some(s) => {
                    rec.push(s.n.to_string());
                    rec.extend([s.mean, s.median, s.q1, s.q3].map(|v| format!("{v:.3}")));
                    rec.push(String::new());
                }
                None => {
                    rec.push("0".into());
                    rec.extend(std::iter::repeat_n(String::new(), 4));
                    rec.push("empty".into());
                }
            }
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoiKind {
    Attractor,
    Generator,
    Both,
}

impl PoiKind {
    pub fn attracts(&self) -> bool {
        matches!(self, PoiKind::Attractor | PoiKind::Both)
    }

    pub fn generates(&self) -> bool {
        matches!(self, PoiKind::Generator | PoiKind::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSlot {
    pub day: Weekday,
    pub start: NaiveTime,
    pub end: NaiveTime,
}

/// A point of interest and when it draws or emits people.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiEvent {
    pub poi_id: String,
    pub kind: PoiKind,
    pub location: LatLon,
    pub schedule: Vec<ScheduleSlot>,
    /// Expected headcount.
    pub magnitude: f64,
}

impl PoiEvent {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.magnitude >= 0.0) {
            return Err(format!("poi {}: magnitude must be >= 0", self.poi_id));
        }
        if let Some(s) = self.schedule.iter().find(|s| s.start >= s.end) {
            return Err(format!("poi {}: slot {}-{} has start >= end", self.poi_id, s.start, s.end));
        }
        Ok(())
    }
}

pub const SCHEDULE_CSV_HEADER: [&str; 8] = ["poi_id", "kind", "lat", "lon", "day_of_week", "start", "end", "magnitude"];

fn weekday_str(d: Weekday) -> &'static str {
    match d {
        Weekday::Mon => "mon",
        Weekday::Tue => "tue",
        Weekday::Wed => "wed",
        Weekday::Thu => "thu",
        Weekday::Fri => "fri",
        Weekday::Sat => "sat",
        Weekday::Sun => "sun",
    }
}

/// One row per schedule slot; rows sharing a `poi_id` must agree on kind,
/// location and magnitude.
pub fn write_schedule_csv<W: Write>(w: W, pois: &[PoiEvent]) -> Result<(), RecordError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SCHEDULE_CSV_HEADER)?;
    for p in pois {
        let kind = match p.kind {
            PoiKind::Attractor => "attractor",
            PoiKind::Generator => "generator",
            PoiKind::Both => "both",
        };
        for s in &p.schedule {
            wtr.write_record([
                p.poi_id.clone(),
                kind.to_string(),
                p.location.lat.to_string(),
                p.location.lon.to_string(),
                weekday_str(s.day).to_string(),
                s.start.format("%H:%M").to_string(),
                s.end.format("%H:%M").to_string(),
                p.magnitude.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_schedule_csv<R: Read>(r: R) -> Result<Vec<PoiEvent>, RecordError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let mut out: Vec<PoiEvent> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec?;
        let perr = |message: String| RecordError::Parse { line, message };
        if rec.len() != SCHEDULE_CSV_HEADER.len() {
            return Err(perr(format!("expected {} columns, got {}", SCHEDULE_CSV_HEADER.len(), rec.len())));
        }
        let float = |i: usize| rec[i].trim().parse::<f64>().map_err(|e| perr(format!("{}: {e}", SCHEDULE_CSV_HEADER[i])));
        let time = |i: usize| {
            NaiveTime::parse_from_str(rec[i].trim(), "%H:%M").map_err(|e| perr(format!("{}: {e}", SCHEDULE_CSV_HEADER[i])))
        };
        let kind = match rec[1].trim().to_ascii_lowercase().as_str() {
            "attractor" => PoiKind::Attractor,
            "generator" => PoiKind::Generator,
            "both" => PoiKind::Both,
            other => return Err(perr(format!("kind: unknown `{other}`"))),
        };
        let day: Weekday = rec[4].trim().parse().map_err(|_| perr(format!("day_of_week: `{}`", &rec[4])))?;
        let slot = ScheduleSlot {
            day,
            start: time(5)?,
            end: time(6)?,
        };
        let poi = PoiEvent {
            poi_id: rec[0].trim().to_string(),
            kind,
            location: LatLon::new(float(2)?, float(3)?),
            schedule: vec![slot],
            magnitude: float(7)?,
        };
        poi.validate().map_err(|message| RecordError::Invalid { line, message })?;
        match out.iter_mut().find(|p| p.poi_id == poi.poi_id) {
            Some(existing) => {
                if existing.kind != poi.kind || existing.location != poi.location || existing.magnitude != poi.magnitude {
                    return Err(RecordError::Invalid {
                        line,
                        message: format!("poi {} redefined with different attributes", poi.poi_id),
                    });
                }
                existing.schedule.push(slot);
            }
            None => out.push(poi),
        }
    }
    Ok(out)
}

/// Average ranks (1-based), ties share the mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = pairwise_sum(a) / n;
    let mb = pairwise_sum(b) / n;
    let cov: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let va: Vec<f64> = a.iter().map(|x| (x - ma).powi(2)).collect();
    let vb: Vec<f64> = b.iter().map(|y| (y - mb).powi(2)).collect();
    let (sa, sb) = (pairwise_sum(&va), pairwise_sum(&vb));
    if sa == 0.0 || sb == 0.0 {
        return None;
    }
    Some(pairwise_sum(&cov) / (sa.sqrt() * sb.sqrt()))
}

/// Spearman rank correlation; `None` if either series is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&ranks(a), &ranks(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedHour {
    pub day: String,
    /// Hour start, `HH:00`.
    pub hour: String,
    pub encounters: u64,
    pub scheduled_classes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleCorrelation {
    pub bins: Vec<AlignedHour>,
    /// `None` when either series is constant.
    pub spearman: Option<f64>,
}

/// Number of attractor slots overlapping each hour of the week (7 × 17).
pub fn scheduled_classes_per_hour(schedule: &[PoiEvent]) -> Vec<u64> {
    let mut out = vec![0u64; 7 * HOURS_PER_DAY];
    for poi in schedule.iter().filter(|p| p.kind.attracts()) {
        for slot in &poi.schedule {
            let day = slot.day.num_days_from_monday() as usize;
            for h in 0..HOURS_PER_DAY {
                let start = WINDOW_START_MIN + 60 * h as u32;
                let hs = NaiveTime::from_hms_opt(start / 60, 0, 0).unwrap();
                let he = hs + chrono::Duration::hours(1);
                if slot.start < he && slot.end > hs {
                    out[day * HOURS_PER_DAY + h] += 1;
                }
            }
        }
    }
    out
}

/// Aligns hourly encounter counts (7 × 17, Monday first) with scheduled class
/// counts over the given days, and rank-correlates the two series.
pub fn schedule_correlation(hourly_encounters: &[u64], schedule: &[PoiEvent], days: &[Weekday]) -> ScheduleCorrelation {
    assert_eq!(hourly_encounters.len(), 7 * HOURS_PER_DAY, "expects 7 x 17 hourly bins");
    let classes = scheduled_classes_per_hour(schedule);
    let mut bins = Vec::new();
    for day in WEEK.iter().filter(|d| days.contains(d)) {
        let d = day.num_days_from_monday() as usize;
        for h in 0..HOURS_PER_DAY {
            let i = d * HOURS_PER_DAY + h;
            bins.push(AlignedHour {
                day: weekday_str(*day).to_string(),
                hour: format!("{:02}:00", 6 + h),
                encounters: hourly_encounters[i],
                scheduled_classes: classes[i],
            });
        }
    }
    let e: Vec<f64> = bins.iter().map(|b| b.encounters as f64).collect();
    let c: Vec<f64> = bins.iter().map(|b| b.scheduled_classes as f64).collect();
    ScheduleCorrelation {
        spearman: spearman(&e, &c),
        bins,
    }
}
