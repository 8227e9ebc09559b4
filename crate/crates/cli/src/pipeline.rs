//! Stage logic shared by the commands, free of file handling.

use std::collections::BTreeMap;

use chrono::Weekday;
use chrono_tz::Tz;
use serde::Serialize;

use scootsafe_core::binning::{
    bin_time_in, event_groups, frequency_distribution, hourly_week_counts, BinnedEvent, FrequencyDistribution,
    KeyUniverse, Keying,
};
use scootsafe_core::ble::{BleReception, ProviderConfig};
use scootsafe_core::detector::{
    detect_corpus, group_by_participant, retain_scooter_packets, CorpusSummary, DetectError, DetectorParams, Encounter,
};
use scootsafe_core::feedback::{
    build_profile, classify_startle, filter_study_window, in_study_window, summarize_direction_matrix,
    DirectionMatrix, FeedbackRecord, HeartRateProfile, ProfileParams, StartleClass,
};
use scootsafe_core::geo::{LatLon, SegmentId, StreetGraph};
use scootsafe_core::metrics::{
    metrics_table, rssi_group_comparison, schedule_correlation, tes, MetricsTable, PoiEvent, RssiGroupRow,
    ScheduleCorrelation,
};

use crate::config::PipelineConfig;
use crate::CliError;

/// Days entering the schedule correlation. The built-in timetable has no
/// Sunday classes.
pub const CORRELATION_DAYS: [Weekday; 6] =
    [Weekday::Mon, Weekday::Tue, Weekday::Wed, Weekday::Thu, Weekday::Fri, Weekday::Sat];

pub const KEYINGS: [Keying; 3] = [Keying::Space, Keying::Time, Keying::SpaceTime];

/// Drops packets from unrecognised devices, then detects per participant.
pub fn detect(
    mut receptions: Vec<BleReception>,
    params: &DetectorParams,
    providers: &ProviderConfig,
) -> Result<(Vec<Encounter>, CorpusSummary), CliError> {
    let classifier = providers.compile().map_err(|e| CliError::Config(e.to_string()))?;
    retain_scooter_packets(&mut receptions, &classifier);
    let streams = group_by_participant(receptions);
    detect_corpus(&streams, params, &classifier).map_err(|e| match e {
        DetectError::InvalidParams(_) => CliError::Config(e.to_string()),
        other => CliError::Data(other.to_string()),
    })
}

/// Heart-rate values carried on each participant's receptions.
pub fn heart_rate_samples(receptions: &[BleReception]) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in receptions {
        if let Some(hr) = r.heart_rate_bpm {
            out.entry(r.receiver_id.clone()).or_default().push(hr);
        }
    }
    out
}

pub fn build_profiles(
    samples: &BTreeMap<String, Vec<f64>>,
    params: &ProfileParams,
) -> Result<BTreeMap<String, HeartRateProfile>, CliError> {
    samples
        .iter()
        .map(|(id, s)| {
            build_profile(id, s, params)
                .map(|p| (id.clone(), p))
                .map_err(|e| CliError::Config(e.to_string()))
        })
        .collect()
}

/// Records of participants without a profile come out `Unknown`.
pub fn classify_all(records: &[FeedbackRecord], profiles: &BTreeMap<String, HeartRateProfile>) -> Vec<StartleClass> {
    records
        .iter()
        .map(|r| match profiles.get(&r.participant_id) {
            Some(p) => classify_startle(r, p),
            None => StartleClass::Unknown,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackReport {
    pub records_in: usize,
    pub records_kept: usize,
    pub direction: DirectionMatrix,
    pub fractions: BTreeMap<&'static str, f64>,
    pub moving: usize,
    pub moving_elevated: usize,
    pub moving_unknown: usize,
    /// Elevated share of moving records with a heart-rate reading.
    pub moving_elevated_fraction: Option<f64>,
}

pub struct FilteredFeedback {
    pub kept: Vec<FeedbackRecord>,
    pub classes: Vec<StartleClass>,
    pub report: FeedbackReport,
}

pub fn filter_feedback(
    records: &[FeedbackRecord],
    profiles: &BTreeMap<String, HeartRateProfile>,
    tz: Tz,
) -> FilteredFeedback {
    let kept = filter_study_window(records, tz);
    let classes = classify_all(&kept, profiles);
    let direction = summarize_direction_matrix(&kept);
    let moving: Vec<StartleClass> = kept.iter().zip(&classes).filter(|(r, _)| r.q_moving).map(|(_, c)| *c).collect();
    let count = |c: StartleClass| moving.iter().filter(|m| **m == c).count();
    let (elevated, unknown) = (count(StartleClass::Elevated), count(StartleClass::Unknown));
    let known = moving.len() - unknown;
    FilteredFeedback {
        report: FeedbackReport {
            records_in: records.len(),
            records_kept: kept.len(),
            fractions: direction.fractions(),
            direction,
            moving: moving.len(),
            moving_elevated: elevated,
            moving_unknown: unknown,
            moving_elevated_fraction: (known > 0).then(|| elevated as f64 / known as f64),
        },
        kept,
        classes,
    }
}

/// Bird and Lime encounters starting inside the local study window.
pub fn predicted_in_window(encounters: &[Encounter], tz: Tz) -> Vec<Encounter> {
    encounters
        .iter()
        .filter(|e| e.provider.is_analyzed() && in_study_window(&e.start, tz))
        .cloned()
        .collect()
}

fn snap(graph: &StreetGraph, lat: f64, lon: f64, max_m: f64) -> Result<Option<SegmentId>, CliError> {
    graph
        .snap(LatLon::new(lat, lon), max_m)
        .map(|s| s.segment())
        .map_err(|e| CliError::Data(e.to_string()))
}

pub fn predicted_events(
    encounters: &[Encounter],
    graph: &StreetGraph,
    tz: Tz,
    snap_m: f64,
) -> Result<Vec<BinnedEvent>, CliError> {
    encounters
        .iter()
        .map(|e| {
            let segment = match e.representative_gps {
                Some(g) => snap(graph, g.lat, g.lon, snap_m)?,
                None => None,
            };
            Ok(BinnedEvent {
                segment,
                bin: bin_time_in(&e.start, tz),
            })
        })
        .collect()
}

pub fn observed_events(
    records: &[FeedbackRecord],
    graph: &StreetGraph,
    tz: Tz,
    snap_m: f64,
) -> Result<Vec<BinnedEvent>, CliError> {
    records
        .iter()
        .map(|r| {
            Ok(BinnedEvent {
                segment: snap(graph, r.gps.lat, r.gps.lon, snap_m)?,
                bin: bin_time_in(&r.timestamp, tz),
            })
        })
        .collect()
}

pub struct Analysis {
    pub segments: usize,
    pub zone_universe: usize,
    pub metrics: MetricsTable,
    /// E_P frequency distributions, one per keying in `KEYINGS` order.
    pub distributions: Vec<FrequencyDistribution>,
    pub rssi_groups: Vec<(Keying, Vec<RssiGroupRow>)>,
    pub schedule: Option<ScheduleCorrelation>,
    pub predicted_events: Vec<BinnedEvent>,
    pub warnings: Vec<String>,
}

impl Analysis {
    pub fn rssi_rows(&self, keying: Keying) -> &[RssiGroupRow] {
        self.rssi_groups
            .iter()
            .find(|(k, _)| *k == keying)
            .map(|(_, rows)| rows.as_slice())
            .unwrap_or(&[])
    }
}

/// Predicted encounters are study-window Bird and Lime detections; observed
/// ones are study-window feedback records.
pub fn analyze(
    graph: &StreetGraph,
    encounters: &[Encounter],
    feedback: &[FeedbackRecord],
    schedule: Option<&[PoiEvent]>,
    cfg: &PipelineConfig,
) -> Result<Analysis, CliError> {
    let tz = cfg.timezone;
    let snap_m = cfg.analysis.snap_distance_m;
    let mut warnings = Vec::new();
    let predicted = predicted_in_window(encounters, tz);
    let observed = filter_study_window(feedback, tz);
    if predicted.is_empty() {
        warnings.push("no predicted encounters inside the study window".to_string());
    }
    if observed.is_empty() {
        warnings.push("no observed encounters inside the study window".to_string());
    }
    let p_events = predicted_events(&predicted, graph, tz, snap_m)?;
    let o_events = observed_events(&observed, graph, tz, snap_m)?;

    let p_tes = tes(&p_events.iter().map(|e| e.segment).collect::<Vec<_>>(), graph);
    let o_tes = tes(&o_events.iter().map(|e| e.segment).collect::<Vec<_>>(), graph);
    let metrics = metrics_table(&p_tes, &o_tes, graph, &cfg.metrics);
    warnings.extend(metrics.warnings.iter().cloned());

    let mut distributions = Vec::new();
    let mut rssi_groups = Vec::new();
    for keying in KEYINGS {
        let dist = frequency_distribution(&p_events, KeyUniverse::for_graph(keying, graph));
        let groups = event_groups(&p_events, &dist);
        let items: Vec<_> = predicted
            .iter()
            .zip(&groups)
            .map(|(e, g)| (e.provider, *g, e.max_rssi_db))
            .collect();
        rssi_groups.push((keying, rssi_group_comparison(&items)));
        distributions.push(dist);
    }

    let schedule = schedule.map(|s| {
        let hourly = hourly_week_counts(&predicted.iter().map(|e| e.start).collect::<Vec<_>>(), tz);
        schedule_correlation(&hourly, s, &CORRELATION_DAYS)
    });
    if let Some(sc) = &schedule {
        if sc.spearman.is_none() {
            warnings.push("schedule correlation undefined: a series is constant".to_string());
        }
    }

    Ok(Analysis {
        segments: graph.len(),
        zone_universe: KeyUniverse::for_graph(Keying::SpaceTime, graph).size(),
        metrics,
        distributions,
        rssi_groups,
        schedule,
        predicted_events: p_events,
        warnings,
    })
}
