//! Observed encounters: participant questionnaire answers, prompt gating and
//! personalised heart-rate startle classification.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, Duration, FixedOffset, NaiveTime};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ble::{GpsFix, Provider};
use crate::detector::Encounter;
use crate::io::{optional_cell, parse_yes_no, yes_no, RecordError};
use crate::time::{format_iso, parse_iso};

pub const FEEDBACK_CSV_HEADER: [&str; 10] = [
    "participant_id",
    "iso_time",
    "lat",
    "lon",
    "provider",
    "q_moving",
    "q_in_front",
    "q_toward",
    "heart_rate_bpm",
    "answered_within_s",
];

/// Prompts are suppressed this long after one is shown.
pub const DEFAULT_PROMPT_INTERVAL_S: i64 = 900;
/// Questions disappear if not answered within this many seconds.
pub const ANSWER_TIMEOUT_S: f64 = 60.0;

/// `[06:00, 23:00)` local.
pub fn study_window() -> (NaiveTime, NaiveTime) {
    (
        NaiveTime::from_hms_opt(6, 0, 0).unwrap(),
        NaiveTime::from_hms_opt(23, 0, 0).unwrap(),
    )
}

#[derive(Debug, Error, PartialEq)]
pub enum FeedbackError {
    #[error("no heart-rate samples for participant `{0}`")]
    NoSamples(String),
    #[error("invalid profile parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub participant_id: String,
    pub timestamp: DateTime<FixedOffset>,
    pub gps: GpsFix,
    pub provider: Provider,
    /// Is there a fast moving e-scooter in your vicinity?
    pub q_moving: bool,
    pub q_in_front: Option<bool>,
    pub q_toward: Option<bool>,
    pub heart_rate_bpm: Option<f64>,
    pub answered_within_s: f64,
}

impl FeedbackRecord {
    pub fn validate(&self) -> Result<(), String> {
        if !self.q_moving && (self.q_in_front.is_some() || self.q_toward.is_some()) {
            return Err("direction answers present although q_moving = no".into());
        }
        if !(0.0..=ANSWER_TIMEOUT_S).contains(&self.answered_within_s) {
            return Err(format!(
                "answered_within_s {} outside [0, {ANSWER_TIMEOUT_S}]",
                self.answered_within_s
            ));
        }
        if let Some(hr) = self.heart_rate_bpm {
            if !(hr > 25.0 && hr < 250.0) {
                return Err(format!("heart_rate_bpm {hr} outside (25, 250)"));
            }
        }
        self.gps.validate()
    }

    /// Moving, behind the pedestrian, heading toward them.
    pub fn approaching_from_behind(&self) -> bool {
        self.q_moving && self.q_in_front == Some(false) && self.q_toward == Some(true)
    }
}

pub fn write_feedback_csv<W: Write>(w: W, records: &[FeedbackRecord]) -> Result<(), RecordError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(FEEDBACK_CSV_HEADER)?;
    let opt_bool = |v: Option<bool>| v.map(|b| yes_no(b).to_string()).unwrap_or_default();
    for r in records {
        wtr.write_record([
            r.participant_id.clone(),
            format_iso(&r.timestamp),
            r.gps.lat.to_string(),
            r.gps.lon.to_string(),
            r.provider.to_string(),
            yes_no(r.q_moving).to_string(),
            opt_bool(r.q_in_front),
            opt_bool(r.q_toward),
            r.heart_rate_bpm.map(|h| h.to_string()).unwrap_or_default(),
            r.answered_within_s.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_feedback_csv<R: Read>(r: R) -> Result<Vec<FeedbackRecord>, RecordError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec?;
        let perr = |message: String| RecordError::Parse { line, message };
        if rec.len() != FEEDBACK_CSV_HEADER.len() {
            return Err(perr(format!("expected {} columns, got {}", FEEDBACK_CSV_HEADER.len(), rec.len())));
        }
        let float = |i: usize| -> Result<f64, RecordError> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| perr(format!("{}: {e}", FEEDBACK_CSV_HEADER[i])))
        };
        let opt_bool = |i: usize| -> Result<Option<bool>, RecordError> {
            optional_cell(&rec[i])
                .map(|s| parse_yes_no(s).map_err(|e| perr(format!("{}: {e}", FEEDBACK_CSV_HEADER[i]))))
                .transpose()
        };
        let record = FeedbackRecord {
            participant_id: rec[0].to_string(),
            timestamp: parse_iso(&rec[1]).map_err(|e| perr(format!("iso_time: {e}")))?,
            gps: GpsFix::new(float(2)?, float(3)?),
            provider: rec[4].parse().map_err(perr)?,
            q_moving: parse_yes_no(&rec[5]).map_err(|e| perr(format!("q_moving: {e}")))?,
            q_in_front: opt_bool(6)?,
            q_toward: opt_bool(7)?,
            heart_rate_bpm: optional_cell(&rec[8]).map(|_| float(8)).transpose()?,
            answered_within_s: float(9)?,
        };
        record
            .validate()
            .map_err(|message| RecordError::Invalid { line, message })?;
        out.push(record);
    }
    Ok(out)
}

/// Greedy prompt suppression, tracked per participant.
#[derive(Debug, Clone)]
pub struct PromptGate {
    min_interval: Duration,
    last: HashMap<String, DateTime<FixedOffset>>,
}

impl PromptGate {
    pub fn new(min_interval: Duration) -> Self {
        PromptGate {
            min_interval,
            last: HashMap::new(),
        }
    }

    /// True if a prompt at `t` is shown; events must arrive in time order.
    pub fn offer(&mut self, participant: &str, t: DateTime<FixedOffset>) -> bool {
        match self.last.get(participant) {
            Some(prev) if t - *prev < self.min_interval => false,
            _ => {
                self.last.insert(participant.to_string(), t);
                true
            }
        }
    }
}

impl Default for PromptGate {
    fn default() -> Self {
        PromptGate::new(Duration::seconds(DEFAULT_PROMPT_INTERVAL_S))
    }
}

/// Accepted prompt times for one participant's time-ordered events.
pub fn gate_prompts(events: &[DateTime<FixedOffset>], min_interval: Duration) -> Vec<DateTime<FixedOffset>> {
    let mut gate = PromptGate::new(min_interval);
    events.iter().copied().filter(|t| gate.offer("", *t)).collect()
}

/// Keeps records inside the local study window from analysed providers.
pub fn filter_study_window(records: &[FeedbackRecord], tz: Tz) -> Vec<FeedbackRecord> {
    records
        .iter()
        .filter(|r| in_study_window(&r.timestamp, tz) && r.provider.is_analyzed())
        .cloned()
        .collect()
}

pub fn in_study_window(ts: &DateTime<FixedOffset>, tz: Tz) -> bool {
    let (open, close) = study_window();
    let local = ts.with_timezone(&tz).time();
    local >= open && local < close
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileParams {
    pub bin_width_bpm: f64,
    pub mad_multiplier: f64,
    pub min_samples: usize,
}

impl Default for ProfileParams {
    fn default() -> Self {
        ProfileParams {
            bin_width_bpm: 5.0,
            mad_multiplier: 3.0,
            min_samples: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartRateProfile {
    pub participant_id: String,
    pub samples: Vec<f64>,
    pub modal_bin: (f64, f64),
    pub band_low: f64,
    pub band_high: f64,
    pub low_confidence: bool,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Lower edge of the most populated bin (bins `[k*w, (k+1)*w)`); ties go to the lowest bin.
pub fn modal_bin_start(samples: &[f64], bin_width: f64) -> Option<f64> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &s in samples {
        *counts.entry((s / bin_width).floor() as i64).or_default() += 1;
    }
    let mut best: Option<(i64, usize)> = None;
    for (bin, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((bin, n));
        }
    }
    best.map(|(bin, _)| bin as f64 * bin_width)
}

/// Personal "normal" band: modal bin midpoint ± k·MAD, never narrower than the
/// modal bin itself, trimmed to the observed sample range outside of it.
pub fn build_profile(
    participant_id: &str,
    samples: &[f64],
    params: &ProfileParams,
) -> Result<HeartRateProfile, FeedbackError> {
    if !(params.bin_width_bpm > 0.0) || params.mad_multiplier < 0.0 {
        return Err(FeedbackError::InvalidParams(
            "bin width must be positive and MAD multiplier non-negative".into(),
        ));
    }
    if samples.is_empty() {
        return Err(FeedbackError::NoSamples(participant_id.to_string()));
    }
    let w = params.bin_width_bpm;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let bin_lo = modal_bin_start(samples, w).expect("non-empty samples");
    let modal_bin = (bin_lo, bin_lo + w);

    let (band_low, band_high, low_confidence) = if samples.len() < params.min_samples {
        if max > min {
            (min, max, true)
        } else {
            (min - w / 2.0, max + w / 2.0, true)
        }
    } else {
        let med = median(&sorted);
        let mut dev: Vec<f64> = sorted.iter().map(|s| (s - med).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let mad = median(&dev);
        let mid = bin_lo + w / 2.0;
        let half = (params.mad_multiplier * mad).max(w / 2.0);
        let low = (mid - half).max(min.min(modal_bin.0));
        let high = (mid + half).min(max.max(modal_bin.1));
        (low, high, false)
    };
    Ok(HeartRateProfile {
        participant_id: participant_id.to_string(),
        samples: samples.to_vec(),
        modal_bin,
        band_low,
        band_high,
        low_confidence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartleClass {
    Elevated,
    Normal,
    Unknown,
}

pub fn classify_startle(record: &FeedbackRecord, profile: &HeartRateProfile) -> StartleClass {
    match record.heart_rate_bpm {
        None => StartleClass::Unknown,
        Some(hr) if hr > profile.band_high => StartleClass::Elevated,
        Some(_) => StartleClass::Normal,
    }
}

/// Counts of observed encounters by movement, line of sight and direction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionMatrix {
    pub stationary: u64,
    pub front_toward: u64,
    pub front_away: u64,
    pub behind_toward: u64,
    pub behind_away: u64,
    /// Moving, but one of the follow-up answers is missing.
    pub moving_incomplete: u64,
}

impl DirectionMatrix {
    pub fn total(&self) -> u64 {
        self.stationary + self.moving_total()
    }

    pub fn moving_complete(&self) -> u64 {
        self.front_toward + self.front_away + self.behind_toward + self.behind_away
    }

    pub fn moving_total(&self) -> u64 {
        self.moving_complete() + self.moving_incomplete
    }

    /// `[in_front][toward]`, index 1 = yes.
    pub fn cells(&self) -> [[u64; 2]; 2] {
        [
            [self.behind_away, self.behind_toward],
            [self.front_away, self.front_toward],
        ]
    }

    pub fn fractions(&self) -> BTreeMap<&'static str, f64> {
        let total = self.total().max(1) as f64;
        BTreeMap::from([
            ("stationary", self.stationary as f64 / total),
            ("front_toward", self.front_toward as f64 / total),
            ("front_away", self.front_away as f64 / total),
            ("behind_toward", self.behind_toward as f64 / total),
            ("behind_away", self.behind_away as f64 / total),
            ("moving_incomplete", self.moving_incomplete as f64 / total),
        ])
    }
}

pub fn summarize_direction_matrix(records: &[FeedbackRecord]) -> DirectionMatrix {
    let mut m = DirectionMatrix::default();
    for r in records {
        if !r.q_moving {
            m.stationary += 1;
            continue;
        }
        match (r.q_in_front, r.q_toward) {
            (Some(true), Some(true)) => m.front_toward += 1,
            (Some(true), Some(false)) => m.front_away += 1,
            (Some(false), Some(true)) => m.behind_toward += 1,
            (Some(false), Some(false)) => m.behind_away += 1,
            _ => m.moving_incomplete += 1,
        }
    }
    m
}

/// Pairs each observed record with a predicted encounter of the same
/// participant whose span, widened by `tolerance`, contains the record time.
/// Returns the matched encounter's max RSSI per record.
pub fn link_to_predicted(records: &[FeedbackRecord], encounters: &[Encounter], tolerance: Duration) -> Vec<Option<f64>> {
    records
        .iter()
        .map(|r| {
            encounters
                .iter()
                .filter(|e| e.participant_id == r.participant_id)
                .filter(|e| e.start - tolerance <= r.timestamp && r.timestamp <= e.end + tolerance)
                .map(|e| e.max_rssi_db)
                .reduce(f64::max)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TZ: Tz = chrono_tz::America::Chicago;

    fn at(s: &str) -> DateTime<FixedOffset> {
        parse_iso(s).unwrap()
    }

    fn record(time: &str, provider: Provider, moving: Option<(bool, bool)>, hr: Option<f64>) -> FeedbackRecord {
        FeedbackRecord {
            participant_id: "P1".into(),
            timestamp: at(time),
            gps: GpsFix::new(29.58, -98.62),
            provider,
            q_moving: moving.is_some(),
            q_in_front: moving.map(|m| m.0),
            q_toward: moving.map(|m| m.1),
            heart_rate_bpm: hr,
            answered_within_s: 12.0,
        }
    }

    #[test]
    fn gating_examples() {
        let base = at("2019-04-10T09:00:00.000-05:00");
        let secs = |v: &[i64]| v.iter().map(|s| base + Duration::seconds(*s)).collect::<Vec<_>>();
        let d = Duration::seconds(900);
        assert_eq!(gate_prompts(&secs(&[0, 600, 900]), d), secs(&[0, 900]));
        assert_eq!(gate_prompts(&secs(&[0]), d), secs(&[0]));
        assert!(gate_prompts(&[], d).is_empty());
    }

    #[test]
    fn gate_is_per_participant() {
        let mut g = PromptGate::default();
        let t = at("2019-04-10T09:00:00.000-05:00");
        assert!(g.offer("a", t));
        assert!(g.offer("b", t));
        assert!(!g.offer("a", t + Duration::seconds(899)));
        assert!(g.offer("a", t + Duration::seconds(900)));
    }

    #[test]
    fn study_window_bounds() {
        let recs = vec![
            record("2019-04-10T05:59:59.999-05:00", Provider::Lime, None, None),
            record("2019-04-10T06:00:00.000-05:00", Provider::Lime, None, None),
            record("2019-04-10T22:59:59.999-05:00", Provider::Bird, None, None),
            record("2019-04-10T23:00:00.000-05:00", Provider::Bird, None, None),
            record("2019-04-10T12:00:00.000-05:00", Provider::BlueDuck, None, None),
        ];
        let kept = filter_study_window(&recs, TZ);
        assert_eq!(kept, vec![recs[1].clone(), recs[2].clone()]);
        assert_eq!(filter_study_window(&kept, TZ), kept);
    }

    #[test]
    fn window_uses_configured_zone_not_record_offset() {
        // 11:30 UTC is 06:30 in Chicago
        let r = record("2019-04-10T11:30:00.000+00:00", Provider::Lime, None, None);
        assert_eq!(filter_study_window(&[r], TZ).len(), 1);
    }

    #[test]
    fn constant_samples_collapse_to_bin_width() {
        let p = build_profile("P1", &[70.0; 40], &ProfileParams::default()).unwrap();
        assert!(p.band_low <= 70.0 && 70.0 <= p.band_high);
        assert_eq!(p.band_high - p.band_low, 5.0);
        assert!(!p.low_confidence);
    }

    #[test]
    fn bimodal_profile_centres_on_dominant_mode() {
        let mut s = vec![60.0; 70];
        s.extend(vec![100.0; 30]);
        let p = build_profile("P1", &s, &ProfileParams::default()).unwrap();
        assert_eq!(p.modal_bin, (60.0, 65.0));
        let centre = (p.band_low + p.band_high) / 2.0;
        assert!((centre - 62.5).abs() < 2.5 + 1e-9, "band {:?}", (p.band_low, p.band_high));
        assert!(p.band_high < 100.0);
    }

    #[test]
    fn few_samples_use_observed_range() {
        let p = build_profile("P1", &[60.0, 64.0, 80.0], &ProfileParams::default()).unwrap();
        assert!(p.low_confidence);
        assert_eq!((p.band_low, p.band_high), (60.0, 80.0));
        let p = build_profile("P1", &[72.0], &ProfileParams::default()).unwrap();
        assert!(p.band_low < p.band_high);
        assert_eq!(build_profile("P1", &[], &ProfileParams::default()), Err(FeedbackError::NoSamples("P1".into())));
    }

    #[test]
    fn startle_classes() {
        let p = build_profile("P1", &[70.0; 40], &ProfileParams::default()).unwrap();
        let mut r = record("2019-04-10T09:00:00.000-05:00", Provider::Lime, Some((true, true)), Some(p.band_high + 1.0));
        assert_eq!(classify_startle(&r, &p), StartleClass::Elevated);
        r.heart_rate_bpm = Some(p.band_high);
        assert_eq!(classify_startle(&r, &p), StartleClass::Normal);
        r.heart_rate_bpm = Some(40.0);
        assert_eq!(classify_startle(&r, &p), StartleClass::Normal);
        r.heart_rate_bpm = None;
        assert_eq!(classify_startle(&r, &p), StartleClass::Unknown);
    }

    #[test]
    fn all_stationary_matrix() {
        let recs: Vec<_> = (0..10)
            .map(|_| record("2019-04-10T09:00:00.000-05:00", Provider::Lime, None, None))
            .collect();
        let m = summarize_direction_matrix(&recs);
        assert_eq!(m.stationary, 10);
        assert_eq!(m.moving_total(), 0);
        assert!((m.fractions().values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn behind_toward_counts_as_hazard() {
        let r = record("2019-04-10T09:00:00.000-05:00", Provider::Bird, Some((false, true)), None);
        assert!(r.approaching_from_behind());
        assert_eq!(summarize_direction_matrix(&[r]).behind_toward, 1);
    }

    #[test]
    fn validation_rules() {
        let mut r = record("2019-04-10T09:00:00.000-05:00", Provider::Bird, None, None);
        r.q_in_front = Some(true);
        assert!(r.validate().is_err());
        let mut r = record("2019-04-10T09:00:00.000-05:00", Provider::Bird, None, None);
        r.answered_within_s = 61.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn csv_round_trip_with_empty_optionals() {
        let recs = vec![
            record("2019-04-10T09:00:00.000-05:00", Provider::Bird, None, None),
            record("2019-04-10T09:20:00.000-05:00", Provider::Lime, Some((false, true)), Some(88.5)),
        ];
        let mut buf = Vec::new();
        write_feedback_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains(",bird,no,,,,12"));
        assert_eq!(read_feedback_csv(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn csv_rejects_inconsistent_answers() {
        let text = "participant_id,iso_time,lat,lon,provider,q_moving,q_in_front,q_toward,heart_rate_bpm,answered_within_s\n\
                    P1,2019-04-10T09:00:00.000-05:00,29.5,-98.6,lime,no,yes,,,10\n";
        let err = read_feedback_csv(text.as_bytes()).unwrap_err();
        assert_eq!(err.line(), Some(2));
    }
}
