//! Predicted-encounter detection over a participant's reception stream.
//!
//! Per device, a window of `window_length` slides over the packets with a
//! stride of `window_length * (1 - overlap_fraction)`, anchored at that
//! device's first packet. Windows holding at least `min_packets_per_window`
//! packets are potential encounter windows. Consecutive potential windows
//! whose packets are less than `merge_gap` apart are merged into one
//! encounter; the rest start new ones. Finally only the first
//! `max_encounters_per_scooter_per_day` encounters per device and local day
//! are kept.
//!
//! All arithmetic is done on integer milliseconds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, FixedOffset, NaiveDate};
use chrono_tz::Tz;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ble::{BleReception, GpsFix, Provider, ProviderClassifier};
use crate::io::{optional_cell, RecordError};
use crate::time::{epoch_ms, format_iso, local_date, parse_iso};

pub const ENCOUNTER_CSV_HEADER: [&str; 9] = [
    "participant_id",
    "device_id",
    "provider",
    "start_iso",
    "end_iso",
    "packet_count",
    "max_rssi_db",
    "lat",
    "lon",
];

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("stream not sorted by timestamp at index {index}")]
    Unsorted { index: usize },
    #[error("stream mixes participants `{expected}` and `{found}`")]
    MixedParticipants { expected: String, found: String },
    #[error("participant `{0}` appears in more than one stream")]
    DuplicateParticipant(String),
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub window_length_s: f64,
    pub overlap_fraction: f64,
    pub min_packets_per_window: usize,
    pub merge_gap_s: f64,
    pub max_encounters_per_scooter_per_day: usize,
    /// Zone whose civil midnight separates days for the daily cap.
    pub timezone: Tz,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            window_length_s: 1.0,
            overlap_fraction: 0.8,
            min_packets_per_window: 4,
            merge_gap_s: 300.0,
            max_encounters_per_scooter_per_day: 4,
            timezone: chrono_tz::America::Chicago,
        }
    }
}

impl DetectorParams {
    pub fn window_ms(&self) -> i64 {
        (self.window_length_s * 1000.0).round() as i64
    }

    pub fn stride_ms(&self) -> i64 {
        (self.window_length_s * (1.0 - self.overlap_fraction) * 1000.0).round() as i64
    }

    pub fn merge_gap_ms(&self) -> i64 {
        (self.merge_gap_s * 1000.0).round() as i64
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: &str| Err(DetectError::InvalidParams(m.to_string()));
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return bad("overlap_fraction must be in [0, 1)");
        }
        if self.window_ms() <= 0 || self.stride_ms() <= 0 {
            return bad("window length and stride must be at least 1 ms");
        }
        if self.min_packets_per_window < 1 || self.max_encounters_per_scooter_per_day < 1 {
            return bad("counts must be >= 1");
        }
        if self.merge_gap_ms() <= self.window_ms() {
            return bad("merge_gap must exceed window_length");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncounterKind {
    Predicted,
    Observed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encounter {
    pub participant_id: String,
    pub device_id: String,
    pub provider: Provider,
    pub start: DateTime<FixedOffset>,
    pub end: DateTime<FixedOffset>,
    pub packet_count: usize,
    pub max_rssi_db: f64,
    pub representative_gps: Option<GpsFix>,
    pub kind: EncounterKind,
}

/// Potential windows of one device's packet times, as half-open index ranges.
///
/// Windows are `[t0 + k*stride, t0 + k*stride + window)`. Empty stretches are
/// skipped by jumping to the first window that can contain the next packet.
pub fn potential_windows(times: &[i64], window_ms: i64, stride_ms: i64, min_packets: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let Some(&t0) = times.first() else {
        return out;
    };
    let last = *times.last().unwrap();
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut k: i64 = 0;
    loop {
        let start = t0 + k * stride_ms;
        if start > last {
            break;
        }
        let end = start + window_ms;
        while lo < times.len() && times[lo] < start {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < times.len() && times[hi] < end {
            hi += 1;
        }
        if hi - lo >= min_packets {
            out.push((lo, hi));
        }
        if lo == hi {
            // first k whose window end passes times[lo]
            let need = times[lo] - window_ms + 1 - t0;
            let jump = need.div_euclid(stride_ms) + i64::from(need.rem_euclid(stride_ms) != 0);
            k = (k + 1).max(jump);
        } else {
            k += 1;
        }
    }
    out
}

/// Merges potential windows into groups of member index ranges.
fn merge_windows(times: &[i64], windows: &[(usize, usize)], merge_gap_ms: i64) -> Vec<Vec<(usize, usize)>> {
    let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
    for &(lo, hi) in windows {
        if let Some(group) = groups.last_mut() {
            let (_, last_hi) = *group.last().unwrap();
            if times[lo] - times[last_hi - 1] < merge_gap_ms {
                let tail = group.last_mut().unwrap();
                if lo <= tail.1 {
                    tail.1 = tail.1.max(hi);
                } else {
                    group.push((lo, hi));
                }
                continue;
            }
        }
        groups.push(vec![(lo, hi)]);
    }
    groups
}

fn build_encounter(
    participant: &str,
    device: &str,
    packets: &[&BleReception],
    ranges: &[(usize, usize)],
    classifier: &ProviderClassifier,
) -> Encounter {
    let members = || ranges.iter().flat_map(|&(lo, hi)| packets[lo..hi].iter().copied());
    let first = packets[ranges[0].0];
    let last = packets[ranges.last().unwrap().1 - 1];
    let mut best = first;
    for p in members() {
        if p.rssi_db > best.rssi_db {
            best = p;
        }
    }
    let provider = members()
        .map(|p| classifier.classify(&p.payload))
        .find(|p| *p != Provider::Unknown)
        .unwrap_or(Provider::Unknown);
    let representative_gps = best.gps.or_else(|| members().find_map(|p| p.gps));
    Encounter {
        participant_id: participant.to_string(),
        device_id: device.to_string(),
        provider,
        start: first.timestamp,
        end: last.timestamp,
        packet_count: ranges.iter().map(|(lo, hi)| hi - lo).sum(),
        max_rssi_db: best.rssi_db,
        representative_gps,
        kind: EncounterKind::Predicted,
    }
}

/// Keeps the first `cap` encounters per local day; input must be chronological.
fn cap_per_day(encounters: Vec<Encounter>, cap: usize, tz: Tz) -> Vec<Encounter> {
    let mut per_day: HashMap<NaiveDate, usize> = HashMap::new();
    encounters
        .into_iter()
        .filter(|e| {
            let n = per_day.entry(local_date(&e.start, tz)).or_default();
            *n += 1;
            *n <= cap
        })
        .collect()
}

fn check_stream(stream: &[BleReception]) -> Result<(), DetectError> {
    for (i, pair) in stream.windows(2).enumerate() {
        if pair[1].timestamp < pair[0].timestamp {
            return Err(DetectError::Unsorted { index: i + 1 });
        }
        if pair[1].receiver_id != pair[0].receiver_id {
            return Err(DetectError::MixedParticipants {
                expected: pair[0].receiver_id.clone(),
                found: pair[1].receiver_id.clone(),
            });
        }
    }
    Ok(())
}

/// Detects encounters in one participant's time-ordered stream.
pub fn detect_encounters(
    stream: &[BleReception],
    params: &DetectorParams,
    classifier: &ProviderClassifier,
) -> Result<Vec<Encounter>, DetectError> {
    params.validate()?;
    check_stream(stream)?;
    let Some(participant) = stream.first().map(|r| r.receiver_id.as_str()) else {
        return Ok(Vec::new());
    };

    let mut by_device: BTreeMap<&str, Vec<&BleReception>> = BTreeMap::new();
    for r in stream {
        by_device.entry(r.device_id.as_str()).or_default().push(r);
    }

    let mut out = Vec::new();
    for (device, packets) in by_device {
        let times: Vec<i64> = packets.iter().map(|p| epoch_ms(&p.timestamp)).collect();
        let windows = potential_windows(&times, params.window_ms(), params.stride_ms(), params.min_packets_per_window);
        let encounters = merge_windows(&times, &windows, params.merge_gap_ms())
            .iter()
            .map(|ranges| build_encounter(participant, device, &packets, ranges, classifier))
            .collect();
        out.extend(cap_per_day(encounters, params.max_encounters_per_scooter_per_day, params.timezone));
    }
    out.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.device_id.cmp(&b.device_id)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub unique_scooters_seen: usize,
    pub scooters_with_encounters: usize,
    pub total_encounters: usize,
}

#[derive(Debug, Clone)]
pub struct ParticipantStream {
    pub participant_id: String,
    pub receptions: Vec<BleReception>,
}

/// Splits a mixed reception list into per-participant streams, in first-seen
/// order, each stably sorted by timestamp.
pub fn group_by_participant(receptions: Vec<BleReception>) -> Vec<ParticipantStream> {
    let mut order: Vec<String> = Vec::new();
    let mut map: HashMap<String, Vec<BleReception>> = HashMap::new();
    for r in receptions {
        if !map.contains_key(&r.receiver_id) {
            order.push(r.receiver_id.clone());
        }
        map.entry(r.receiver_id.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|id| {
            let mut receptions = map.remove(&id).unwrap_or_default();
            receptions.sort_by_key(|r| r.timestamp);
            ParticipantStream {
                participant_id: id,
                receptions,
            }
        })
        .collect()
}

/// Runs detection over every participant; output sorted by start time.
pub fn detect_corpus(
    streams: &[ParticipantStream],
    params: &DetectorParams,
    classifier: &ProviderClassifier,
) -> Result<(Vec<Encounter>, CorpusSummary), DetectError> {
    let mut seen = BTreeSet::new();
    for s in streams {
        if !seen.insert(s.participant_id.as_str()) {
            return Err(DetectError::DuplicateParticipant(s.participant_id.clone()));
        }
        if let Some(r) = s.receptions.iter().find(|r| r.receiver_id != s.participant_id) {
            return Err(DetectError::MixedParticipants {
                expected: s.participant_id.clone(),
                found: r.receiver_id.clone(),
            });
        }
    }
    let per_stream: Vec<Vec<Encounter>> = streams
        .par_iter()
        .map(|s| detect_encounters(&s.receptions, params, classifier))
        .collect::<Result<_, _>>()?;
    let mut all: Vec<Encounter> = per_stream.into_iter().flatten().collect();
    all.sort_by(|a, b| {
        a.start
            .cmp(&b.start)
            .then_with(|| a.participant_id.cmp(&b.participant_id))
            .then_with(|| a.device_id.cmp(&b.device_id))
    });
    let devices: BTreeSet<&str> = streams
        .iter()
        .flat_map(|s| s.receptions.iter().map(|r| r.device_id.as_str()))
        .collect();
    let encountered: BTreeSet<&str> = all.iter().map(|e| e.device_id.as_str()).collect();
    let summary = CorpusSummary {
        unique_scooters_seen: devices.len(),
        scooters_with_encounters: encountered.len(),
        total_encounters: all.len(),
    };
    Ok((all, summary))
}

/// Drops receptions whose payload does not fingerprint as a known provider.
pub fn retain_scooter_packets(receptions: &mut Vec<BleReception>, classifier: &ProviderClassifier) {
    let mut cache: HashMap<String, Provider> = HashMap::new();
    receptions.retain(|r| {
        let p = *cache
            .entry(r.device_id.clone())
            .or_insert_with(|| classifier.classify(&r.payload));
        p != Provider::Unknown
    });
}

/// Flat record used for both the CSV and the JSON-lines encounter files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterRow {
    pub participant_id: String,
    pub device_id: String,
    pub provider: Provider,
    pub start_iso: String,
    pub end_iso: String,
    pub packet_count: usize,
    pub max_rssi_db: f64,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
}

impl From<&Encounter> for EncounterRow {
    fn from(e: &Encounter) -> Self {
        EncounterRow {
            participant_id: e.participant_id.clone(),
            device_id: e.device_id.clone(),
            provider: e.provider,
            start_iso: format_iso(&e.start),
            end_iso: format_iso(&e.end),
            packet_count: e.packet_count,
            max_rssi_db: e.max_rssi_db,
            lat: e.representative_gps.map(|g| g.lat),
            lon: e.representative_gps.map(|g| g.lon),
        }
    }
}

impl EncounterRow {
    fn into_encounter(self) -> Result<Encounter, String> {
        let start = parse_iso(&self.start_iso).map_err(|e| format!("start_iso: {e}"))?;
        let end = parse_iso(&self.end_iso).map_err(|e| format!("end_iso: {e}"))?;
        if end < start {
            return Err("end_iso precedes start_iso".into());
        }
        let representative_gps = match (self.lat, self.lon) {
            (Some(lat), Some(lon)) => Some(GpsFix::new(lat, lon)),
            _ => None,
        };
        Ok(Encounter {
            participant_id: self.participant_id,
            device_id: self.device_id,
            provider: self.provider,
            start,
            end,
            packet_count: self.packet_count,
            max_rssi_db: self.max_rssi_db,
            representative_gps,
            kind: EncounterKind::Predicted,
        })
    }
}

pub fn write_encounters_csv<W: Write>(w: W, encounters: &[Encounter]) -> Result<(), RecordError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(ENCOUNTER_CSV_HEADER)?;
    for e in encounters {
        let row = EncounterRow::from(e);
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        wtr.write_record([
            row.participant_id,
            row.device_id,
            row.provider.to_string(),
            row.start_iso,
            row.end_iso,
            row.packet_count.to_string(),
            row.max_rssi_db.to_string(),
            opt(row.lat),
            opt(row.lon),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_encounters_csv<R: Read>(r: R) -> Result<Vec<Encounter>, RecordError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec?;
        let parse_err = |message: String| RecordError::Parse { line, message };
        if rec.len() != ENCOUNTER_CSV_HEADER.len() {
            return Err(parse_err(format!("expected {} columns, got {}", ENCOUNTER_CSV_HEADER.len(), rec.len())));
        }
        let num = |i: usize| -> Result<Option<f64>, RecordError> {
            optional_cell(&rec[i])
                .map(|s| s.parse::<f64>().map_err(|e| parse_err(format!("{}: {e}", ENCOUNTER_CSV_HEADER[i]))))
                .transpose()
        };
        let row = EncounterRow {
            participant_id: rec[0].to_string(),
            device_id: rec[1].to_string(),
            provider: rec[2].parse().map_err(parse_err)?,
            start_iso: rec[3].to_string(),
            end_iso: rec[4].to_string(),
            packet_count: rec[5].trim().parse().map_err(|e| parse_err(format!("packet_count: {e}")))?,
            max_rssi_db: num(6)?.ok_or_else(|| parse_err("max_rssi_db missing".into()))?,
            lat: num(7)?,
            lon: num(8)?,
        };
        out.push(row.into_encounter().map_err(|message| RecordError::Invalid { line, message })?);
    }
    Ok(out)
}

pub fn write_encounters_jsonl<W: Write>(w: W, encounters: &[Encounter]) -> Result<(), RecordError> {
    let rows: Vec<EncounterRow> = encounters.iter().map(EncounterRow::from).collect();
    crate::io::write_jsonl(w, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ble::build_payload;
    use crate::time::from_epoch_ms;

    const BASE_MS: i64 = 1_554_904_800_000; // 2019-04-10 09:00 CDT

    fn rec(device: &str, t_ms: i64, rssi: f64) -> BleReception {
        BleReception {
            timestamp: from_epoch_ms(BASE_MS + t_ms, chrono_tz::America::Chicago),
            device_id: device.to_string(),
            payload: build_payload("Lime-0001", None),
            rssi_db: rssi,
            receiver_id: "P1".into(),
            gps: Some(GpsFix::new(29.58 + t_ms as f64 * 1e-9, -98.62)),
            heart_rate_bpm: None,
        }
    }

    fn burst(device: &str, start_ms: i64, n: usize, spacing_ms: i64) -> Vec<BleReception> {
        (0..n).map(|i| rec(device, start_ms + i as i64 * spacing_ms, -70.0 - i as f64)).collect()
    }

    fn detect(stream: &[BleReception]) -> Vec<Encounter> {
        detect_encounters(stream, &DetectorParams::default(), &ProviderClassifier::default()).unwrap()
    }

    #[test]
    fn dense_burst_is_one_encounter() {
        let out = detect(&burst("s1", 0, 6, 100));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].packet_count, 6);
        assert_eq!(out[0].max_rssi_db, -70.0);
        assert_eq!(out[0].provider, Provider::Lime);
        assert_eq!(out[0].start, rec("s1", 0, 0.0 - 1.0).timestamp);
        assert_eq!(out[0].end, rec("s1", 500, -1.0).timestamp);
    }

    #[test]
    fn empty_stream_yields_nothing() {
        assert!(detect(&[]).is_empty());
    }

    #[test]
    fn sparse_packets_are_not_encounters() {
        // 3 packets per second never reach the threshold of 4
        let stream: Vec<_> = (0..30).map(|i| rec("s1", i * 334, -60.0)).collect();
        assert!(detect(&stream).is_empty());
    }

    #[test]
    fn merge_gap_boundary() {
        let mut s = burst("s1", 0, 6, 100);
        s.extend(burst("s1", 500 + 299_000, 6, 100));
        assert_eq!(detect(&s).len(), 1);

        let mut s = burst("s1", 0, 6, 100);
        s.extend(burst("s1", 500 + 301_000, 6, 100));
        assert_eq!(detect(&s).len(), 2);

        // exactly 300 s is not "less than" the gap
        let mut s = burst("s1", 0, 6, 100);
        s.extend(burst("s1", 500 + 300_000, 6, 100));
        assert_eq!(detect(&s).len(), 2);
    }

    #[test]
    fn daily_cap_keeps_first_four() {
        let mut s = Vec::new();
        for k in 0..5 {
            s.extend(burst("s1", k * 400_000, 6, 100));
        }
        let out = detect(&s);
        assert_eq!(out.len(), 4);
        for (k, e) in out.iter().enumerate() {
            assert_eq!(e.start, rec("s1", k as i64 * 400_000, 0.0 - 1.0).timestamp);
        }
    }

    #[test]
    fn cap_resets_on_next_local_day() {
        let mut s = Vec::new();
        for k in 0..5 {
            s.extend(burst("s1", k * 400_000, 6, 100));
        }
        s.extend(burst("s1", 24 * 3_600_000, 6, 100));
        assert_eq!(detect(&s).len(), 5);
    }

    #[test]
    fn devices_are_partitioned() {
        // interleaved devices: each window holds 4+ packets but at most 3 per device
        let mut s = Vec::new();
        for i in 0..10 {
            s.push(rec(if i % 2 == 0 { "a" } else { "b" }, i * 240, -60.0));
        }
        assert!(detect(&s).is_empty());
    }

    #[test]
    fn gps_comes_from_strongest_packet() {
        let mut s = burst("s1", 0, 6, 100);
        s[3].rssi_db = -40.0;
        let out = detect(&s);
        assert_eq!(out[0].max_rssi_db, -40.0);
        assert_eq!(out[0].representative_gps, s[3].gps);

        s[3].gps = None;
        let out = detect(&s);
        assert_eq!(out[0].representative_gps, s[0].gps);
    }

    #[test]
    fn unsorted_and_mixed_rejected() {
        let mut s = burst("s1", 0, 6, 100);
        s.swap(1, 2);
        let err = detect_encounters(&s, &DetectorParams::default(), &ProviderClassifier::default());
        assert_eq!(err, Err(DetectError::Unsorted { index: 2 }));

        let mut s = burst("s1", 0, 6, 100);
        s[4].receiver_id = "P2".into();
        assert!(matches!(
            detect_encounters(&s, &DetectorParams::default(), &ProviderClassifier::default()),
            Err(DetectError::MixedParticipants { .. })
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = DetectorParams::default();
        p.overlap_fraction = 1.0;
        assert!(p.validate().is_err());
        let mut p = DetectorParams::default();
        p.merge_gap_s = 0.5;
        assert!(p.validate().is_err());
        let mut p = DetectorParams::default();
        p.min_packets_per_window = 0;
        assert!(p.validate().is_err());
        assert_eq!(DetectorParams::default().stride_ms(), 200);
    }

    #[test]
    fn corpus_summary_and_duplicates() {
        let streams = vec![ParticipantStream {
            participant_id: "P1".into(),
            receptions: burst("s1", 0, 6, 100),
        }];
        let (enc, summary) = detect_corpus(&streams, &DetectorParams::default(), &ProviderClassifier::default()).unwrap();
        assert_eq!(enc.len(), 1);
        assert_eq!(
            summary,
            CorpusSummary {
                unique_scooters_seen: 1,
                scooters_with_encounters: 1,
                total_encounters: 1
            }
        );
        let dup = vec![streams[0].clone(), streams[0].clone()];
        assert_eq!(
            detect_corpus(&dup, &DetectorParams::default(), &ProviderClassifier::default()).unwrap_err(),
            DetectError::DuplicateParticipant("P1".into())
        );
    }

    #[test]
    fn window_skipping_matches_plain_scan() {
        let times = [0, 50, 2_000_000, 2_000_100, 2_000_150, 2_000_900, 2_001_000];
        let got = potential_windows(&times, 1000, 200, 4);
        // naive: every k
        let mut naive = Vec::new();
        let mut k = 0;
        while k * 200 <= times[times.len() - 1] {
            let (s, e) = (k * 200, k * 200 + 1000);
            let lo = times.iter().position(|&t| t >= s).unwrap_or(times.len());
            let hi = times.iter().position(|&t| t >= e).unwrap_or(times.len());
            if hi.saturating_sub(lo) >= 4 {
                naive.push((lo, hi));
            }
            k += 1;
        }
        assert_eq!(got, naive);
        assert!(!got.is_empty());
    }

    #[test]
    fn csv_round_trip_and_header() {
        let out = detect(&burst("s1", 0, 6, 100));
        let mut buf = Vec::new();
        write_encounters_csv(&mut buf, &out).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("participant_id,device_id,provider,start_iso,end_iso,packet_count,max_rssi_db,lat,lon\n"));
        let back = read_encounters_csv(buf.as_slice()).unwrap();
        assert_eq!(back, out);

        let mut empty = Vec::new();
        write_encounters_csv(&mut empty, &[]).unwrap();
        assert_eq!(empty.iter().filter(|&&b| b == b'\n').count(), 1);
        assert!(read_encounters_csv(empty.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn retain_drops_unknown_devices() {
        let mut s = burst("s1", 0, 3, 100);
        s[1].payload = build_payload("Galaxy Buds", None);
        s[1].device_id = "phone".into();
        retain_scooter_packets(&mut s, &ProviderClassifier::default());
        assert_eq!(s.len(), 2);
    }
}
