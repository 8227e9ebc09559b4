//! Ground-truth encounters and detector scoring.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};

use crate::detector::Encounter;
use crate::io::RecordError;
use crate::time::{format_iso, parse_iso};

pub const TRUTH_CSV_HEADER: [&str; 5] = ["participant_id", "device_id", "start_iso", "end_iso", "min_distance_ft"];

/// A sustained close approach (within 25 ft for at least 1 s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEncounter {
    pub participant_id: String,
    pub device_id: String,
    pub start: DateTime<FixedOffset>,
    pub end: DateTime<FixedOffset>,
    pub min_distance_ft: f64,
}

pub fn write_truth_csv<W: Write>(w: W, truth: &[GroundTruthEncounter]) -> Result<(), RecordError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(TRUTH_CSV_HEADER)?;
    for t in truth {
        wtr.write_record([
            t.participant_id.clone(),
            t.device_id.clone(),
            format_iso(&t.start),
            format_iso(&t.end),
            format!("{:.2}", t.min_distance_ft),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_truth_csv<R: Read>(r: R) -> Result<Vec<GroundTruthEncounter>, RecordError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let perr = |message: String| RecordError::Parse { line, message };
        if rec.len() != TRUTH_CSV_HEADER.len() {
            return Err(perr(format!("expected {} columns, got {}", TRUTH_CSV_HEADER.len(), rec.len())));
        }
        let ts = |i: usize| parse_iso(&rec[i]).map_err(|e| perr(format!("{}: {e}", TRUTH_CSV_HEADER[i])));
        let t = GroundTruthEncounter {
            participant_id: rec[0].to_string(),
            device_id: rec[1].to_string(),
            start: ts(2)?,
            end: ts(3)?,
            min_distance_ft: rec[4].trim().parse().map_err(|e| perr(format!("min_distance_ft: {e}")))?,
        };
        if t.end < t.start || !(t.min_distance_ft >= 0.0) {
            return Err(RecordError::Invalid {
                line,
                message: "end before start or negative distance".into(),
            });
        }
        out.push(t);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub truth_count: usize,
    pub detected_count: usize,
    pub matched_truth: usize,
    pub matched_detected: usize,
    pub precision: f64,
    pub recall: f64,
    /// False when nothing was detected; precision is then 1.0 by convention.
    pub precision_defined: bool,
    /// False when the truth set is empty; recall is then 1.0 by convention.
    pub recall_defined: bool,
    /// `(truth index, detected index)` for every overlapping pair.
    pub pairs: Vec<(usize, usize)>,
}

/// A detection matches a truth encounter with the same participant and device
/// whose closed time interval overlaps its own.
pub fn score_detector(truth: &[GroundTruthEncounter], detected: &[Encounter]) -> ScoreReport {
    let mut pairs = Vec::new();
    for (ti, t) in truth.iter().enumerate() {
        for (di, d) in detected.iter().enumerate() {
            if t.participant_id == d.participant_id && t.device_id == d.device_id && t.start <= d.end && d.start <= t.end {
                pairs.push((ti, di));
            }
        }
    }
    let matched_truth = pairs.iter().map(|p| p.0).collect::<BTreeSet<_>>().len();
    let matched_detected = pairs.iter().map(|p| p.1).collect::<BTreeSet<_>>().len();
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    ScoreReport {
        truth_count: truth.len(),
        detected_count: detected.len(),
        matched_truth,
        matched_detected,
        precision: ratio(matched_detected, detected.len()),
        recall: ratio(matched_truth, truth.len()),
        precision_defined: !detected.is_empty(),
        recall_defined: !truth.is_empty(),
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ble::Provider;
    use crate::detector::EncounterKind;

    fn ts(s: &str) -> DateTime<FixedOffset> {
        parse_iso(s).unwrap()
    }

    fn truth(dev: &str, a: &str, b: &str) -> GroundTruthEncounter {
        GroundTruthEncounter {
            participant_id: "P01".into(),
            device_id: dev.into(),
            start: ts(a),
            end: ts(b),
            min_distance_ft: 3.0,
        }
    }

    fn det(dev: &str, a: &str, b: &str) -> Encounter {
        Encounter {
            participant_id: "P01".into(),
            device_id: dev.into(),
            provider: Provider::Bird,
            start: ts(a),
            end: ts(b),
            packet_count: 4,
            max_rssi_db: -60.0,
            representative_gps: None,
            kind: EncounterKind::Predicted,
        }
    }

    #[test]
    fn perfect_and_empty() {
        let t = vec![truth("d1", "2019-04-08T10:00:00-05:00", "2019-04-08T10:00:05-05:00")];
        let d = vec![det("d1", "2019-04-08T10:00:04-05:00", "2019-04-08T10:00:09-05:00")];
        let r = score_detector(&t, &d);
        assert_eq!((r.precision, r.recall), (1.0, 1.0));
        let r = score_detector(&t, &[]);
        assert_eq!((r.precision, r.recall, r.precision_defined), (1.0, 0.0, false));
    }

    #[test]
    fn touching_intervals_overlap_but_other_device_does_not() {
        let t = vec![truth("d1", "2019-04-08T10:00:00-05:00", "2019-04-08T10:00:05-05:00")];
        let d = vec![
            det("d1", "2019-04-08T10:00:05-05:00", "2019-04-08T10:00:06-05:00"),
            det("d2", "2019-04-08T10:00:00-05:00", "2019-04-08T10:00:06-05:00"),
        ];
        let r = score_detector(&t, &d);
        assert_eq!(r.pairs, vec![(0, 0)]);
        assert_eq!(r.precision, 0.5);
    }

    #[test]
    fn truth_csv_round_trip() {
        let t = vec![truth("d1", "2019-04-08T10:00:00.050-05:00", "2019-04-08T10:00:05.300-05:00")];
        let mut buf = Vec::new();
        write_truth_csv(&mut buf, &t).unwrap();
        assert_eq!(read_truth_csv(buf.as_slice()).unwrap(), t);
    }
}
