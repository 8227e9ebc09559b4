//! Exhaustive reference detector: every window materialized, packet sets
//! merged literally. Deliberately slow; only for cross-checking.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{NaiveDate, TimeZone};
use chrono_tz::Tz;

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePacket {
    pub device: String,
    pub t_ms: i64,
    pub rssi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleEncounter {
    pub device: String,
    pub start_ms: i64,
    pub end_ms: i64,
    pub packet_count: usize,
    pub max_rssi: f64,
}

pub struct OracleParams {
    pub window_ms: i64,
    pub stride_ms: i64,
    pub min_packets: usize,
    pub merge_gap_ms: i64,
    pub daily_cap: usize,
    pub tz: Tz,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            window_ms: 1000,
            stride_ms: 200,
            min_packets: 4,
            merge_gap_ms: 300_000,
            daily_cap: 4,
            tz: chrono_tz::America::Chicago,
        }
    }
}

fn day_of(ms: i64, tz: Tz) -> NaiveDate {
    tz.timestamp_millis_opt(ms).unwrap().date_naive()
}

pub fn detect(packets: &[OraclePacket], p: &OracleParams) -> Vec<OracleEncounter> {
    let devices: BTreeSet<&str> = packets.iter().map(|x| x.device.as_str()).collect();
    let mut out = Vec::new();
    for device in devices {
        let mut mine: Vec<&OraclePacket> = packets.iter().filter(|x| x.device == device).collect();
        mine.sort_by_key(|x| x.t_ms);
        let t0 = mine.iter().map(|x| x.t_ms).min().unwrap();
        let t_last = mine.iter().map(|x| x.t_ms).max().unwrap();

        // every window position, each as an explicit set of packet indices
        let mut windows: Vec<BTreeSet<usize>> = Vec::new();
        let mut k = 0i64;
        while t0 + k * p.stride_ms <= t_last {
            let lo = t0 + k * p.stride_ms;
            let hi = lo + p.window_ms;
            let a = mine.partition_point(|x| x.t_ms < lo);
            let b = mine.partition_point(|x| x.t_ms < hi);
            let set: BTreeSet<usize> = (a..b).collect();
            if set.len() >= p.min_packets {
                windows.push(set);
            }
            k += 1;
        }

        let mut groups: Vec<BTreeSet<usize>> = Vec::new();
        for w in windows {
            let first_new = w.iter().map(|&i| mine[i].t_ms).min().unwrap();
            let merged = match groups.last_mut() {
                Some(g) => {
                    let last_old = g.iter().map(|&i| mine[i].t_ms).max().unwrap();
                    if first_new - last_old < p.merge_gap_ms {
                        g.extend(w.iter().copied());
                        true
                    } else {
                        false
                    }
                }
                None => false,
            };
            if !merged {
                groups.push(w);
            }
        }

        let mut per_day: BTreeMap<NaiveDate, usize> = BTreeMap::new();
        for g in groups {
            let start_ms = g.iter().map(|&i| mine[i].t_ms).min().unwrap();
            let n = per_day.entry(day_of(start_ms, p.tz)).or_insert(0);
            *n += 1;
            if *n > p.daily_cap {
                continue;
            }
            out.push(OracleEncounter {
                device: device.to_string(),
                start_ms,
                end_ms: g.iter().map(|&i| mine[i].t_ms).max().unwrap(),
                packet_count: g.len(),
                max_rssi: g.iter().map(|&i| mine[i].rssi).fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    out.sort_by(|a, b| a.start_ms.cmp(&b.start_ms).then_with(|| a.device.cmp(&b.device)));
    out
}

/// Random stream of bursts and stray packets, sorted by time.
pub fn random_stream<R: rand::Rng>(rng: &mut R, max_packets: usize) -> Vec<OraclePacket> {
    let n_devices = rng.gen_range(1..=3);
    let mut packets = Vec::new();
    let mut t_cursor: i64 = rng.gen_range(0..3_600_000);
    while packets.len() < max_packets {
        let device = format!("dev{}", rng.gen_range(0..n_devices));
        let burst = rng.gen_range(1..=12usize).min(max_packets - packets.len());
        let spacing = rng.gen_range(40..450);
        for i in 0..burst {
            let jitter = rng.gen_range(0..40);
            packets.push(OraclePacket {
                device: device.clone(),
                t_ms: t_cursor + i as i64 * spacing + jitter,
                rssi: -(rng.gen_range(40.0..100.0f64) * 4.0).round() / 4.0,
            });
        }
        t_cursor += burst as i64 * spacing
            + match rng.gen_range(0..4) {
                0 => rng.gen_range(0..2_000),
                1 => rng.gen_range(290_000..310_000),
                2 => rng.gen_range(0..200_000),
                _ => rng.gen_range(3_000_000..30_000_000),
            };
    }
    packets.sort_by(|a, b| a.t_ms.cmp(&b.t_ms).then_with(|| a.device.cmp(&b.device)));
    packets
}
