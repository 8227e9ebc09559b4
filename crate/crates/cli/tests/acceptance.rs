//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::{Datelike, FixedOffset, TimeZone};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use oracle::{OracleEncounter, OracleParams, OraclePacket};
use scootsafe_cli::pipeline;
use scootsafe_cli::PipelineConfig;
use scootsafe_core::binning::{bin_time, CountGroup, HighLowSplit, KeyUniverse, Keying};
use scootsafe_core::ble::{build_payload, proximity_class, BleReception, Provider, ProviderConfig, ProximityClass};
use scootsafe_core::detector::{detect_encounters, DetectorParams, Encounter};
use scootsafe_core::feedback::StartleClass;
use scootsafe_core::geo::{build_graph_from_lines, FunctionalClassMap, LatLon, RawLine};
use scootsafe_core::metrics::pem;
use scootsafe_core::sim::{score_detector, simulate, SimConfig};
use scootsafe_core::time::{epoch_ms, from_epoch_ms};

const TZ: chrono_tz::Tz = chrono_tz::America::Chicago;
// 2019-04-08 00:00 America/Chicago
const MONDAY_MS: i64 = 1_554_699_600_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn receptions(packets: &[OraclePacket]) -> Vec<BleReception> {
    packets
        .iter()
        .map(|p| BleReception {
            timestamp: from_epoch_ms(MONDAY_MS + p.t_ms, TZ),
            device_id: p.device.clone(),
            payload: build_payload("Bird-AB12", None),
            rssi_db: p.rssi,
            receiver_id: "P01".into(),
            gps: None,
            heart_rate_bpm: None,
        })
        .collect()
}

fn detect(packets: &[OraclePacket]) -> Vec<Encounter> {
    let classifier = ProviderConfig::default().compile().unwrap();
    detect_encounters(&receptions(packets), &DetectorParams::default(), &classifier).unwrap()
}

/// One 6-packet burst (150 ms spacing) per entry, the first at 09:00 and
/// each later one `gap` seconds after the previous burst's last packet.
fn bursts(gaps_s: &[i64]) -> Vec<OraclePacket> {
    let mut out = Vec::new();
    let mut t = 9 * 3_600_000;
    for (i, gap) in std::iter::once(&0).chain(gaps_s).enumerate() {
        t += gap * 1000;
        for k in 0..6 {
            out.push(OraclePacket {
                device: "dev0".into(),
                t_ms: t + k * 150,
                rssi: -70.0 + i as f64,
            });
        }
        t += 5 * 150;
    }
    out
}

fn c1_oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let mut mismatches = 0;
    let mut encounters = 0;
    for _ in 0..1000 {
        let packets = oracle::random_stream(&mut rng, 200);
        let got: Vec<OracleEncounter> = detect(&packets)
            .iter()
            .map(|e| OracleEncounter {
                device: e.device_id.clone(),
                start_ms: epoch_ms(&e.start) - MONDAY_MS,
                end_ms: epoch_ms(&e.end) - MONDAY_MS,
                packet_count: e.packet_count,
                max_rssi: e.max_rssi_db,
            })
            .collect();
        let mut shifted = packets.clone();
        shifted.iter_mut().for_each(|p| p.t_ms += MONDAY_MS);
        let mut want = oracle::detect(&shifted, &OracleParams::default());
        want.iter_mut().for_each(|e| {
            e.start_ms -= MONDAY_MS;
            e.end_ms -= MONDAY_MS;
        });
        encounters += want.len();
        mismatches += usize::from(got != want);
    }
    let elapsed = started.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!("1000 streams, {encounters} oracle encounters, {mismatches} mismatching streams, {elapsed:.1?}"),
    )
}

fn c2_merge_boundary() -> Outcome {
    let n299 = detect(&bursts(&[299])).len();
    let n301 = detect(&bursts(&[301])).len();
    outcome(n299 == 1 && n301 == 2, format!("299 s -> {n299}, 301 s -> {n301}"))
}

fn c3_daily_cap() -> Outcome {
    let packets = bursts(&[900, 900, 900, 900]);
    let got = detect(&packets);
    let starts: Vec<i64> = got.iter().map(|e| epoch_ms(&e.start) - MONDAY_MS).collect();
    let first_four: Vec<i64> = packets.chunks(6).take(4).map(|b| b[0].t_ms).collect();
    let same_day = got.iter().all(|e| e.start.with_timezone(&TZ).day() == 8);
    outcome(
        got.len() == 4 && starts == first_four && same_day,
        format!("5 bursts -> {} encounters, first four kept: {}", got.len(), starts == first_four),
    )
}

fn c4_table_arithmetic() -> Outcome {
    // printed MEM and PEM columns, Arterial .. Other
    let mem_p = [146.1, 68.4, 176.0, 306.0, 617.8, 799.1];
    let mem_o = [60.7, 55.2, 171.8, 432.6, 470.7, 1410.0];
    let pem_p = [6.9, 3.2, 8.3, 14.5, 29.2, 37.8];
    let pem_o = [2.3, 2.1, 6.6, 16.6, 18.1, 54.2];
    let mut worst: f64 = 0.0;
    for (mem, printed) in [(mem_p, pem_p), (mem_o, pem_o)] {
        let m: BTreeMap<usize, f64> = mem.iter().copied().enumerate().collect();
        let got = pem(&m).unwrap();
        for (i, want) in printed.iter().enumerate() {
            worst = worst.max((got[&i] - want).abs());
        }
    }
    outcome(worst <= 0.1, format!("12 cells, max |PEM - printed| = {worst:.3}"))
}

fn c5_bin_universe() -> Outcome {
    let base = FixedOffset::west_opt(5 * 3600).unwrap().with_ymd_and_hms(2019, 4, 8, 0, 0, 0).unwrap();
    let mut week = BTreeSet::new();
    let mut per_day: BTreeMap<u32, BTreeSet<u8>> = BTreeMap::new();
    for m in 0..7 * 24 * 60 {
        if let Some(b) = bin_time(&(base + chrono::Duration::minutes(m))) {
            week.insert(b.week_index());
            per_day.entry(b.day.num_days_from_monday()).or_default().insert(b.index);
        }
    }
    let daily_ok = per_day.len() == 7 && per_day.values().all(|s| s.len() == 68);

    // 21,447 disjoint two-point streets
    let origin = LatLon::new(29.5, -98.6);
    let lines: Vec<RawLine> = (0..21_447)
        .map(|i| {
            let (row, col) = ((i / 200) as f64, (i % 200) as f64);
            let a = LatLon::new(origin.lat + row * 0.001, origin.lon + col * 0.001);
            RawLine {
                feature_index: i,
                tag: "footway".into(),
                points: vec![a, LatLon::new(a.lat + 0.0004, a.lon)],
            }
        })
        .collect();
    let graph = build_graph_from_lines(&lines, &FunctionalClassMap::default()).unwrap().graph;
    let zones = KeyUniverse::for_graph(Keying::SpaceTime, &graph).size();
    outcome(
        daily_ok && week.len() == 476 && graph.len() == 21_447 && zones == 1_458_396,
        format!("68/day: {daily_ok}, {} per week, {} segments -> {zones} zones", week.len(), graph.len()),
    )
}

fn c6_proximity_baselines() -> Outcome {
    let class = |rssi, p| proximity_class(rssi, p).unwrap().class;
    let checks = [
        class(-60.5, Provider::Bird) == ProximityClass::WithinOneFoot,
        class(-46.25, Provider::Lime) == ProximityClass::WithinOneFoot,
        class(-60.6, Provider::Bird) == ProximityClass::Near,
        class(-46.35, Provider::Lime) == ProximityClass::Near,
    ];
    outcome(checks.iter().all(|c| *c), format!("checks {checks:?}"))
}

fn c7_high_low_split() -> Outcome {
    let s = HighLowSplit::from_max(169);
    let groups_ok = s.group_of(84) == Some(CountGroup::Low)
        && s.group_of(85) == Some(CountGroup::High)
        && s.group_of(1) == Some(CountGroup::Low)
        && s.group_of(169) == Some(CountGroup::High)
        && s.group_of(0).is_none();
    outcome(
        s.low_range == Some((1, 84)) && s.high_range == Some((85, 169)) && groups_ok,
        format!("low {:?}, high {:?}", s.low_range, s.high_range),
    )
}

fn c8_end_to_end() -> Outcome {
    let started = Instant::now();
    let cfg = PipelineConfig::default();
    let out = simulate(&cfg.sim).unwrap();
    let (encounters, _) = pipeline::detect(out.receptions.clone(), &cfg.detector, &cfg.providers).unwrap();
    let score = score_detector(&out.truth, &encounters);

    let lines: Vec<RawLine> = out
        .network_lines
        .as_ref()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, (tag, points))| RawLine {
            feature_index: i,
            tag: tag.clone(),
            points: points.clone(),
        })
        .collect();
    let graph = build_graph_from_lines(&lines, &FunctionalClassMap::default()).unwrap().graph;
    let analysis = pipeline::analyze(&graph, &encounters, &out.feedback, Some(&out.schedule), &cfg).unwrap();
    let mean = |p: Provider, g: CountGroup| {
        analysis
            .rssi_rows(Keying::Space)
            .iter()
            .find(|r| r.provider == p && r.group == g)
            .and_then(|r| r.stats)
            .map(|s| s.mean)
    };
    let mut closer = true;
    let mut rssi_detail = Vec::new();
    for p in [Provider::Bird, Provider::Lime] {
        let (hi, lo) = (mean(p, CountGroup::High), mean(p, CountGroup::Low));
        closer &= matches!((hi, lo), (Some(h), Some(l)) if h > l);
        rssi_detail.push(format!("{p} high {hi:.2?} low {lo:.2?}"));
    }

    // startle over every moving feedback record
    let profiles = pipeline::build_profiles(&pipeline::heart_rate_samples(&out.receptions), &cfg.profile).unwrap();
    let classes = pipeline::classify_all(&out.feedback, &profiles);
    let moving: Vec<StartleClass> = out.feedback.iter().zip(&classes).filter(|(r, _)| r.q_moving).map(|(_, c)| *c).collect();
    let elevated = moving.iter().filter(|c| **c == StartleClass::Elevated).count();
    let fraction = elevated as f64 / moving.len().max(1) as f64;
    let elapsed = started.elapsed();

    let pass = score.recall >= 0.9
        && score.precision >= 0.85
        && closer
        && !moving.is_empty()
        && (fraction - 0.60).abs() <= 0.05
        && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "truth {}, detected {}, recall {:.3}, precision {:.3}; {}; elevated {elevated}/{} = {fraction:.3}; {elapsed:.1?}",
            score.truth_count,
            score.detected_count,
            score.recall,
            score.precision,
            rssi_detail.join(", "),
            moving.len()
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_scootsafe"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&status.stderr)))
    }
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn c9_determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let dir = root.path().join(name);
        let d = dir.to_str().unwrap();
        for cmd in ["simulate", "detect", "filter-feedback", "analyze", "score"] {
            if let Err(e) = run_cli(&[cmd, "--out", d, "--seed", "2019"]) {
                return outcome(false, e);
            }
        }
        runs.push(files(&dir));
    }
    let (a, b) = (&runs[0], &runs[1]);
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    outcome(
        a.len() >= 10 && a.keys().eq(b.keys()) && differing.is_empty(),
        format!("{} files per run, differing: {differing:?}", a.len()),
    )
}

fn c10_schedule_correlation() -> Outcome {
    let cfg = PipelineConfig {
        sim: SimConfig {
            n_pedestrians: 30,
            ..SimConfig::default()
        },
        ..PipelineConfig::default()
    };
    let out = simulate(&cfg.sim).unwrap();
    let (encounters, _) = pipeline::detect(out.receptions, &cfg.detector, &cfg.providers).unwrap();
    let lines: Vec<RawLine> = out
        .network_lines
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, (tag, points))| RawLine {
            feature_index: i,
            tag,
            points,
        })
        .collect();
    let graph = build_graph_from_lines(&lines, &FunctionalClassMap::default()).unwrap().graph;
    let analysis = pipeline::analyze(&graph, &encounters, &out.feedback, Some(&out.schedule), &cfg).unwrap();
    let sc = analysis.schedule.unwrap();
    let rho = sc.spearman;
    outcome(
        rho.is_some_and(|r| r > 0.5),
        format!("{} hourly bins, {} encounters, spearman {rho:.3?}", sc.bins.len(), sc.bins.iter().map(|b| b.encounters).sum::<u64>()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("detector-oracle equivalence", c1_oracle_equivalence),
        ("merge-rule boundary", c2_merge_boundary),
        ("daily cap", c3_daily_cap),
        ("PEM table arithmetic", c4_table_arithmetic),
        ("bin-universe counts", c5_bin_universe),
        ("proximity baselines", c6_proximity_baselines),
        ("high/low split", c7_high_low_split),
        ("end-to-end simulator validation", c8_end_to_end),
        ("determinism", c9_determinism),
        ("schedule correlation", c10_schedule_correlation),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!("{} criterion {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
