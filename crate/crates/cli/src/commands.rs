//! File-level wrappers: read inputs, run a stage, write outputs.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use scootsafe_core::binning::heatmap_geojson;
use scootsafe_core::ble::{read_receptions_jsonl, write_receptions_jsonl, BleReception};
use scootsafe_core::detector::{read_encounters_csv, write_encounters_csv, write_encounters_jsonl, CorpusSummary, Encounter};
use scootsafe_core::feedback::{read_feedback_csv, write_feedback_csv, FeedbackRecord, StartleClass};
use scootsafe_core::geo::{build_graph, network_to_geojson, parse_campuses_geojson, FunctionalClassMap, StreetGraph};
use scootsafe_core::io::RecordError;
use scootsafe_core::metrics::{read_schedule_csv, write_metrics_csv, write_rssi_groups_csv, write_schedule_csv, PoiEvent};
use scootsafe_core::sim::{read_truth_csv, score_detector, simulate, write_truth_csv, ScoreReport, SimError, SimSummary};
use scootsafe_core::time::format_iso;

use crate::config::PipelineConfig;
use crate::pipeline::{self, Analysis, FeedbackReport, KEYINGS};
use crate::CliError;

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} not found: {}", path.display())))
    }
}

fn read_text(path: &Path, what: &str) -> Result<String, CliError> {
    require(path, what)?;
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn record_err(path: &Path) -> impl Fn(RecordError) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>, CliError> {
    require(path, what)?;
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn out_dir(cfg: &PipelineConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", cfg.out_dir.display())))?;
    Ok(&cfg.out_dir)
}

/// Writes `name` under `dir` through `f`, returning the full path.
fn write_with<F>(dir: &Path, name: &str, f: F) -> Result<PathBuf, CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), RecordError>,
{
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(record_err(&path))?;
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    write_with(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| RecordError::Io(e.into()))?;
        writeln!(w)?;
        Ok(())
    })
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    write_with(dir, name, |w| Ok(w.write_all(text.as_bytes())?))
}

pub fn load_receptions(path: &Path) -> Result<Vec<BleReception>, CliError> {
    read_receptions_jsonl(open(path, "receptions file")?).map_err(record_err(path))
}

pub fn load_feedback(path: &Path) -> Result<Vec<FeedbackRecord>, CliError> {
    read_feedback_csv(open(path, "feedback file")?).map_err(record_err(path))
}

pub fn load_encounters(path: &Path) -> Result<Vec<Encounter>, CliError> {
    read_encounters_csv(open(path, "encounters file")?).map_err(record_err(path))
}

pub fn load_schedule(path: &Path) -> Result<Vec<PoiEvent>, CliError> {
    read_schedule_csv(open(path, "schedule file")?).map_err(record_err(path))
}

/// Street graph, clipped to the campus polygons when those are configured.
pub fn load_graph(cfg: &PipelineConfig) -> Result<StreetGraph, CliError> {
    let path = cfg.network_path();
    let text = read_text(&path, "network file")?;
    let report = build_graph(&text, &FunctionalClassMap::default())
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut graph = report.graph;
    if let Some(campus_path) = &cfg.paths.campuses {
        let campuses = parse_campuses_geojson(&read_text(campus_path, "campus file")?)
            .map_err(|e| CliError::Data(format!("{}: {e}", campus_path.display())))?;
        graph = graph.within(&campuses);
    }
    Ok(graph)
}

pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<SimSummary, CliError> {
    for (p, what) in [(&cfg.sim.network, "network file"), (&cfg.sim.demand, "schedule file")] {
        if let Some(p) = p {
            require(p, what)?;
        }
    }
    cfg.sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let out = simulate(&cfg.sim).map_err(|e| match e {
        SimError::Input { .. } => CliError::Data(e.to_string()),
        SimError::Config(_) | SimError::Unreachable(_) => CliError::Config(e.to_string()),
    })?;
    let dir = out_dir(cfg)?;
    write_with(dir, "receptions.jsonl", |w| write_receptions_jsonl(w, &out.receptions))?;
    write_with(dir, "feedback.csv", |w| write_feedback_csv(w, &out.feedback))?;
    write_with(dir, "truth.csv", |w| write_truth_csv(w, &out.truth))?;
    write_with(dir, "schedule.csv", |w| write_schedule_csv(w, &out.schedule))?;
    if let Some(lines) = &out.network_lines {
        write_text(dir, "network.geojson", &network_to_geojson(lines))?;
    }
    Ok(out.summary)
}

pub fn cmd_detect(cfg: &PipelineConfig) -> Result<CorpusSummary, CliError> {
    let receptions = load_receptions(&cfg.receptions_path())?;
    let (encounters, summary) = pipeline::detect(receptions, &cfg.detector, &cfg.providers)?;
    let dir = out_dir(cfg)?;
    write_with(dir, "encounters.csv", |w| write_encounters_csv(w, &encounters))?;
    write_with(dir, "encounters.jsonl", |w| write_encounters_jsonl(w, &encounters))?;
    write_json(dir, "detect_summary.json", &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct ProfileSummary<'a> {
    participant_id: &'a str,
    n_samples: usize,
    modal_bin: (f64, f64),
    band_low: f64,
    band_high: f64,
    low_confidence: bool,
}

fn class_str(c: StartleClass) -> &'static str {
    match c {
        StartleClass::Elevated => "elevated",
        StartleClass::Normal => "normal",
        StartleClass::Unknown => "unknown",
    }
}

/// Study-window filter, heart-rate profiles from reception samples, startle
/// classes and the direction matrix.
pub fn cmd_filter_feedback(cfg: &PipelineConfig) -> Result<FeedbackReport, CliError> {
    let records = load_feedback(&cfg.feedback_path())?;
    let receptions = load_receptions(&cfg.receptions_path())?;
    let profiles = pipeline::build_profiles(&pipeline::heart_rate_samples(&receptions), &cfg.profile)?;
    let filtered = pipeline::filter_feedback(&records, &profiles, cfg.timezone);
    let dir = out_dir(cfg)?;
    write_with(dir, "feedback_filtered.csv", |w| write_feedback_csv(w, &filtered.kept))?;
    write_with(dir, "startle.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["participant_id", "iso_time", "provider", "q_moving", "heart_rate_bpm", "band_high", "class"])?;
        for (r, c) in filtered.kept.iter().zip(&filtered.classes) {
            let band = profiles.get(&r.participant_id).map(|p| format!("{:.2}", p.band_high));
            wtr.write_record([
                r.participant_id.clone(),
                format_iso(&r.timestamp),
                r.provider.to_string(),
                scootsafe_core::io::yes_no(r.q_moving).to_string(),
                r.heart_rate_bpm.map(|h| format!("{h:.1}")).unwrap_or_default(),
                band.unwrap_or_default(),
                class_str(*c).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    let summaries: Vec<ProfileSummary> = profiles
        .values()
        .map(|p| ProfileSummary {
            participant_id: &p.participant_id,
            n_samples: p.samples.len(),
            modal_bin: p.modal_bin,
            band_low: p.band_low,
            band_high: p.band_high,
            low_confidence: p.low_confidence,
        })
        .collect();
    write_json(dir, "profiles.json", &summaries)?;
    write_json(dir, "feedback_summary.json", &filtered.report)?;
    Ok(filtered.report)
}

pub fn cmd_analyze(cfg: &PipelineConfig) -> Result<Analysis, CliError> {
    let graph = load_graph(cfg)?;
    let encounters = load_encounters(&cfg.encounters_path())?;
    let feedback = load_feedback(&cfg.feedback_path())?;
    // the schedule is optional unless it was configured explicitly
    let schedule_path = cfg.schedule_path();
    let schedule = if cfg.paths.schedule.is_some() || schedule_path.is_file() {
        Some(load_schedule(&schedule_path)?)
    } else {
        None
    };
    let mut analysis = pipeline::analyze(&graph, &encounters, &feedback, schedule.as_deref(), cfg)?;
    if schedule.is_none() {
        analysis.warnings.push(format!("no schedule at {}; correlation skipped", schedule_path.display()));
    }

    let dir = out_dir(cfg)?;
    write_with(dir, "metrics.csv", |w| write_metrics_csv(w, &analysis.metrics))?;
    for (keying, dist) in KEYINGS.iter().zip(&analysis.distributions) {
        write_with(dir, &format!("histogram_{}.csv", keying.as_str()), |w| {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(["encounters", "keys"])?;
            for (count, keys) in dist.histogram() {
                wtr.write_record([count.to_string(), keys.to_string()])?;
            }
            wtr.flush()?;
            Ok(())
        })?;
    }
    let summaries: Vec<_> = analysis.distributions.iter().map(|d| d.summary()).collect();
    write_json(dir, "distribution_summary.json", &summaries)?;
    write_text(dir, "heatmap.geojson", &heatmap_geojson(&graph, &analysis.predicted_events))?;
    write_with(dir, "rssi_groups.csv", |w| write_rssi_groups_csv(w, &analysis.rssi_groups))?;
    if let Some(sc) = &analysis.schedule {
        write_json(dir, "schedule_correlation.json", sc)?;
    }
    write_json(dir, "advisory.json", &analysis.warnings)?;
    Ok(analysis)
}

pub fn cmd_score(cfg: &PipelineConfig) -> Result<ScoreReport, CliError> {
    let truth_path = cfg.truth_path();
    let truth = read_truth_csv(open(&truth_path, "truth file")?).map_err(record_err(&truth_path))?;
    let detected = load_encounters(&cfg.encounters_path())?;
    let report = score_detector(&truth, &detected);
    write_json(out_dir(cfg)?, "score.json", &report)?;
    Ok(report)
}
