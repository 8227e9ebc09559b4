//! Synthetic field study: a street network with scheduled pedestrian trips,
//! parked and ridden scooters, BLE advertisement capture and ground truth.
//!
//! Everything is drawn from one seed. World construction uses a single
//! stream; reception for each (participant, device) pair uses its own stream
//! derived from the seed, so adding an agent does not perturb other pairs.

pub mod motion;
pub mod radio;
pub mod score;
pub mod world;

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate, NaiveTime, TimeZone};
use chrono_tz::Tz;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use petgraph::graph::NodeIndex;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, WeightedIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ble::{build_payload, Baselines, BleReception, GpsFix, Provider, PATH_LOSS_EXPONENT_RANGE};
use crate::feedback::{FeedbackRecord, PromptGate};
use crate::geo::{build_graph, build_graph_from_lines, FunctionalClassMap, LatLon};
use crate::io::round_to;
use crate::metrics::{read_schedule_csv, PoiEvent};
use crate::time::from_epoch_ms;

use motion::{dist, Leg, Trajectory, Xy};
use radio::{ReceptionModel, RssiModel, FEET_PER_METER};
pub use score::{read_truth_csv, score_detector, write_truth_csv, GroundTruthEncounter, ScoreReport};
use world::{builtin_timetable, CampusLayout, RoadNet, Spot, TimetableParams};

pub const TICK_MS: i64 = 50;
/// Largest advertisement interval that still puts 4 packets in a 1 s window.
pub const MAX_ADVERTISEMENT_INTERVAL_S: f64 = 0.25;
pub const TRUTH_DISTANCE_FT: f64 = 25.0;
pub const TRUTH_MIN_DURATION_MS: i64 = 1000;

const DISTRACTOR_NAMES: [&str; 4] = ["JBL Flip 4", "Galaxy Watch", "Fitbit Charge 3", "Pixel Buds"];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("unreachable POI pairs: {}", .0.iter().map(|(a, b)| format!("{a} -> {b}")).collect::<Vec<_>>().join(", "))]
    Unreachable(Vec<(String, String)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderMix {
    pub bird: f64,
    pub lime: f64,
    pub blue_duck: f64,
}

impl Default for ProviderMix {
    fn default() -> Self {
        ProviderMix {
            bird: 0.45,
            lime: 0.45,
            blue_duck: 0.10,
        }
    }
}

/// Where scooters park. Segments next to a POI are hotspots: more
/// scooters park there, and closer to the walking line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HotspotModel {
    pub radius_m: f64,
    /// Share of parked scooters placed on hotspot segments.
    pub parked_share: f64,
    /// Share of rides that end on a hotspot segment.
    pub ride_share: f64,
    /// Lateral parking offset range on hotspot segments, meters.
    pub near_offset_m: (f64, f64),
    /// Lateral parking offset range elsewhere, meters.
    pub far_offset_m: (f64, f64),
    /// Lateral offset of a passing ride that meets its walker off the hotspots.
    pub wide_pass_offset_m: (f64, f64),
}

impl Default for HotspotModel {
    fn default() -> Self {
        HotspotModel {
            radius_m: 60.0,
            parked_share: 0.2,
            ride_share: 0.2,
            near_offset_m: (0.2, 0.8),
            far_offset_m: (3.5, 6.5),
            wide_pass_offset_m: (3.5, 6.5),
        }
    }
}

/// Rides timed to pass a walking participant on the participant's own route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PassingModel {
    /// Chance that a participant trip gets a passing ride.
    pub trip_share: f64,
    /// Share of passing rides that overtake from behind; the rest come toward the walker.
    pub behind_share: f64,
}

impl Default for PassingModel {
    fn default() -> Self {
        PassingModel {
            trip_share: 1.0,
            behind_share: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackModel {
    /// Probability that a shown prompt is answered.
    pub fraction: f64,
    pub prompt_interval_s: i64,
    /// Share of moving-scooter answers with a startle response.
    pub startle_fraction: f64,
    pub startle_bpm: f64,
    pub resting_bpm: (f64, f64),
    pub heart_rate_sigma_bpm: f64,
}

impl Default for FeedbackModel {
    fn default() -> Self {
        FeedbackModel {
            fraction: 0.8,
            prompt_interval_s: crate::feedback::DEFAULT_PROMPT_INTERVAL_S,
            startle_fraction: 0.6,
            startle_bpm: 20.0,
            resting_bpm: (60.0, 85.0),
            heart_rate_sigma_bpm: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Pedestrian,
    Scooter,
    /// Non-scooter BLE device.
    Beacon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t_s: f64,
    pub x_m: f64,
    pub y_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedAgent {
    pub id: String,
    pub role: AgentRole,
    #[serde(default)]
    pub provider: Option<Provider>,
    /// Advertised local name; generated from the provider when absent.
    #[serde(default)]
    pub name: Option<String>,
    pub waypoints: Vec<Waypoint>,
}

/// Agents with explicit piecewise-linear paths in a local frame around
/// `origin`; no network or schedule involved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedScenario {
    pub origin: LatLon,
    #[serde(default = "default_script_start")]
    pub start_time: NaiveTime,
    pub agents: Vec<ScriptedAgent>,
}

fn default_script_start() -> NaiveTime {
    NaiveTime::from_hms_opt(12, 0, 0).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub timezone: Tz,
    pub start_date: NaiveDate,
    pub duration_days: u32,
    /// GeoJSON street network; the built-in campus grid when absent.
    pub network: Option<PathBuf>,
    /// POI schedule CSV; the built-in timetable when absent.
    pub demand: Option<PathBuf>,
    pub campus: CampusLayout,
    pub timetable: TimetableParams,
    pub n_pedestrians: usize,
    pub n_scooters: usize,
    pub n_distractors: usize,
    pub parked_fraction: f64,
    pub provider_mix: ProviderMix,
    /// Mean rides per day for each scooter that is not permanently parked.
    pub rides_per_day: f64,
    /// Chance a free participant attends a given class meeting of average size.
    pub attendance: f64,
    pub walking_speed_mph: f64,
    pub riding_speed_mph: (f64, f64),
    pub pedestrian_offset_m: f64,
    pub riding_offset_m: f64,
    pub hotspot: HotspotModel,
    pub passing: PassingModel,
    pub advertisement_interval_s: f64,
    pub rssi_noise_sigma_db: f64,
    pub path_loss_exponent: f64,
    pub baselines: Baselines,
    pub reception: ReceptionModel,
    pub feedback: FeedbackModel,
    pub gps_sigma_m: f64,
    pub scripted: Option<ScriptedScenario>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 2019,
            timezone: chrono_tz::America::Chicago,
            start_date: NaiveDate::from_ymd_opt(2019, 4, 8).unwrap(),
            duration_days: 6,
            network: None,
            demand: None,
            campus: CampusLayout::default(),
            timetable: TimetableParams::default(),
            n_pedestrians: 7,
            n_scooters: 8,
            n_distractors: 6,
            parked_fraction: 0.25,
            provider_mix: ProviderMix::default(),
            rides_per_day: 3.0,
            attendance: 0.05,
            walking_speed_mph: 3.0,
            riding_speed_mph: (8.0, 15.5),
            pedestrian_offset_m: 1.5,
            riding_offset_m: 2.0,
            hotspot: HotspotModel::default(),
            passing: PassingModel::default(),
            advertisement_interval_s: MAX_ADVERTISEMENT_INTERVAL_S,
            rssi_noise_sigma_db: 4.0,
            path_loss_exponent: 2.0,
            baselines: Baselines::default(),
            reception: ReceptionModel::default(),
            feedback: FeedbackModel::default(),
            gps_sigma_m: 3.0,
            scripted: None,
        }
    }
}

const MPH_TO_MPS: f64 = 0.447_04;

fn check(ok: bool, msg: &str) -> Result<(), SimError> {
    if ok {
        Ok(())
    } else {
        Err(SimError::Config(msg.to_string()))
    }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(s).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a TOML file; relative input paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.network, &mut cfg.demand].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ad_ms = self.advertisement_interval_s * 1000.0;
        check(
            self.advertisement_interval_s > 0.0 && self.advertisement_interval_s <= MAX_ADVERTISEMENT_INTERVAL_S,
            "advertisement_interval_s must be in (0, 0.25] so a 1 s window can hold 4 packets",
        )?;
        check(
            (ad_ms / TICK_MS as f64 - (ad_ms / TICK_MS as f64).round()).abs() < 1e-9,
            "advertisement_interval_s must be a multiple of the 0.05 s tick",
        )?;
        check(self.duration_days >= 1, "duration_days must be at least 1")?;
        check((0.0..=1.0).contains(&self.parked_fraction), "parked_fraction must be in [0, 1]")?;
        let mix = &self.provider_mix;
        check(
            mix.bird >= 0.0 && mix.lime >= 0.0 && mix.blue_duck >= 0.0 && mix.bird + mix.lime + mix.blue_duck > 0.0,
            "provider_mix weights must be non-negative with a positive sum",
        )?;
        check(self.rides_per_day >= 0.0, "rides_per_day must be >= 0")?;
        check((0.0..=1.0).contains(&self.attendance), "attendance must be in [0, 1]")?;
        check(self.walking_speed_mph > 0.0, "walking_speed_mph must be positive")?;
        let (lo, hi) = self.riding_speed_mph;
        check(0.0 < lo && lo <= hi, "riding_speed_mph must be an increasing positive range")?;
        check(self.rssi_noise_sigma_db >= 0.0, "rssi_noise_sigma_db must be >= 0")?;
        let (elo, ehi) = PATH_LOSS_EXPONENT_RANGE;
        check(
            (elo..=ehi).contains(&self.path_loss_exponent),
            "path_loss_exponent outside the supported range",
        )?;
        check(self.gps_sigma_m >= 0.0, "gps_sigma_m must be >= 0")?;
        self.reception.validate().map_err(SimError::Config)?;
        let h = &self.hotspot;
        check(
            (0.0..=1.0).contains(&h.parked_share) && (0.0..=1.0).contains(&h.ride_share),
            "hotspot shares must be in [0, 1]",
        )?;
        check(
            0.0 <= h.near_offset_m.0 && h.near_offset_m.0 <= h.near_offset_m.1,
            "hotspot.near_offset_m must be an increasing range",
        )?;
        check(
            0.0 <= h.far_offset_m.0 && h.far_offset_m.0 <= h.far_offset_m.1,
            "hotspot.far_offset_m must be an increasing range",
        )?;
        check(
            0.0 <= h.wide_pass_offset_m.0 && h.wide_pass_offset_m.0 <= h.wide_pass_offset_m.1,
            "hotspot.wide_pass_offset_m must be an increasing range",
        )?;
        check(
            (0.0..=1.0).contains(&self.passing.trip_share) && (0.0..=1.0).contains(&self.passing.behind_share),
            "passing shares must be in [0, 1]",
        )?;
        let f = &self.feedback;
        check(
            (0.0..=1.0).contains(&f.fraction) && (0.0..=1.0).contains(&f.startle_fraction),
            "feedback fractions must be in [0, 1]",
        )?;
        check(f.prompt_interval_s >= 0, "feedback.prompt_interval_s must be >= 0")?;
        check(
            40.0 <= f.resting_bpm.0 && f.resting_bpm.0 <= f.resting_bpm.1 && f.resting_bpm.1 <= 150.0,
            "feedback.resting_bpm must be an increasing range within [40, 150]",
        )?;
        check(f.heart_rate_sigma_bpm >= 0.0, "feedback.heart_rate_sigma_bpm must be >= 0")?;
        if self.scripted.is_none() {
            self.campus.validate().map_err(SimError::Config)?;
        }
        if let Some(s) = &self.scripted {
            let mut ids = HashSet::new();
            for a in &s.agents {
                check(ids.insert(a.id.as_str()), &format!("duplicate scripted agent id `{}`", a.id))?;
                check(!a.waypoints.is_empty(), &format!("agent `{}` has no waypoints", a.id))?;
                check(
                    a.role != AgentRole::Pedestrian || a.waypoints.len() >= 2,
                    &format!("pedestrian `{}` needs at least two waypoints", a.id),
                )?;
                check(
                    a.waypoints.windows(2).all(|w| w[1].t_s > w[0].t_s) && a.waypoints[0].t_s >= 0.0,
                    &format!("agent `{}` waypoint times must increase from >= 0", a.id),
                )?;
                check(
                    a.role != AgentRole::Scooter || (a.provider != Some(Provider::Unknown)),
                    &format!("scooter `{}` cannot have provider unknown", a.id),
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSummary {
    pub participants: usize,
    pub scooters: usize,
    pub distractors: usize,
    pub receptions: usize,
    pub truth_encounters: usize,
    pub feedback_records: usize,
}

pub struct SimOutput {
    /// Sorted by (participant, time, device).
    pub receptions: Vec<BleReception>,
    /// Sorted by (time, participant).
    pub feedback: Vec<FeedbackRecord>,
    /// Sorted by (participant, start, device).
    pub truth: Vec<GroundTruthEncounter>,
    pub schedule: Vec<PoiEvent>,
    /// Generated street lines, when the built-in campus was used.
    pub network_lines: Option<Vec<(String, Vec<LatLon>)>>,
    pub summary: SimSummary,
}

struct Device {
    id: String,
    provider: Provider,
    payload: Vec<u8>,
    traj: Trajectory,
    phase_ticks: i64,
    one_foot_db: f64,
    scooter: bool,
}

struct Participant {
    id: String,
    traj: Trajectory,
    resting_bpm: f64,
}

struct World {
    origin: LatLon,
    participants: Vec<Participant>,
    devices: Vec<Device>,
    schedule: Vec<PoiEvent>,
    network_lines: Option<Vec<(String, Vec<LatLon>)>>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pair_rng(seed: u64, a: usize, b: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(seed) ^ a as u64) ^ (b as u64).rotate_left(32)))
}

fn local_ms(tz: Tz, date: NaiveDate, time: NaiveTime) -> i64 {
    let naive = date.and_time(time);
    tz.from_local_datetime(&naive)
        .earliest()
        .or_else(|| tz.from_local_datetime(&(naive + Duration::hours(1))).earliest())
        .expect("local time exists")
        .timestamp_millis()
}

fn mac<R: Rng>(rng: &mut R, used: &mut HashSet<String>) -> String {
    loop {
        let bytes: [u8; 6] = rng.gen();
        let s = bytes.iter().map(|b| format!("{b:02X}")).collect::<Vec<_>>().join(":");
        if used.insert(s.clone()) {
            return s;
        }
    }
}

fn scooter_name<R: Rng>(provider: Provider, rng: &mut R) -> String {
    const ALNUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    match provider {
        Provider::Bird => {
            let tail: String = (0..4).map(|_| ALNUM[rng.gen_range(0..ALNUM.len())] as char).collect();
            format!("Bird-{tail}")
        }
        Provider::Lime => format!("Lime-{:06X}", rng.gen_range(0..0x100_0000u32)),
        Provider::BlueDuck => format!("BlueDuck-{:04}", rng.gen_range(0..10_000u32)),
        Provider::Unknown => DISTRACTOR_NAMES[rng.gen_range(0..DISTRACTOR_NAMES.len())].to_string(),
    }
}

fn participant_id(i: usize, n: usize) -> String {
    let width = n.to_string().len().max(2);
    format!("P{:0width$}", i + 1)
}

fn uniform<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    }
}

impl SimConfig {
    fn ad_ticks(&self) -> i64 {
        (self.advertisement_interval_s * 1000.0 / TICK_MS as f64).round() as i64
    }

    fn make_device<R: Rng>(&self, rng: &mut R, used: &mut HashSet<String>, provider: Provider, name: Option<String>, traj: Trajectory) -> Device {
        let id = mac(rng, used);
        let name = name.unwrap_or_else(|| scooter_name(provider, rng));
        Device {
            id,
            provider,
            payload: build_payload(&name, None),
            traj,
            phase_ticks: rng.gen_range(0..self.ad_ticks()),
            one_foot_db: self.baselines.one_foot_db_or_fallback(provider),
            scooter: provider != Provider::Unknown,
        }
    }

    fn scripted_world(&self, script: &ScriptedScenario, rng: &mut ChaCha8Rng) -> World {
        let t0 = local_ms(self.timezone, self.start_date, script.start_time);
        let at = |w: &Waypoint| (t0 + (w.t_s * 1000.0).round() as i64, (w.x_m, w.y_m));
        let mut participants = Vec::new();
        let mut devices = Vec::new();
        let mut used = HashSet::new();
        for a in &script.agents {
            let mut traj = Trajectory::new(a.role != AgentRole::Pedestrian);
            if a.waypoints.len() == 1 {
                let (t, p) = at(&a.waypoints[0]);
                traj.hold(t, t + 1, p);
            }
            for w in a.waypoints.windows(2) {
                let ((ta, pa), (tb, pb)) = (at(&w[0]), at(&w[1]));
                traj.push(Leg { t0: ta, t1: tb, p0: pa, p1: pb });
            }
            match a.role {
                AgentRole::Pedestrian => participants.push(Participant {
                    id: a.id.clone(),
                    traj,
                    resting_bpm: uniform(rng, self.feedback.resting_bpm),
                }),
                AgentRole::Scooter | AgentRole::Beacon => {
                    let provider = match a.role {
                        AgentRole::Scooter => a.provider.unwrap_or(Provider::Bird),
                        _ => Provider::Unknown,
                    };
                    let mut d = self.make_device(rng, &mut used, provider, a.name.clone(), traj);
                    d.id = a.id.clone();
                    devices.push(d);
                }
            }
        }
        World {
            origin: script.origin,
            participants,
            devices,
            schedule: Vec::new(),
            network_lines: None,
        }
    }

    fn campus_world(&self, rng: &mut ChaCha8Rng) -> Result<World, SimError> {
        let classes = FunctionalClassMap::default();
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| SimError::Input {
                path: p.to_path_buf(),
                message: e.to_string(),
            })
        };
        let mut generated_pois = None;
        let (graph, network_lines) = match &self.network {
            Some(path) => {
                let report = build_graph(&read(path)?, &classes).map_err(|e| SimError::Input {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                (report.graph, None)
            }
            None => {
                let campus = self.campus.generate(rng);
                let graph = build_graph_from_lines(&campus.lines, &classes)
                    .map_err(|e| SimError::Config(e.to_string()))?
                    .graph;
                generated_pois = Some((campus.buildings, campus.generators));
                let lines = campus.lines.into_iter().map(|l| (l.tag, l.points)).collect();
                (graph, Some(lines))
            }
        };
        if graph.is_empty() {
            return Err(SimError::Config("street network has no segments".into()));
        }
        let origin = match &self.network {
            Some(_) => graph.segments()[0].start(),
            None => self.campus.origin,
        };
        let net = RoadNet::new(graph, origin);

        let schedule = match (&self.demand, generated_pois) {
            (Some(path), _) => read_schedule_csv(read(path)?.as_bytes()).map_err(|e| SimError::Input {
                path: path.clone(),
                message: e.to_string(),
            })?,
            (None, Some((buildings, generators))) => builtin_timetable(&buildings, &generators, &self.timetable, rng),
            (None, None) => {
                // custom network without a schedule: POIs on random intersections
                let nodes: Vec<Xy> = (0..net.n_segments()).map(|s| net.point_at(Spot { seg: s, s: 0.0 }).0).collect();
                let pick = |rng: &mut ChaCha8Rng, prefix: &str, n: usize| -> Vec<(String, LatLon)> {
                    (0..n)
                        .map(|i| (format!("{prefix}{:02}", i + 1), net.to_latlon(*nodes.choose(rng).unwrap())))
                        .collect()
                };
                let b = pick(rng, "bldg", self.campus.n_buildings);
                let g = pick(rng, "stop", self.campus.n_generators);
                builtin_timetable(&b, &g, &self.timetable, rng)
            }
        };
        for p in &schedule {
            p.validate().map_err(SimError::Config)?;
        }

        let attractors: Vec<usize> = (0..schedule.len()).filter(|&i| schedule[i].kind.attracts()).collect();
        let generators: Vec<usize> = (0..schedule.len()).filter(|&i| schedule[i].kind.generates()).collect();
        if self.n_pedestrians > 0 && (attractors.is_empty() || generators.is_empty()) {
            return Err(SimError::Config("demand needs at least one attractor and one generator".into()));
        }
        let poi_node: Vec<_> = schedule.iter().map(|p| net.nearest_node(net.to_xy(p.location))).collect();
        let label = net.components();
        let mut unreachable = Vec::new();
        for i in 0..schedule.len() {
            for j in i + 1..schedule.len() {
                if label(poi_node[i]) != label(poi_node[j]) {
                    unreachable.push((schedule[i].poi_id.clone(), schedule[j].poi_id.clone()));
                }
            }
        }
        if !unreachable.is_empty() {
            return Err(SimError::Unreachable(unreachable));
        }

        let hotspot_of: Vec<Vec<usize>> = schedule
            .iter()
            .map(|p| net.segments_within(net.to_xy(p.location), self.hotspot.radius_m).into_iter().collect())
            .collect();
        let hotspots: BTreeSet<usize> = hotspot_of.iter().flatten().copied().collect();
        let hotspot_list: Vec<usize> = hotspots.iter().copied().collect();

        let tz = self.timezone;
        let days: Vec<NaiveDate> = (0..self.duration_days).map(|d| self.start_date + Duration::days(d as i64)).collect();
        let sim_start = local_ms(tz, days[0], NaiveTime::MIN);
        let sim_end = local_ms(tz, *days.last().unwrap() + Duration::days(1), NaiveTime::MIN);

        // class meetings per simulated day: (poi index, start ms, end ms)
        let meetings: Vec<Vec<(usize, i64, i64)>> = days
            .iter()
            .map(|date| {
                let mut m: Vec<(usize, i64, i64)> = attractors
                    .iter()
                    .flat_map(|&i| {
                        schedule[i]
                            .schedule
                            .iter()
                            .filter(|s| s.day == date.weekday())
                            .map(move |s| (i, local_ms(tz, *date, s.start), local_ms(tz, *date, s.end)))
                    })
                    .collect();
                m.sort();
                m
            })
            .collect();

        let parked_offset = |rng: &mut ChaCha8Rng, seg: usize| {
            let range = if hotspots.contains(&seg) {
                self.hotspot.near_offset_m
            } else {
                self.hotspot.far_offset_m
            };
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            side * uniform(rng, range)
        };
        let spot_on = |rng: &mut ChaCha8Rng, seg: usize| Spot {
            seg,
            s: net.seg_length(seg) * rng.gen_range(0.25..0.75),
        };
        let random_spot = |rng: &mut ChaCha8Rng, hot_share: f64, near: &[usize]| {
            let seg = if !near.is_empty() && rng.gen_bool(hot_share) {
                *near.choose(rng).unwrap()
            } else {
                rng.gen_range(0..net.n_segments())
            };
            spot_on(rng, seg)
        };

        let walk = self.walking_speed_mph * MPH_TO_MPS;
        let mags: Vec<f64> = attractors.iter().map(|&i| schedule[i].magnitude).collect();
        let mean_mag = if mags.is_empty() { 1.0 } else { mags.iter().sum::<f64>() / mags.len() as f64 }.max(1e-9);
        let gen_weights: Vec<f64> = generators.iter().map(|&i| schedule[i].magnitude.max(1e-9)).collect();
        let gen_pick = WeightedIndex::new(if gen_weights.is_empty() { vec![1.0] } else { gen_weights }).unwrap();
        let route_len = |pts: &[Xy]| pts.windows(2).map(|w| dist(w[0], w[1])).sum::<f64>();
        let mut participants = Vec::new();
        // (departure, arrival, route, first node, last node) of every walk
        let mut trips: Vec<(i64, i64, Vec<Xy>, NodeIndex, NodeIndex)> = Vec::new();
        for pi in 0..self.n_pedestrians {
            let resting_bpm = uniform(rng, self.feedback.resting_bpm);
            let mut traj = Trajectory::new(false);
            let mut walk_to = |traj: &mut Trajectory, rng: &mut ChaCha8Rng, depart: i64, a: NodeIndex, b: NodeIndex| {
                let pts = net.route_nodes(a, b).expect("reachable");
                let depart = depart.max(traj.end_time().map_or(i64::MIN, |t| t + 1_000));
                let offset = uniform(rng, (-self.pedestrian_offset_m, self.pedestrian_offset_m));
                let arrive = traj.follow(depart, &pts, walk, offset);
                trips.push((depart, arrive, pts, a, b));
            };
            for day_meetings in &meetings {
                let mut chosen: Vec<(usize, i64, i64)> = Vec::new();
                let mut busy_until = i64::MIN;
                for &(poi, start, end) in day_meetings {
                    let u: f64 = rng.gen();
                    let p = (self.attendance * schedule[poi].magnitude / mean_mag).min(1.0);
                    if start >= busy_until.saturating_add(600_000) && u < p {
                        chosen.push((poi, start, end));
                        busy_until = end;
                    }
                }
                if chosen.is_empty() {
                    continue;
                }
                let mut node = poi_node[generators[gen_pick.sample(rng)]];
                let mut prev_end: Option<i64> = None;
                for &(poi, start, end) in &chosen {
                    let target = poi_node[poi];
                    if target != node {
                        let travel = (route_len(&net.route_nodes(node, target).expect("reachable")) / walk * 1000.0) as i64;
                        let depart = match prev_end {
                            None => start - travel - rng.gen_range(120_000..600_000),
                            Some(e) => (e + rng.gen_range(0..180_000)).max(start - travel - rng.gen_range(60_000..480_000)),
                        };
                        walk_to(&mut traj, rng, depart, node, target);
                    }
                    node = target;
                    prev_end = Some(end);
                }
                let exit = poi_node[generators[gen_pick.sample(rng)]];
                if exit != node {
                    let depart = prev_end.unwrap() + rng.gen_range(0..300_000);
                    walk_to(&mut traj, rng, depart, node, exit);
                }
            }
            participants.push(Participant {
                id: participant_id(pi, self.n_pedestrians),
                traj,
                resting_bpm,
            });
        }

        let mix = &self.provider_mix;
        let providers = [Provider::Bird, Provider::Lime, Provider::BlueDuck];
        let provider_pick = WeightedIndex::new([mix.bird, mix.lime, mix.blue_duck]).expect("validated weights");
        let n_parked = (self.parked_fraction * self.n_scooters as f64).round() as usize;
        struct Fleet {
            provider: Provider,
            spot: Spot,
            pos: Xy,
            t: i64,
            traj: Trajectory,
        }
        let mut fleet: Vec<Fleet> = (0..self.n_scooters)
            .map(|_| {
                let provider = providers[provider_pick.sample(rng)];
                let spot = random_spot(rng, self.hotspot.parked_share, &hotspot_list);
                let pos = net.offset_point(spot, parked_offset(rng, spot.seg));
                Fleet {
                    provider,
                    spot,
                    pos,
                    t: sim_start,
                    traj: Trajectory::new(true),
                }
            })
            .collect();

        enum Job {
            // scooter index, poi the ride heads for
            Ride(usize, Option<usize>),
            // route to ride, its end node, speed (m/s), lateral offset
            Pass(Vec<Xy>, NodeIndex, f64, f64),
        }
        let mut jobs: Vec<(i64, Job)> = Vec::new();
        let rides = Poisson::new(self.rides_per_day.max(1e-9)).unwrap();
        for k in n_parked..self.n_scooters {
            for (d, date) in days.iter().enumerate() {
                let n = if self.rides_per_day > 0.0 { rides.sample(rng) as usize } else { 0 };
                for _ in 0..n {
                    match meetings[d].choose(rng) {
                        Some(&(poi, start, _)) if rng.gen_bool(self.hotspot.ride_share) => {
                            jobs.push((start - rng.gen_range(180_000..900_000), Job::Ride(k, Some(poi))));
                        }
                        _ => {
                            let a = local_ms(tz, *date, NaiveTime::from_hms_opt(7, 0, 0).unwrap());
                            let b = local_ms(tz, *date, NaiveTime::from_hms_opt(21, 0, 0).unwrap());
                            jobs.push((rng.gen_range(a..b), Job::Ride(k, None)));
                        }
                    }
                }
            }
        }
        if n_parked < self.n_scooters {
            for (depart, arrive, pts, a, b) in &trips {
                if !rng.gen_bool(self.passing.trip_share) {
                    continue;
                }
                let speed = uniform(rng, self.riding_speed_mph) * MPH_TO_MPS;
                let meet = depart + ((arrive - depart) as f64 * rng.gen_range(0.05..0.5)) as i64;
                let walked = walk * (meet - depart) as f64 / 1000.0;
                let len = route_len(pts);
                let (route, end, ride_m) = if rng.gen_bool(self.passing.behind_share) {
                    (pts.clone(), *b, walked)
                } else {
                    (pts.iter().rev().copied().collect(), *a, len - walked)
                };
                let mut at = pts[0];
                let mut left = walked;
                for w in pts.windows(2) {
                    let l = dist(w[0], w[1]);
                    if left <= l {
                        let f = if l > 0.0 { left / l } else { 0.0 };
                        at = (w[0].0 + (w[1].0 - w[0].0) * f, w[0].1 + (w[1].1 - w[0].1) * f);
                        break;
                    }
                    left -= l;
                    at = w[1];
                }
                let offset = if hotspots.contains(&net.nearest_segment(at)) {
                    uniform(rng, (-self.riding_offset_m, self.riding_offset_m))
                } else {
                    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    side * uniform(rng, self.hotspot.wide_pass_offset_m)
                };
                jobs.push((meet - (ride_m / speed * 1000.0) as i64, Job::Pass(route, end, speed, offset)));
            }
        }
        jobs.sort_by_key(|j| j.0);

        for (start, job) in jobs {
            match job {
                Job::Ride(k, poi) => {
                    let f = &mut fleet[k];
                    if start < f.t + 60_000 {
                        continue;
                    }
                    let dest = match poi {
                        Some(p) if !hotspot_of[p].is_empty() => random_spot(rng, 1.0, &hotspot_of[p]),
                        _ => random_spot(rng, 0.0, &[]),
                    };
                    let speed = uniform(rng, self.riding_speed_mph) * MPH_TO_MPS;
                    let offset = uniform(rng, (-self.riding_offset_m, self.riding_offset_m));
                    let park = parked_offset(rng, dest.seg);
                    let Some(points) = net.route_spots(f.spot, dest) else { continue };
                    f.traj.hold(f.t, start, f.pos);
                    f.t = f.traj.follow(start, &points, speed, offset);
                    f.spot = dest;
                    f.pos = net.offset_point(dest, park);
                }
                Job::Pass(route, end, speed, offset) => {
                    let first = net.node_spot(net.nearest_node(route[0]));
                    // the first free scooter that can reach the route start in time
                    let mut order: Vec<usize> = (n_parked..self.n_scooters).collect();
                    order.shuffle(rng);
                    for k in order {
                        let f = &mut fleet[k];
                        let Some(approach) = net.route_spots(f.spot, first) else { continue };
                        let lead = (route_len(&approach) / speed * 1000.0) as i64 + 1_000;
                        if start - lead < f.t + 60_000 {
                            continue;
                        }
                        f.traj.hold(f.t, start - lead, f.pos);
                        let t = f.traj.follow(start - lead, &approach, speed, offset);
                        f.traj.hold(t, start, f.traj.last_position().unwrap_or(f.pos));
                        f.t = f.traj.follow(start, &route, speed, offset);
                        f.spot = net.node_spot(end);
                        f.pos = net.offset_point(f.spot, parked_offset(rng, f.spot.seg));
                        let t = f.t;
                        f.traj.push(Leg { t0: t, t1: t + 5_000, p0: f.traj.last_position().unwrap_or(f.pos), p1: f.pos });
                        f.t = t + 5_000;
                        break;
                    }
                }
            }
        }
        let mut used = HashSet::new();
        let mut devices = Vec::new();
        for mut f in fleet {
            f.traj.hold(f.t, sim_end.max(f.t + 1), f.pos);
            devices.push(self.make_device(rng, &mut used, f.provider, None, f.traj));
        }
        for _ in 0..self.n_distractors {
            let poi = if attractors.is_empty() { 0 } else { *attractors.choose(rng).unwrap() };
            let base = schedule.get(poi).map(|p| net.to_xy(p.location)).unwrap_or((0.0, 0.0));
            let p = (base.0 + rng.gen_range(-5.0..5.0), base.1 + rng.gen_range(-5.0..5.0));
            let mut traj = Trajectory::new(true);
            traj.hold(sim_start, sim_end, p);
            devices.push(self.make_device(rng, &mut used, Provider::Unknown, None, traj));
        }
        Ok(World {
            origin,
            participants,
            devices,
            schedule,
            network_lines,
        })
    }
}

struct TruthRun {
    participant: usize,
    device: usize,
    start_ms: i64,
    end_ms: i64,
    min_ft: f64,
}

/// Capture and truth for one (participant, device) pair.
fn evaluate_pair(
    cfg: &SimConfig,
    world: &World,
    pi: usize,
    di: usize,
    coarse: &[(i64, Xy)],
    spans: &[(i64, i64)],
    out: &mut Vec<BleReception>,
    truth: &mut Vec<TruthRun>,
) {
    let p = &world.participants[pi];
    let dev = &world.devices[di];
    let cutoff_m = cfg.reception.cutoff_m();
    let margin_m = 2.0 * (cfg.riding_speed_mph.1 + cfg.walking_speed_mph) * MPH_TO_MPS;
    let truth_m = TRUTH_DISTANCE_FT / FEET_PER_METER;

    let mut ranges: Vec<(i64, i64)> = Vec::new();
    for &(t, pp) in coarse {
        let Some(dp) = dev.traj.position(t) else { continue };
        if dist(pp, dp) <= cutoff_m + margin_m {
            let span = spans[spans.partition_point(|s| s.1 < t)];
            let (a, b) = ((t - 1000).max(span.0), (t + 1000).min(span.1));
            match ranges.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => ranges.push((a, b)),
            }
        }
    }
    if ranges.is_empty() {
        return;
    }

    let mut rng = pair_rng(cfg.seed, pi, di);
    let rssi = RssiModel {
        one_foot_db: dev.one_foot_db,
        exponent: cfg.path_loss_exponent,
        sigma_db: cfg.rssi_noise_sigma_db,
    };
    let unit = Normal::new(0.0, 1.0).unwrap();
    let ad_ticks = cfg.ad_ticks();
    let mut run: Option<(i64, i64, f64)> = None;
    let close_run = |run: &mut Option<(i64, i64, f64)>, truth: &mut Vec<TruthRun>| {
        if let Some((k0, k1, min_m)) = run.take() {
            if (k1 - k0 + 1) * TICK_MS >= TRUTH_MIN_DURATION_MS {
                truth.push(TruthRun {
                    participant: pi,
                    device: di,
                    start_ms: k0 * TICK_MS,
                    end_ms: k1 * TICK_MS,
                    min_ft: min_m * FEET_PER_METER,
                });
            }
        }
    };
    for (a, b) in ranges {
        let k_lo = a.div_euclid(TICK_MS) + i64::from(a.rem_euclid(TICK_MS) != 0);
        let k_hi = b.div_euclid(TICK_MS);
        for k in k_lo..=k_hi {
            let t = k * TICK_MS;
            let (Some(pp), Some(dp)) = (p.traj.position(t), dev.traj.position(t)) else {
                close_run(&mut run, truth);
                continue;
            };
            let d_m = dist(pp, dp);
            if dev.scooter {
                if d_m <= truth_m {
                    run = match run {
                        Some((k0, k1, m)) if k1 + 1 == k => Some((k0, k, m.min(d_m))),
                        other => {
                            let mut other = other;
                            close_run(&mut other, truth);
                            Some((k, k, d_m))
                        }
                    };
                } else {
                    close_run(&mut run, truth);
                }
            }
            if (k - dev.phase_ticks).rem_euclid(ad_ticks) != 0 {
                continue;
            }
            // every advertisement consumes the same draws, received or not
            let u: f64 = rng.gen();
            let d_ft = d_m * FEET_PER_METER;
            let rssi_db = rssi.sample(d_ft, &mut rng);
            let (gx, gy) = (unit.sample(&mut rng), unit.sample(&mut rng));
            let hr = p.resting_bpm + cfg.feedback.heart_rate_sigma_bpm * unit.sample(&mut rng);
            if d_ft > cfg.reception.cutoff_ft || u >= cfg.reception.probability(d_ft) {
                continue;
            }
            let fix = world_fix(world, (pp.0 + gx * cfg.gps_sigma_m, pp.1 + gy * cfg.gps_sigma_m), cfg.gps_sigma_m);
            out.push(BleReception {
                timestamp: from_epoch_ms(t, cfg.timezone),
                device_id: dev.id.clone(),
                payload: dev.payload.clone(),
                rssi_db,
                receiver_id: p.id.clone(),
                gps: Some(fix),
                heart_rate_bpm: Some(round_to(hr.clamp(30.0, 240.0), 1)),
            });
        }
        close_run(&mut run, truth);
    }
}

fn world_fix(world: &World, p: Xy, sigma: f64) -> GpsFix {
    let ll = crate::geo::from_local_xy(world.origin, p.0, p.1);
    GpsFix {
        lat: round_to(ll.lat, 7),
        lon: round_to(ll.lon, 7),
        accuracy_m: Some(round_to((2.0 * sigma).max(1.0), 1)),
    }
}

fn unit_vec(v: Xy) -> Option<Xy> {
    let n = (v.0 * v.0 + v.1 * v.1).sqrt();
    (n > 0.1).then(|| (v.0 / n, v.1 / n))
}

fn make_feedback(cfg: &SimConfig, world: &World, truth: &[TruthRun]) -> Vec<FeedbackRecord> {
    let mut rng = pair_rng(cfg.seed, usize::MAX, usize::MAX);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut gate = PromptGate::new(Duration::seconds(cfg.feedback.prompt_interval_s));
    let mut order: Vec<&TruthRun> = truth.iter().collect();
    order.sort_by_key(|t| (t.start_ms, t.participant, t.device));
    let mut out = Vec::new();
    for t in order {
        let p = &world.participants[t.participant];
        let dev = &world.devices[t.device];
        let answer: f64 = rng.gen();
        let delay_s = round_to(rng.gen_range(2.0..crate::feedback::ANSWER_TIMEOUT_S), 1);
        let (gx, gy) = (unit.sample(&mut rng), unit.sample(&mut rng));
        let hr_noise = unit.sample(&mut rng);
        if !gate.offer(&p.id, from_epoch_ms(t.start_ms, cfg.timezone)) || answer >= cfg.feedback.fraction {
            continue;
        }
        let pp = p.traj.position(t.start_ms).expect("present during truth");
        let dp = dev.traj.position(t.start_ms).expect("device always present");
        let v_dev = dev.traj.velocity(t.start_ms);
        let moving = unit_vec(v_dev).is_some() && (v_dev.0.hypot(v_dev.1)) > 1.0;
        let rel = (dp.0 - pp.0, dp.1 - pp.1);
        let (q_in_front, q_toward) = if moving {
            let front = unit_vec(p.traj.velocity(t.start_ms)).map(|h| rel.0 * h.0 + rel.1 * h.1 > 0.0);
            (front, Some(-(v_dev.0 * rel.0 + v_dev.1 * rel.1) > 0.0))
        } else {
            (None, None)
        };
        let answered_ms = t.start_ms + (delay_s * 1000.0) as i64;
        let here = p.traj.position(answered_ms).unwrap_or(pp);
        out.push(FeedbackRecord {
            participant_id: p.id.clone(),
            timestamp: from_epoch_ms(answered_ms, cfg.timezone),
            gps: world_fix(world, (here.0 + gx * cfg.gps_sigma_m, here.1 + gy * cfg.gps_sigma_m), cfg.gps_sigma_m),
            provider: dev.provider,
            q_moving: moving,
            q_in_front,
            q_toward,
            heart_rate_bpm: Some(p.resting_bpm + cfg.feedback.heart_rate_sigma_bpm * hr_noise),
            answered_within_s: delay_s,
        });
    }
    let moving: Vec<usize> = (0..out.len()).filter(|&i| out[i].q_moving).collect();
    let n_startle = (cfg.feedback.startle_fraction * moving.len() as f64).round() as usize;
    for k in rand::seq::index::sample(&mut rng, moving.len(), n_startle) {
        if let Some(hr) = out[moving[k]].heart_rate_bpm.as_mut() {
            *hr += cfg.feedback.startle_bpm;
        }
    }
    for r in &mut out {
        r.heart_rate_bpm = r.heart_rate_bpm.map(|h| round_to(h.clamp(30.0, 240.0), 1));
    }
    out.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.participant_id.cmp(&b.participant_id)));
    out
}

/// Runs the configured scenario. Deterministic for a given config.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = match &cfg.scripted {
        Some(script) => cfg.scripted_world(script, &mut rng),
        None => cfg.campus_world(&mut rng)?,
    };

    let mut receptions = Vec::new();
    let mut runs = Vec::new();
    for (pi, p) in world.participants.iter().enumerate() {
        let spans = p.traj.spans();
        let mut coarse = Vec::new();
        for &(a, b) in &spans {
            let mut t = a;
            loop {
                coarse.push((t, p.traj.position(t).expect("inside span")));
                if t == b {
                    break;
                }
                t = (t + 1000).min(b);
            }
        }
        let mut mine = Vec::new();
        for di in 0..world.devices.len() {
            evaluate_pair(cfg, &world, pi, di, &coarse, &spans, &mut mine, &mut runs);
        }
        mine.sort_by(|a: &BleReception, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.device_id.cmp(&b.device_id)));
        receptions.extend(mine);
    }

    let feedback = make_feedback(cfg, &world, &runs);
    runs.sort_by(|a, b| {
        (a.participant, a.start_ms)
            .cmp(&(b.participant, b.start_ms))
            .then_with(|| world.devices[a.device].id.cmp(&world.devices[b.device].id))
    });
    let truth: Vec<GroundTruthEncounter> = runs
        .iter()
        .map(|r| GroundTruthEncounter {
            participant_id: world.participants[r.participant].id.clone(),
            device_id: world.devices[r.device].id.clone(),
            start: from_epoch_ms(r.start_ms, cfg.timezone),
            end: from_epoch_ms(r.end_ms, cfg.timezone),
            min_distance_ft: round_to(r.min_ft, 2),
        })
        .collect();

    let scooters = world.devices.iter().filter(|d| d.scooter).count();
    let summary = SimSummary {
        participants: world.participants.len(),
        scooters,
        distractors: world.devices.len() - scooters,
        receptions: receptions.len(),
        truth_encounters: truth.len(),
        feedback_records: feedback.len(),
    };
    Ok(SimOutput {
        receptions,
        feedback,
        truth,
        schedule: world.schedule,
        network_lines: world.network_lines,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(SimConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn slow_advertising_rejected() {
        let cfg = SimConfig {
            advertisement_interval_s: 0.3,
            ..SimConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(SimError::Config(_))));
        let cfg = SimConfig {
            advertisement_interval_s: 0.12,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_scooters_means_nothing_to_hear() {
        let cfg = SimConfig {
            n_scooters: 0,
            n_distractors: 0,
            n_pedestrians: 3,
            duration_days: 1,
            ..SimConfig::default()
        };
        let out = simulate(&cfg).unwrap();
        assert!(out.receptions.is_empty());
        assert!(out.truth.is_empty());
        assert!(out.feedback.is_empty());
    }

    #[test]
    fn participant_ids_are_padded() {
        assert_eq!(participant_id(0, 24), "P01");
        assert_eq!(participant_id(99, 150), "P100");
        assert_eq!(participant_id(4, 150), "P005");
    }
}
