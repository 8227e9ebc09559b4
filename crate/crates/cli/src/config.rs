//! Pipeline configuration: one TOML file drives every stage.

use std::path::{Path, PathBuf};

use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use scootsafe_core::ble::ProviderConfig;
use scootsafe_core::detector::DetectorParams;
use scootsafe_core::feedback::ProfileParams;
use scootsafe_core::geo::DEFAULT_SNAP_DISTANCE_M;
use scootsafe_core::metrics::MetricsConfig;
use scootsafe_core::sim::SimConfig;

use crate::CliError;

/// Input locations. Each one left unset falls back to the file of the same
/// role inside the output directory, which is where `simulate` puts it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub network: Option<PathBuf>,
    pub receptions: Option<PathBuf>,
    pub feedback: Option<PathBuf>,
    pub schedule: Option<PathBuf>,
    pub campuses: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub encounters: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub snap_distance_m: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            snap_distance_m: DEFAULT_SNAP_DISTANCE_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    /// Applies to detection day boundaries, binning and the simulator clock.
    pub timezone: Tz,
    /// Overrides `sim.seed` when set.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub detector: DetectorParams,
    pub providers: ProviderConfig,
    pub profile: ProfileParams,
    pub metrics: MetricsConfig,
    pub analysis: AnalysisConfig,
    pub sim: SimConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            out_dir: PathBuf::from("out"),
            timezone: chrono_tz::America::Chicago,
            seed: None,
            paths: Paths::default(),
            detector: DetectorParams::default(),
            providers: ProviderConfig::default(),
            profile: ProfileParams::default(),
            metrics: MetricsConfig::default(),
            analysis: AnalysisConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub timezone: Option<String>,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Loads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        let p = &mut self.paths;
        for slot in [
            &mut p.network,
            &mut p.receptions,
            &mut p.feedback,
            &mut p.schedule,
            &mut p.campuses,
            &mut p.truth,
            &mut p.encounters,
            &mut self.sim.network,
            &mut self.sim.demand,
        ] {
            if let Some(path) = slot.as_mut() {
                fix(path);
            }
        }
    }

    /// Applies flag overrides and propagates the shared timezone and seed into
    /// the stage configs, then validates.
    pub fn finish(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(dir) = &o.out_dir {
            self.out_dir = dir.clone();
        }
        if let Some(tz) = &o.timezone {
            self.timezone = scootsafe_core::time::parse_timezone(tz).map_err(CliError::Config)?;
        }
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if let Some(seed) = self.seed {
            self.sim.seed = seed;
        }
        self.detector.timezone = self.timezone;
        self.sim.timezone = self.timezone;
        if self.sim.network.is_none() {
            self.sim.network = self.paths.network.clone();
        }
        if self.sim.demand.is_none() {
            self.sim.demand = self.paths.schedule.clone();
        }
        self.detector.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.providers.compile().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.analysis.snap_distance_m > 0.0) {
            return Err(CliError::Config("analysis.snap_distance_m must be positive".into()));
        }
        Ok(self)
    }

    fn pick(&self, configured: &Option<PathBuf>, file: &str) -> PathBuf {
        configured.clone().unwrap_or_else(|| self.out_dir.join(file))
    }

    pub fn network_path(&self) -> PathBuf {
        self.pick(&self.paths.network, "network.geojson")
    }

    pub fn receptions_path(&self) -> PathBuf {
        self.pick(&self.paths.receptions, "receptions.jsonl")
    }

    pub fn feedback_path(&self) -> PathBuf {
        self.pick(&self.paths.feedback, "feedback.csv")
    }

    pub fn schedule_path(&self) -> PathBuf {
        self.pick(&self.paths.schedule, "schedule.csv")
    }

    pub fn truth_path(&self) -> PathBuf {
        self.pick(&self.paths.truth, "truth.csv")
    }

    pub fn encounters_path(&self) -> PathBuf {
        self.pick(&self.paths.encounters, "encounters.csv")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg = PipelineConfig::from_toml_str(
            r#"
            out_dir = "run"
            [paths]
            network = "data/net.geojson"
            campuses = "/abs/campus.geojson"
            "#,
        )
        .unwrap();
        cfg.rebase(Path::new("/work/study"));
        assert_eq!(cfg.out_dir, PathBuf::from("/work/study/run"));
        assert_eq!(cfg.paths.network, Some(PathBuf::from("/work/study/data/net.geojson")));
        assert_eq!(cfg.paths.campuses, Some(PathBuf::from("/abs/campus.geojson")));
        let cfg = cfg.finish(&Overrides::default()).unwrap();
        assert_eq!(cfg.sim.network, cfg.paths.network);
        assert_eq!(cfg.receptions_path(), PathBuf::from("/work/study/run/receptions.jsonl"));
    }

    #[test]
    fn flags_win_over_file() {
        let cfg = PipelineConfig::from_toml_str("seed = 5\ntimezone = \"America/Chicago\"")
            .unwrap()
            .finish(&Overrides {
                out_dir: Some("elsewhere".into()),
                seed: Some(9),
                timezone: Some("America/Denver".into()),
            })
            .unwrap();
        assert_eq!(cfg.sim.seed, 9);
        assert_eq!(cfg.detector.timezone, chrono_tz::America::Denver);
        assert_eq!(cfg.sim.timezone, chrono_tz::America::Denver);
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(matches!(PipelineConfig::from_toml_str("timezone = \"Mars/Olympus\""), Err(CliError::Config(_))));
        assert!(matches!(PipelineConfig::from_toml_str("bogus = 1"), Err(CliError::Config(_))));
        let bad_tz = PipelineConfig::default().finish(&Overrides {
            timezone: Some("Nowhere/Land".into()),
            ..Overrides::default()
        });
        assert!(matches!(bad_tz, Err(CliError::Config(_))));
        let mut cfg = PipelineConfig::default();
        cfg.detector.min_packets_per_window = 0;
        assert!(matches!(cfg.finish(&Overrides::default()), Err(CliError::Config(_))));
    }
}
