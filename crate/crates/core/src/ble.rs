//! BLE advertisement receptions, provider fingerprinting and RSSI proximity.
//!
//! E-scooters advertise continuously. The advertising payload is a sequence of
//! AD structures (`len`, `type`, `data…`); the local-name structure usually
//! carries the operator's name or a recognisable naming convention, which is
//! what [`ProviderClassifier`] matches against. Signal strength is turned into
//! a distance with a log-distance path-loss model anchored at each provider's
//! measured one-foot RSSI.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset};
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_jsonl, write_jsonl, RecordError};

/// Bird, one foot from the stem-mounted module.
pub const BIRD_ONE_FOOT_DB: f64 = -60.5;
/// Lime, same setting.
pub const LIME_ONE_FOOT_DB: f64 = -46.25;
/// Beyond this estimated distance a reception is considered far.
pub const FAR_THRESHOLD_FT: f64 = 25.0;
pub const DEFAULT_PATH_LOSS_EXPONENT: f64 = 2.0;
pub const PATH_LOSS_EXPONENT_RANGE: (f64, f64) = (1.5, 4.0);

const AD_TYPE_SHORT_NAME: u8 = 0x08;
const AD_TYPE_COMPLETE_NAME: u8 = 0x09;

#[derive(Debug, Error, PartialEq)]
pub enum BleError {
    #[error("rssi must be negative, got {0} dB")]
    NonNegativeRssi(f64),
    #[error("path-loss exponent {0} outside [1.5, 4.0]")]
    ExponentOutOfRange(f64),
    #[error("provider rule {index}: invalid regex `{pattern}`: {message}")]
    BadRegex {
        index: usize,
        pattern: String,
        message: String,
    },
    #[error("provider rule config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    Bird,
    Lime,
    BlueDuck,
    Unknown,
}

impl Provider {
    pub const ALL: [Provider; 4] = [Provider::Bird, Provider::Lime, Provider::BlueDuck, Provider::Unknown];

    pub fn as_str(&self) -> &'static str {
        match self {
            Provider::Bird => "bird",
            Provider::Lime => "lime",
            Provider::BlueDuck => "blue_duck",
            Provider::Unknown => "unknown",
        }
    }

    /// Measured one-foot RSSI, where one is known.
    pub fn default_one_foot_db(&self) -> Option<f64> {
        match self {
            Provider::Bird => Some(BIRD_ONE_FOOT_DB),
            Provider::Lime => Some(LIME_ONE_FOOT_DB),
            Provider::BlueDuck | Provider::Unknown => None,
        }
    }

    /// Providers retained for the safety analysis.
    pub fn is_analyzed(&self) -> bool {
        matches!(self, Provider::Bird | Provider::Lime)
    }
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provider {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "bird" => Ok(Provider::Bird),
            "lime" => Ok(Provider::Lime),
            "blue_duck" | "blueduck" => Ok(Provider::BlueDuck),
            "unknown" | "" => Ok(Provider::Unknown),
            other => Err(format!("unknown provider `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_m: Option<f64>,
}

impl GpsFix {
    pub fn new(lat: f64, lon: f64) -> Self {
        GpsFix { lat, lon, accuracy_m: None }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(format!("latitude {} outside [-90, 90]", self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(format!("longitude {} outside [-180, 180]", self.lon));
        }
        Ok(())
    }
}

/// One captured advertisement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleReception {
    #[serde(with = "crate::time::iso_ms")]
    pub timestamp: DateTime<FixedOffset>,
    pub device_id: String,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub rssi_db: f64,
    pub receiver_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gps: Option<GpsFix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heart_rate_bpm: Option<f64>,
}

impl BleReception {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rssi_db < 0.0) {
            return Err(format!("rssi_db must be negative, got {}", self.rssi_db));
        }
        if let Some(gps) = &self.gps {
            gps.validate()?;
        }
        if let Some(hr) = self.heart_rate_bpm {
            if !(hr > 25.0 && hr < 250.0) {
                return Err(format!("heart_rate_bpm {hr} outside (25, 250)"));
            }
        }
        if self.device_id.is_empty() {
            return Err("empty device_id".into());
        }
        Ok(())
    }
}

pub fn read_receptions_jsonl<R: BufRead>(reader: R) -> Result<Vec<BleReception>, RecordError> {
    read_jsonl(reader, BleReception::validate)
}

pub fn write_receptions_jsonl<W: Write>(w: W, receptions: &[BleReception]) -> Result<(), RecordError> {
    write_jsonl(w, receptions)
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let raw = String::deserialize(d)?;
        hex::decode(raw.trim()).map_err(serde::de::Error::custom)
    }
}

/// One AD structure inside an advertising payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdStructure<'a> {
    pub ad_type: u8,
    pub data: &'a [u8],
}

/// Splits a payload into AD structures. `None` if a length byte overruns the buffer.
pub fn parse_ad_structures(payload: &[u8]) -> Option<Vec<AdStructure<'_>>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < payload.len() {
        let len = payload[i] as usize;
        if len == 0 {
            // zero-length structure marks early termination (padding)
            break;
        }
        let end = i + 1 + len;
        if end > payload.len() {
            return None;
        }
        out.push(AdStructure {
            ad_type: payload[i + 1],
            data: &payload[i + 2..end],
        });
        i = end;
    }
    Some(out)
}

/// Complete local name if present, else the shortened one.
pub fn local_name(payload: &[u8]) -> Option<String> {
    let ads = parse_ad_structures(payload)?;
    let pick = |t: u8| ads.iter().find(|ad| ad.ad_type == t);
    let ad = pick(AD_TYPE_COMPLETE_NAME).or_else(|| pick(AD_TYPE_SHORT_NAME))?;
    Some(String::from_utf8_lossy(ad.data).into_owned())
}

/// Builds a payload carrying the flags structure, a complete local name and
/// optional manufacturer-specific data.
pub fn build_payload(name: &str, manufacturer: Option<(u16, &[u8])>) -> Vec<u8> {
    let mut out = vec![0x02, 0x01, 0x06];
    let name = name.as_bytes();
    let name = &name[..name.len().min(29)];
    out.push(name.len() as u8 + 1);
    out.push(AD_TYPE_COMPLETE_NAME);
    out.extend_from_slice(name);
    if let Some((company, data)) = manufacturer {
        let data = &data[..data.len().min(26)];
        out.push(data.len() as u8 + 3);
        out.push(0xFF);
        out.extend_from_slice(&company.to_le_bytes());
        out.extend_from_slice(data);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Substring,
    Regex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRule {
    pub provider: Provider,
    #[serde(rename = "match")]
    pub kind: MatchKind,
    pub pattern: String,
}

/// Per-provider one-foot RSSI. `fallback_db` is used where a provider has none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Baselines {
    pub bird: Option<f64>,
    pub lime: Option<f64>,
    pub blue_duck: Option<f64>,
    pub fallback_db: f64,
}

impl Default for Baselines {
    fn default() -> Self {
        Baselines {
            bird: Provider::Bird.default_one_foot_db(),
            lime: Provider::Lime.default_one_foot_db(),
            blue_duck: None,
            fallback_db: BIRD_ONE_FOOT_DB,
        }
    }
}

impl Baselines {
    pub fn one_foot_db(&self, provider: Provider) -> Option<f64> {
        match provider {
            Provider::Bird => self.bird,
            Provider::Lime => self.lime,
            Provider::BlueDuck => self.blue_duck,
            Provider::Unknown => None,
        }
    }

    /// Configured baseline or the fallback.
    pub fn one_foot_db_or_fallback(&self, provider: Provider) -> f64 {
        self.one_foot_db(provider).unwrap_or(self.fallback_db)
    }
}

/// The provider rule file.
///
/// ```toml
/// [baselines]
/// bird = -60.5
/// lime = -46.25
/// fallback_db = -60.5
///
/// [[rule]]
/// provider = "bird"
/// match = "regex"
/// pattern = "^Bird-[A-Z0-9]{4}$"
///
/// [[rule]]
/// provider = "lime"
/// match = "substring"
/// pattern = "lime"
/// ```
///
/// Rules are tried top to bottom against the decoded local name,
/// case-insensitively; first match wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(default)]
    pub baselines: Baselines,
    #[serde(default, rename = "rule")]
    pub rules: Vec<ProviderRule>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        let rule = |provider, kind, pattern: &str| ProviderRule {
            provider,
            kind,
            pattern: pattern.to_string(),
        };
        ProviderConfig {
            baselines: Baselines::default(),
            rules: vec![
                rule(Provider::Bird, MatchKind::Regex, "^Bird-[A-Z0-9]{4}$"),
                rule(Provider::Lime, MatchKind::Substring, "lime"),
                rule(Provider::Bird, MatchKind::Substring, "bird"),
                rule(Provider::BlueDuck, MatchKind::Substring, "blueduck"),
                rule(Provider::BlueDuck, MatchKind::Substring, "blue duck"),
            ],
        }
    }
}

impl ProviderConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, BleError> {
        toml::from_str(s).map_err(|e| BleError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BleError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BleError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("provider config serializes")
    }

    pub fn compile(&self) -> Result<ProviderClassifier, BleError> {
        let rules = self
            .rules
            .iter()
            .enumerate()
            .map(|(index, rule)| {
                let matcher = match rule.kind {
                    MatchKind::Substring => Matcher::Substring(rule.pattern.to_lowercase()),
                    MatchKind::Regex => Matcher::Regex(
                        RegexBuilder::new(&rule.pattern)
                            .case_insensitive(true)
                            .build()
                            .map_err(|e| BleError::BadRegex {
                                index,
                                pattern: rule.pattern.clone(),
                                message: e.to_string(),
                            })?,
                    ),
                };
                Ok((rule.provider, matcher))
            })
            .collect::<Result<Vec<_>, BleError>>()?;
        Ok(ProviderClassifier {
            rules,
            baselines: self.baselines.clone(),
        })
    }
}

#[derive(Debug, Clone)]
enum Matcher {
    Substring(String),
    Regex(Regex),
}

impl Matcher {
    fn is_match(&self, name: &str, lowered: &str) -> bool {
        match self {
            Matcher::Substring(needle) => lowered.contains(needle.as_str()),
            Matcher::Regex(re) => re.is_match(name),
        }
    }
}

/// Compiled, ordered provider rules plus the baselines they were shipped with.
#[derive(Debug, Clone)]
pub struct ProviderClassifier {
    rules: Vec<(Provider, Matcher)>,
    baselines: Baselines,
}

impl Default for ProviderClassifier {
    fn default() -> Self {
        ProviderConfig::default().compile().expect("default rules compile")
    }
}

impl ProviderClassifier {
    pub fn classify(&self, payload: &[u8]) -> Provider {
        let Some(name) = local_name(payload) else {
            return Provider::Unknown;
        };
        let lowered = name.to_lowercase();
        self.rules
            .iter()
            .find(|(_, m)| m.is_match(&name, &lowered))
            .map(|(p, _)| *p)
            .unwrap_or(Provider::Unknown)
    }

    pub fn baselines(&self) -> &Baselines {
        &self.baselines
    }
}

/// Convenience wrapper over the default rules.
pub fn classify_provider(payload: &[u8]) -> Provider {
    ProviderClassifier::default().classify(payload)
}

/// Log-distance path-loss inversion: distance in feet at which `rssi_db` is expected.
pub fn estimate_distance_ft(rssi_db: f64, one_foot_db: f64, path_loss_exponent: f64) -> Result<f64, BleError> {
    if !(rssi_db < 0.0) {
        return Err(BleError::NonNegativeRssi(rssi_db));
    }
    let (lo, hi) = PATH_LOSS_EXPONENT_RANGE;
    if !(lo..=hi).contains(&path_loss_exponent) {
        return Err(BleError::ExponentOutOfRange(path_loss_exponent));
    }
    Ok(10f64.powf((one_foot_db - rssi_db) / (10.0 * path_loss_exponent)))
}

/// Forward model: expected RSSI at `distance_ft` (clamped to at least one foot).
pub fn expected_rssi_db(distance_ft: f64, one_foot_db: f64, path_loss_exponent: f64) -> f64 {
    one_foot_db - 10.0 * path_loss_exponent * distance_ft.max(1.0).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityClass {
    WithinOneFoot,
    Near,
    Far,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProximityEstimate {
    pub class: ProximityClass,
    pub distance_ft: f64,
    /// Set when the provider has no measured baseline and the fallback was used.
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathLossModel {
    pub baselines: Baselines,
    pub exponent: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        PathLossModel {
            baselines: Baselines::default(),
            exponent: DEFAULT_PATH_LOSS_EXPONENT,
        }
    }
}

impl PathLossModel {
    pub fn new(baselines: Baselines, exponent: f64) -> Result<Self, BleError> {
        let (lo, hi) = PATH_LOSS_EXPONENT_RANGE;
        if !(lo..=hi).contains(&exponent) {
            return Err(BleError::ExponentOutOfRange(exponent));
        }
        Ok(PathLossModel { baselines, exponent })
    }

    pub fn distance_ft(&self, rssi_db: f64, provider: Provider) -> Result<f64, BleError> {
        estimate_distance_ft(rssi_db, self.baselines.one_foot_db_or_fallback(provider), self.exponent)
    }

    pub fn proximity(&self, rssi_db: f64, provider: Provider) -> Result<ProximityEstimate, BleError> {
        let baseline = self.baselines.one_foot_db(provider);
        let distance_ft = self.distance_ft(rssi_db, provider)?;
        let class = match baseline {
            Some(b) if rssi_db >= b => ProximityClass::WithinOneFoot,
            _ if distance_ft > FAR_THRESHOLD_FT => ProximityClass::Far,
            _ => ProximityClass::Near,
        };
        Ok(ProximityEstimate {
            class,
            distance_ft,
            low_confidence: baseline.is_none(),
        })
    }
}

/// Proximity class under the default baselines and exponent.
pub fn proximity_class(rssi_db: f64, provider: Provider) -> Result<ProximityEstimate, BleError> {
    PathLossModel::default().proximity(rssi_db, provider)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn named(name: &str) -> Vec<u8> {
        build_payload(name, Some((0x0499, &[1, 2, 3, 4])))
    }

    #[test]
    fn lime_name_in_local_name_field() {
        assert_eq!(classify_provider(&named("Lime-S 0A1B2C")), Provider::Lime);
        assert_eq!(classify_provider(&named("LIMESCOOTER")), Provider::Lime);
    }

    #[test]
    fn empty_and_garbage_payloads_are_unknown() {
        assert_eq!(classify_provider(&[]), Provider::Unknown);
        // length byte overruns the buffer
        assert_eq!(classify_provider(&[0x09, 0x09, b'L', b'i']), Provider::Unknown);
        // well-formed but no name structure
        assert_eq!(classify_provider(&[0x02, 0x01, 0x06]), Provider::Unknown);
    }

    #[test]
    fn bird_regex_rule() {
        assert_eq!(classify_provider(&named("Bird-XY12")), Provider::Bird);
        assert_eq!(classify_provider(&named("JBL Flip 5")), Provider::Unknown);
    }

    #[test]
    fn rule_order_decides_overlaps() {
        let cfg = ProviderConfig::from_toml_str(
            r#"
            [[rule]]
            provider = "blue_duck"
            match = "substring"
            pattern = "scoot"

            [[rule]]
            provider = "lime"
            match = "substring"
            pattern = "lime"
            "#,
        )
        .unwrap();
        let c = cfg.compile().unwrap();
        assert_eq!(c.classify(&named("LimeScoot")), Provider::BlueDuck);
        assert_eq!(c.classify(&named("Lime")), Provider::Lime);
    }

    #[test]
    fn bad_regex_reports_rule_index() {
        let cfg = ProviderConfig {
            baselines: Baselines::default(),
            rules: vec![ProviderRule {
                provider: Provider::Bird,
                kind: MatchKind::Regex,
                pattern: "(".into(),
            }],
        };
        assert!(matches!(cfg.compile(), Err(BleError::BadRegex { index: 0, .. })));
    }

    #[test]
    fn default_config_survives_toml() {
        let cfg = ProviderConfig::default();
        let back = ProviderConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn one_foot_baselines_and_far_pass() {
        assert_eq!(proximity_class(-60.5, Provider::Bird).unwrap().class, ProximityClass::WithinOneFoot);
        assert_eq!(proximity_class(-46.25, Provider::Lime).unwrap().class, ProximityClass::WithinOneFoot);
        assert_eq!(proximity_class(-60.6, Provider::Bird).unwrap().class, ProximityClass::Near);
        assert_eq!(proximity_class(-95.0, Provider::Bird).unwrap().class, ProximityClass::Far);
    }

    #[test]
    fn unknown_provider_never_within_one_foot() {
        let est = proximity_class(-30.0, Provider::Unknown).unwrap();
        assert_eq!(est.class, ProximityClass::Near);
        assert!(est.low_confidence);
        assert!(!proximity_class(-70.0, Provider::Bird).unwrap().low_confidence);
    }

    #[test]
    fn distance_formula() {
        assert_eq!(estimate_distance_ft(-60.5, BIRD_ONE_FOOT_DB, 2.0).unwrap(), 1.0);
        assert_eq!(estimate_distance_ft(-46.25, LIME_ONE_FOOT_DB, 2.0).unwrap(), 1.0);
        assert!((estimate_distance_ft(-80.5, BIRD_ONE_FOOT_DB, 2.0).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn distance_domain_errors() {
        assert_eq!(estimate_distance_ft(0.0, -60.5, 2.0), Err(BleError::NonNegativeRssi(0.0)));
        assert_eq!(estimate_distance_ft(-70.0, -60.5, 4.5), Err(BleError::ExponentOutOfRange(4.5)));
        assert!(PathLossModel::new(Baselines::default(), 1.0).is_err());
    }

    #[test]
    fn reception_validation() {
        let mut rec = BleReception {
            timestamp: crate::time::parse_iso("2019-04-10T10:00:00.000-05:00").unwrap(),
            device_id: "d1".into(),
            payload: named("Lime"),
            rssi_db: -70.0,
            receiver_id: "P1".into(),
            gps: Some(GpsFix::new(29.58, -98.62)),
            heart_rate_bpm: Some(72.0),
        };
        assert!(rec.validate().is_ok());
        rec.rssi_db = 0.0;
        assert!(rec.validate().is_err());
        rec.rssi_db = -70.0;
        rec.heart_rate_bpm = Some(25.0);
        assert!(rec.validate().is_err());
        rec.heart_rate_bpm = None;
        rec.gps = Some(GpsFix::new(91.0, 0.0));
        assert!(rec.validate().is_err());
    }

    #[test]
    fn jsonl_reports_bad_line_number() {
        let good = r#"{"timestamp":"2019-04-10T10:00:00.000-05:00","device_id":"d","payload":"020106","rssi_db":-70.0,"receiver_id":"P1"}"#;
        let text = format!("{good}\n\n{{not json}}\n");
        let err = read_receptions_jsonl(text.as_bytes()).unwrap_err();
        assert_eq!(err.line(), Some(3));
        let ok = read_receptions_jsonl(good.as_bytes()).unwrap();
        assert_eq!(ok[0].payload, vec![2, 1, 6]);
        assert!(ok[0].gps.is_none());
    }

    proptest! {
        #[test]
        fn distance_strictly_decreasing_in_rssi(a in -120.0f64..-0.01, b in -120.0f64..-0.01, n in 1.5f64..4.0) {
            prop_assume!(a != b);
            let (stronger, weaker) = if a > b { (a, b) } else { (b, a) };
            let ds = estimate_distance_ft(stronger, BIRD_ONE_FOOT_DB, n).unwrap();
            let dw = estimate_distance_ft(weaker, BIRD_ONE_FOOT_DB, n).unwrap();
            prop_assert!(ds < dw);
        }

        #[test]
        fn within_one_foot_iff_at_or_above_baseline(rssi in -110.0f64..-1.0) {
            for p in [Provider::Bird, Provider::Lime] {
                let b = p.default_one_foot_db().unwrap();
                let est = proximity_class(rssi, p).unwrap();
                prop_assert_eq!(est.class == ProximityClass::WithinOneFoot, rssi >= b);
            }
        }

        #[test]
        fn classification_is_pure(bytes in proptest::collection::vec(any::<u8>(), 0..40)) {
            let c = ProviderClassifier::default();
            prop_assert_eq!(c.classify(&bytes), c.classify(&bytes.clone()));
        }
    }
}
