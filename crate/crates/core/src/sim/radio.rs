//! Capture probability and received signal strength.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ble::expected_rssi_db;

pub const FEET_PER_METER: f64 = 3.280_839_895;

/// Piecewise-linear capture probability: `near_p` up to `near_ft`, falling
/// linearly to `far_p` at `far_ft`, flat at `far_p` until `cutoff_ft`, then 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceptionModel {
    pub near_ft: f64,
    pub near_p: f64,
    pub far_ft: f64,
    pub far_p: f64,
    pub cutoff_ft: f64,
}

impl Default for ReceptionModel {
    fn default() -> Self {
        ReceptionModel {
            near_ft: 20.0,
            near_p: 0.95,
            far_ft: 60.0,
            far_p: 0.05,
            cutoff_ft: 150.0,
        }
    }
}

impl ReceptionModel {
    pub fn validate(&self) -> Result<(), String> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.near_p) || !unit.contains(&self.far_p) {
            return Err("reception probabilities must lie in [0, 1]".into());
        }
        if self.far_p > self.near_p {
            return Err("reception probability must not increase with distance".into());
        }
        if !(0.0 < self.near_ft && self.near_ft < self.far_ft && self.far_ft <= self.cutoff_ft) {
            return Err("reception distances must satisfy 0 < near_ft < far_ft <= cutoff_ft".into());
        }
        Ok(())
    }

    pub fn probability(&self, d_ft: f64) -> f64 {
        if d_ft <= self.near_ft {
            self.near_p
        } else if d_ft <= self.far_ft {
            let f = (d_ft - self.near_ft) / (self.far_ft - self.near_ft);
            self.near_p + (self.far_p - self.near_p) * f
        } else if d_ft <= self.cutoff_ft {
            self.far_p
        } else {
            0.0
        }
    }

    pub fn cutoff_m(&self) -> f64 {
        self.cutoff_ft / FEET_PER_METER
    }
}

/// Log-distance RSSI plus Gaussian noise clamped to ±3σ, rounded to 0.01 dB.
#[derive(Debug, Clone, Copy)]
pub struct RssiModel {
    pub one_foot_db: f64,
    pub exponent: f64,
    pub sigma_db: f64,
}

impl RssiModel {
    pub fn ceiling(&self) -> f64 {
        self.one_foot_db + 3.0 * self.sigma_db
    }

    pub fn sample<R: Rng>(&self, d_ft: f64, rng: &mut R) -> f64 {
        let noise = if self.sigma_db > 0.0 {
            Normal::new(0.0, self.sigma_db).unwrap().sample(rng)
        } else {
            0.0
        };
        let noise = noise.clamp(-3.0 * self.sigma_db, 3.0 * self.sigma_db);
        let v = expected_rssi_db(d_ft, self.one_foot_db, self.exponent) + noise;
        ((v * 100.0).round() / 100.0).min(self.ceiling())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn default_curve_points() {
        let m = ReceptionModel::default();
        assert_eq!(m.probability(0.0), 0.95);
        assert_eq!(m.probability(20.0), 0.95);
        assert!((m.probability(40.0) - 0.5).abs() < 1e-12);
        assert!((m.probability(60.0) - 0.05).abs() < 1e-12);
        assert_eq!(m.probability(100.0), 0.05);
        assert_eq!(m.probability(151.0), 0.0);
    }

    #[test]
    fn curve_is_non_increasing() {
        let m = ReceptionModel::default();
        let mut prev = 1.0;
        for i in 0..2000 {
            let p = m.probability(i as f64 * 0.1);
            assert!(p <= prev + 1e-12);
            prev = p;
        }
    }

    #[test]
    fn rssi_never_exceeds_ceiling() {
        let m = RssiModel {
            one_foot_db: -60.5,
            exponent: 2.0,
            sigma_db: 4.0,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let d = rng.gen_range(0.0..60.0);
            assert!(m.sample(d, &mut rng) <= m.ceiling());
        }
    }

    #[test]
    fn invalid_models_rejected() {
        let mut m = ReceptionModel::default();
        m.far_p = 0.99;
        assert!(m.validate().is_err());
        let mut m = ReceptionModel::default();
        m.far_ft = 10.0;
        assert!(m.validate().is_err());
    }
}
