//! Run configuration shared by the command-line driver and the reports it writes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dnls::{reference_sigma, DnlsConfig};
use crate::fourier::AnalyticityWindow;
use crate::kam::{KamConfig, ScheduleSeeds};
use crate::measure::{sample_sigma, ParameterPoint};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Tolerances asserted by the driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative residual of every linear solve.
    pub residual: f64,
    /// Relative deviation from the dense oracle.
    pub oracle: f64,
    /// Safety factor in `ε_{v+1} ≤ factor·ε_v^{5/4}`.
    pub contraction_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { residual: 1e-9, oracle: 1e-8, contraction_factor: 10.0 }
    }
}

/// Every seed and cap of a run. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub s0: f64,
    /// Target size of the initial perturbation; the radius is calibrated to it.
    pub eps0: f64,
    pub rho0: f64,
    pub m0: f64,
    pub exp: f64,
    pub jmax: i32,
    pub k_check: u32,
    pub degree_cap: u32,
    pub harmonic_cap: u32,
    /// `None` selects the reference point `σ_j = 0.3/j`, `0.6/|j|`.
    pub sigma_seed: Option<u64>,
    /// Starting radius of the calibration.
    pub r_start: f64,
    /// New actions are `i_factor·r²`.
    pub i_factor: f64,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seeds = ScheduleSeeds::default();
        Self {
            s0: seeds.s0,
            eps0: seeds.eps0,
            rho0: seeds.rho0,
            m0: seeds.m0,
            exp: seeds.exp,
            jmax: 8,
            k_check: 4,
            degree_cap: 4,
            harmonic_cap: 4,
            sigma_seed: None,
            r_start: 0.002,
            i_factor: 2.0,
            steps: 3,
            samples: 100_000,
            seed: 1,
            tolerances: Tolerances::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let t = &self.tolerances;
        if !(t.residual > 0.0 && t.oracle > 0.0 && t.contraction_factor > 0.0) {
            return bad(format!("tolerances must be positive: {t:?}"));
        }
        for (name, v) in [("s0", self.s0), ("eps0", self.eps0), ("rho0", self.rho0), ("m0", self.m0), ("exp", self.exp)] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.jmax < 2 {
            return bad(format!("jmax must be at least 2, got {}", self.jmax));
        }
        if self.degree_cap < 2 {
            return bad(format!("degree_cap must be at least 2, got {}", self.degree_cap));
        }
        if !(self.r_start > 0.0) || !(self.i_factor > 1.0) {
            return bad(format!("need r_start > 0 and i_factor > 1, got {} and {}", self.r_start, self.i_factor));
        }
        if self.samples == 0 {
            return bad("samples must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn sigma(&self) -> Result<ParameterPoint, ConfigError> {
        match self.sigma_seed {
            None => Ok(reference_sigma(self.jmax)),
            Some(seed) => sample_sigma(seed, self.jmax).map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }

    /// DNLS setup at radius `r` with actions `i_factor·r²`.
    pub fn dnls(&self, r: f64) -> Result<DnlsConfig, ConfigError> {
        let window = AnalyticityWindow::new(self.s0, r, 0.0, 2.0).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(DnlsConfig {
            jmax: self.jmax,
            sigma: self.sigma()?,
            i_plus: self.i_factor * r * r,
            i_minus: self.i_factor * r * r,
            window,
            degree_cap: self.degree_cap,
            harmonic_cap: self.harmonic_cap,
        })
    }

    /// Iteration settings for a run started at radius `r` with measured size `eps0`.
    pub fn kam(&self, r: f64, eps0: f64) -> KamConfig {
        let mut k = KamConfig::default();
        k.seeds.s0 = self.s0;
        k.seeds.eps0 = eps0;
        k.seeds.rho0 = self.rho0;
        k.seeds.m0 = self.m0;
        k.seeds.exp = self.exp;
        k.seeds.r0 = r;
        k.beta_scale = self.m0 / 25.0;
        k.i_factor = self.i_factor;
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        let mut other = cfg.clone();
        other.seed = 2;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn partial_files_take_defaults_and_unknown_fields_fail() {
        let cfg: RunConfig = serde_json::from_str(r#"{"jmax": 10, "tolerances": {"oracle": 1e-9}}"#).unwrap();
        assert_eq!(cfg.jmax, 10);
        assert_eq!(cfg.tolerances.oracle, 1e-9);
        assert_eq!(cfg.tolerances.residual, 1e-9);
        assert!(serde_json::from_str::<RunConfig>(r#"{"jmx": 10}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.tolerances.residual = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.jmax = 1;
        assert!(cfg.validate().is_err());
    }
}
