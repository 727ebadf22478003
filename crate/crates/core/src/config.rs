//! Scenario configuration, read from TOML.

use crate::belief::FilterConfig;
use crate::dcee::DceeConfig;
use crate::driver_env::{DriveCycle, DriverGains, EnvError, SurfaceSchedule, SurfaceSegment};
use crate::plant::VehicleParams;
use crate::regulation::{AvailabilityRule, CorneringModel};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: String,
        source: toml::de::Error,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Full scheme: estimation, regulation and active learning.
    #[default]
    Tval,
    /// Estimator only; the driver is always in control.
    Passive,
    /// Estimator and gates evaluated for the record, blend weight held at 0.
    DriverOnly,
    /// Driver-only dynamics metered with the peak-force power bound.
    TvAlways,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Tval => "tval",
            Mode::Passive => "passive",
            Mode::DriverOnly => "driver-only",
            Mode::TvAlways => "tv-always",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tval" => Ok(Mode::Tval),
            "passive" => Ok(Mode::Passive),
            "driver-only" => Ok(Mode::DriverOnly),
            "tv-always" => Ok(Mode::TvAlways),
            other => Err(format!(
                "unknown mode {other:?} (expected tval, passive, driver-only or tv-always)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timing {
    /// Plant integration step, s.
    pub plant_dt: f64,
    /// Plant steps per controller tick.
    pub substeps: u32,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            plant_dt: 1e-3,
            substeps: 10,
        }
    }
}

impl Timing {
    pub fn controller_dt(&self) -> f64 {
        self.plant_dt * f64::from(self.substeps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpeedPrediction {
    /// Belief-mean one-step speed prediction.
    #[default]
    Mean,
    /// Largest one-step prediction among live particles.
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegulationConfig {
    /// Switch-off threshold, N². Defaults to `k_s2 / 400`.
    pub k_s1: Option<f64>,
    /// Switch-on threshold, N². Defaults to four times the force variance
    /// equivalent of one rear wheel-speed measurement.
    pub k_s2: Option<f64>,
    /// Blend transition span, controller ticks.
    pub delta_p: u32,
    pub availability: AvailabilityRule,
    pub availability_margin: f64,
    /// Direction the rear axle is pushed while exploring (+1 or −1).
    pub exploration_sign: f64,
    pub cornering: CorneringModel,
    pub speed_prediction: SpeedPrediction,
}

impl Default for RegulationConfig {
    fn default() -> Self {
        Self {
            k_s1: None,
            k_s2: None,
            delta_p: 100,
            availability: AvailabilityRule::default(),
            availability_margin: 0.05,
            exploration_sign: 1.0,
            cornering: CorneringModel::default(),
            speed_prediction: SpeedPrediction::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Scenario length, s.
    pub duration: f64,
    /// Drive-cycle file, relative to the configuration file.
    pub drive_cycle: PathBuf,
    /// Floor on the reference speed and the initial speed, m/s.
    #[serde(default = "default_offset")]
    pub offset_speed: f64,
    /// Regenerative braking efficiency.
    #[serde(default = "default_eta")]
    pub regen_efficiency: f64,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub dcee: DceeConfig,
    #[serde(default)]
    pub regulation: RegulationConfig,
    #[serde(default)]
    pub driver: DriverGains,
    pub surface: Vec<SurfaceSegment>,
}

fn default_seed() -> u64 {
    1
}

fn default_offset() -> f64 {
    2.0
}

fn default_eta() -> f64 {
    0.7
}

impl ScenarioConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Toml {
            path: origin.to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.timing.plant_dt > 0.0 && self.timing.plant_dt <= 2e-3)
            || self.timing.substeps == 0
        {
            return bad("plant step must be in (0, 2 ms] with at least one substep per tick");
        }
        if !(0.0..=1.0).contains(&self.regen_efficiency) {
            return bad("regeneration efficiency must lie in [0, 1]");
        }
        if !(self.offset_speed >= 0.0) {
            return bad("offset speed must be non-negative");
        }
        self.vehicle
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.filter
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.dcee.observation_samples == 0 {
            return bad("at least one predicted observation per candidate is required");
        }
        let r = &self.regulation;
        if r.delta_p == 0 {
            return bad("delta_p must be at least one tick");
        }
        if r.exploration_sign.abs() != 1.0 {
            return bad("exploration_sign must be +1 or -1");
        }
        if !(0.0..1.0).contains(&r.availability_margin) {
            return bad("availability margin must lie in [0, 1)");
        }
        if !(2.0..=8.0).contains(&r.cornering.n) || r.cornering.c1 <= 0.0 || r.cornering.c2 <= 0.0 {
            return bad("cornering model needs c1, c2 > 0 and n in [2, 8]");
        }
        let (k1, k2) = self.thresholds();
        if !(k1 < k2) {
            return bad("hysteresis thresholds need k_s1 < k_s2");
        }
        if self.driver.kp < 0.0
            || self.driver.ki < 0.0
            || !(0.0..=1.0).contains(&self.driver.front_share)
        {
            return bad("driver gains must be non-negative and the front share in [0, 1]");
        }
        Ok(())
    }

    /// Force variance equivalent to one rear wheel-speed measurement, N².
    pub fn sensor_force_variance(&self) -> f64 {
        let dt = self.timing.controller_dt();
        let k = self.vehicle.wheel_inertia / (self.vehicle.wheel_radius * dt);
        k * k * self.filter.noise.wheel_rear
    }

    /// Hysteresis thresholds `(k_s1, k_s2)`.
    pub fn thresholds(&self) -> (f64, f64) {
        let k2 = self
            .regulation
            .k_s2
            .unwrap_or(4.0 * self.sensor_force_variance());
        let k1 = self.regulation.k_s1.unwrap_or(k2 / 400.0);
        (k1, k2)
    }
}

/// A validated configuration with its drive cycle and surface script loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub cycle: DriveCycle,
    pub schedule: SurfaceSchedule,
}

impl Scenario {
    /// Relative drive-cycle paths resolve against `base`.
    pub fn build(config: ScenarioConfig, base: &Path) -> Result<Self, ConfigError> {
        config.validate()?;
        let path = if config.drive_cycle.is_absolute() {
            config.drive_cycle.clone()
        } else {
            base.join(&config.drive_cycle)
        };
        let cycle = DriveCycle::load(&path, config.offset_speed)?;
        if cycle.duration() < config.duration {
            return Err(ConfigError::Invalid(format!(
                "drive cycle covers {} s but the scenario lasts {} s",
                cycle.duration(),
                config.duration
            )));
        }
        let schedule = SurfaceSchedule::new(config.surface.clone(), config.duration)?;
        Ok(Self {
            config,
            cycle,
            schedule,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config = ScenarioConfig::parse(&text, &path.display().to_string())?;
        Self::build(config, path.parent().unwrap_or(Path::new(".")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
duration = 20.0
drive_cycle = "cycle.txt"

[[surface]]
t_start = 0.0
label = "dry"
rho = "clear"
theta = { b = 10.0, c = 1.9, d = 1.0, e = 0.97 }
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ScenarioConfig::parse(MINIMAL, "inline").unwrap();
        assert_eq!(c.mode, Mode::Tval);
        assert_eq!(c.seed, 1);
        assert_eq!(c.filter.particles, 10_000);
        assert_eq!(c.regulation.delta_p, 100);
        c.validate().unwrap();
        let (k1, k2) = c.thresholds();
        assert!((k2 - 4.0 * 0.5 * (1.2f64 / 0.0031).powi(2)).abs() < 1e-6);
        assert_eq!(k1, k2 / 400.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[vehicle]\nmass = 1500.0\nwheels = 4\n");
        assert!(ScenarioConfig::parse(&text, "inline").is_err());
    }

    #[test]
    fn modes_round_trip() {
        for m in [Mode::Tval, Mode::Passive, Mode::DriverOnly, Mode::TvAlways] {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("always".parse::<Mode>().is_err());
    }

    #[test]
    fn scenario_resolves_cycle_next_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cycle.txt"), "t v_ref\n0 0\n30 10\n").unwrap();
        let cfg = dir.path().join("s.toml");
        std::fs::write(&cfg, MINIMAL).unwrap();
        let s = Scenario::load(&cfg).unwrap();
        assert_eq!(s.schedule.changes(), 0);

        std::fs::write(&cfg, MINIMAL.replace("20.0", "40.0")).unwrap();
        assert!(matches!(Scenario::load(&cfg), Err(ConfigError::Invalid(_))));
    }
}
