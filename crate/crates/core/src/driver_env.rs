//! Drive cycle, road-surface script and the driver's PI speed controller.

use crate::tyre::TyreParams;
use crate::Axles;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("cannot read drive cycle {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("drive cycle line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid drive cycle: {0}")]
    Cycle(String),
    #[error("invalid surface schedule: {0}")]
    Schedule(String),
    #[error("time {0} s is outside the scenario")]
    OutOfRange(f64),
}

/// Speed reference sampled at strictly increasing times, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveCycle {
    t: Vec<f64>,
    v: Vec<f64>,
    offset_v: f64,
}

impl DriveCycle {
    /// `offset_v` is a floor applied to the reference speed.
    pub fn new(samples: Vec<(f64, f64)>, offset_v: f64) -> Result<Self, EnvError> {
        if samples.len() < 2 {
            return Err(EnvError::Cycle("need at least two samples".into()));
        }
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(EnvError::Cycle("times must be strictly increasing".into()));
        }
        if samples
            .iter()
            .any(|&(t, v)| !t.is_finite() || !v.is_finite() || v < 0.0)
        {
            return Err(EnvError::Cycle(
                "speeds must be finite and non-negative".into(),
            ));
        }
        let (t, v) = samples.into_iter().unzip();
        Ok(Self { t, v, offset_v })
    }

    /// Two whitespace- or comma-separated columns `t v_ref` after one header line.
    pub fn parse(text: &str, offset_v: f64) -> Result<Self, EnvError> {
        let mut samples = Vec::new();
        for (idx, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if cols.len() != 2 {
                return Err(EnvError::Parse {
                    line: idx + 1,
                    msg: format!("expected 2 columns, got {}", cols.len()),
                });
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|e| EnvError::Parse {
                    line: idx + 1,
                    msg: format!("{s:?}: {e}"),
                })
            };
            samples.push((num(cols[0])?, num(cols[1])?));
        }
        Self::new(samples, offset_v)
    }

    pub fn load(path: &Path, offset_v: f64) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|source| EnvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, offset_v)
    }

    pub fn duration(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    fn segment(&self, t: f64) -> usize {
        self.t
            .partition_point(|&ti| ti <= t)
            .clamp(1, self.t.len() - 1)
    }

    /// Raw cycle speed, held constant outside the sampled span.
    fn raw(&self, t: f64) -> f64 {
        if t <= self.t[0] {
            return self.v[0];
        }
        if t >= self.duration() {
            return self.v[self.v.len() - 1];
        }
        let j = self.segment(t);
        let (t0, t1, v0, v1) = (self.t[j - 1], self.t[j], self.v[j - 1], self.v[j]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub fn speed(&self, t: f64) -> f64 {
        self.raw(t).max(self.offset_v)
    }

    /// Slope of the reference at `t`; zero wherever the floor is active.
    pub fn acceleration(&self, t: f64) -> f64 {
        if t < self.t[0] || t >= self.duration() || self.raw(t) < self.offset_v {
            return 0.0;
        }
        let j = self.segment(t);
        (self.v[j] - self.v[j - 1]) / (self.t[j] - self.t[j - 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSegment {
    pub t_start: f64,
    pub label: String,
    pub theta: TyreParams,
    /// Rain/light sensor reading while this surface is active.
    pub rho: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSchedule {
    segments: Vec<SurfaceSegment>,
    end: f64,
}

impl SurfaceSchedule {
    pub fn new(segments: Vec<SurfaceSegment>, end: f64) -> Result<Self, EnvError> {
        let first = segments
            .first()
            .ok_or_else(|| EnvError::Schedule("no segments".into()))?;
        if first.t_start != 0.0 {
            return Err(EnvError::Schedule(
                "first segment must start at t = 0".into(),
            ));
        }
        for w in segments.windows(2) {
            if !(w[1].t_start > w[0].t_start) {
                return Err(EnvError::Schedule(format!(
                    "segment at {} s is out of order",
                    w[1].t_start
                )));
            }
            if (w[0].label == w[1].label) != (w[0].rho == w[1].rho) {
                return Err(EnvError::Schedule(format!(
                    "sensor reading must change exactly when the surface does (t = {} s)",
                    w[1].t_start
                )));
            }
        }
        if !(end > segments[segments.len() - 1].t_start) {
            return Err(EnvError::Schedule(
                "last segment starts after the scenario ends".into(),
            ));
        }
        for s in &segments {
            s.theta
                .validate()
                .map_err(|e| EnvError::Schedule(format!("{}: {e}", s.label)))?;
        }
        Ok(Self { segments, end })
    }

    pub fn segments(&self) -> &[SurfaceSegment] {
        &self.segments
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn index_at(&self, t: f64) -> Result<usize, EnvError> {
        if !(t >= 0.0 && t < self.end) {
            return Err(EnvError::OutOfRange(t));
        }
        Ok(self.segments.partition_point(|s| s.t_start <= t) - 1)
    }

    /// Number of label changes over the scenario.
    pub fn changes(&self) -> usize {
        self.segments
            .windows(2)
            .filter(|w| w[0].label != w[1].label)
            .count()
    }
}

/// Active segment's true tyre parameters and sensor reading. Segments are
/// left-closed: a boundary instant belongs to the new segment.
pub fn environment_at(t: f64, schedule: &SurfaceSchedule) -> Result<(TyreParams, &str), EnvError> {
    let s = &schedule.segments[schedule.index_at(t)?];
    Ok((s.theta, s.rho.as_str()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriverGains {
    pub kp: f64,
    pub ki: f64,
    /// Front share of the driver's torque.
    pub front_share: f64,
}

impl Default for DriverGains {
    fn default() -> Self {
        Self {
            kp: 0.01,
            ki: 15.0,
            front_share: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PiState {
    /// Integrated acceleration error, which is the speed shortfall.
    pub integral: f64,
    pub v_prev: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverOutput {
    pub a_ref: f64,
    /// Per-wheel torques, identical left and right.
    pub torques: Axles<f64>,
}

/// Driver acceleration demand from a PI on the error between the cycle's
/// acceleration and the vehicle's, differenced from successive speeds. The
/// integral is clamped so its contribution never exceeds `a_limit`, and the
/// demand itself is limited to `±a_limit`. Torques assume a quasi-static
/// wheel, `R·m·a_ref` in total.
#[allow(clippy::too_many_arguments)]
pub fn driver_demand(
    a_cycle: f64,
    v_meas: f64,
    pi: PiState,
    gains: &DriverGains,
    a_limit: f64,
    mass: f64,
    radius: f64,
    dt: f64,
) -> (DriverOutput, PiState) {
    assert!(dt > 0.0, "driver step must be positive");
    let a_meas = pi.v_prev.map_or(0.0, |v| (v_meas - v) / dt);
    let err = a_cycle - a_meas;
    let cap = if gains.ki > 0.0 {
        a_limit / gains.ki
    } else {
        0.0
    };
    let integral = (pi.integral + err * dt).clamp(-cap, cap);
    let a_ref = (gains.kp * err + gains.ki * integral).clamp(-a_limit, a_limit);
    let total = radius * mass * a_ref;
    let torques = Axles::new(
        0.5 * gains.front_share * total,
        0.5 * (1.0 - gains.front_share) * total,
    );
    (
        DriverOutput { a_ref, torques },
        PiState {
            integral,
            v_prev: Some(v_meas),
        },
    )
}
