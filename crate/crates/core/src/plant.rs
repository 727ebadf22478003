//! Ground-truth pitch-plane vehicle: body surge, heave and pitch on a
//! spring/damper suspension, plus four independently spinning wheels.
//!
//! Wheels are ordered front-left, front-right, rear-left, rear-right. Body
//! quantities follow the usual small-angle pitch-plane convention: heave `z`
//! positive downwards (compression), pitch `phi` positive nose-up.

use crate::tyre::{self, TyreParams, MIN_SLIP_SPEED};
use crate::Axles;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FRONT_LEFT: usize = 0;
pub const FRONT_RIGHT: usize = 1;
pub const REAR_LEFT: usize = 2;
pub const REAR_RIGHT: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("invalid vehicle parameter: {0}")]
    InvalidParams(String),
    #[error("plant diverged: {0}")]
    Diverged(String),
    #[error("plant step {0} s outside (0, 2 ms]")]
    BadStep(f64),
}

/// Vehicle parameters. Suspension rates are per axle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub mass: f64,
    /// COG to front axle.
    pub a: f64,
    /// COG to rear axle.
    pub b: f64,
    /// COG height above ground; lever arm of the tyre forces in pitch.
    pub h_cg: f64,
    pub pitch_inertia: f64,
    pub wheel_inertia: f64,
    pub wheel_radius: f64,
    pub k_front: f64,
    pub k_rear: f64,
    pub c_front: f64,
    pub c_rear: f64,
    /// Offsets of the COG from the body reference point.
    #[serde(default)]
    pub x_g: f64,
    #[serde(default)]
    pub z_g: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    /// Lumped aerodynamic drag `½ρC_dA` in N/(m/s)². Zero disables drag.
    #[serde(default)]
    pub drag: f64,
}

fn default_gravity() -> f64 {
    9.81
}

impl Default for VehicleParams {
    /// Representative mid-size saloon, 52/48 static front bias.
    fn default() -> Self {
        Self {
            mass: 1600.0,
            a: 1.344,
            b: 1.456,
            h_cg: 0.55,
            pitch_inertia: 2500.0,
            wheel_inertia: 1.2,
            wheel_radius: 0.31,
            k_front: 60_000.0,
            k_rear: 60_000.0,
            c_front: 6_000.0,
            c_rear: 6_000.0,
            x_g: 0.0,
            z_g: 0.0,
            gravity: 9.81,
            drag: 0.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("mass", self.mass),
            ("a", self.a),
            ("b", self.b),
            ("pitch_inertia", self.pitch_inertia),
            ("wheel_inertia", self.wheel_inertia),
            ("wheel_radius", self.wheel_radius),
            ("k_front", self.k_front),
            ("k_rear", self.k_rear),
            ("c_front", self.c_front),
            ("c_rear", self.c_rear),
            ("gravity", self.gravity),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PlantError::InvalidParams(format!(
                    "{name} = {v} must be positive"
                )));
            }
        }
        if self.h_cg < 0.0 || self.drag < 0.0 {
            return Err(PlantError::InvalidParams(
                "h_cg and drag must be non-negative".into(),
            ));
        }
        if self.pitch_inertia - self.mass * (self.x_g.powi(2) + self.z_g.powi(2)) <= 0.0 {
            return Err(PlantError::InvalidParams(
                "COG offsets too large for pitch inertia".into(),
            ));
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.a + self.b
    }

    /// Static axle loads `(m·g·b/l, m·g·a/l)`.
    pub fn static_loads(&self) -> Axles<f64> {
        static_loads(self)
    }
}

/// Static per-axle vertical loads; each wheel carries half.
pub fn static_loads(params: &VehicleParams) -> Axles<f64> {
    let w = params.mass * params.gravity / params.wheelbase();
    Axles::new(w * params.b, w * params.a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub u: f64,
    pub w: f64,
    pub q: f64,
    pub phi: f64,
    pub z: f64,
    pub omega: [f64; 4],
    pub fz: [f64; 4],
    pub fx: [f64; 4],
}

impl PlantState {
    /// Free-rolling at speed `u` with static loads.
    pub fn rolling(params: &VehicleParams, u: f64) -> Self {
        let s = static_loads(params);
        let omega = u / params.wheel_radius;
        Self {
            u,
            w: 0.0,
            q: 0.0,
            phi: 0.0,
            z: 0.0,
            omega: [omega; 4],
            fz: [0.5 * s.front, 0.5 * s.front, 0.5 * s.rear, 0.5 * s.rear],
            fx: [0.0; 4],
        }
    }

    /// Mean wheel speed of each axle.
    pub fn axle_omega(&self) -> Axles<f64> {
        Axles::new(
            0.5 * (self.omega[0] + self.omega[1]),
            0.5 * (self.omega[2] + self.omega[3]),
        )
    }

    /// Mean per-wheel vertical load of each axle.
    pub fn axle_wheel_load(&self) -> Axles<f64> {
        Axles::new(
            0.5 * (self.fz[0] + self.fz[1]),
            0.5 * (self.fz[2] + self.fz[3]),
        )
    }

    pub fn axle_wheel_force(&self) -> Axles<f64> {
        Axles::new(
            0.5 * (self.fx[0] + self.fx[1]),
            0.5 * (self.fx[2] + self.fx[3]),
        )
    }

    pub fn kinetic_energy(&self, params: &VehicleParams) -> f64 {
        0.5 * params.mass * (self.u * self.u + self.w * self.w)
            + 0.5 * params.pitch_inertia * self.q * self.q
            + 0.5 * params.wheel_inertia * self.omega.iter().map(|w| w * w).sum::<f64>()
    }

    fn is_finite(&self) -> bool {
        [self.u, self.w, self.q, self.phi, self.z]
            .iter()
            .all(|v| v.is_finite())
            && self
                .omega
                .iter()
                .chain(&self.fz)
                .chain(&self.fx)
                .all(|v| v.is_finite())
    }
}

/// Suspension force on the body (upwards, excluding static preload) per axle.
fn suspension_forces(s: &PlantState, p: &VehicleParams) -> Axles<f64> {
    Axles::new(
        p.k_front * (s.z - p.a * s.phi) + p.c_front * (s.w - p.a * s.q),
        p.k_rear * (s.z + p.b * s.phi) + p.c_rear * (s.w + p.b * s.q),
    )
}

fn wheel_loads(susp: Axles<f64>, p: &VehicleParams) -> [f64; 4] {
    let st = static_loads(p);
    let f = (0.5 * (st.front + susp.front)).max(0.0);
    let r = (0.5 * (st.rear + susp.rear)).max(0.0);
    [f, f, r, r]
}

/// Longitudinal tyre force per wheel.
fn tyre_forces(s: &PlantState, fz: &[f64; 4], p: &VehicleParams, surface: &TyreParams) -> [f64; 4] {
    let mut fx = [0.0; 4];
    if s.u < MIN_SLIP_SPEED {
        return fx;
    }
    for j in 0..4 {
        let kappa = tyre::slip_or_zero(s.omega[j], p.wheel_radius, s.u);
        fx[j] = tyre::tyre_force(surface.friction(kappa), fz[j]);
    }
    fx
}

/// Advance the plant by `dt` under per-wheel torques.
///
/// Body states use symplectic Euler. Wheel spin uses `tyre::wheel_step`,
/// which stays stable when the tyre's slip stiffness makes the wheel mode
/// much faster than `dt`.
pub fn plant_step(
    state: &PlantState,
    torques: &[f64; 4],
    params: &VehicleParams,
    surface: &TyreParams,
    dt: f64,
) -> Result<PlantState, PlantError> {
    if !(dt > 0.0 && dt <= 0.002 + 1e-12) {
        return Err(PlantError::BadStep(dt));
    }
    let p = params;
    let s = state;
    let susp = suspension_forces(s, p);
    let fz = wheel_loads(susp, p);
    let fx = tyre_forces(s, &fz, p, surface);

    let sum_fx: f64 = fx.iter().sum::<f64>() - p.drag * s.u * s.u.abs();
    let moment = p.h_cg * fx.iter().sum::<f64>() + p.a * susp.front - p.b * susp.rear;

    // Surge, heave and pitch with COG offsets:
    //   m(U̇ + Wq) − m(x_G q² − z_G q̇) = ΣFx
    //   m(Ẇ − Uq) − m(z_G q² + x_G q̇) = −ΣF_susp
    //   I q̇ + m z_G(U̇ + Wq) − m x_G(Ẇ − Uq) = M
    let m = p.mass;
    let ax = sum_fx / m - s.w * s.q + p.x_g * s.q * s.q;
    let az = -(susp.front + susp.rear) / m + s.u * s.q + p.z_g * s.q * s.q;
    let inertia = p.pitch_inertia - m * (p.x_g * p.x_g + p.z_g * p.z_g);
    let q_dot = (moment - m * p.z_g * (ax + s.w * s.q) + m * p.x_g * (az - s.u * s.q)) / inertia;
    let u_dot = ax - p.z_g * q_dot;
    let w_dot = az + p.x_g * q_dot;

    let mut next = s.clone();
    next.u = s.u + dt * u_dot;
    next.w = s.w + dt * w_dot;
    next.q = s.q + dt * q_dot;
    next.phi = s.phi + dt * next.q;
    // Earth-frame heave rate is W − Uφ for small pitch angles.
    next.z = s.z + dt * (next.w - s.u * s.phi);

    // Wheels step against the new body speed so they do not lag it.
    let u1 = next.u;
    for j in 0..4 {
        let force = |w: f64| {
            if u1 < MIN_SLIP_SPEED {
                return (0.0, 0.0);
            }
            let (mu, slope) = surface.friction_and_slope(tyre::slip_or_zero(w, p.wheel_radius, u1));
            (mu * fz[j], slope * fz[j] * p.wheel_radius / u1)
        };
        let at = force(s.omega[j]);
        next.omega[j] = tyre::wheel_step(
            s.omega[j],
            torques[j],
            dt,
            p.wheel_inertia,
            p.wheel_radius,
            at,
            force,
        )
        .0;
    }

    let susp_next = suspension_forces(&next, p);
    next.fz = wheel_loads(susp_next, p);
    next.fx = tyre_forces(&next, &next.fz, p, surface);

    if !next.is_finite() || next.u.abs() > 500.0 || next.omega.iter().any(|w| *w > 5_000.0) {
        return Err(PlantError::Diverged(format!("{next:?}")));
    }
    Ok(next)
}
