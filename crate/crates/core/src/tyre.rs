//! Longitudinal Magic Formula tyre: friction curve, slip ratio and force.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

/// Body speeds below this floor make the slip ratio meaningless.
pub const MIN_SLIP_SPEED: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TyreError {
    #[error("slip undefined below {MIN_SLIP_SPEED} m/s (body speed {0} m/s)")]
    LowSpeed(f64),
    #[error("tyre parameters out of range: {0}")]
    InvalidParams(String),
}

/// Magic Formula coefficients: stiffness `b`, shape `c`, peak `d` and curvature `e`.
///
/// `d` is the peak friction coefficient of the curve whenever `c >= 1` and `e < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TyreParams {
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl TyreParams {
    pub fn new(b: f64, c: f64, d: f64, e: f64) -> Result<Self, TyreError> {
        let p = Self { b, c, d, e };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TyreError> {
        let ok = self.b > 0.0
            && (1.0..=2.0).contains(&self.c)
            && self.d > 0.0
            && self.d <= 2.0
            && self.e <= 1.0
            && [self.b, self.c, self.d, self.e]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(TyreError::InvalidParams(format!("{self:?}")))
        }
    }

    #[inline]
    fn inner(&self, kappa: f64) -> f64 {
        let bk = self.b * kappa;
        bk - self.e * (bk - bk.atan())
    }

    #[inline]
    pub fn friction(&self, kappa: f64) -> f64 {
        self.d * (self.c * self.inner(kappa).atan()).sin()
    }

    /// Friction and its slope dμ/dκ, sharing the transcendental evaluations.
    #[inline]
    pub fn friction_and_slope(&self, kappa: f64) -> (f64, f64) {
        let bk = self.b * kappa;
        let x = bk - self.e * (bk - bk.atan());
        let (s, c) = (self.c * x.atan()).sin_cos();
        let dx = self.b * (1.0 - self.e) + self.e * self.b / (1.0 + bk * bk);
        (self.d * s, self.d * c * self.c * dx / (1.0 + x * x))
    }

    /// Positive slip at which the curve reaches its peak `d`, if it is reached at a finite slip.
    pub fn peak_slip(&self) -> Option<f64> {
        if self.c <= 1.0 {
            return None;
        }
        let target = (FRAC_PI_2 / self.c).tan();
        let mut hi = 1.0 / self.b;
        let mut expansions = 0;
        while self.inner(hi) < target {
            hi *= 2.0;
            expansions += 1;
            if expansions > 60 {
                return None;
            }
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.inner(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

/// Longitudinal slip ratio `(ωR − U)/U`.
pub fn slip_ratio(omega: f64, radius: f64, speed: f64) -> Result<f64, TyreError> {
    if speed < MIN_SLIP_SPEED {
        return Err(TyreError::LowSpeed(speed));
    }
    Ok((omega * radius - speed) / speed)
}

/// Slip ratio with the low-speed convention applied: zero below the floor.
#[inline]
pub fn slip_or_zero(omega: f64, radius: f64, speed: f64) -> f64 {
    if speed < MIN_SLIP_SPEED {
        0.0
    } else {
        (omega * radius - speed) / speed
    }
}

/// Wheel-speed error below which a step is accepted as is, rad/s.
const WHEEL_SPEED_TOL: f64 = 1e-4;

/// One wheel-spin step `I·ω̇ = u − R·F(ω)` of length `dt`, where `tyre`
/// gives the force and its slope `(F, dF/dω)` at a wheel speed and `at` is
/// its value at `omega`.
///
/// Backward Euler linearised about the current slip. Past the peak the slope
/// gives no damping, so a step that would jump across the torque balance
/// `R·F = u` lands on the balance point instead (the wheel mode settles well
/// within a step). A step whose end point misses the backward-Euler balance
/// by more than 10% of the starting imbalance, and by more than
/// `WHEEL_SPEED_TOL` in wheel speed, is redone in ten sub-steps. Returns the new wheel speed and the force there.
pub fn wheel_step(
    omega: f64,
    torque: f64,
    dt: f64,
    inertia: f64,
    radius: f64,
    at: (f64, f64),
    tyre: impl Fn(f64) -> (f64, f64),
) -> (f64, f64) {
    let (w, f, _, landed) = guarded_step(omega, torque, dt, inertia, radius, at, &tyre);
    let residual = inertia * (w - omega) - dt * (torque - radius * f);
    let tol = (0.1 * dt * (torque - radius * at.0).abs()).max(inertia * WHEEL_SPEED_TOL);
    if landed || !(residual.abs() > tol) {
        return (w, f);
    }
    let h = 0.1 * dt;
    let (mut w, mut at) = (omega, at);
    for _ in 0..10 {
        let (w1, f1, s1, _) = guarded_step(w, torque, h, inertia, radius, at, &tyre);
        w = w1;
        at = (f1, s1);
    }
    (w, at.0)
}

fn guarded_step(
    omega: f64,
    torque: f64,
    dt: f64,
    inertia: f64,
    radius: f64,
    (f0, df0): (f64, f64),
    tyre: &impl Fn(f64) -> (f64, f64),
) -> (f64, f64, f64, bool) {
    let net0 = torque - radius * f0;
    let stiff = dt * radius * df0.max(0.0);
    let w1 = omega + dt * net0 / (inertia + stiff);
    let w1 = if w1 < 0.0 { 0.0 } else { w1 };
    let (f1, s1) = tyre(w1);
    if !(net0 * (torque - radius * f1) < 0.0) {
        return (w1, f1, s1, false);
    }
    // Illinois false position on the bracket [omega, w1].
    let (mut a, mut ga) = (omega, net0);
    let (mut b, mut gb) = (w1, torque - radius * f1);
    let (mut w, mut fs) = (w1, (f1, s1));
    let mut side = 0;
    for _ in 0..60 {
        let c = (a * gb - b * ga) / (gb - ga);
        let at_c = tyre(c);
        let gc = torque - radius * at_c.0;
        let done = (c - w).abs() <= 1e-12 * (1.0 + c.abs());
        (w, fs) = (c, at_c);
        if done || gc == 0.0 {
            break;
        }
        if gc * gb > 0.0 {
            (b, gb) = (c, gc);
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        } else {
            (a, ga) = (c, gc);
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        }
    }
    (w, fs.0, fs.1, true)
}

#[inline]
pub fn friction(kappa: f64, theta: &TyreParams) -> f64 {
    theta.friction(kappa)
}

/// Longitudinal force `μ·Fz`. Panics on a negative vertical load.
#[inline]
pub fn tyre_force(mu: f64, fz: f64) -> f64 {
    assert!(fz >= 0.0, "negative vertical load {fz} N");
    mu * fz
}
