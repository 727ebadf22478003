//! Gates that decide when active learning may run, and the blend between
//! the learning controller and the driver.

use crate::Axles;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SwitchState {
    On,
    #[default]
    Off,
}

/// Two-threshold switch on the uncertainty error `S²_est − S²_pred`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HysteresisSwitch {
    /// Switch-off threshold.
    pub k_s1: f64,
    /// Switch-on threshold.
    pub k_s2: f64,
    pub state: SwitchState,
}

impl HysteresisSwitch {
    pub fn new(k_s1: f64, k_s2: f64) -> Result<Self, String> {
        if !(k_s1.is_finite() && k_s2.is_finite() && k_s1 < k_s2) {
            return Err(format!("hysteresis needs k_s1 < k_s2 (got {k_s1}, {k_s2})"));
        }
        Ok(Self {
            k_s1,
            k_s2,
            state: SwitchState::Off,
        })
    }

    pub fn step(&mut self, error: f64) -> bool {
        if error >= self.k_s2 {
            self.state = SwitchState::On;
        } else if error <= self.k_s1 {
            self.state = SwitchState::Off;
        }
        self.state == SwitchState::On
    }
}

pub fn energy_gate(
    s2_est: f64,
    s2_pred: f64,
    switch: HysteresisSwitch,
) -> (bool, HysteresisSwitch) {
    let mut next = switch;
    let on = next.step(s2_est - s2_pred);
    (on, next)
}

/// Understeer gradient `F_zf0/C_αf − F_zr0/C_αr`. A saturated axle (zero
/// stiffness) yields an infinite gradient of the matching sign.
pub fn understeer_gradient(loads_static: Axles<f64>, c_alpha: Axles<f64>) -> f64 {
    let term = |fz: f64, c: f64| if c > 0.0 { fz / c } else { f64::INFINITY };
    let (f, r) = (
        term(loads_static.front, c_alpha.front),
        term(loads_static.rear, c_alpha.rear),
    );
    if f.is_infinite() && r.is_infinite() {
        0.0
    } else {
        f - r
    }
}

/// Constants of the load- and slip-dependent cornering stiffness model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorneringModel {
    pub c1: f64,
    pub c2: f64,
    pub n: f64,
}

impl Default for CorneringModel {
    fn default() -> Self {
        Self {
            c1: 8.0,
            c2: 1.33,
            n: 4.0,
        }
    }
}

/// Cornering stiffness `φ·[C_α(Fz) − ½μFz] + ½(μFz − |Fx|)` with
/// `φ = [1 − (|Fx|/μFz)ⁿ]^{1/n}`. A saturated tyre (|Fx| ≥ μFz) has zero stiffness.
pub fn cornering_stiffness(mu: f64, fz: f64, fx: f64, c1: f64, c2: f64, fz0: f64, n: f64) -> f64 {
    let cap = mu * fz;
    let fx = fx.abs();
    if !(cap > 0.0) || fx >= cap {
        return 0.0;
    }
    let phi = (1.0 - (fx / cap).powf(n)).powf(1.0 / n);
    let pure = c1 * c2 * fz0 * (2.0 * (fz / (c2 * fz0)).atan()).sin();
    (phi * (pure - 0.5 * cap) + 0.5 * (cap - fx)).max(0.0)
}

/// Critical speed `sqrt(g·l/|K_us|)`; infinite unless the vehicle oversteers.
pub fn critical_speed(k_us: f64, wheelbase: f64, gravity: f64) -> f64 {
    if k_us >= 0.0 {
        f64::INFINITY
    } else {
        (gravity * wheelbase / k_us.abs()).sqrt()
    }
}

pub fn stability_gate(v_pred: f64, k_us: f64, wheelbase: f64, gravity: f64) -> bool {
    v_pred < critical_speed(k_us, wheelbase, gravity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AvailabilityRule {
    /// The front axle alone can carry the driver's demand minus the rear
    /// exploration force.
    #[default]
    FrontCovers,
    /// `(m/2)·a_ref ≥ F̄*_f + F̄*_r` as printed.
    Literal,
}

/// Availability of tyre force for exploration. `loads` are axle totals,
/// `sign` the direction the rear axle is pushed.
pub fn availability_gate(
    rule: AvailabilityRule,
    mass: f64,
    a_ref: f64,
    d_hat: f64,
    loads: Axles<f64>,
    sign: f64,
    margin: f64,
) -> bool {
    match rule {
        AvailabilityRule::FrontCovers => {
            (mass * a_ref - d_hat * loads.rear * sign).abs() <= d_hat * loads.front * (1.0 - margin)
        }
        AvailabilityRule::Literal => 0.5 * mass * a_ref >= d_hat * (loads.front + loads.rear),
    }
}

/// Request counter and blend weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationState {
    pub f: u32,
    pub delta_p: u32,
    pub tau_p: bool,
    pub tau_s: bool,
    pub tau_a: bool,
    pub tau_r: bool,
}

impl ActivationState {
    pub fn new(delta_p: u32) -> Self {
        assert!(delta_p > 0, "transition span must be at least one tick");
        Self {
            f: 0,
            delta_p,
            tau_p: false,
            tau_s: false,
            tau_a: false,
            tau_r: false,
        }
    }

    pub fn w1(&self) -> f64 {
        f64::from(self.f) / f64::from(self.delta_p)
    }

    pub fn set_flags(&mut self, tau_p: bool, tau_s: bool, tau_a: bool) {
        self.tau_p = tau_p;
        self.tau_s = tau_s;
        self.tau_a = tau_a;
        self.tau_r = tau_p && tau_s && tau_a;
    }
}

pub fn update_request(act: ActivationState, tau_r: bool) -> ActivationState {
    let f = if tau_r {
        (act.f + 1).min(act.delta_p)
    } else {
        act.f.saturating_sub(1)
    };
    ActivationState { f, tau_r, ..act }
}

pub fn blend(u_tval: Axles<f64>, u_driver: Axles<f64>, w1: f64) -> Axles<f64> {
    assert!(
        (0.0..=1.0).contains(&w1),
        "blend weight {w1} outside [0, 1]"
    );
    Axles::new(
        w1 * u_tval.front + (1.0 - w1) * u_driver.front,
        w1 * u_tval.rear + (1.0 - w1) * u_driver.rear,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hysteresis_holds_between_thresholds() {
        let sw = HysteresisSwitch::new(1.0, 4.0).unwrap();
        let (on, sw) = energy_gate(2.5, 0.0, sw);
        assert!(!on);
        let (on, sw) = energy_gate(5.0, 0.0, sw);
        assert!(on);
        let (on, sw) = energy_gate(2.5, 0.0, sw);
        assert!(on);
        let (on, _) = energy_gate(1.0, 0.0, sw);
        assert!(!on);
        assert!(HysteresisSwitch::new(4.0, 1.0).is_err());
    }

    #[test]
    fn understeer_examples() {
        assert_eq!(
            understeer_gradient(Axles::new(7000.0, 7000.0), Axles::new(6e4, 6e4)),
            0.0
        );
        assert_relative_eq!(
            understeer_gradient(Axles::new(8000.0, 7000.0), Axles::new(80000.0, 50000.0)),
            -0.04,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            understeer_gradient(Axles::new(8000.0, 7000.0), Axles::new(50000.0, 80000.0)),
            0.0725,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cornering_stiffness_limits() {
        let pure = 8.0 * 1.33 * 4000.0 * (2.0 * (1.0f64 / 1.33).atan()).sin();
        assert_relative_eq!(
            cornering_stiffness(1.0, 4000.0, 0.0, 8.0, 1.33, 4000.0, 4.0),
            pure,
            epsilon = 1e-9
        );
        assert_eq!(
            cornering_stiffness(1.0, 4000.0, 4000.0, 8.0, 1.33, 4000.0, 4.0),
            0.0
        );
        assert_eq!(
            cornering_stiffness(0.5, 4000.0, -2500.0, 8.0, 1.33, 4000.0, 4.0),
            0.0
        );
    }

    #[test]
    fn critical_speed_examples() {
        assert!(stability_gate(1e6, 0.0, 2.8, 9.81));
        assert_relative_eq!(critical_speed(-0.04, 2.8, 9.81), 26.2, epsilon = 0.05);
        assert!(!stability_gate(30.0, -0.04, 2.8, 9.81));
        assert!(stability_gate(25.0, -0.04, 2.8, 9.81));
    }

    #[test]
    fn availability_examples() {
        let loads = Axles::new(8200.0, 7500.0);
        let rule = AvailabilityRule::FrontCovers;
        assert!(availability_gate(rule, 1600.0, 0.0, 0.6, loads, 1.0, 0.05));
        let limit = 0.6 * 9.81;
        assert!(!availability_gate(
            rule, 1600.0, limit, 0.6, loads, 1.0, 0.05
        ));
        assert!(!availability_gate(
            rule, 1600.0, -limit, 0.6, loads, 1.0, 0.05
        ));
    }

    #[test]
    fn request_counter_examples() {
        let mut act = ActivationState::new(100);
        act.f = 100;
        assert_eq!(update_request(act, true).f, 100);
        act.f = 0;
        assert_eq!(update_request(act, false).f, 0);
        act.f = 3;
        let next = update_request(act, true);
        assert_eq!(next.f, 4);
        assert_relative_eq!(next.w1(), 0.04);
    }

    #[test]
    fn blend_examples() {
        let tv = Axles::new(200.0, 200.0);
        let dr = Axles::new(100.0, 100.0);
        assert_eq!(blend(tv, dr, 0.0), dr);
        assert_eq!(blend(tv, dr, 1.0), tv);
        assert_eq!(blend(tv, dr, 0.5), Axles::new(150.0, 150.0));
    }
}
