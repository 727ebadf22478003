//! Wheel power and cumulative energy, with and without regenerative braking.

/// Total power `Σ T_j·ω_j`, W.
pub fn wheel_power(torques: &[f64; 4], omega: &[f64; 4]) -> f64 {
    torques.iter().zip(omega).map(|(t, w)| t * w).sum()
}

/// Energy drawn at one wheel under the two accountings: motoring costs
/// full price in both, braking is free without regeneration and credited
/// at `eta` with it.
pub fn wheel_energy(power: f64, eta: f64, dt: f64) -> (f64, f64) {
    if power >= 0.0 {
        (power * dt, power * dt)
    } else {
        (0.0, eta * power * dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyMeter {
    pub eta: f64,
    /// Cumulative energy without regeneration, J.
    pub plain: f64,
    /// Cumulative energy with regeneration, J.
    pub regen: f64,
}

impl EnergyMeter {
    pub fn new(eta: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&eta),
            "regeneration efficiency {eta} outside [0, 1]"
        );
        Self {
            eta,
            plain: 0.0,
            regen: 0.0,
        }
    }

    /// Accumulates each wheel separately and returns the total power.
    pub fn add(&mut self, torques: &[f64; 4], omega: &[f64; 4], dt: f64) -> f64 {
        for (t, w) in torques.iter().zip(omega) {
            let (p, r) = wheel_energy(t * w, self.eta, dt);
            self.plain += p;
            self.regen += r;
        }
        wheel_power(torques, omega)
    }

    /// Accumulates a power that is already non-negative.
    pub fn add_power(&mut self, power: f64, dt: f64) {
        let (p, r) = wheel_energy(power, self.eta, dt);
        self.plain += p;
        self.regen += r;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn power_examples() {
        assert_eq!(wheel_power(&[100.0, 0.0, 0.0, 0.0], &[50.0; 4]), 5000.0);
        let (plain, regen) = wheel_energy(-100.0 * 50.0, 0.7, 1.0);
        assert_eq!(plain, 0.0);
        assert_relative_eq!(regen, -3500.0, epsilon = 1e-9);
    }

    #[test]
    fn braking_and_driving_wheels_are_metered_separately() {
        let mut m = EnergyMeter::new(0.7);
        let p = m.add(&[100.0, 100.0, -100.0, -100.0], &[10.0; 4], 1.0);
        assert_eq!(p, 0.0);
        assert_eq!(m.plain, 2000.0);
        assert_relative_eq!(m.regen, 600.0, epsilon = 1e-9);
    }
}
