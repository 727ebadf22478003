//! Regularized particle filter over the augmented state
//! `(v, ω_f, ω_r, B, C, D, E)`.
//!
//! Particles are stored coordinate-major. Every reduction (normalisation,
//! means, variances) runs in particle index order so results do not depend
//! on how the per-particle work is scheduled.

use crate::plant::VehicleParams;
use crate::tyre::{wheel_step, TyreParams, MIN_SLIP_SPEED};
use crate::Axles;
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const V: usize = 0;
pub const OMEGA_F: usize = 1;
pub const OMEGA_R: usize = 2;
pub const B: usize = 3;
pub const C: usize = 4;
pub const D: usize = 5;
pub const E: usize = 6;
pub const DIM: usize = 7;

const MIN_PARTICLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeliefError {
    #[error("{0} particles is too few for a usable filter (need at least {MIN_PARTICLES})")]
    TooFewParticles(usize),
    #[error("particle and weight counts differ or are empty")]
    Shape,
    #[error("invalid filter configuration: {0}")]
    Config(String),
}

/// Closed interval `[lo, hi]`.
pub type Interval = [f64; 2];

/// Uniform prior ranges for fresh particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorRanges {
    pub v: Interval,
    pub omega_front: Interval,
    pub omega_rear: Interval,
    pub b: Interval,
    pub c: Interval,
    pub d: Interval,
    pub e: Interval,
}

impl Default for PriorRanges {
    fn default() -> Self {
        Self {
            v: [0.5, 4.5],
            omega_front: [2.0, 9.0],
            omega_rear: [2.0, 9.0],
            b: [4.0, 21.0],
            c: [1.3, 1.7],
            d: [0.2, 1.6],
            // Published as [2.0, -12]; the upper end is capped at the
            // curvature bound for which D stays the peak of the curve.
            e: [-12.0, 1.0],
        }
    }
}

impl PriorRanges {
    fn intervals(&self) -> [Interval; DIM] {
        [
            self.v,
            self.omega_front,
            self.omega_rear,
            self.b,
            self.c,
            self.d,
            self.e,
        ]
    }

    fn validate(&self) -> Result<(), BeliefError> {
        for [lo, hi] in self.intervals() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(BeliefError::Config(format!(
                    "bad prior interval [{lo}, {hi}]"
                )));
            }
        }
        let box_ok = self.b[0] > 0.0
            && self.c[0] >= 1.0
            && self.c[1] <= 2.0
            && self.d[0] > 0.0
            && self.d[1] <= 2.0
            && self.e[1] <= 1.0;
        if !box_ok {
            return Err(BeliefError::Config(
                "prior leaves the tyre parameter box".into(),
            ));
        }
        Ok(())
    }

    pub fn std_dev(range: Interval) -> f64 {
        (range[1] - range[0]) / 12f64.sqrt()
    }
}

/// Box that live tyre parameters are clamped into.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBox {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
}

impl ParamBox {
    /// Prior ranges widened by `fraction` of their width on each side, then
    /// intersected with the tyre parameter invariants.
    pub fn widened(prior: &PriorRanges, fraction: f64) -> Self {
        let mut lo = [0.0; 4];
        let mut hi = [0.0; 4];
        for (k, [l, h]) in [prior.b, prior.c, prior.d, prior.e].into_iter().enumerate() {
            let pad = fraction * (h - l);
            lo[k] = l - pad;
            hi[k] = h + pad;
        }
        let floor = [1e-3, 1.0, 1e-3, f64::NEG_INFINITY];
        let ceil = [f64::INFINITY, 2.0, 2.0, 1.0];
        for k in 0..4 {
            lo[k] = lo[k].max(floor[k]);
            hi[k] = hi[k].min(ceil[k]);
        }
        Self { lo, hi }
    }

    pub fn contains(&self, theta: &TyreParams) -> bool {
        let t = [theta.b, theta.c, theta.d, theta.e];
        (0..4).all(|k| t[k] >= self.lo[k] && t[k] <= self.hi[k])
    }
}

/// Diagonal measurement covariance (variances).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementNoise {
    pub speed: f64,
    pub wheel_front: f64,
    pub wheel_rear: f64,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self {
            speed: 0.2,
            wheel_front: 0.5,
            wheel_rear: 0.5,
        }
    }
}

impl MeasurementNoise {
    pub fn validate(&self) -> Result<(), BeliefError> {
        if [self.speed, self.wheel_front, self.wheel_rear]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
        {
            Ok(())
        } else {
            Err(BeliefError::Config(
                "measurement variances must be positive".into(),
            ))
        }
    }
}

/// Body speed (GNSS) and per-axle wheel speeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub speed: f64,
    pub wheel_front: f64,
    pub wheel_rear: f64,
    pub noise: MeasurementNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub particles: usize,
    pub prior: PriorRanges,
    pub noise: MeasurementNoise,
    /// Per-step random walk on B, C, D, E as a fraction of each prior width.
    pub theta_jitter: f64,
    /// Multiplier on Silverman's bandwidth for the post-resampling kernel.
    pub kernel_scale: f64,
    /// Resample when ESS falls below this fraction of the particle count.
    pub resample_threshold: f64,
    /// Widening of the prior ranges that defines the parameter clamp box.
    pub box_widening: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            particles: 10_000,
            prior: PriorRanges::default(),
            noise: MeasurementNoise::default(),
            theta_jitter: 1e-3,
            kernel_scale: 0.5,
            resample_threshold: 0.5,
            box_widening: 0.1,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), BeliefError> {
        if self.particles < MIN_PARTICLES {
            return Err(BeliefError::TooFewParticles(self.particles));
        }
        self.prior.validate()?;
        self.noise.validate()?;
        let fractions = [self.theta_jitter, self.kernel_scale, self.box_widening];
        if fractions.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
            || !(0.0..=1.0).contains(&self.resample_threshold)
        {
            return Err(BeliefError::Config(
                "jitter, kernel and threshold settings out of range".into(),
            ));
        }
        Ok(())
    }
}

/// One point of the augmented state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedState {
    pub v: f64,
    pub omega_front: f64,
    pub omega_rear: f64,
    pub theta: TyreParams,
}

impl AugmentedState {
    fn from_coords(x: [f64; DIM]) -> Self {
        Self {
            v: x[V],
            omega_front: x[OMEGA_F],
            omega_rear: x[OMEGA_R],
            theta: TyreParams {
                b: x[B],
                c: x[C],
                d: x[D],
                e: x[E],
            },
        }
    }

    fn coords(&self) -> [f64; DIM] {
        [
            self.v,
            self.omega_front,
            self.omega_rear,
            self.theta.b,
            self.theta.c,
            self.theta.d,
            self.theta.e,
        ]
    }
}

/// Constants of the estimator's 3-DOF one-step model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepModel {
    pub dt: f64,
    pub mass: f64,
    pub wheel_inertia: f64,
    pub radius: f64,
}

impl StepModel {
    pub fn new(vehicle: &VehicleParams, dt: f64) -> Self {
        Self {
            dt,
            mass: vehicle.mass,
            wheel_inertia: vehicle.wheel_inertia,
            radius: vehicle.wheel_radius,
        }
    }

    /// Tyre force and its derivative with respect to wheel speed.
    #[inline]
    pub fn tyre(&self, theta: &TyreParams, omega: f64, v: f64, fz: f64) -> (f64, f64) {
        if v < MIN_SLIP_SPEED || fz <= 0.0 {
            return (0.0, 0.0);
        }
        let kappa = (omega * self.radius - v) / v;
        let (mu, slope) = theta.friction_and_slope(kappa);
        (mu * fz, slope * fz * self.radius / v)
    }

    /// `(F, dF/dω)` from `tyre` at body speed `v`, carried to a nearby speed
    /// `v1` to first order.
    #[inline]
    pub fn shift(&self, (f, dfdw): (f64, f64), omega: f64, v: f64, v1: f64) -> (f64, f64) {
        if v < MIN_SLIP_SPEED {
            return (f, dfdw);
        }
        (f - dfdw * omega / v * (v1 - v), dfdw)
    }

    /// `v⁺ = v + (2Δt/m)(F_f + F_r)` with per-wheel forces.
    #[inline]
    pub fn body(&self, v: f64, force_front: f64, force_rear: f64) -> f64 {
        (v + 2.0 * self.dt / self.mass * (force_front + force_rear)).max(0.0)
    }

    /// Wheel-spin step from `(F, dF/dω)` at the current wheel speed; see
    /// `tyre::wheel_step`. Returns the new wheel speed and tyre force.
    #[inline]
    pub fn spin(
        &self,
        theta: &TyreParams,
        omega: f64,
        v: f64,
        fz: f64,
        torque: f64,
        at: (f64, f64),
    ) -> (f64, f64) {
        wheel_step(
            omega,
            torque,
            self.dt,
            self.wheel_inertia,
            self.radius,
            at,
            |w| self.tyre(theta, w, v, fz),
        )
    }

    /// Tyre force averaged over a step, from the wheel's momentum balance.
    #[inline]
    pub fn mean_force(&self, omega0: f64, omega1: f64, torque: f64) -> f64 {
        (torque - self.wheel_inertia * (omega1 - omega0) / self.dt) / self.radius
    }

    /// One step of the 3-DOF model. The wheels step against a body speed
    /// predicted from the current tyre forces, then the body moves under the
    /// step-mean forces the wheels delivered, so momentum is conserved even
    /// when a wheel sweeps through the friction peak within the step.
    #[inline]
    pub fn step(
        &self,
        theta: &TyreParams,
        [v, wf, wr]: [f64; 3],
        torques: Axles<f64>,
        loads: Axles<f64>,
    ) -> [f64; 3] {
        let (af, ar) = (
            self.tyre(theta, wf, v, loads.front),
            self.tyre(theta, wr, v, loads.rear),
        );
        let vp = self.body(v, af.0, ar.0);
        let (wf1, _) = self.spin(
            theta,
            wf,
            vp,
            loads.front,
            torques.front,
            self.shift(af, wf, v, vp),
        );
        let (wr1, _) = self.spin(
            theta,
            wr,
            vp,
            loads.rear,
            torques.rear,
            self.shift(ar, wr, v, vp),
        );
        let v1 = self.body(
            v,
            self.mean_force(wf, wf1, torques.front),
            self.mean_force(wr, wr1, torques.rear),
        );
        [v1, wf1, wr1]
    }
}

/// Result of a measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport {
    pub ess: f64,
    pub resampled: bool,
    pub recovered: bool,
}

/// Per-tick statistics of the belief.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefSummary {
    pub mean: AugmentedState,
    pub std: AugmentedState,
    /// Expected current friction coefficient per axle.
    pub mu: Axles<f64>,
    /// Expected current per-wheel tyre force per axle.
    pub force: Axles<f64>,
    /// One-step predicted body speed: belief mean and largest live particle.
    pub v_pred_mean: f64,
    pub v_pred_max: f64,
}

/// Hypothetical rear-wheel measurement used to predict how much one more
/// step at the exploration operating point would shrink the belief.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub slip: f64,
    pub fz_rear: f64,
    /// Variance of the force-equivalent of a rear wheel-speed measurement.
    pub force_noise_var: f64,
}

/// Variances of the maximum rear tyre force `D·Fz_r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Uncertainty {
    /// Under the current belief.
    pub est: f64,
    /// Under the one-step predictive posterior at the probe.
    pub pred: f64,
}

#[derive(Debug, Clone)]
pub struct Belief {
    pub(crate) x: [Vec<f64>; DIM],
    pub(crate) w: Vec<f64>,
    theta0: [Vec<f64>; 4],
    prior: PriorRanges,
    bounds: ParamBox,
    theta_step: [f64; 4],
    kernel_scale: f64,
    resample_threshold: f64,
    rng: ChaCha8Rng,
    seed: u64,
    clamped: usize,
    recoveries: usize,
}

impl PartialEq for Belief {
    fn eq(&self, other: &Self) -> bool {
        self.x == other.x && self.w == other.w && self.theta0 == other.theta0
    }
}

impl Belief {
    /// Fresh belief: `n` particles uniform over the prior, uniform weights.
    pub fn init_prior(seed: u64, cfg: &FilterConfig) -> Result<Self, BeliefError> {
        cfg.validate()?;
        let n = cfg.particles;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ranges = cfg.prior.intervals();
        let mut x: [Vec<f64>; DIM] = Default::default();
        for (k, [lo, hi]) in ranges.into_iter().enumerate() {
            x[k] = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        }
        let theta0 = [x[B].clone(), x[C].clone(), x[D].clone(), x[E].clone()];
        Ok(Self::assemble(
            x,
            vec![1.0 / n as f64; n],
            theta0,
            cfg,
            rng,
            seed,
        ))
    }

    /// Belief over explicit particles. The initial parameter set used by
    /// retrogressive resets is drawn fresh from the prior.
    pub fn from_particles(
        particles: &[AugmentedState],
        weights: &[f64],
        cfg: &FilterConfig,
        seed: u64,
    ) -> Result<Self, BeliefError> {
        let n = particles.len();
        if n == 0 || weights.len() != n {
            return Err(BeliefError::Shape);
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(BeliefError::Shape);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: [Vec<f64>; DIM] = Default::default();
        for p in particles {
            for (k, c) in p.coords().into_iter().enumerate() {
                x[k].push(c);
            }
        }
        let pr = &cfg.prior;
        let mut theta0: [Vec<f64>; 4] = Default::default();
        for (k, [lo, hi]) in [pr.b, pr.c, pr.d, pr.e].into_iter().enumerate() {
            theta0[k] = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        }
        let w = weights.iter().map(|v| v / total).collect();
        Ok(Self::assemble(x, w, theta0, cfg, rng, seed))
    }

    fn assemble(
        x: [Vec<f64>; DIM],
        w: Vec<f64>,
        theta0: [Vec<f64>; 4],
        cfg: &FilterConfig,
        rng: ChaCha8Rng,
        seed: u64,
    ) -> Self {
        let p = &cfg.prior;
        let theta_step = [p.b, p.c, p.d, p.e].map(|[lo, hi]| cfg.theta_jitter * (hi - lo));
        Self {
            x,
            w,
            theta0,
            prior: p.clone(),
            bounds: ParamBox::widened(p, cfg.box_widening),
            theta_step,
            kernel_scale: cfg.kernel_scale,
            resample_threshold: cfg.resample_threshold,
            rng,
            seed,
            clamped: 0,
            recoveries: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn coordinate(&self, k: usize) -> &[f64] {
        &self.x[k]
    }

    pub fn particle(&self, i: usize) -> AugmentedState {
        AugmentedState::from_coords(std::array::from_fn(|k| self.x[k][i]))
    }

    pub fn prior(&self) -> &PriorRanges {
        &self.prior
    }

    pub fn bounds(&self) -> &ParamBox {
        &self.bounds
    }

    /// Parameter coordinates clamped into the box during the last predict.
    pub fn clamped_last_step(&self) -> usize {
        self.clamped
    }

    pub fn recoveries(&self) -> usize {
        self.recoveries
    }

    /// Propagate every particle one step of the 3-DOF model under per-wheel
    /// torques and per-wheel loads. Tyre parameters are held, plus the
    /// configured random walk.
    pub fn predict(&mut self, torques: Axles<f64>, loads: Axles<f64>, model: &StepModel) {
        let n = self.len();
        let [v, wf, wr, b, c, d, e] = &mut self.x;
        for i in 0..n {
            let theta = TyreParams {
                b: b[i],
                c: c[i],
                d: d[i],
                e: e[i],
            };
            [v[i], wf[i], wr[i]] = model.step(&theta, [v[i], wf[i], wr[i]], torques, loads);
        }
        let mut clamped = 0;
        if self.theta_step.iter().any(|s| *s > 0.0) {
            for k in 0..4 {
                let step = self.theta_step[k];
                let (lo, hi) = (self.bounds.lo[k], self.bounds.hi[k]);
                for t in self.x[B + k].iter_mut() {
                    let z: f64 = self.rng.sample(StandardNormal);
                    let moved = *t + step * z;
                    *t = moved.clamp(lo, hi);
                    clamped += usize::from(moved != *t);
                }
            }
        }
        self.clamped = clamped;
    }

    /// Bayes update against a measurement, with systematic resampling and
    /// kernel regularisation when the effective sample size collapses.
    pub fn update(&mut self, meas: &Measurement) -> UpdateReport {
        let n = self.len();
        let inv = [
            1.0 / meas.noise.speed,
            1.0 / meas.noise.wheel_front,
            1.0 / meas.noise.wheel_rear,
        ];
        let y = [meas.speed, meas.wheel_front, meas.wheel_rear];
        let mut ll = vec![0.0; n];
        let mut best = f64::NEG_INFINITY;
        for (i, l) in ll.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in 0..3 {
                let r = y[k] - self.x[k][i];
                s += r * r * inv[k];
            }
            *l = -0.5 * s;
            best = best.max(*l);
        }
        // exp() underflows for every particle: the belief has lost the vehicle.
        if !(best > -700.0) {
            self.recover(meas);
            return UpdateReport {
                ess: n as f64,
                resampled: true,
                recovered: true,
            };
        }
        let mut total = 0.0;
        for (w, l) in self.w.iter_mut().zip(&ll) {
            *w *= (l - best).exp();
            total += *w;
        }
        if !(total > 0.0 && total.is_finite()) {
            self.recover(meas);
            return UpdateReport {
                ess: n as f64,
                resampled: true,
                recovered: true,
            };
        }
        for w in &mut self.w {
            *w /= total;
        }
        let ess = self.ess();
        let resampled = ess < self.resample_threshold * n as f64;
        if resampled {
            self.resample();
        }
        UpdateReport {
            ess,
            resampled,
            recovered: false,
        }
    }

    fn recover(&mut self, meas: &Measurement) {
        warn!(
            "likelihood underflow at y = ({:.3}, {:.3}, {:.3}); redrawing belief from prior",
            meas.speed, meas.wheel_front, meas.wheel_rear
        );
        let n = self.len();
        let sd = [
            meas.noise.speed.sqrt(),
            meas.noise.wheel_front.sqrt(),
            meas.noise.wheel_rear.sqrt(),
        ];
        let y = [meas.speed, meas.wheel_front, meas.wheel_rear];
        for k in 0..3 {
            for i in 0..n {
                let z: f64 = self.rng.sample(StandardNormal);
                self.x[k][i] = (y[k] + sd[k] * z).max(0.0);
            }
        }
        for k in 0..4 {
            self.x[B + k].clone_from(&self.theta0[k]);
        }
        self.w.fill(1.0 / n as f64);
        self.recoveries += 1;
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.w.iter().map(|w| w * w).sum::<f64>()
    }

    fn resample(&mut self) {
        let n = self.len();
        let spread = self.std_coords();
        let dim = DIM as f64;
        let h = self.kernel_scale * (4.0 / (n as f64 * (dim + 2.0))).powf(1.0 / (dim + 4.0));

        let mut picks = Vec::with_capacity(n);
        let step = 1.0 / n as f64;
        let mut target = self.rng.random::<f64>() * step;
        let mut cum = self.w[0];
        let mut i = 0;
        for _ in 0..n {
            while target > cum && i + 1 < n {
                i += 1;
                cum += self.w[i];
            }
            picks.push(i);
            target += step;
        }

        for (k, sd) in spread.into_iter().enumerate() {
            let src = &self.x[k];
            let mut out: Vec<f64> = picks.iter().map(|&i| src[i]).collect();
            let bw = h * sd;
            if bw > 0.0 {
                for v in &mut out {
                    let z: f64 = self.rng.sample(StandardNormal);
                    *v += bw * z;
                }
            }
            if k >= B {
                let (lo, hi) = (self.bounds.lo[k - B], self.bounds.hi[k - B]);
                out.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
            } else {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            self.x[k] = out;
        }
        self.w.fill(step);
    }

    /// Sensor-driven reset: when the surface reading changes, every particle's
    /// tyre parameters return to their initial prior draw and the weights to
    /// uniform. Vehicle states are kept.
    pub fn retrogressive_resample<R: PartialEq + ?Sized>(
        &mut self,
        rho_now: &R,
        rho_prev: &R,
    ) -> bool {
        if rho_now == rho_prev {
            return false;
        }
        self.refresh_parameters();
        let n = self.len();
        self.w.fill(1.0 / n as f64);
        true
    }

    /// Put every particle's tyre parameters back to the initial prior draw,
    /// keeping states and weights. After an update whose likelihood cannot
    /// depend on the parameters (the first one), this restores the parameter
    /// diversity lost to resampling.
    pub fn refresh_parameters(&mut self) {
        for k in 0..4 {
            self.x[B + k].clone_from(&self.theta0[k]);
        }
    }

    fn mean_coords(&self) -> [f64; DIM] {
        std::array::from_fn(|k| self.x[k].iter().zip(&self.w).map(|(x, w)| x * w).sum())
    }

    fn std_coords(&self) -> [f64; DIM] {
        let mean = self.mean_coords();
        std::array::from_fn(|k| {
            let var: f64 = self.x[k]
                .iter()
                .zip(&self.w)
                .map(|(x, w)| w * (x - mean[k]).powi(2))
                .sum();
            var.max(0.0).sqrt()
        })
    }

    /// Weighted mean of the particles, per coordinate.
    pub fn expectation(&self) -> AugmentedState {
        AugmentedState::from_coords(self.mean_coords())
    }

    /// Weighted standard deviation, per coordinate.
    pub fn std_dev(&self) -> AugmentedState {
        AugmentedState::from_coords(self.std_coords())
    }

    pub fn summarize(&self, loads: Axles<f64>, model: &StepModel) -> BeliefSummary {
        let n = self.len();
        let [v, wf, wr, b, c, d, e] = &self.x;
        let live = 0.1 / n as f64;
        let (mut mu_f, mut mu_r, mut v_pred, mut v_max) = (0.0, 0.0, 0.0, f64::NEG_INFINITY);
        for i in 0..n {
            let theta = TyreParams {
                b: b[i],
                c: c[i],
                d: d[i],
                e: e[i],
            };
            let (ff, _) = model.tyre(&theta, wf[i], v[i], 1.0);
            let (fr, _) = model.tyre(&theta, wr[i], v[i], 1.0);
            let w = self.w[i];
            mu_f += w * ff;
            mu_r += w * fr;
            // Speed prediction at the current wheel speeds; the torque for the
            // next step is not yet chosen.
            let vn = model.body(v[i], ff * loads.front, fr * loads.rear);
            v_pred += w * vn;
            if w >= live {
                v_max = v_max.max(vn);
            }
        }
        BeliefSummary {
            mean: self.expectation(),
            std: self.std_dev(),
            mu: Axles::new(mu_f, mu_r),
            force: Axles::new(mu_f * loads.front, mu_r * loads.rear),
            v_pred_mean: v_pred,
            v_pred_max: if v_max.is_finite() { v_max } else { v_pred },
        }
    }

    /// Peak slip of the mean tyre parameters: the operating point that
    /// exploration drives the rear wheel toward.
    pub fn probe_slip(&self) -> f64 {
        self.expectation().theta.peak_slip().unwrap_or(0.15)
    }

    /// Variance of the maximum rear force under the belief (`est`) and under
    /// the one-step predictive posterior after a hypothetical rear-wheel
    /// observation at the probe operating point (`pred`).
    pub fn uncertainty(&self, fz_rear: f64, probe: &Probe) -> Uncertainty {
        let n = self.len();
        let d = &self.x[D];
        let est = weighted_variance(d, &self.w) * fz_rear * fz_rear;

        let w = &self.w;
        let mut force = vec![0.0; n];
        for (i, f) in force.iter_mut().enumerate() {
            let t = TyreParams {
                b: self.x[B][i],
                c: self.x[C][i],
                d: d[i],
                e: self.x[E][i],
            };
            *f = t.friction(probe.slip) * probe.fz_rear;
        }
        let mean = |x: &[f64]| x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>();
        let (md, mf) = (mean(d), mean(&force));
        let (mut cov, mut var_f) = (0.0, 0.0);
        for i in 0..n {
            cov += w[i] * (d[i] - md) * (force[i] - mf);
            var_f += w[i] * (force[i] - mf).powi(2);
        }
        cov *= fz_rear;
        // Expected posterior variance after observing the probe force,
        // linear-Gaussian approximation.
        let pred = (est - cov * cov / (var_f + probe.force_noise_var)).max(0.0);
        Uncertainty { est, pred }
    }
}

pub fn weighted_variance(x: &[f64], w: &[f64]) -> f64 {
    let mean: f64 = x.iter().zip(w).map(|(x, w)| x * w).sum();
    x.iter()
        .zip(w)
        .map(|(x, w)| w * (x - mean).powi(2))
        .sum::<f64>()
        .max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg(n: usize) -> FilterConfig {
        FilterConfig {
            particles: n,
            ..Default::default()
        }
    }

    fn point(v: f64, d: f64) -> AugmentedState {
        AugmentedState {
            v,
            omega_front: v / 0.31,
            omega_rear: v / 0.31,
            theta: TyreParams {
                b: 10.0,
                c: 1.5,
                d,
                e: 0.0,
            },
        }
    }

    fn model() -> StepModel {
        StepModel {
            dt: 0.01,
            mass: 1600.0,
            wheel_inertia: 1.2,
            radius: 0.31,
        }
    }

    #[test]
    fn prior_is_uniform_and_deterministic() {
        let a = Belief::init_prior(1, &cfg(10_000)).unwrap();
        assert!(a.weights().iter().all(|w| *w == 1e-4));
        let b = Belief::init_prior(1, &cfg(10_000)).unwrap();
        assert_eq!(a, b);
        let c = Belief::init_prior(2, &cfg(10_000)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prior_draws_stay_in_ranges() {
        let p = PriorRanges::default();
        let bel = Belief::init_prior(7, &cfg(10_000)).unwrap();
        for (k, [lo, hi]) in p.intervals().into_iter().enumerate() {
            let xs = bel.coordinate(k);
            let min = xs.iter().cloned().fold(f64::MAX, f64::min);
            let max = xs.iter().cloned().fold(f64::MIN, f64::max);
            assert!(min >= lo && max <= hi, "coordinate {k}: [{min}, {max}]");
            // and the draws actually fill the range
            assert!(min < lo + 0.01 * (hi - lo) && max > hi - 0.01 * (hi - lo));
        }
    }

    #[test]
    fn refuses_degenerate_filter() {
        assert_eq!(
            Belief::init_prior(1, &cfg(10)).unwrap_err(),
            BeliefError::TooFewParticles(10)
        );
    }

    #[test]
    fn predict_without_force_keeps_speed() {
        let mut c = cfg(100);
        c.theta_jitter = 0.0;
        let ps: Vec<_> = (0..5).map(|i| point(5.0 + i as f64, 0.5)).collect();
        let mut bel = Belief::from_particles(&ps, &[1.0; 5], &c, 3).unwrap();
        bel.predict(Axles::new(0.0, 0.0), Axles::new(0.0, 0.0), &model());
        for (i, p) in ps.iter().enumerate() {
            assert_eq!(bel.particle(i).v, p.v);
        }
    }

    #[test]
    fn predict_wheel_step_arithmetic() {
        let mut c = cfg(100);
        c.theta_jitter = 0.0;
        let mut bel = Belief::from_particles(&[point(10.0, 0.8)], &[1.0], &c, 3).unwrap();
        bel.predict(Axles::new(100.0, 100.0), Axles::new(0.0, 0.0), &model());
        let p = bel.particle(0);
        assert_relative_eq!(
            p.omega_rear - 10.0 / 0.31,
            0.01 * 100.0 / 1.2,
            epsilon = 1e-12
        );
        assert_relative_eq!(p.omega_rear - 10.0 / 0.31, 0.8333, epsilon = 1e-4);
    }

    #[test]
    fn identical_particles_keep_weights() {
        let ps = vec![point(10.0, 0.5); 4];
        let w = [0.1, 0.2, 0.3, 0.4];
        let mut bel = Belief::from_particles(&ps, &w, &cfg(100), 1).unwrap();
        let meas = Measurement {
            speed: 9.0,
            wheel_front: 30.0,
            wheel_rear: 31.0,
            noise: MeasurementNoise::default(),
        };
        let r = bel.update(&meas);
        assert!(!r.resampled);
        for (a, b) in bel.weights().iter().zip(w) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn matching_particle_dominates() {
        let ps = [point(10.0, 0.5), point(12.0, 0.5)];
        let mut bel = Belief::from_particles(&ps, &[0.5, 0.5], &cfg(100), 1).unwrap();
        let noise = MeasurementNoise {
            speed: 1e-3,
            wheel_front: 1e-3,
            wheel_rear: 1e-3,
        };
        let meas = Measurement {
            speed: 10.0,
            wheel_front: 10.0 / 0.31,
            wheel_rear: 10.0 / 0.31,
            noise,
        };
        bel.update(&meas);
        assert!(bel.weights()[0] > 1.0 - 1e-12);
    }

    #[test]
    fn underflow_recovers_from_prior() {
        let mut bel = Belief::init_prior(4, &cfg(200)).unwrap();
        let meas = Measurement {
            speed: 80.0,
            wheel_front: 250.0,
            wheel_rear: 250.0,
            noise: MeasurementNoise::default(),
        };
        let r = bel.update(&meas);
        assert!(r.recovered);
        assert_eq!(bel.recoveries(), 1);
        let sum: f64 = bel.weights().iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-9);
        assert!((bel.expectation().v - 80.0).abs() < 0.5);
    }

    #[test]
    fn retrogressive_reset_keeps_states() {
        let mut bel = Belief::init_prior(5, &cfg(500)).unwrap();
        let meas = Measurement {
            speed: 2.0,
            wheel_front: 6.5,
            wheel_rear: 6.5,
            noise: MeasurementNoise::default(),
        };
        for _ in 0..5 {
            bel.predict(Axles::new(10.0, 10.0), Axles::new(4000.0, 3700.0), &model());
            bel.update(&meas);
        }
        let before = bel.clone();
        assert!(!bel.retrogressive_resample("dry", "dry"));
        assert_eq!(bel, before);

        assert!(bel.retrogressive_resample("snow", "dry"));
        for k in [V, OMEGA_F, OMEGA_R] {
            assert_eq!(bel.coordinate(k), before.coordinate(k));
        }
        assert!(bel.weights().iter().all(|w| *w == 1.0 / 500.0));
        let fresh = Belief::init_prior(5, &cfg(500)).unwrap();
        for k in [B, C, D, E] {
            assert_eq!(bel.coordinate(k), fresh.coordinate(k));
        }
    }

    #[test]
    fn expectation_examples() {
        let ps = [point(1.0, 0.5), point(2.0, 0.5), point(3.0, 0.5)];
        let bel = Belief::from_particles(&ps, &[1.0; 3], &cfg(100), 1).unwrap();
        assert_relative_eq!(bel.expectation().v, 2.0, epsilon = 1e-12);

        let bel = Belief::from_particles(
            &[point(5.0, 0.5), point(99.0, 0.5)],
            &[1.0, 0.0],
            &cfg(100),
            1,
        )
        .unwrap();
        assert_eq!(bel.expectation().v, 5.0);
    }

    #[test]
    fn uncertainty_examples() {
        let probe = Probe {
            slip: 0.1,
            fz_rear: 5000.0,
            force_noise_var: 7.5e4,
        };
        let bel = Belief::from_particles(&[point(10.0, 0.7); 3], &[1.0; 3], &cfg(100), 1).unwrap();
        let u = bel.uncertainty(5000.0, &probe);
        assert_eq!((u.est, u.pred), (0.0, 0.0));

        let bel = Belief::from_particles(
            &[point(10.0, 0.2), point(10.0, 0.4)],
            &[1.0, 1.0],
            &cfg(100),
            1,
        )
        .unwrap();
        let u = bel.uncertainty(5000.0, &probe);
        assert_relative_eq!(u.est, 250_000.0, epsilon = 1e-6);
        // F = μ(0.1)·5000·D with μ(0.1)/D = sin(1.5·atan 1)
        let g = (1.5 * 1f64.atan()).sin() * 5000.0;
        let var_f = g * g * 0.01;
        assert_relative_eq!(u.pred, 250_000.0 * 7.5e4 / (var_f + 7.5e4), epsilon = 1e-6);

        let quiet = Probe {
            force_noise_var: 1e-6,
            ..probe
        };
        assert!(bel.uncertainty(5000.0, &quiet).pred < 1e-6 * u.est);
    }

    #[test]
    fn parameter_box_caps_curvature() {
        let bx = ParamBox::widened(&PriorRanges::default(), 0.1);
        assert_relative_eq!(bx.lo[0], 2.3, epsilon = 1e-12);
        assert_relative_eq!(bx.hi[0], 22.7, epsilon = 1e-12);
        assert_eq!(bx.hi[3], 1.0);
        assert_relative_eq!(bx.lo[3], -13.3, epsilon = 1e-12);
    }
}
