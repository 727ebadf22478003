#![allow(dead_code)]

use std::path::{Path, PathBuf};
use tval::belief::{Belief, FilterConfig, Measurement, StepModel};
use tval::config::{Mode, Scenario, ScenarioConfig};
use tval::plant::{plant_step, PlantState, VehicleParams};
use tval::{Axles, TyreParams};

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn default_scenario_path() -> PathBuf {
    manifest_dir().join("scenarios/default.toml")
}

pub fn default_config() -> ScenarioConfig {
    Scenario::load(&default_scenario_path()).unwrap().config
}

/// The default scenario with a different mode, seed, particle count and
/// length. Surface segments past the end are dropped.
pub fn scenario(mode: Mode, seed: u64, particles: usize, duration: f64) -> Scenario {
    let mut cfg = default_config();
    cfg.mode = mode;
    cfg.seed = seed;
    cfg.filter.particles = particles;
    cfg.duration = duration;
    cfg.surface.retain(|s| s.t_start < duration);
    build(cfg)
}

pub fn build(cfg: ScenarioConfig) -> Scenario {
    let base = default_scenario_path();
    Scenario::build(cfg, base.parent().unwrap_or(Path::new("."))).unwrap()
}

pub fn dry() -> TyreParams {
    TyreParams::new(10.0, 1.9, 1.0, 0.97).unwrap()
}

pub fn snow() -> TyreParams {
    TyreParams::new(11.0, 1.7, 0.3, 0.9).unwrap()
}

/// Vehicle of the default scenario.
pub fn vehicle() -> VehicleParams {
    default_config().vehicle
}

/// Plant and filter driven open loop at the controller rate, for estimator
/// experiments away from the full scenario.
pub struct Rig {
    pub veh: VehicleParams,
    pub surface: TyreParams,
    pub plant: PlantState,
    pub belief: Belief,
    pub model: StepModel,
    pub cfg: FilterConfig,
    applied: Axles<f64>,
    loads: Axles<f64>,
    ticks: usize,
}

impl Rig {
    /// Vehicle rolling at `speed`, with the filter's state prior centred on it.
    pub fn new(surface: TyreParams, speed: f64, particles: usize, seed: u64) -> Self {
        let veh = vehicle();
        let r = veh.wheel_radius;
        let mut cfg = FilterConfig {
            particles,
            ..Default::default()
        };
        cfg.prior.v = [speed - 2.0, speed + 2.0];
        cfg.prior.omega_front = [(speed - 2.0) / r, (speed + 2.0) / r];
        cfg.prior.omega_rear = cfg.prior.omega_front;
        let plant = PlantState::rolling(&veh, speed);
        let loads = plant.axle_wheel_load();
        Self {
            model: StepModel::new(&veh, 0.01),
            belief: Belief::init_prior(seed, &cfg).unwrap(),
            veh,
            surface,
            plant,
            cfg,
            applied: Axles::new(0.0, 0.0),
            loads,
            ticks: 0,
        }
    }

    /// One controller tick: predict under last tick's torques, update on the
    /// noiseless plant state, then apply `torques` for 10 ms.
    pub fn tick(&mut self, torques: Axles<f64>) {
        let om = self.plant.axle_omega();
        let meas = Measurement {
            speed: self.plant.u,
            wheel_front: om.front,
            wheel_rear: om.rear,
            noise: self.cfg.noise,
        };
        if self.ticks > 0 {
            self.belief.predict(self.applied, self.loads, &self.model);
        }
        self.belief.update(&meas);
        if self.ticks == 0 {
            self.belief.refresh_parameters();
        }
        self.loads = self.plant.axle_wheel_load();
        for _ in 0..10 {
            self.plant = plant_step(
                &self.plant,
                &torques.to_wheels(),
                &self.veh,
                &self.surface,
                1e-3,
            )
            .unwrap();
        }
        self.applied = torques;
        self.ticks += 1;
    }

    pub fn rear_slip(&self) -> f64 {
        (self.plant.axle_omega().rear * self.veh.wheel_radius - self.plant.u) / self.plant.u
    }

    /// Rear torque that holds the true peak force, per wheel.
    pub fn peak_torque(&self) -> f64 {
        self.surface.d * self.plant.axle_wheel_load().rear * self.veh.wheel_radius
    }
}
