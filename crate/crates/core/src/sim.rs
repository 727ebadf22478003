//! Closed-loop scenario runner: plant at the integration step, estimator,
//! driver, regulation and dual controller at the controller tick.

use crate::belief::{Belief, BeliefError, Measurement, Probe, StepModel};
use crate::config::{Mode, Scenario, SpeedPrediction};
use crate::dcee::{select_action, DceeInput};
use crate::driver_env::{driver_demand, environment_at, PiState};
use crate::energy::EnergyMeter;
use crate::plant::{plant_step, PlantState};
use crate::regulation::{
    availability_gate, blend, cornering_stiffness, critical_speed, energy_gate,
    understeer_gradient, update_request, ActivationState, HysteresisSwitch,
};
use crate::telemetry::{SegmentSummary, Summary, TelemetryRecord, V_CRIT_CAP};
use crate::tyre::slip_or_zero;
use crate::Axles;
use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("invalid regulation settings: {0}")]
    Regulation(String),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<TelemetryRecord>,
    pub summary: Summary,
}

impl RunOutput {
    pub fn completed(&self) -> bool {
        self.summary.failure.is_none()
    }
}

fn tick_stream(seed: u64, tick: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tick.rotate_left(17)
}

/// Run the scenario to its end, or until the plant diverges. On divergence
/// the telemetry up to the last good tick is returned with the failure
/// noted in the summary.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, SimError> {
    let cfg = &scenario.config;
    let veh = &cfg.vehicle;
    let dt_c = cfg.timing.controller_dt();
    let dt_p = cfg.timing.plant_dt;
    let ticks = (cfg.duration / dt_c).round() as usize;
    let model = StepModel::new(veh, dt_c);
    let noise = cfg.filter.noise;
    let sd = [
        noise.speed.sqrt(),
        noise.wheel_front.sqrt(),
        noise.wheel_rear.sqrt(),
    ];
    let static_axle = veh.static_loads();
    let static_wheel = static_axle.map(|l| 0.5 * l);
    let reg = &cfg.regulation;
    let corner = reg.cornering;
    let sign = reg.exploration_sign;
    let learning = cfg.mode == Mode::Tval;
    let regulated = cfg.mode != Mode::Passive;

    let mut belief = Belief::init_prior(cfg.seed, &cfg.filter)?;
    let mut sensor = ChaCha8Rng::seed_from_u64(cfg.seed);
    sensor.set_stream(1);
    let (k1, k2) = cfg.thresholds();
    let mut switch = HysteresisSwitch::new(k1, k2).map_err(SimError::Regulation)?;
    let mut act = ActivationState::new(reg.delta_p);
    let mut pi = PiState::default();
    let mut meter = EnergyMeter::new(cfg.regen_efficiency);

    let mut plant = PlantState::rolling(veh, cfg.offset_speed);
    let mut applied = Axles::new(0.0, 0.0);
    let mut loads_prev = plant.axle_wheel_load();
    let mut rho_prev: Option<String> = None;
    let mut records = Vec::with_capacity(ticks);
    let mut failure = None;

    info!(
        "running {} for {:.1} s with {} particles, seed {}",
        cfg.mode,
        cfg.duration,
        belief.len(),
        cfg.seed
    );

    for k in 0..ticks {
        let t = k as f64 * dt_c;
        let (theta_true, rho) = match environment_at(t, &scenario.schedule) {
            Ok(env) => env,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let surface = scenario.schedule.index_at(t).unwrap_or(0);

        let omega = plant.axle_omega();
        let start = plant.clone();
        let meas = Measurement {
            speed: plant.u + sd[0] * sensor.sample::<f64, _>(StandardNormal),
            wheel_front: omega.front + sd[1] * sensor.sample::<f64, _>(StandardNormal),
            wheel_rear: omega.rear + sd[2] * sensor.sample::<f64, _>(StandardNormal),
            noise,
        };

        if k > 0 {
            belief.predict(applied, loads_prev, &model);
        }
        if let Some(prev) = &rho_prev {
            if belief.retrogressive_resample(rho, prev.as_str()) {
                debug!("t = {t:.2} s: surface sensor changed to {rho}, tyre parameters reset");
            }
        }
        rho_prev = Some(rho.to_string());
        belief.update(&meas);
        if k == 0 {
            belief.refresh_parameters();
        }

        let loads = plant.axle_wheel_load();
        let summ = belief.summarize(loads, &model);
        let d_hat = summ.mean.theta.d;

        let v_ref = scenario.cycle.speed(t);
        let a_limit = theta_true.d * veh.gravity;
        let (drv, pi_next) = driver_demand(
            scenario.cycle.acceleration(t),
            plant.u,
            pi,
            &cfg.driver,
            a_limit,
            veh.mass,
            veh.wheel_radius,
            dt_c,
        );
        pi = pi_next;

        let probe = Probe {
            slip: sign * belief.probe_slip(),
            fz_rear: loads.rear,
            force_noise_var: cfg.sensor_force_variance(),
        };
        let unc = belief.uncertainty(loads.rear, &probe);

        let v_pred = match reg.speed_prediction {
            SpeedPrediction::Mean => summ.v_pred_mean,
            SpeedPrediction::Max => summ.v_pred_max,
        };
        let stiffness = |fz: f64, fx: f64, fz0: f64| {
            cornering_stiffness(d_hat, fz, fx, corner.c1, corner.c2, fz0, corner.n)
        };
        let c_alpha = Axles::new(
            2.0 * stiffness(loads.front, summ.force.front, static_wheel.front),
            2.0 * stiffness(loads.rear, summ.force.rear, static_wheel.rear),
        );
        let v_crit = critical_speed(
            understeer_gradient(static_axle, c_alpha),
            veh.wheelbase(),
            veh.gravity,
        );

        if regulated {
            let (tau_p, sw) = energy_gate(unc.est, unc.pred, switch);
            switch = sw;
            let tau_s = v_pred < v_crit;
            let tau_a = availability_gate(
                reg.availability,
                veh.mass,
                drv.a_ref,
                d_hat,
                loads.map(|l| 2.0 * l),
                sign,
                reg.availability_margin,
            );
            act.set_flags(tau_p, tau_s, tau_a);
        }
        if learning {
            act = update_request(act, act.tau_r);
        }
        let w1 = act.w1();

        let mut u_tval = drv.torques;
        if learning && act.f > 0 {
            let inp = DceeInput {
                u_prev: applied,
                force_demand: veh.mass * drv.a_ref,
                loads,
                sign,
                noise,
                stream: tick_stream(cfg.seed, k as u64),
            };
            let cmd = select_action(&belief, &inp, &cfg.dcee, &model);
            u_tval = Axles::new(cmd.u_front, cmd.u_rear);
        }
        let command = blend(u_tval, drv.torques, w1);
        let wheels = command.to_wheels();

        let mut power = 0.0;
        for _ in 0..cfg.timing.substeps {
            if cfg.mode == Mode::TvAlways {
                power = (0..4)
                    .map(|j| theta_true.d * plant.fz[j] * veh.wheel_radius * plant.omega[j].abs())
                    .sum();
                meter.add_power(power, dt_p);
            } else {
                power = meter.add(&wheels, &plant.omega, dt_p);
            }
            match plant_step(&plant, &wheels, veh, &theta_true, dt_p) {
                Ok(next) => plant = next,
                Err(e) => {
                    failure = Some(format!("t = {t:.3} s: {e}"));
                    break;
                }
            }
        }
        if failure.is_some() {
            break;
        }

        let rec = TelemetryRecord {
            t,
            surface,
            v_ref,
            a_ref: drv.a_ref,
            v_true: start.u,
            v_meas: meas.speed,
            omega_f_true: omega.front,
            omega_f_meas: meas.wheel_front,
            omega_r_true: omega.rear,
            omega_r_meas: meas.wheel_rear,
            mu_f_true: theta_true.friction(slip_or_zero(omega.front, veh.wheel_radius, start.u)),
            mu_r_true: theta_true.friction(slip_or_zero(omega.rear, veh.wheel_radius, start.u)),
            mu_f_est: summ.mu.front,
            mu_r_est: summ.mu.rear,
            b_est: summ.mean.theta.b,
            b_std: summ.std.theta.b,
            c_est: summ.mean.theta.c,
            c_std: summ.std.theta.c,
            d_est: d_hat,
            d_std: summ.std.theta.d,
            e_est: summ.mean.theta.e,
            e_std: summ.std.theta.e,
            d_true: theta_true.d,
            s2_est: unc.est,
            s2_pred: unc.pred,
            tau_p: act.tau_p,
            tau_s: act.tau_s,
            tau_a: act.tau_a,
            tau_r: act.tau_r,
            w1,
            v_pred,
            v_crit: v_crit.min(V_CRIT_CAP),
            u_f_driver: drv.torques.front,
            u_r_driver: drv.torques.rear,
            u_f_tval: u_tval.front,
            u_r_tval: u_tval.rear,
            u_f: command.front,
            u_r: command.rear,
            fz: start.fz,
            fx: start.fx,
            power,
            energy: meter.plain,
            energy_regen: meter.regen,
        };
        records.push(rec);
        applied = command;
        loads_prev = loads;
    }

    let summary = summarize(
        scenario,
        &records,
        belief.len(),
        belief.recoveries(),
        failure,
    );
    Ok(RunOutput { records, summary })
}

fn summarize(
    scenario: &Scenario,
    records: &[TelemetryRecord],
    particles: usize,
    recoveries: usize,
    failure: Option<String>,
) -> Summary {
    let cfg = &scenario.config;
    let dt_c = cfg.timing.controller_dt();
    let segs = scenario.schedule.segments();
    let mut segments = Vec::with_capacity(segs.len());
    for (i, seg) in segs.iter().enumerate() {
        let t_end = segs
            .get(i + 1)
            .map_or(scenario.schedule.end(), |s| s.t_start);
        let rows: Vec<&TelemetryRecord> = records.iter().filter(|r| r.surface == i).collect();
        let last = rows.last();
        segments.push(SegmentSummary {
            label: seg.label.clone(),
            t_start: seg.t_start,
            t_end,
            d_true: seg.theta.d,
            d_est: last.map_or(f64::NAN, |r| r.d_est),
            d_std: last.map_or(f64::NAN, |r| r.d_std),
            full_engagement: rows.iter().find(|r| r.w1 >= 1.0).map(|r| r.t),
            active_ticks: rows.iter().filter(|r| r.w1 > 0.0).count(),
        });
    }
    let n = records.len().max(1) as f64;
    let speed_rmse = (records
        .iter()
        .map(|r| (r.v_true - r.v_ref).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let max_w1_step = records
        .windows(2)
        .map(|w| (w[1].w1 - w[0].w1).abs())
        .fold(records.first().map_or(0.0, |r| r.w1), f64::max);
    let last = records.last();
    Summary {
        mode: cfg.mode.name().to_string(),
        seed: cfg.seed,
        particles,
        ticks: records.len(),
        duration: records.len() as f64 * dt_c,
        energy: last.map_or(0.0, |r| r.energy),
        energy_regen: last.map_or(0.0, |r| r.energy_regen),
        speed_rmse,
        max_w1_step,
        stability_denials: records
            .iter()
            .filter(|r| r.tau_p && r.tau_a && !r.tau_s)
            .count(),
        availability_denials: records
            .iter()
            .filter(|r| r.tau_p && r.tau_s && !r.tau_a)
            .count(),
        filter_recoveries: recoveries,
        segments,
        failure,
    }
}
