//! One-step-lookahead dual control: the rear axle is driven toward the
//! believed peak tyre force while the front axle reacts to keep the
//! driver's total force demand.

use crate::belief::{Belief, MeasurementNoise, StepModel, B, C, D, E, OMEGA_F, OMEGA_R, V};
use crate::tyre::TyreParams;
use crate::Axles;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Candidate per-tick torque increments for the exploring wheel, N·m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionSet {
    increments: Vec<f64>,
}

impl Default for ActionSet {
    fn default() -> Self {
        Self::new(vec![0.0, 1.0, -1.0, 10.0, -10.0, 100.0, -100.0]).unwrap()
    }
}

impl ActionSet {
    /// Increments are kept in tie-break order: smaller magnitude first, then
    /// negative before positive.
    pub fn new(mut increments: Vec<f64>) -> Result<Self, String> {
        if increments.iter().any(|t| !t.is_finite()) {
            return Err("action increments must be finite".into());
        }
        increments.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
        increments.dedup();
        if !increments.contains(&0.0) {
            return Err("action set must contain 0".into());
        }
        if increments.iter().any(|t| !increments.contains(&-t)) {
            return Err("action set must be symmetric about 0".into());
        }
        Ok(Self { increments })
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn max_increment(&self) -> f64 {
        self.increments.iter().fold(0.0, |m, t| m.max(t.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DceeConfig {
    pub actions: ActionSet,
    /// Predicted observations per candidate. The first sits at the belief
    /// mean; further ones are drawn from the predictive distribution.
    pub observation_samples: usize,
}

impl Default for DceeConfig {
    fn default() -> Self {
        Self {
            actions: ActionSet::default(),
            observation_samples: 1,
        }
    }
}

/// Inputs to one selection, all per wheel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DceeInput {
    pub u_prev: Axles<f64>,
    /// Driver's total longitudinal force demand `m·a_ref`, N.
    pub force_demand: f64,
    pub loads: Axles<f64>,
    /// Direction the rear axle explores in, ±1.
    pub sign: f64,
    pub noise: MeasurementNoise,
    /// Seeds the per-candidate observation substreams.
    pub stream: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlCommand {
    pub u_front: f64,
    pub u_rear: f64,
    pub tau: f64,
    pub cost: f64,
    /// Expected rear tyre force one step ahead under the chosen torque.
    pub rear_force: f64,
    pub front_clamped: bool,
}

/// Per-particle quantities shared by every candidate.
struct Shared {
    v: Vec<f64>,
    /// Body speed the wheels step against.
    vp: Vec<f64>,
    wf_next: Vec<f64>,
    ff_mean: Vec<f64>,
    wr: Vec<f64>,
    fr: Vec<f64>,
    dfr: Vec<f64>,
}

fn shared(belief: &Belief, inp: &DceeInput, model: &StepModel) -> Shared {
    let n = belief.len();
    let [v, wf, wr, b, c, d, e] = [V, OMEGA_F, OMEGA_R, B, C, D, E].map(|k| belief.coordinate(k));
    let mut s = Shared {
        v: v.to_vec(),
        vp: Vec::with_capacity(n),
        wf_next: Vec::with_capacity(n),
        ff_mean: Vec::with_capacity(n),
        wr: wr.to_vec(),
        fr: Vec::with_capacity(n),
        dfr: Vec::with_capacity(n),
    };
    let fz = inp.loads;
    for i in 0..n {
        let theta = TyreParams {
            b: b[i],
            c: c[i],
            d: d[i],
            e: e[i],
        };
        let (af, ar) = (
            model.tyre(&theta, wf[i], v[i], fz.front),
            model.tyre(&theta, wr[i], v[i], fz.rear),
        );
        let vp = model.body(v[i], af.0, ar.0);
        let (wf1, _) = model.spin(
            &theta,
            wf[i],
            vp,
            fz.front,
            inp.u_prev.front,
            model.shift(af, wf[i], v[i], vp),
        );
        s.vp.push(vp);
        s.wf_next.push(wf1);
        s.ff_mean
            .push(model.mean_force(wf[i], wf1, inp.u_prev.front));
        let (fr, dfr) = model.shift(ar, wr[i], v[i], vp);
        s.fr.push(fr);
        s.dfr.push(dfr);
    }
    s
}

/// Expected `|F − s·D·Fz_r|` under rear torque `u_rear` and its expected rear force.
fn candidate_cost(
    belief: &Belief,
    sh: &Shared,
    u_rear: f64,
    inp: &DceeInput,
    model: &StepModel,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let n = belief.len();
    let w = belief.weights();
    let [b, c, d, e] = [B, C, D, E].map(|k| belief.coordinate(k));
    let fz = inp.loads.rear;

    let mut v_next = Vec::with_capacity(n);
    let mut wr_next = Vec::with_capacity(n);
    let mut gap = Vec::with_capacity(n);
    let mut force_mean = 0.0;
    for i in 0..n {
        let theta = TyreParams {
            b: b[i],
            c: c[i],
            d: d[i],
            e: e[i],
        };
        let (omega, force) = model.spin(
            &theta,
            sh.wr[i],
            sh.vp[i],
            fz,
            u_rear,
            (sh.fr[i], sh.dfr[i]),
        );
        force_mean += w[i] * force;
        gap.push((force - inp.sign * d[i] * fz).abs());
        wr_next.push(omega);
        v_next.push(model.body(
            sh.v[i],
            sh.ff_mean[i],
            model.mean_force(sh.wr[i], omega, u_rear),
        ));
    }

    let inv = [
        1.0 / inp.noise.speed,
        1.0 / inp.noise.wheel_front,
        1.0 / inp.noise.wheel_rear,
    ];
    let pred: [&[f64]; 3] = [&v_next, &sh.wf_next, &wr_next];
    let mut mean_obs = [0.0; 3];
    for k in 0..3 {
        mean_obs[k] = pred[k].iter().zip(w).map(|(x, w)| x * w).sum();
    }

    let mut cost = 0.0;
    let mut loglik = vec![0.0; n];
    for s in 0..samples.max(1) {
        let y = if s == 0 {
            mean_obs
        } else {
            let j = pick(w, rng.random::<f64>());
            let sd = [
                inp.noise.speed.sqrt(),
                inp.noise.wheel_front.sqrt(),
                inp.noise.wheel_rear.sqrt(),
            ];
            std::array::from_fn(|k| pred[k][j] + sd[k] * rng.sample::<f64, _>(StandardNormal))
        };
        let mut best = f64::NEG_INFINITY;
        for (i, l) in loglik.iter_mut().enumerate() {
            let mut q = 0.0;
            for k in 0..3 {
                let r = y[k] - pred[k][i];
                q += r * r * inv[k];
            }
            *l = -0.5 * q;
            if w[i] > 0.0 {
                best = best.max(*l);
            }
        }
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let wt = w[i] * (loglik[i] - best).exp();
            num += wt * gap[i];
            den += wt;
        }
        cost += num / den;
    }
    (cost / samples.max(1) as f64, force_mean)
}

fn pick(w: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        acc += wi;
        if u < acc {
            return i;
        }
    }
    w.len() - 1
}

/// Costs of every candidate, in action-set order.
pub fn candidate_costs(
    belief: &Belief,
    inp: &DceeInput,
    cfg: &DceeConfig,
    model: &StepModel,
) -> Vec<(f64, f64, f64)> {
    let sh = shared(belief, inp, model);
    cfg.actions
        .increments()
        .iter()
        .enumerate()
        .map(|(j, &tau)| {
            let mut rng = ChaCha8Rng::seed_from_u64(inp.stream);
            rng.set_stream(j as u64);
            let (cost, force) = candidate_cost(
                belief,
                &sh,
                inp.u_prev.rear + tau,
                inp,
                model,
                cfg.observation_samples,
                &mut rng,
            );
            (tau, cost, force)
        })
        .collect()
}

/// Choose the rear increment with the lowest expected cost and the front
/// torque that keeps the total force at the driver's demand.
pub fn select_action(
    belief: &Belief,
    inp: &DceeInput,
    cfg: &DceeConfig,
    model: &StepModel,
) -> ControlCommand {
    let costs = candidate_costs(belief, inp, cfg, model);
    assert!(!costs.is_empty(), "empty action set");
    let mut best = costs[0];
    for &c in &costs[1..] {
        if c.1 < best.1 {
            best = c;
        }
    }
    let (tau, cost, rear_force) = best;
    let d_hat = belief.expectation().theta.d;
    let (u_front, front_clamped) = reactive_front(
        0.5 * inp.force_demand,
        rear_force,
        inp.loads.front,
        d_hat,
        model.radius,
    );
    ControlCommand {
        u_front,
        u_rear: inp.u_prev.rear + tau,
        tau,
        cost,
        rear_force,
        front_clamped,
    }
}

/// Front wheel torque `R·(F_ref − F_rear)` from the quasi-static wheel
/// balance, with the force clamped to `D̂·Fz_front`. Returns the torque and
/// whether the clamp was active.
pub fn reactive_front(
    f_ref: f64,
    f_rear_pred: f64,
    fz_front: f64,
    d_hat: f64,
    radius: f64,
) -> (f64, bool) {
    assert!(fz_front > 0.0, "front load must be positive");
    let wanted = f_ref - f_rear_pred;
    let limit = d_hat.max(0.0) * fz_front;
    let force = wanted.clamp(-limit, limit);
    (radius * force, force != wanted)
}
