//! Torque vectoring for active learning (TVAL).
//!
//! A longitudinal vehicle simulation in which a particle filter estimates the
//! Magic Formula tyre parameters online, a one-step dual-control selector
//! drives the rear axle toward the believed peak tyre force while the front
//! axle preserves the driver's demand, and a regulation layer decides when
//! that active learning is worth its energy and safe to run.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief;
pub mod config;
pub mod dcee;
pub mod driver_env;
pub mod energy;
pub mod plant;
pub mod regulation;
pub mod sim;
pub mod telemetry;
pub mod tyre;

use serde::{Deserialize, Serialize};

/// A front/rear pair. Unless stated otherwise values are per wheel on that axle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Axles<T> {
    pub front: T,
    pub rear: T,
}

impl<T> Axles<T> {
    pub const fn new(front: T, rear: T) -> Self {
        Self { front, rear }
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> Axles<U> {
        Axles {
            front: f(self.front),
            rear: f(self.rear),
        }
    }
}

impl Axles<f64> {
    /// Spread per-axle values onto the four wheels (FL, FR, RL, RR).
    pub fn to_wheels(self) -> [f64; 4] {
        [self.front, self.front, self.rear, self.rear]
    }
}

pub use belief::{AugmentedState, Belief, FilterConfig, Measurement};
pub use plant::{PlantState, VehicleParams};
pub use tyre::TyreParams;
