//! Kinematic SDV motion on the free plane.
//!
//! Speed reverts toward a target with Gaussian jitter on the acceleration;
//! heading changes arrive as a Poisson process. Any other per-SDV update
//! rule can be plugged in through [`MobilityModel`].

use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::demand::poisson_count;
use crate::world::{Canvas, Position, SdvState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Reflect,
    Wrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityParams {
    /// m/s.
    pub target_speed: f64,
    /// Std of the acceleration jitter, m/s^2.
    pub speed_noise_std: f64,
    /// Largest heading change per maneuver is `turn_rate_max * dt`, rad.
    pub turn_rate_max: f64,
    /// Expected maneuvers per minute.
    pub maneuver_freq: f64,
    pub boundary: Boundary,
    /// Pull toward the target speed, 1/s.
    pub reversion_rate: f64,
    /// Acceleration magnitude cap, m/s^2.
    pub accel_cap: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self {
            target_speed: 40.0 / 3.6,
            speed_noise_std: 0.5,
            turn_rate_max: 10.0,
            maneuver_freq: 2.0,
            boundary: Boundary::Reflect,
            reversion_rate: 0.5,
            accel_cap: 3.0,
        }
    }
}

/// What happened during one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepOutcome {
    pub maneuvers: u64,
}

/// A per-SDV position update rule.
pub trait MobilityModel: Send + Sync + std::fmt::Debug {
    fn step(&self, v: &mut SdvState, canvas: &Canvas, dt: f64, rng: &mut dyn RngCore) -> StepOutcome;
}

/// The shipped mean-reverting kinematic model.
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematic {
    pub params: MobilityParams,
}

impl MobilityModel for Kinematic {
    fn step(&self, v: &mut SdvState, canvas: &Canvas, dt: f64, rng: &mut dyn RngCore) -> StepOutcome {
        let p = &self.params;
        let jitter = if p.speed_noise_std > 0.0 {
            Normal::new(0.0, p.speed_noise_std).expect("finite std").sample(rng)
        } else {
            0.0
        };
        v.acceleration = (p.reversion_rate * (p.target_speed - v.velocity) + jitter).clamp(-p.accel_cap, p.accel_cap);
        v.velocity = (v.velocity + v.acceleration * dt).max(0.0);

        let maneuvers = poisson_count(p.maneuver_freq / 60.0 * dt, rng);
        let max_turn = p.turn_rate_max * dt;
        for _ in 0..maneuvers {
            if max_turn > 0.0 {
                v.heading += rng.random_range(-max_turn..=max_turn);
            }
        }
        v.heading = v.heading.rem_euclid(2.0 * PI);

        let next = Position::new(
            v.position.x + v.velocity * v.heading.cos() * dt,
            v.position.y + v.velocity * v.heading.sin() * dt,
        );
        let (position, heading) = apply_boundary(next, v.heading, canvas, p.boundary);
        v.position = position;
        v.heading = heading;
        StepOutcome { maneuvers }
    }
}

/// Bring a position back onto the canvas, mirroring the heading on reflect.
pub fn apply_boundary(p: Position, heading: f64, canvas: &Canvas, boundary: Boundary) -> (Position, f64) {
    match boundary {
        Boundary::Wrap => (Position::new(p.x.rem_euclid(canvas.width), p.y.rem_euclid(canvas.height)), heading),
        Boundary::Reflect => {
            let mut h = heading;
            let x = reflect(p.x, canvas.width, || h = PI - h);
            let y = reflect(p.y, canvas.height, || h = -h);
            (canvas.clamp(Position::new(x, y)), h.rem_euclid(2.0 * PI))
        }
    }
}

fn reflect(x: f64, max: f64, mut flip: impl FnMut()) -> f64 {
    if max <= 0.0 {
        return 0.0;
    }
    // Unfold the bounces: odd segments of length `max` run backwards.
    let segment = (x / max).floor() as i64;
    if segment.rem_euclid(2) == 1 {
        flip();
    }
    let r = x.rem_euclid(2.0 * max);
    if r > max {
        2.0 * max - r
    } else {
        r
    }
}
