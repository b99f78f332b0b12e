//! Planar point mass driven by bounded accelerations toward a fixed goal.
//!
//! State is `(x, y, vx, vy)`. Each step applies semi-implicit Euler with
//! `dt = 0.1`: velocity is updated first and clipped to `[-1, 1]`, then the
//! position moves by the new velocity and is clipped to the arena
//! `[-1, 1]²`. The reward is the negative distance to the goal after the
//! move; the episode ends within `goal_radius` of the goal or at the horizon.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Behavior, Env, EnvSpec, StepResult};
use crate::error::{dim_err, Error, Result};
use crate::scalar::{clamp, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMassConfig {
    pub dt: f64,
    pub max_speed: f64,
    pub arena: f64,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub horizon: usize,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_speed: 1.0,
            arena: 1.0,
            goal: [0.5, 0.5],
            goal_radius: 0.05,
            horizon: 100,
        }
    }
}

/// Proportional-derivative gains `(kp, kd)` of the reference controller.
pub const ORACLE_GAINS: (f64, f64) = (10.0, 5.0);
/// An undamped, under-driven controller: reaches the goal region slowly and
/// oscillates around it.
pub const SUBOPTIMAL_GAINS: (f64, f64) = (0.2, 0.0);

/// `kp·(goal − p) − kd·v`, clipped to the action box.
pub fn pd_action<F: Real>(cfg: &PointMassConfig, state: &[F], gains: (f64, f64)) -> Vec<F> {
    let (kp, kd) = (F::c(gains.0), F::c(gains.1));
    (0..2)
        .map(|k| {
            let a = kp * (F::c(cfg.goal[k]) - state[k]) - kd * state[2 + k];
            clamp(a, -F::one(), F::one())
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PointMass<F> {
    cfg: PointMassConfig,
    spec: EnvSpec,
    state: [F; 4],
    t: usize,
    done: bool,
}

impl<F: Real> PointMass<F> {
    pub fn new(cfg: PointMassConfig) -> Self {
        let diameter = 2.0 * cfg.arena * 2f64.sqrt();
        let spec = EnvSpec {
            name: "pointmass".into(),
            state_dim: 4,
            action_dim: 2,
            action_low: vec![-1.0, -1.0],
            action_high: vec![1.0, 1.0],
            horizon: cfg.horizon,
            reward_min: -diameter,
            reward_max: 0.0,
        };
        Self {
            cfg,
            spec,
            state: [F::zero(); 4],
            t: 0,
            done: true,
        }
    }

    pub fn config(&self) -> &PointMassConfig {
        &self.cfg
    }

    /// Places the mass at an explicit state and starts a fresh episode.
    pub fn set_state(&mut self, state: [F; 4]) {
        self.state = state;
        self.t = 0;
        self.done = false;
    }

    pub fn state(&self) -> [F; 4] {
        self.state
    }

    pub fn distance_to_goal(&self, state: &[F]) -> F {
        let dx = state[0] - F::c(self.cfg.goal[0]);
        let dy = state[1] - F::c(self.cfg.goal[1]);
        (dx * dx + dy * dy).sqrt()
    }
}

impl<F: Real> Env<F> for PointMass<F> {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Starts at rest at a uniformly random position in the arena.
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<F> {
        let a = self.cfg.arena;
        let x = F::c(rng.gen_range(-a..a));
        let y = F::c(rng.gen_range(-a..a));
        self.set_state([x, y, F::zero(), F::zero()]);
        self.state.to_vec()
    }

    fn step(&mut self, action: &[F]) -> Result<StepResult<F>> {
        if self.done {
            return Err(Error::State("pointmass stepped without reset".into()));
        }
        if action.len() != 2 {
            return Err(dim_err!("pointmass action of length {}", action.len()));
        }
        let dt = F::c(self.cfg.dt);
        let vmax = F::c(self.cfg.max_speed);
        let arena = F::c(self.cfg.arena);
        let mut s = self.state;
        for k in 0..2 {
            let acc = clamp(action[k], -F::one(), F::one());
            s[2 + k] = clamp(s[2 + k] + dt * acc, -vmax, vmax);
            s[k] = clamp(s[k] + dt * s[2 + k], -arena, arena);
        }
        self.state = s;
        self.t += 1;
        let dist = self.distance_to_goal(&s);
        let done = dist <= F::c(self.cfg.goal_radius) || self.t >= self.cfg.horizon;
        self.done = done;
        Ok(StepResult {
            next_state: s.to_vec(),
            reward: -dist,
            done,
        })
    }

    fn scripted_action(&self, behavior: Behavior, state: &[F]) -> Option<Vec<F>> {
        let gains = match behavior {
            Behavior::Oracle => ORACLE_GAINS,
            Behavior::ScriptedSuboptimal => SUBOPTIMAL_GAINS,
            Behavior::Random => return None,
        };
        Some(pd_action(&self.cfg, state, gains))
    }
}
