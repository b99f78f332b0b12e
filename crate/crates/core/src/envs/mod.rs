//! Environments and offline-dataset generators.

pub mod bandit;
pub mod dataset;
pub mod delayed;
pub mod pointmass;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Real;

pub use bandit::{bandit_dataset, bandit_reward, Bandit, BanditDatasetConfig};
pub use dataset::{behavior_action, generate_offline, Behavior, DatasetMeta, OfflineDataset};
pub use delayed::DelayedReward;
pub use pointmass::{PointMass, PointMassConfig};

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub horizon: usize,
    /// Per-step reward range.
    pub reward_min: f64,
    pub reward_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult<F> {
    pub next_state: Vec<F>,
    pub reward: F,
    pub done: bool,
}

/// Episodic environment. After a step returns `done`, `reset` must be called
/// before stepping again.
pub trait Env<F: Real> {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<F>;
    fn step(&mut self, action: &[F]) -> Result<StepResult<F>>;

    /// Hand-written controller for `behavior`, if the environment has one.
    /// `Behavior::Random` is handled by the caller and never reaches here.
    fn scripted_action(&self, _behavior: Behavior, _state: &[F]) -> Option<Vec<F>> {
        None
    }
}

impl<F: Real, E: Env<F> + ?Sized> Env<F> for Box<E> {
    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<F> {
        (**self).reset(rng)
    }
    fn step(&mut self, action: &[F]) -> Result<StepResult<F>> {
        (**self).step(action)
    }
    fn scripted_action(&self, behavior: Behavior, state: &[F]) -> Option<Vec<F>> {
        (**self).scripted_action(behavior, state)
    }
}
