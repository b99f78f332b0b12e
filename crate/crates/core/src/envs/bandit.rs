//! Single-state, single-step continuous bandit whose reward peak at `a = 0`
//! sits between two low-reward regions.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetMeta, OfflineDataset};
use super::{Behavior, Env, EnvSpec, StepResult};
use crate::data::Trajectory;
use crate::error::{arg_err, Error, Result};
use crate::scalar::{clamp, Real};

/// `(a + 1)²` for `a ≤ 0`, `1 − 2a` otherwise; `a` is clipped to `[-1, 1]`.
pub fn bandit_reward<F: Real>(a: F) -> F {
    let a = clamp(a, -F::one(), F::one());
    if a <= F::zero() {
        (a + F::one()) * (a + F::one())
    } else {
        F::one() - F::c(2.0) * a
    }
}

/// Mean reward of a uniformly random action: `½(∫₋₁⁰ (a+1)² da + ∫₀¹ (1−2a) da) = 1/6`.
pub const BANDIT_RANDOM_MEAN: f64 = 1.0 / 6.0;

#[derive(Clone, Debug)]
pub struct Bandit {
    spec: EnvSpec,
    done: bool,
}

impl Default for Bandit {
    fn default() -> Self {
        Self::new()
    }
}

impl Bandit {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "bandit".into(),
                state_dim: 1,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                horizon: 1,
                reward_min: -1.0,
                reward_max: 1.0,
            },
            done: true,
        }
    }
}

impl<F: Real> Env<F> for Bandit {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<F> {
        self.done = false;
        vec![F::zero()]
    }

    fn step(&mut self, action: &[F]) -> Result<StepResult<F>> {
        if self.done {
            return Err(Error::State("bandit stepped without reset".into()));
        }
        if action.len() != 1 {
            return Err(crate::error::dim_err!(
                "bandit action of length {}",
                action.len()
            ));
        }
        self.done = true;
        Ok(StepResult {
            next_state: vec![F::zero()],
            reward: bandit_reward(action[0]),
            done: true,
        })
    }

    /// The oracle plays the peak; the suboptimal script plays `a = 0.5`.
    fn scripted_action(&self, behavior: Behavior, _state: &[F]) -> Option<Vec<F>> {
        match behavior {
            Behavior::Oracle => Some(vec![F::zero()]),
            Behavior::ScriptedSuboptimal => Some(vec![F::c(0.5)]),
            Behavior::Random => None,
        }
    }
}

/// Offline data that hides the reward peak.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditDatasetConfig {
    pub low_band: (f64, f64),
    pub low_count: usize,
    pub high_band: (f64, f64),
    pub high_count: usize,
}

impl Default for BanditDatasetConfig {
    fn default() -> Self {
        Self {
            low_band: (-1.0, -0.95),
            low_count: 100,
            high_band: (0.5, 1.0),
            high_count: 28,
        }
    }
}

impl BanditDatasetConfig {
    /// The low band as literally printed, `(-1, 0.95)`, which covers the peak.
    pub fn literal_interval() -> Self {
        Self {
            low_band: (-1.0, 0.95),
            ..Self::default()
        }
    }
}

/// One-step trajectories: `low_count` actions uniform on the low band, then
/// `high_count` uniform on the high band.
pub fn bandit_dataset<F: Real>(cfg: &BanditDatasetConfig, seed: u64) -> Result<OfflineDataset<F>> {
    for &(lo, hi) in [&cfg.low_band, &cfg.high_band] {
        if !(lo < hi && lo >= -1.0 && hi <= 1.0) {
            return Err(arg_err!(
                "band ({lo}, {hi}) must be a nonempty subset of [-1, 1]"
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(cfg.low_count + cfg.high_count);
    let bands = std::iter::repeat_n(cfg.low_band, cfg.low_count)
        .chain(std::iter::repeat_n(cfg.high_band, cfg.high_count));
    for (lo, hi) in bands {
        let a = F::c(rng.gen_range(lo..hi));
        trajectories.push(Trajectory::new(
            1,
            1,
            vec![F::zero()],
            vec![a],
            vec![bandit_reward(a)],
            vec![true],
        )?);
    }
    Ok(OfflineDataset::new(
        DatasetMeta {
            env: "bandit".into(),
            seed,
            generator: "bandit-concealed".into(),
            state_dim: 1,
            action_dim: 1,
        },
        trajectories,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_formula() {
        assert_eq!(bandit_reward(-1.0f64), 0.0);
        assert_eq!(bandit_reward(0.0f64), 1.0);
        assert_eq!(bandit_reward(1.0f64), -1.0);
        assert_eq!(bandit_reward(-0.5f64), 0.25);
        assert_eq!(bandit_reward(0.25f64), 0.5);
    }

    #[test]
    fn reward_clips_out_of_range_actions() {
        assert_eq!(bandit_reward(-3.0f64), 0.0);
        assert_eq!(bandit_reward(2.0f64), -1.0);
    }

    #[test]
    fn concealed_dataset_shape() {
        let ds = bandit_dataset::<f64>(&BanditDatasetConfig::default(), 3).unwrap();
        assert_eq!(ds.trajectories.len(), 128);
        assert_eq!(ds.total_steps(), 128);
        let high = ds
            .trajectories
            .iter()
            .filter(|t| t.action(0)[0] > 0.5 && t.action(0)[0] < 1.0)
            .count();
        assert_eq!(high, 28);
        assert!(ds.trajectories.iter().all(|t| t.total_return() < 0.9));
    }

    #[test]
    fn single_step_then_reset_required() {
        let mut env = Bandit::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _: Vec<f64> = env.reset(&mut rng);
        let r = env.step(&[0.0f64]).unwrap();
        assert!(r.done && r.reward == 1.0);
        assert!(Env::<f64>::step(&mut env, &[0.0]).is_err());
    }
}
