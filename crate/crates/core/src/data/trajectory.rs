use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::scalar::Real;

/// Suffix sums of `rewards` with a trailing zero: `rtg[t] = rewards[t] + rtg[t + 1]`.
pub fn compute_rtg<F: Real>(rewards: &[F]) -> Vec<F> {
    let mut rtg = vec![F::zero(); rewards.len() + 1];
    for t in (0..rewards.len()).rev() {
        rtg[t] = rewards[t] + rtg[t + 1];
    }
    rtg
}

/// One episode, flat row-major storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<F> {
    state_dim: usize,
    action_dim: usize,
    states: Vec<F>,
    actions: Vec<F>,
    rewards: Vec<F>,
    dones: Vec<bool>,
    rtg: Vec<F>,
}

impl<F: Real> Trajectory<F> {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        states: Vec<F>,
        actions: Vec<F>,
        rewards: Vec<F>,
        dones: Vec<bool>,
    ) -> Result<Self> {
        let len = rewards.len();
        if len == 0 {
            return Err(arg_err!("trajectory must have at least one step"));
        }
        if states.len() != len * state_dim
            || actions.len() != len * action_dim
            || dones.len() != len
        {
            return Err(dim_err!(
                "trajectory of {len} steps with {} state, {} action and {} done entries",
                states.len(),
                actions.len(),
                dones.len()
            ));
        }
        if !dones[len - 1] {
            return Err(arg_err!("last step of a trajectory must be marked done"));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(crate::Error::Numeric("trajectory reward".into()));
        }
        let rtg = compute_rtg(&rewards);
        Ok(Self {
            state_dim,
            action_dim,
            states,
            actions,
            rewards,
            dones,
            rtg,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    #[inline]
    pub fn state(&self, t: usize) -> &[F] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    #[inline]
    pub fn action(&self, t: usize) -> &[F] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    pub fn states(&self) -> &[F] {
        &self.states
    }

    pub fn actions(&self) -> &[F] {
        &self.actions
    }

    pub fn rewards(&self) -> &[F] {
        &self.rewards
    }

    pub fn dones(&self) -> &[bool] {
        &self.dones
    }

    /// Length `len() + 1`, last entry zero.
    pub fn rtg(&self) -> &[F] {
        &self.rtg
    }

    /// Undiscounted episode return, `rtg[0]`.
    pub fn total_return(&self) -> F {
        self.rtg[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_sums() {
        assert_eq!(compute_rtg(&[1.0, 2.0, 3.0]), vec![6.0, 5.0, 3.0, 0.0]);
        assert_eq!(compute_rtg(&[0.0, 0.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn validation() {
        assert!(Trajectory::<f64>::new(1, 1, vec![], vec![], vec![], vec![]).is_err());
        assert!(Trajectory::new(1, 1, vec![0.0], vec![0.0], vec![1.0], vec![false]).is_err());
        assert!(Trajectory::new(2, 1, vec![0.0], vec![0.0], vec![1.0], vec![true]).is_err());
        let t = Trajectory::new(
            1,
            1,
            vec![0.0, 1.0],
            vec![0.5, 0.5],
            vec![1.0, 2.0],
            vec![false, true],
        )
        .unwrap();
        assert_eq!(t.total_return(), 3.0);
        assert_eq!(t.state(1), &[1.0]);
    }
}
