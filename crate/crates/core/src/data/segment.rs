use serde::{Deserialize, Serialize};

use super::trajectory::Trajectory;
use crate::scalar::Real;

/// Fixed-length window of a trajectory, left-padded with zeros.
///
/// Position `p` is valid when `mask[p]`; valid positions are contiguous and
/// end at `len - 1`. The `next_*` arrays hold the same window shifted one
/// step forward: row `p` of them describes step `t + 1` where row `p` of the
/// primary arrays describes step `t`. When `t` is the final step the next
/// state and action are zero and `dones[p]` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment<F> {
    pub len: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<F>,
    pub actions: Vec<F>,
    pub rtgs: Vec<F>,
    pub rewards: Vec<F>,
    pub dones: Vec<bool>,
    pub timesteps: Vec<usize>,
    pub mask: Vec<bool>,
    pub next_states: Vec<F>,
    pub next_actions: Vec<F>,
    pub next_rtgs: Vec<F>,
    pub next_timesteps: Vec<usize>,
    /// Ground-truth return-to-go at the first valid position.
    pub rtg_condition: F,
}

impl<F: Real> Segment<F> {
    /// Window of `traj` ending at step `end` (inclusive) and spanning at most
    /// `len` steps, capped at the start of the trajectory.
    pub fn from_trajectory(traj: &Trajectory<F>, end: usize, len: usize) -> Self {
        assert!(end < traj.len() && len > 0);
        let (sd, ad) = (traj.state_dim(), traj.action_dim());
        let start = (end + 1).saturating_sub(len);
        let valid = end + 1 - start;
        let pad = len - valid;
        let mut seg = Segment {
            len,
            state_dim: sd,
            action_dim: ad,
            states: vec![F::zero(); len * sd],
            actions: vec![F::zero(); len * ad],
            rtgs: vec![F::zero(); len],
            rewards: vec![F::zero(); len],
            dones: vec![false; len],
            timesteps: vec![0; len],
            mask: vec![false; len],
            next_states: vec![F::zero(); len * sd],
            next_actions: vec![F::zero(); len * ad],
            next_rtgs: vec![F::zero(); len],
            next_timesteps: vec![0; len],
            rtg_condition: traj.rtg()[start],
        };
        let rtg = traj.rtg();
        for k in 0..valid {
            let (p, t) = (pad + k, start + k);
            seg.states[p * sd..(p + 1) * sd].copy_from_slice(traj.state(t));
            seg.actions[p * ad..(p + 1) * ad].copy_from_slice(traj.action(t));
            seg.rtgs[p] = rtg[t];
            seg.rewards[p] = traj.rewards()[t];
            seg.dones[p] = traj.dones()[t];
            seg.timesteps[p] = t;
            seg.mask[p] = true;
            seg.next_rtgs[p] = rtg[t + 1];
            seg.next_timesteps[p] = t + 1;
            if t + 1 < traj.len() {
                seg.next_states[p * sd..(p + 1) * sd].copy_from_slice(traj.state(t + 1));
                seg.next_actions[p * ad..(p + 1) * ad].copy_from_slice(traj.action(t + 1));
            }
        }
        seg
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn first_valid(&self) -> Option<usize> {
        self.mask.iter().position(|&m| m)
    }

    #[inline]
    pub fn state(&self, p: usize) -> &[F] {
        &self.states[p * self.state_dim..(p + 1) * self.state_dim]
    }

    #[inline]
    pub fn action(&self, p: usize) -> &[F] {
        &self.actions[p * self.action_dim..(p + 1) * self.action_dim]
    }

    #[inline]
    pub fn next_state(&self, p: usize) -> &[F] {
        &self.next_states[p * self.state_dim..(p + 1) * self.state_dim]
    }
}
