use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::segment::Segment;
use super::trajectory::Trajectory;
use crate::error::{arg_err, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Eviction {
    /// Drop the oldest trajectory.
    #[default]
    Fifo,
    /// Drop the trajectory with the lowest return.
    KeepTopK,
}

/// Trajectory store with a capacity counted in trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer<F> {
    capacity: usize,
    eviction: Eviction,
    trajectories: VecDeque<Trajectory<F>>,
    total_steps: usize,
    /// `offsets[i]` = steps stored before trajectory `i`.
    #[serde(skip)]
    offsets: Vec<usize>,
}

impl<F: Real> ReplayBuffer<F> {
    pub fn new(capacity: usize, eviction: Eviction) -> Result<Self> {
        if capacity == 0 {
            return Err(arg_err!("buffer capacity must be positive"));
        }
        Ok(Self {
            capacity,
            eviction,
            trajectories: VecDeque::new(),
            total_steps: 0,
            offsets: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory<F>> {
        self.trajectories.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Trajectory<F>> {
        self.trajectories.get(i)
    }

    /// Appends `traj`, evicting one trajectory if over capacity. Returns the
    /// evicted trajectory, if any.
    pub fn insert(&mut self, traj: Trajectory<F>) -> Option<Trajectory<F>> {
        self.total_steps += traj.len();
        self.trajectories.push_back(traj);
        let evicted = if self.trajectories.len() > self.capacity {
            let idx = match self.eviction {
                Eviction::Fifo => 0,
                Eviction::KeepTopK => {
                    let mut worst = 0;
                    for (i, t) in self.trajectories.iter().enumerate() {
                        if t.total_return() < self.trajectories[worst].total_return() {
                            worst = i;
                        }
                    }
                    worst
                }
            };
            self.trajectories.remove(idx)
        } else {
            None
        };
        if let Some(t) = &evicted {
            self.total_steps -= t.len();
        }
        self.offsets.clear();
        evicted
    }

    fn ensure_offsets(&mut self) {
        if self.offsets.len() == self.trajectories.len() {
            return;
        }
        self.offsets.clear();
        let mut acc = 0;
        for t in &self.trajectories {
            self.offsets.push(acc);
            acc += t.len();
        }
    }

    /// Maps a global step index onto (trajectory, step).
    pub fn locate(&mut self, step: usize) -> (usize, usize) {
        self.ensure_offsets();
        let i = self.offsets.partition_point(|&o| o <= step) - 1;
        (i, step - self.offsets[i])
    }

    /// Samples a window of at most `context_len` steps. The window's last step
    /// is uniform over all stored steps, so each trajectory is picked with
    /// probability proportional to its length; the window is capped at the
    /// start of its trajectory.
    pub fn sample_segment<R: Rng + ?Sized>(
        &mut self,
        context_len: usize,
        rng: &mut R,
    ) -> Result<Segment<F>> {
        if self.total_steps == 0 {
            return Err(arg_err!("cannot sample from an empty buffer"));
        }
        if context_len == 0 {
            return Err(arg_err!("context length must be positive"));
        }
        let step = rng.gen_range(0..self.total_steps);
        let (i, end) = self.locate(step);
        Ok(Segment::from_trajectory(
            &self.trajectories[i],
            end,
            context_len,
        ))
    }

    pub fn sample_batch<R: Rng + ?Sized>(
        &mut self,
        batch: usize,
        context_len: usize,
        rng: &mut R,
    ) -> Result<Vec<Segment<F>>> {
        (0..batch)
            .map(|_| self.sample_segment(context_len, rng))
            .collect()
    }

    pub fn max_return(&self) -> Option<F> {
        self.trajectories
            .iter()
            .map(|t| t.total_return())
            .fold(None, |acc, r| Some(acc.map_or(r, |a: F| a.max(r))))
    }
}
