use rand::RngCore;

use super::{Env, EnvSpec, StepResult};
use crate::error::{arg_err, Result};
use crate::scalar::Real;

/// Withholds rewards and releases their running sum every `period` steps
/// and at episode end.
#[derive(Clone, Debug)]
pub struct DelayedReward<E, F> {
    inner: E,
    period: usize,
    pending: F,
    steps: usize,
}

impl<E, F: Real> DelayedReward<E, F> {
    pub fn new(inner: E, period: usize) -> Result<Self> {
        if period == 0 {
            return Err(arg_err!("delay period must be at least 1"));
        }
        Ok(Self {
            inner,
            period,
            pending: F::zero(),
            steps: 0,
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Env<F>, F: Real> Env<F> for DelayedReward<E, F> {
    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<F> {
        self.pending = F::zero();
        self.steps = 0;
        self.inner.reset(rng)
    }

    fn step(&mut self, action: &[F]) -> Result<StepResult<F>> {
        let mut r = self.inner.step(action)?;
        self.steps += 1;
        self.pending += r.reward;
        if r.done || self.steps.is_multiple_of(self.period) {
            r.reward = self.pending;
            self.pending = F::zero();
        } else {
            r.reward = F::zero();
        }
        Ok(r)
    }
}
