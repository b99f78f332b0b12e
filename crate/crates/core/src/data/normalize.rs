use serde::{Deserialize, Serialize};

use super::trajectory::Trajectory;
use crate::error::{arg_err, dim_err, Result};
use crate::scalar::Real;

pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension affine state standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateNormalizer<F> {
    pub mean: Vec<F>,
    pub std: Vec<F>,
}

impl<F: Real> StateNormalizer<F> {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![F::zero(); dim],
            std: vec![F::one(); dim],
        }
    }

    /// Mean and (population) standard deviation over every stored step,
    /// the deviation floored at `1e-6`.
    pub fn fit<'a, I>(trajectories: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Trajectory<F>>,
    {
        let mut count = 0usize;
        let mut sum: Vec<F> = Vec::new();
        let mut seen: Vec<&Trajectory<F>> = Vec::new();
        for t in trajectories {
            if sum.is_empty() {
                sum = vec![F::zero(); t.state_dim()];
            }
            if t.state_dim() != sum.len() {
                return Err(dim_err!(
                    "mixed state dims {} and {}",
                    t.state_dim(),
                    sum.len()
                ));
            }
            for row in t.states().chunks(t.state_dim()) {
                for (s, &x) in sum.iter_mut().zip(row) {
                    *s += x;
                }
            }
            count += t.len();
            seen.push(t);
        }
        if count == 0 {
            return Err(arg_err!("cannot fit a normalizer on no data"));
        }
        let n = F::of_usize(count);
        let mean: Vec<F> = sum.iter().map(|&s| s / n).collect();
        let mut sq = vec![F::zero(); mean.len()];
        for t in seen {
            for row in t.states().chunks(t.state_dim()) {
                for ((q, &x), &m) in sq.iter_mut().zip(row).zip(&mean) {
                    *q += (x - m) * (x - m);
                }
            }
        }
        let floor = F::c(STD_FLOOR);
        let std = sq.iter().map(|&q| (q / n).sqrt().max(floor)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_into(&self, state: &[F], out: &mut [F]) {
        for (((o, &x), &m), &s) in out.iter_mut().zip(state).zip(&self.mean).zip(&self.std) {
            *o = (x - m) / s;
        }
    }

    pub fn apply(&self, state: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); state.len()];
        self.apply_into(state, &mut out);
        out
    }

    pub fn invert(&self, normalized: &[F]) -> Vec<F> {
        normalized
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&z, &m), &s)| z * s + m)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(states: Vec<f64>) -> Trajectory<f64> {
        let n = states.len();
        let mut dones = vec![false; n];
        dones[n - 1] = true;
        Trajectory::new(1, 1, states, vec![0.0; n], vec![0.0; n], dones).unwrap()
    }

    #[test]
    fn constant_states_hit_the_floor() {
        let t = traj(vec![3.0, 3.0, 3.0]);
        let n = StateNormalizer::fit([&t]).unwrap();
        assert_eq!(n.std, vec![STD_FLOOR]);
        assert_eq!(n.apply(&[3.0]), vec![0.0]);
    }

    #[test]
    fn two_points() {
        let t = traj(vec![0.0, 2.0]);
        let n = StateNormalizer::fit([&t]).unwrap();
        assert_eq!((n.mean.clone(), n.std.clone()), (vec![1.0], vec![1.0]));
        assert_eq!(n.apply(&[0.0]), vec![-1.0]);
        assert_eq!(n.apply(&[2.0]), vec![1.0]);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(StateNormalizer::<f64>::fit(std::iter::empty()).is_err());
    }
}
