//! Storage, eviction and reward-delay checks. Each panics on failure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dtfine::data::{Eviction, ReplayBuffer, Trajectory};
use dtfine::envs::{
    bandit_dataset, generate_offline, BanditDatasetConfig, Behavior, DelayedReward, Env, EnvSpec,
    PointMass, PointMassConfig, StepResult,
};

use super::line;

fn telescopes(t: &Trajectory<f64>) -> bool {
    let rtg = t.rtg();
    rtg[t.len()] == 0.0 && (0..t.len()).all(|i| rtg[i] == t.rewards()[i] + rtg[i + 1])
}

pub fn stored_trajectories_telescope() {
    let bandit = bandit_dataset::<f64>(&BanditDatasetConfig::default(), 0).unwrap();
    let mut env = PointMass::<f64>::new(PointMassConfig::default());
    let pm = generate_offline(&mut env, Behavior::Random, 3000, 1).unwrap();
    let mut buffer = ReplayBuffer::new(10_000, Eviction::Fifo).unwrap();
    for t in bandit.trajectories.iter().chain(&pm.trajectories) {
        buffer.insert(t.clone());
    }
    assert!(buffer.iter().all(telescopes));
}

pub fn fifo_evicts_in_insertion_order() {
    let mut b = ReplayBuffer::new(2, Eviction::Fifo).unwrap();
    let (a, bb, c) = (line(1), line(2), line(3));
    assert!(b.insert(a.clone()).is_none());
    assert!(b.insert(bb.clone()).is_none());
    assert_eq!(b.insert(c.clone()), Some(a));
    assert_eq!(b.iter().cloned().collect::<Vec<_>>(), vec![bb, c]);
    assert_eq!(b.total_steps(), 5);

    let mut b = ReplayBuffer::new(100, Eviction::Fifo).unwrap();
    let mut evicted = Vec::new();
    for i in 0..1000 {
        if let Some(t) = b.insert(line(i % 7 + 1 + (i / 7) % 3)) {
            evicted.push(t);
        }
    }
    assert_eq!(b.len(), 100);
    assert_eq!(evicted.len(), 900);
    let expected: Vec<_> = (900..1000).map(|i| line(i % 7 + 1 + (i / 7) % 3)).collect();
    assert_eq!(b.iter().cloned().collect::<Vec<_>>(), expected);
}

/// Integer rewards, so sums are exact regardless of grouping.
struct Counter {
    spec: EnvSpec,
    t: usize,
    horizon: usize,
}

impl Env<f64> for Counter {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }
    fn reset(&mut self, _rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.t = 0;
        vec![0.0]
    }
    fn step(&mut self, _action: &[f64]) -> dtfine::Result<StepResult<f64>> {
        self.t += 1;
        Ok(StepResult {
            next_state: vec![self.t as f64],
            reward: (self.t * self.t % 11) as f64 - 4.0,
            done: self.t == self.horizon,
        })
    }
}

pub fn delayed_rewards_release_exact_chunk_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // pointmass rewards: each release equals the sequential sum of its chunk
    let mut plain = PointMass::<f64>::new(PointMassConfig::default());
    let mut delayed =
        DelayedReward::new(PointMass::<f64>::new(PointMassConfig::default()), 7).unwrap();
    let mut r1 = ChaCha8Rng::seed_from_u64(5);
    let mut r2 = r1.clone();
    plain.reset(&mut r1);
    delayed.reset(&mut r2);
    let mut pending = 0.0;
    let mut steps = 0;
    loop {
        let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let p = plain.step(&a).unwrap();
        let d = delayed.step(&a).unwrap();
        steps += 1;
        pending += p.reward;
        if p.done || steps % 7 == 0 {
            assert_eq!(d.reward, pending);
            pending = 0.0;
        } else {
            assert_eq!(d.reward, 0.0);
        }
        assert_eq!(p.done, d.done);
        if p.done {
            break;
        }
    }
    // integer rewards: episode totals agree exactly for every period
    for period in 1..=12 {
        for horizon in [1, 5, 12, 23] {
            let spec = EnvSpec {
                name: "counter".into(),
                state_dim: 1,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                horizon,
                reward_min: -4.0,
                reward_max: 6.0,
            };
            let mut base = Counter {
                spec: spec.clone(),
                t: 0,
                horizon,
            };
            let mut wrapped = DelayedReward::new(
                Counter {
                    spec,
                    t: 0,
                    horizon,
                },
                period,
            )
            .unwrap();
            base.reset(&mut rng);
            wrapped.reset(&mut rng);
            let (mut a, mut b) = (0.0, 0.0);
            for _ in 0..horizon {
                a += base.step(&[0.0]).unwrap().reward;
                b += wrapped.step(&[0.0]).unwrap().reward;
            }
            assert_eq!(a, b, "period {period} horizon {horizon}");
        }
    }
}
