//! Decision-transformer actor, twin critics and their Polyak-averaged
//! targets, plus rollout machinery.

mod critic;
mod rollout;

pub use critic::CriticPair;
pub use rollout::{collect_episode, collect_epoch, ExploreNoise, RolloutContext};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Segment, StateNormalizer};
use crate::diffmodel::{
    Activation, DecisionTransformer, MlpConfig, ParamSet, Tensor, TokenBatch, TransformerConfig,
};
use crate::error::{arg_err, Result};
use crate::scalar::{clamp, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub policy: TransformerConfig,
    pub critic_hidden: Vec<usize>,
    /// Layer normalization after each hidden critic layer.
    pub critic_layer_norm: bool,
    pub tau: f64,
    pub gamma: f64,
    /// Standard deviation of the target-policy smoothing noise.
    pub policy_noise: f64,
    pub noise_clip: f64,
    /// Use critic 1 alone in the TD target instead of the minimum of both.
    pub single_critic: bool,
    /// Evaluate the target critics at the current state rather than the next.
    pub target_at_current_state: bool,
    /// Returns-to-go are divided by this before entering the policy.
    pub rtg_scale: f64,
    /// Rewards are multiplied by this inside the TD target.
    pub reward_scale: f64,
}

impl AgentConfig {
    pub fn new(policy: TransformerConfig) -> Self {
        Self {
            policy,
            critic_hidden: vec![256, 256],
            critic_layer_norm: false,
            tau: 0.005,
            gamma: 0.99,
            policy_noise: 0.2,
            noise_clip: 0.5,
            single_critic: false,
            target_at_current_state: false,
            rtg_scale: 1.0,
            reward_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(arg_err!("tau {} outside (0, 1]", self.tau));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(arg_err!("gamma {} outside (0, 1]", self.gamma));
        }
        if self.policy_noise < 0.0 || self.noise_clip < 0.0 {
            return Err(arg_err!("noise parameters must be non-negative"));
        }
        if !(self.rtg_scale > 0.0) || !(self.reward_scale > 0.0) {
            return Err(arg_err!("rtg_scale and reward_scale must be positive"));
        }
        Ok(())
    }

    fn critic_mlp(&self) -> MlpConfig {
        let p = &self.policy;
        MlpConfig::new(
            p.state_dim + p.action_dim,
            &self.critic_hidden,
            1,
            Activation::Relu,
            self.critic_layer_norm,
        )
    }
}

/// Live and target networks. Parameter values live in the `ParamSet`s;
/// the model structs only hold layouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent<F> {
    pub config: AgentConfig,
    pub policy: DecisionTransformer,
    pub policy_params: ParamSet<F>,
    pub target_policy_params: ParamSet<F>,
    pub critics: CriticPair<F>,
    pub target_critics: CriticPair<F>,
    pub normalizer: StateNormalizer<F>,
}

/// Row indices `(segment, position)` of the valid positions of a batch,
/// flattened as `segment·len + position`.
pub fn valid_rows<F: Real>(segments: &[Segment<F>]) -> Vec<usize> {
    let mut rows = Vec::new();
    for (b, s) in segments.iter().enumerate() {
        rows.extend((0..s.len).filter(|&p| s.mask[p]).map(|p| b * s.len + p));
    }
    rows
}

/// `r + γ(1 − d)·q` with `q = min(q1, q2)`, or `q1` alone when `single`.
pub fn td_target<F: Real>(reward: F, done: bool, gamma: F, q1: F, q2: F, single: bool) -> F {
    if done {
        return reward;
    }
    let q = if single { q1 } else { q1.min(q2) };
    reward + gamma * q
}

impl<F: Real> Agent<F> {
    /// Initializes the policy from `rng` and each critic from its own stream
    /// seeded by `rng`, so the two critics never coincide.
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut policy_params = ParamSet::new();
        let policy = DecisionTransformer::new(config.policy.clone(), &mut policy_params, rng)?;
        let mut rng1 = ChaCha8Rng::seed_from_u64(rng.gen());
        let mut rng2 = ChaCha8Rng::seed_from_u64(rng.gen());
        let critics = CriticPair::new(config.critic_mlp(), &mut rng1, &mut rng2)?;
        let normalizer = StateNormalizer::identity(config.policy.state_dim);
        Ok(Self {
            target_policy_params: policy_params.clone(),
            target_critics: critics.clone(),
            config,
            policy,
            policy_params,
            critics,
            normalizer,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.config.policy.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.config.policy.action_dim
    }

    pub fn clip_action(&self, action: &mut [F]) {
        let p = &self.config.policy;
        for ((a, &lo), &hi) in action.iter_mut().zip(&p.action_low).zip(&p.action_high) {
            *a = clamp(*a, F::c(lo), F::c(hi));
        }
    }

    /// Policy tokens for a batch of segments; `next` selects the shifted
    /// windows used by the target policy.
    pub fn segment_tokens(&self, segments: &[Segment<F>], next: bool) -> Result<TokenBatch<F>> {
        let first = segments
            .first()
            .ok_or_else(|| arg_err!("empty segment batch"))?;
        let len = first.len;
        if segments.iter().any(|s| s.len != len) {
            return Err(arg_err!("segments of unequal length in one batch"));
        }
        let (sd, ad) = (self.state_dim(), self.action_dim());
        let n = segments.len() * len;
        let inv_scale = F::c(1.0 / self.config.rtg_scale);
        let mut tokens = TokenBatch {
            batch: segments.len(),
            len,
            rtgs: Vec::with_capacity(n),
            states: vec![F::zero(); n * sd],
            actions: Vec::with_capacity(n * ad),
            timesteps: Vec::with_capacity(n),
            mask: Vec::with_capacity(n),
        };
        for (b, s) in segments.iter().enumerate() {
            let (states, actions, rtgs, times) = if next {
                (
                    &s.next_states,
                    &s.next_actions,
                    &s.next_rtgs,
                    &s.next_timesteps,
                )
            } else {
                (&s.states, &s.actions, &s.rtgs, &s.timesteps)
            };
            tokens.rtgs.extend(rtgs.iter().map(|&r| r * inv_scale));
            tokens.actions.extend_from_slice(actions);
            tokens.timesteps.extend_from_slice(times);
            tokens.mask.extend_from_slice(&s.mask);
            for p in 0..len {
                if s.mask[p] {
                    let row = (b * len + p) * sd;
                    self.normalizer.apply_into(
                        &states[p * sd..(p + 1) * sd],
                        &mut tokens.states[row..row + sd],
                    );
                }
            }
        }
        Ok(tokens)
    }

    /// Normalized states of the given batch rows, one row each.
    pub fn gather_states(&self, segments: &[Segment<F>], rows: &[usize], next: bool) -> Tensor<F> {
        let sd = self.state_dim();
        let len = segments[0].len;
        let mut out = Tensor::zeros(rows.len(), sd);
        for (i, &r) in rows.iter().enumerate() {
            let (s, p) = (&segments[r / len], r % len);
            let src = if next { s.next_state(p) } else { s.state(p) };
            self.normalizer.apply_into(src, out.row_mut(i));
        }
        out
    }

    pub fn gather_actions(&self, segments: &[Segment<F>], rows: &[usize]) -> Tensor<F> {
        let ad = self.action_dim();
        let len = segments[0].len;
        let mut out = Tensor::zeros(rows.len(), ad);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i)
                .copy_from_slice(segments[r / len].action(r % len));
        }
        out
    }

    /// TD targets for the given batch rows. The target policy acts on the
    /// next-step windows; its action gets clipped Gaussian smoothing noise
    /// and is clipped to the action bounds.
    pub fn target_values(
        &self,
        segments: &[Segment<F>],
        rows: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<Vec<F>> {
        let cfg = &self.config;
        let ad = self.action_dim();
        let tokens = self.segment_tokens(segments, true)?;
        let all_actions = self.policy.predict(&self.target_policy_params, &tokens)?;
        let mut actions = Tensor::zeros(rows.len(), ad);
        let noise = (cfg.policy_noise > 0.0)
            .then(|| Normal::new(0.0, cfg.policy_noise).expect("valid noise scale"));
        for (i, &r) in rows.iter().enumerate() {
            let row = actions.row_mut(i);
            row.copy_from_slice(all_actions.row(r));
            if let Some(dist) = &noise {
                for a in row.iter_mut() {
                    let eps = dist.sample(rng).clamp(-cfg.noise_clip, cfg.noise_clip);
                    *a += F::c(eps);
                }
            }
            self.clip_action(row);
        }
        let states = self.gather_states(segments, rows, !cfg.target_at_current_state);
        let q1 = self.target_critics.values(0, &states, &actions)?;
        let q2 = if cfg.single_critic {
            q1.clone()
        } else {
            self.target_critics.values(1, &states, &actions)?
        };
        let len = segments[0].len;
        let (gamma, rs) = (F::c(cfg.gamma), F::c(cfg.reward_scale));
        Ok(rows
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let (s, p) = (&segments[r / len], r % len);
                td_target(
                    rs * s.rewards[p],
                    s.dones[p],
                    gamma,
                    q1[i],
                    q2[i],
                    cfg.single_critic,
                )
            })
            .collect())
    }

    /// `θ_tar ← (1 − τ)θ_tar + τθ` for the policy and both critics.
    pub fn polyak_update(&mut self) -> Result<()> {
        let tau = F::c(self.config.tau);
        self.target_policy_params
            .polyak_from(&self.policy_params, tau)?;
        for i in 0..2 {
            self.target_critics.params[i].polyak_from(&self.critics.params[i], tau)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trajectory;

    pub(crate) fn tiny_agent(seed: u64) -> Agent<f64> {
        let mut policy = TransformerConfig::desk_scale(2, 1, vec![-1.0], vec![1.0], 4);
        policy.embed_dim = 8;
        let mut cfg = AgentConfig::new(policy);
        cfg.critic_hidden = vec![16, 16];
        Agent::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn set_constant_critic(pair: &mut CriticPair<f64>, i: usize, c: f64) {
        let last = pair.net.num_layers() - 1;
        pair.params[i].zero_values();
        pair.params[i].value_mut(pair.net.bias_id(last)).data[0] = c;
    }

    fn segment() -> Segment<f64> {
        let dones = vec![false, false, true];
        let traj = Trajectory::new(
            2,
            1,
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            vec![0.1, -0.2, 0.3],
            vec![1.0, 1.0, 1.0],
            dones,
        )
        .unwrap();
        Segment::from_trajectory(&traj, 2, 4)
    }

    #[test]
    fn td_target_cases() {
        assert_eq!(td_target(1.0, true, 0.99, 7.0, 9.0, false), 1.0);
        assert_eq!(td_target(1.0, false, 0.0, 7.0, 9.0, false), 1.0);
        assert!((td_target(1.0f64, false, 0.99, 2.0, 5.0, false) - 2.98).abs() < 1e-15);
        assert!((td_target(1.0f64, false, 0.99, 5.0, 2.0, true) - 5.95).abs() < 1e-15);
    }

    #[test]
    fn target_uses_min_of_constant_critics() {
        let mut agent = tiny_agent(0);
        set_constant_critic(&mut agent.target_critics, 0, 2.0);
        set_constant_critic(&mut agent.target_critics, 1, 5.0);
        let segs = vec![segment()];
        let rows = valid_rows(&segs);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = agent.target_values(&segs, &rows, &mut rng).unwrap();
        assert_eq!(y.len(), 3);
        assert!((y[0] - 2.98).abs() < 1e-12 && (y[1] - 2.98).abs() < 1e-12);
        assert_eq!(y[2], 1.0);
    }

    #[test]
    fn critics_start_different() {
        let agent = tiny_agent(3);
        assert_ne!(agent.critics.params[0], agent.critics.params[1]);
        assert_eq!(agent.critics, agent.target_critics);
    }

    #[test]
    fn polyak_limits_and_geometric_rate() {
        let mut agent = tiny_agent(5);
        agent.target_policy_params.zero_values();
        agent.config.tau = 1.0;
        agent.polyak_update().unwrap();
        assert_eq!(agent.target_policy_params, agent.policy_params);

        let mut agent = tiny_agent(5);
        for p in agent.policy_params.iter_mut() {
            p.value.fill(1.0);
        }
        agent.target_policy_params.zero_values();
        agent.config.tau = 0.005;
        agent.polyak_update().unwrap();
        assert!(agent.target_policy_params.iter().all(|p| p
            .value
            .data
            .iter()
            .all(|&x| x == 0.005)));
        for _ in 0..9 {
            agent.polyak_update().unwrap();
        }
        let expected = 1.0 - 0.995f64.powi(10);
        let x = agent.target_policy_params.iter().next().unwrap().value.data[0];
        assert!((x - expected).abs() < 1e-14);
    }
}
