use std::collections::VecDeque;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Agent;
use crate::data::Trajectory;
use crate::diffmodel::TokenBatch;
use crate::envs::Env;
use crate::error::{arg_err, dim_err, Result};
use crate::scalar::Real;

/// Exploration noise added to online rollout actions before clipping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExploreNoise {
    None,
    Gaussian {
        sigma: f64,
    },
    /// Uniform on `[-half_width, half_width]`.
    Uniform {
        half_width: f64,
    },
}

impl ExploreNoise {
    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        match *self {
            ExploreNoise::None => 0.0,
            ExploreNoise::Gaussian { sigma } if sigma > 0.0 => {
                Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
            }
            ExploreNoise::Uniform { half_width } if half_width > 0.0 => {
                rng.gen_range(-half_width..=half_width)
            }
            _ => 0.0,
        }
    }
}

/// The last `window` steps of an ongoing episode plus the conditioning
/// return-to-go, which drops by each observed reward.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutContext<F> {
    window: usize,
    states: VecDeque<Vec<F>>,
    actions: VecDeque<Vec<F>>,
    rtgs: VecDeque<F>,
    timesteps: VecDeque<usize>,
    pub rtg: F,
    pub step: usize,
}

impl<F: Real> RolloutContext<F> {
    pub fn new(window: usize, rtg: F) -> Result<Self> {
        if window == 0 {
            return Err(arg_err!("rollout window must be positive"));
        }
        Ok(Self {
            window,
            states: VecDeque::with_capacity(window),
            actions: VecDeque::with_capacity(window),
            rtgs: VecDeque::with_capacity(window),
            timesteps: VecDeque::with_capacity(window),
            rtg,
            step: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Appends the current state with the current return-to-go and a
    /// placeholder action, dropping the oldest step beyond the window.
    pub fn observe(&mut self, state: Vec<F>, action_dim: usize) {
        if self.states.len() == self.window {
            self.states.pop_front();
            self.actions.pop_front();
            self.rtgs.pop_front();
            self.timesteps.pop_front();
        }
        self.states.push_back(state);
        self.actions.push_back(vec![F::zero(); action_dim]);
        self.rtgs.push_back(self.rtg);
        self.timesteps.push_back(self.step);
    }

    /// Fills in the action taken at the most recent state.
    pub fn record_action(&mut self, action: &[F]) -> Result<()> {
        let slot = self
            .actions
            .back_mut()
            .ok_or_else(|| arg_err!("no observed state to attach an action to"))?;
        if slot.len() != action.len() {
            return Err(dim_err!(
                "action of length {}, expected {}",
                action.len(),
                slot.len()
            ));
        }
        slot.copy_from_slice(action);
        Ok(())
    }

    pub fn advance_rtg(&mut self, reward: F) {
        self.rtg -= reward;
        self.step += 1;
    }

    pub fn last_state(&self) -> Option<&[F]> {
        self.states.back().map(|s| s.as_slice())
    }
}

impl<F: Real> Agent<F> {
    fn context_tokens(&self, ctx: &RolloutContext<F>) -> TokenBatch<F> {
        let len = ctx.len();
        let inv_scale = F::c(1.0 / self.config.rtg_scale);
        let mut states = Vec::with_capacity(len * self.state_dim());
        for s in &ctx.states {
            states.extend(self.normalizer.apply(s));
        }
        TokenBatch {
            batch: 1,
            len,
            rtgs: ctx.rtgs.iter().map(|&r| r * inv_scale).collect(),
            states,
            actions: ctx.actions.iter().flatten().copied().collect(),
            timesteps: ctx.timesteps.iter().copied().collect(),
            mask: vec![true; len],
        }
    }

    /// Deterministic policy action for the latest state in `ctx`, plus
    /// exploration noise, clipped to the action bounds.
    pub fn act(
        &self,
        ctx: &RolloutContext<F>,
        noise: ExploreNoise,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<F>> {
        if ctx.is_empty() {
            return Err(arg_err!("act called before observing a state"));
        }
        if ctx.len() > self.config.policy.context_len {
            return Err(arg_err!(
                "rollout window {} exceeds the policy context {}",
                ctx.len(),
                self.config.policy.context_len
            ));
        }
        let out = self
            .policy
            .predict(&self.policy_params, &self.context_tokens(ctx))?;
        let mut action = out.row(out.rows - 1).to_vec();
        if noise != ExploreNoise::None {
            for a in action.iter_mut() {
                *a += F::c(noise.sample(rng));
            }
        }
        self.clip_action(&mut action);
        Ok(action)
    }
}

/// Runs one episode conditioned on `rtg`, keeping the last `window` steps
/// as context.
pub fn collect_episode<F: Real, E: Env<F> + ?Sized>(
    agent: &Agent<F>,
    env: &mut E,
    rtg: F,
    window: usize,
    noise: ExploreNoise,
    rng: &mut dyn RngCore,
) -> Result<Trajectory<F>> {
    let (sd, ad) = (agent.state_dim(), agent.action_dim());
    let mut ctx = RolloutContext::new(window, rtg)?;
    let mut state = env.reset(rng);
    let (mut states, mut actions, mut rewards, mut dones) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    loop {
        ctx.observe(state.clone(), ad);
        let action = agent.act(&ctx, noise, rng)?;
        ctx.record_action(&action)?;
        let out = env.step(&action)?;
        states.extend_from_slice(&state);
        actions.extend_from_slice(&action);
        rewards.push(out.reward);
        dones.push(out.done);
        ctx.advance_rtg(out.reward);
        state = out.next_state;
        if out.done {
            break;
        }
    }
    Trajectory::new(sd, ad, states, actions, rewards, dones)
}

/// Collects whole episodes until at least `min_steps` steps are gathered.
pub fn collect_epoch<F: Real, E: Env<F> + ?Sized>(
    agent: &Agent<F>,
    env: &mut E,
    min_steps: usize,
    rtg: F,
    window: usize,
    noise: ExploreNoise,
    rng: &mut dyn RngCore,
) -> Result<Vec<Trajectory<F>>> {
    if min_steps == 0 {
        return Err(arg_err!("min_steps must be positive"));
    }
    let mut out = Vec::new();
    let mut steps = 0;
    while steps < min_steps {
        let traj = collect_episode(agent, env, rtg, window, noise, rng)?;
        steps += traj.len();
        out.push(traj);
    }
    Ok(out)
}
