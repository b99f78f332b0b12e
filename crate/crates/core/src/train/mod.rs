//! Losses, offline pretraining and online finetuning.

mod evaluate;
pub mod losses;
mod metrics;

pub use evaluate::{evaluate, normalized_score};
pub use losses::{
    actor_graph, critic_graph, critic_loss, mixed_actor_loss, odt_loss, ActorGraph, ActorWeights,
    CriticGraph,
};
pub use metrics::{write_metrics_csv, EpochMetrics, METRICS_HEADER};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{collect_epoch, valid_rows, Agent, AgentConfig, ExploreNoise};
use crate::data::{Eviction, ReplayBuffer, Segment, StateNormalizer};
use crate::diffmodel::{Optimizer, OptimizerConfig, ParamSet};
use crate::envs::{Env, OfflineDataset};
use crate::error::{arg_err, Error, Result};
use crate::scalar::Real;

/// Number of update iterations in an online epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UpdateSchedule {
    Fixed {
        iterations: usize,
    },
    /// `base + slope·n` at the `n`-th epoch, counting from 1.
    Linear {
        base: usize,
        slope: usize,
    },
}

impl UpdateSchedule {
    pub fn iterations(&self, epoch: usize) -> usize {
        match *self {
            UpdateSchedule::Fixed { iterations } => iterations,
            UpdateSchedule::Linear { base, slope } => base + slope * epoch,
        }
    }
}

/// One update iteration is a critic step (when the critic is enabled),
/// followed by an actor step on every `policy_delay`-th iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha_pretrain: f64,
    pub alpha_online: f64,
    /// Weight of the supervised term in the actor loss.
    pub bc_coeff: f64,
    /// Weight of the pull toward the policy frozen at the start of finetuning.
    pub kl_coeff: f64,
    pub use_critic: bool,
    pub policy_delay: usize,
    pub batch_size: usize,
    /// Training context length.
    pub context_len: usize,
    /// Rollout context length.
    pub eval_context_len: usize,
    pub rtg_eval: f64,
    pub rtg_rollout: f64,
    /// Move the rollout target from the best dataset return toward `rtg_eval`.
    pub curriculum_rtg: bool,
    pub actor_optimizer: OptimizerConfig,
    pub critic_optimizer: OptimizerConfig,
    pub explore_noise: ExploreNoise,
    pub pretrain_steps: usize,
    pub online_max_env_steps: usize,
    /// Each epoch collects whole episodes until this many steps are gathered.
    pub epoch_min_steps: usize,
    pub updates: UpdateSchedule,
    pub eval_episodes: usize,
    pub buffer_capacity: usize,
    pub eviction: Eviction,
    pub normalize_states: bool,
}

impl TrainConfig {
    pub fn validate(&self, agent: &AgentConfig) -> Result<()> {
        let bad = |msg: &str| Err(arg_err!("{msg}"));
        if self.alpha_pretrain < 0.0
            || self.alpha_online < 0.0
            || self.bc_coeff < 0.0
            || self.kl_coeff < 0.0
        {
            return bad("loss coefficients must be non-negative");
        }
        if self.policy_delay == 0 || self.batch_size == 0 || self.eval_episodes == 0 {
            return bad("policy_delay, batch_size and eval_episodes must be positive");
        }
        if self.context_len == 0 || self.eval_context_len == 0 {
            return bad("context lengths must be positive");
        }
        if self.context_len > agent.policy.context_len
            || self.eval_context_len > agent.policy.context_len
        {
            return Err(arg_err!(
                "context lengths {} / {} exceed the policy context {}",
                self.context_len,
                self.eval_context_len,
                agent.policy.context_len
            ));
        }
        if self.epoch_min_steps == 0 || self.buffer_capacity == 0 {
            return bad("epoch_min_steps and buffer_capacity must be positive");
        }
        self.actor_optimizer.validate()?;
        self.critic_optimizer.validate()
    }
}

/// Losses of one update iteration; `None` where no step was taken.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub actor: Option<f64>,
    pub critic: Option<f64>,
    pub mean_q: Option<f64>,
}

/// Full training state: agent, buffer, optimizers, counters and RNG streams.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trainer<F> {
    pub config: TrainConfig,
    pub agent: Agent<F>,
    pub buffer: ReplayBuffer<F>,
    actor_opt: Optimizer<F>,
    critic_opts: [Optimizer<F>; 2],
    anchor: Option<ParamSet<F>>,
    /// Batch sampling and dropout.
    rng: ChaCha8Rng,
    /// Target-policy smoothing noise.
    noise_rng: ChaCha8Rng,
    env_rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    pub seed: u64,
    /// Completed online epochs.
    pub epoch: usize,
    pub env_steps: usize,
    pub actor_steps: u64,
    pub critic_steps: u64,
    rtg_data: Option<f64>,
}

impl<F: Real> Trainer<F> {
    pub fn new(config: TrainConfig, agent_config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate(&agent_config)?;
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let agent = Agent::new(agent_config, &mut init)?;
        let actor_opt = Optimizer::new(config.actor_optimizer.clone(), &agent.policy_params)?;
        let critic_opts = [
            Optimizer::new(config.critic_optimizer.clone(), &agent.critics.params[0])?,
            Optimizer::new(config.critic_optimizer.clone(), &agent.critics.params[1])?,
        ];
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity, config.eviction)?,
            config,
            agent,
            actor_opt,
            critic_opts,
            anchor: None,
            rng: stream(1),
            noise_rng: stream(4),
            env_rng: stream(2),
            eval_rng: stream(3),
            seed,
            epoch: 0,
            env_steps: 0,
            actor_steps: 0,
            critic_steps: 0,
            rtg_data: None,
        })
    }

    pub fn grad_steps(&self) -> u64 {
        self.actor_steps + self.critic_steps
    }

    /// Loads offline trajectories into the buffer and, if configured, fits
    /// the state normalizer on them.
    pub fn load_offline(&mut self, dataset: &OfflineDataset<F>) -> Result<()> {
        if dataset.trajectories.is_empty() {
            return Err(arg_err!("offline dataset is empty"));
        }
        if dataset.meta.state_dim != self.agent.state_dim()
            || dataset.meta.action_dim != self.agent.action_dim()
        {
            return Err(arg_err!(
                "dataset dims ({}, {}) do not match the agent ({}, {})",
                dataset.meta.state_dim,
                dataset.meta.action_dim,
                self.agent.state_dim(),
                self.agent.action_dim()
            ));
        }
        if self.config.normalize_states {
            self.agent.normalizer = StateNormalizer::fit(&dataset.trajectories)?;
        }
        for t in &dataset.trajectories {
            self.buffer.insert(t.clone());
        }
        Ok(())
    }

    fn sample(&mut self) -> Result<Vec<Segment<F>>> {
        self.buffer.sample_batch(
            self.config.batch_size,
            self.config.context_len,
            &mut self.rng,
        )
    }

    /// One critic step on `batch` followed by a Polyak update of all targets.
    pub fn critic_step(&mut self, batch: &[Segment<F>]) -> Result<(f64, f64)> {
        let rows = valid_rows(batch);
        let targets = self
            .agent
            .target_values(batch, &rows, &mut self.noise_rng)?;
        let mut g = critic_graph(&self.agent, batch, &targets)?;
        let loss = g.tape.value(g.loss).data[0];
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "critic loss at critic step {}",
                self.critic_steps + 1
            )));
        }
        g.tape.backward(g.loss)?;
        for i in 0..2 {
            let params = &mut self.agent.critics.params[i];
            params.zero_grads();
            g.tape.write_grads(&g.critics[i], params)?;
            self.critic_opts[i].step(params)?;
        }
        self.critic_steps += 1;
        self.agent.polyak_update()?;
        Ok((loss.as_f64(), g.mean_q.as_f64()))
    }

    /// One actor step on `batch` with RL weight `alpha`.
    pub fn actor_step(&mut self, batch: &[Segment<F>], alpha: f64) -> Result<f64> {
        let weights = ActorWeights {
            alpha: F::c(alpha),
            bc: F::c(self.config.bc_coeff),
            kl: F::c(self.config.kl_coeff),
        };
        let mut g = actor_graph(
            &self.agent,
            batch,
            weights,
            self.anchor.as_ref(),
            Some(&mut self.rng),
        )?;
        let loss = g.tape.value(g.loss).data[0];
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "actor loss at actor step {}",
                self.actor_steps + 1
            )));
        }
        g.tape.backward(g.loss)?;
        let params = &mut self.agent.policy_params;
        params.zero_grads();
        g.tape.write_grads(&g.policy, params)?;
        self.actor_opt.step(params)?;
        self.actor_steps += 1;
        Ok(loss.as_f64())
    }

    /// Update iteration `i` of a phase: critic step if enabled, actor step
    /// on every `policy_delay`-th iteration, both on the same batch. Without
    /// a critic there is nothing to delay against and every iteration
    /// updates the actor.
    pub fn update_iteration(&mut self, i: usize, alpha: f64) -> Result<StepLosses> {
        let batch = self.sample()?;
        let mut out = StepLosses::default();
        let delay = if self.config.use_critic {
            let (loss, q) = self.critic_step(&batch)?;
            out.critic = Some(loss);
            out.mean_q = Some(q);
            self.config.policy_delay
        } else {
            1
        };
        if (i + 1).is_multiple_of(delay) {
            out.actor = Some(self.actor_step(&batch, alpha)?);
        }
        Ok(out)
    }

    /// Offline phase on the buffer contents.
    pub fn pretrain(&mut self) -> Result<Vec<StepLosses>> {
        if self.buffer.is_empty() {
            return Err(arg_err!("pretraining needs a non-empty buffer"));
        }
        let alpha = self.config.alpha_pretrain;
        (0..self.config.pretrain_steps)
            .map(|i| self.update_iteration(i, alpha))
            .collect()
    }

    /// Target return for online rollouts in the next epoch.
    pub fn rollout_rtg(&self) -> f64 {
        let c = &self.config;
        match (c.curriculum_rtg, self.rtg_data) {
            (true, Some(data)) => {
                c.rtg_eval - 0.99f64.powi(self.epoch as i32) * (c.rtg_eval - data)
            }
            _ => c.rtg_rollout,
        }
    }

    pub fn evaluate<E: Env<F> + ?Sized>(&mut self, env: &mut E) -> Result<(f64, f64)> {
        let c = &self.config;
        evaluate(
            &self.agent,
            env,
            c.eval_episodes,
            F::c(c.rtg_eval),
            c.eval_context_len,
            &mut self.eval_rng,
        )
    }

    /// Metrics row for the current state without training (epoch 0 row).
    pub fn snapshot<E: Env<F> + ?Sized>(&mut self, env: &mut E) -> Result<EpochMetrics> {
        let start = Instant::now();
        let (eval_mean, eval_std) = self.evaluate(env)?;
        Ok(EpochMetrics {
            epoch: self.epoch,
            env_steps: self.env_steps,
            grad_steps: self.grad_steps(),
            eval_mean,
            eval_std,
            actor_loss: f64::NAN,
            critic_loss: f64::NAN,
            mean_q: f64::NAN,
            seed: self.seed,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }

    /// Collects one epoch of online data, trains on the buffer and evaluates.
    pub fn online_epoch<E: Env<F> + ?Sized>(&mut self, env: &mut E) -> Result<EpochMetrics> {
        let start = Instant::now();
        if self.epoch == 0 {
            if self.rtg_data.is_none() {
                self.rtg_data = self.buffer.max_return().map(|r| r.as_f64());
            }
            if self.config.kl_coeff > 0.0 && self.anchor.is_none() {
                self.anchor = Some(self.agent.policy_params.clone());
            }
        }
        let c = &self.config;
        let trajs = collect_epoch(
            &self.agent,
            env,
            c.epoch_min_steps,
            F::c(self.rollout_rtg()),
            c.eval_context_len,
            c.explore_noise,
            &mut self.env_rng,
        )?;
        for t in trajs {
            self.env_steps += t.len();
            self.buffer.insert(t);
        }
        self.epoch += 1;
        let alpha = self.config.alpha_online;
        let (mut actor, mut critic, mut q) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..self.config.updates.iterations(self.epoch) {
            let s = self.update_iteration(i, alpha)?;
            actor.extend(s.actor);
            critic.extend(s.critic);
            q.extend(s.mean_q);
        }
        let (eval_mean, eval_std) = self.evaluate(env)?;
        let mean = |v: &[f64]| {
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Ok(EpochMetrics {
            epoch: self.epoch,
            env_steps: self.env_steps,
            grad_steps: self.grad_steps(),
            eval_mean,
            eval_std,
            actor_loss: mean(&actor),
            critic_loss: mean(&critic),
            mean_q: mean(&q),
            seed: self.seed,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }

    /// Runs online epochs until the environment-step budget is spent,
    /// calling `on_epoch` after each.
    pub fn finetune<E: Env<F> + ?Sized>(
        &mut self,
        env: &mut E,
        mut on_epoch: impl FnMut(&EpochMetrics, &Self) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        let mut out = Vec::new();
        while self.env_steps < self.config.online_max_env_steps {
            let m = self.online_epoch(env)?;
            on_epoch(&m, self)?;
            out.push(m);
        }
        Ok(out)
    }
}
