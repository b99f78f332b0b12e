//! Experiment descriptions, built-in presets and the per-seed driver shared
//! by the command line and the acceptance suite.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{AgentConfig, ExploreNoise};
use crate::data::Eviction;
use crate::diffmodel::{OptimizerConfig, TransformerConfig};
use crate::envs::{
    bandit::BANDIT_RANDOM_MEAN, bandit_dataset, generate_offline, Bandit, BanditDatasetConfig,
    Behavior, DelayedReward, Env, OfflineDataset, PointMass, PointMassConfig,
};
use crate::error::{Error, Result};
use crate::train::{EpochMetrics, TrainConfig, Trainer, UpdateSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvConfig {
    Bandit {
        dataset: BanditDatasetConfig,
    },
    Pointmass {
        env: PointMassConfig,
        behavior: Behavior,
        dataset_steps: usize,
    },
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Bandit { .. } => "bandit",
            EnvConfig::Pointmass { .. } => "pointmass",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvConfig,
    /// Emit accumulated rewards only every this many steps.
    pub reward_delay: Option<usize>,
    pub agent: AgentConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Seed of the generated offline data; the run seed when absent.
    pub dataset_seed: Option<u64>,
    /// Read the offline data from this file instead of generating it.
    pub dataset_path: Option<PathBuf>,
}

pub const PRESETS: &[&str] = &[
    "bandit-td3-odt",
    "bandit-ddpg-odt",
    "bandit-ddpg",
    "bandit-odt",
    "pointmass-td3-odt",
    "pointmass-odt",
    "bandit-fig2",
    "pointmass",
];

fn bandit_base(name: &str) -> ExperimentConfig {
    let policy = TransformerConfig {
        n_layers: 1,
        n_heads: 1,
        embed_dim: 32,
        dropout_rate: 0.0,
        context_len: 1,
        use_positional_embedding: false,
        max_timestep: 1,
        state_dim: 1,
        action_dim: 1,
        action_low: vec![-1.0],
        action_high: vec![1.0],
    };
    let mut agent = AgentConfig::new(policy);
    agent.critic_hidden = vec![128, 128];
    agent.critic_layer_norm = true;
    agent.reward_scale = 3.0;
    ExperimentConfig {
        name: name.into(),
        env: EnvConfig::Bandit {
            dataset: BanditDatasetConfig::default(),
        },
        reward_delay: None,
        agent,
        train: TrainConfig {
            alpha_pretrain: 0.0,
            alpha_online: 10.0,
            bc_coeff: 1.0,
            kl_coeff: 0.0,
            use_critic: true,
            policy_delay: 2,
            batch_size: 32,
            context_len: 1,
            eval_context_len: 1,
            rtg_eval: 1.0,
            rtg_rollout: 1.0,
            curriculum_rtg: false,
            actor_optimizer: OptimizerConfig::adam(1e-3),
            critic_optimizer: OptimizerConfig::adam(1e-3),
            explore_noise: ExploreNoise::Uniform { half_width: 0.01 },
            pretrain_steps: 20,
            online_max_env_steps: 16 * 64,
            epoch_min_steps: 64,
            updates: UpdateSchedule::Linear { base: 4, slope: 2 },
            eval_episodes: 1,
            buffer_capacity: 100_000,
            eviction: Eviction::Fifo,
            normalize_states: true,
        },
        seeds: vec![0, 1, 2, 3, 4],
        dataset_seed: None,
        dataset_path: None,
    }
}

fn pointmass_base(name: &str) -> ExperimentConfig {
    let mut policy = TransformerConfig::desk_scale(4, 2, vec![-1.0; 2], vec![1.0; 2], 5);
    policy.embed_dim = 32;
    let mut agent = AgentConfig::new(policy);
    agent.critic_hidden = vec![64, 64];
    agent.rtg_scale = 100.0;
    agent.reward_scale = 10.0;
    ExperimentConfig {
        name: name.into(),
        env: EnvConfig::Pointmass {
            env: PointMassConfig::default(),
            behavior: Behavior::Random,
            dataset_steps: 5000,
        },
        reward_delay: None,
        agent,
        train: TrainConfig {
            alpha_pretrain: 0.0,
            alpha_online: 0.1,
            bc_coeff: 1.0,
            kl_coeff: 0.0,
            use_critic: true,
            policy_delay: 2,
            batch_size: 32,
            context_len: 5,
            eval_context_len: 5,
            rtg_eval: -5.0,
            rtg_rollout: -5.0,
            curriculum_rtg: false,
            actor_optimizer: OptimizerConfig::adam(1e-3),
            critic_optimizer: OptimizerConfig::adam(1e-3),
            explore_noise: ExploreNoise::Gaussian { sigma: 0.1 },
            pretrain_steps: 200,
            online_max_env_steps: 50_000,
            epoch_min_steps: 1000,
            updates: UpdateSchedule::Fixed { iterations: 100 },
            eval_episodes: 10,
            buffer_capacity: 1000,
            eviction: Eviction::Fifo,
            normalize_states: true,
        },
        seeds: vec![0, 1, 2, 3, 4],
        dataset_seed: None,
        dataset_path: None,
    }
}

/// Built-in experiment by name.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let cfg = match name {
        "bandit-td3-odt" | "bandit-fig2" => bandit_base(name),
        "bandit-ddpg-odt" => {
            let mut c = bandit_base(name);
            ddpg_toggles(&mut c);
            c
        }
        "bandit-ddpg" => {
            let mut c = bandit_base(name);
            ddpg_toggles(&mut c);
            // offline steps fit the critic only; the actor has no supervised term
            c.train.alpha_pretrain = 0.0;
            c.train.alpha_online = 1.0;
            c.train.bc_coeff = 0.0;
            c
        }
        "bandit-odt" => {
            let mut c = bandit_base(name);
            odt_toggles(&mut c);
            c
        }
        "pointmass-td3-odt" | "pointmass" => pointmass_base(name),
        "pointmass-odt" => {
            let mut c = pointmass_base(name);
            odt_toggles(&mut c);
            c
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown preset `{name}`; available: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

/// Single critic, no target smoothing, no update delay.
fn ddpg_toggles(c: &mut ExperimentConfig) {
    c.agent.single_critic = true;
    c.agent.policy_noise = 0.0;
    c.train.policy_delay = 1;
}

/// Supervised updates only.
fn odt_toggles(c: &mut ExperimentConfig) {
    c.train.alpha_pretrain = 0.0;
    c.train.alpha_online = 0.0;
    c.train.use_critic = false;
    c.train.policy_delay = 1;
}

/// Applies `key=value` overrides to a serialized config. Keys are dotted
/// paths (`train.batch_size`); values parse as JSON and fall back to a
/// plain string.
pub fn apply_overrides(cfg: &ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut root = serde_json::to_value(cfg)?;
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
        let value: Value =
            serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = match slot {
                Value::Object(map) => map
                    .get_mut(part)
                    .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?,
                Value::Array(items) => {
                    let idx: usize = part.parse().map_err(|_| {
                        Error::Config(format!("`{part}` in `{key}` is not an index"))
                    })?;
                    items.get_mut(idx).ok_or_else(|| {
                        Error::Config(format!("index {idx} out of range in `{key}`"))
                    })?
                }
                _ => return Err(Error::Config(format!("`{key}` descends into a scalar"))),
            };
        }
        *slot = value;
    }
    serde_json::from_value(root)
        .map_err(|e| Error::Config(format!("invalid config after overrides: {e}")))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.train.validate(&self.agent)?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let (sd, ad) = match &self.env {
            EnvConfig::Bandit { .. } => (1, 1),
            EnvConfig::Pointmass { .. } => (4, 2),
        };
        if self.agent.policy.state_dim != sd || self.agent.policy.action_dim != ad {
            return Err(Error::Config(format!(
                "{} needs state_dim {sd} and action_dim {ad}",
                self.env.name()
            )));
        }
        if self.reward_delay == Some(0) {
            return Err(Error::Config("reward_delay must be at least 1".into()));
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<Box<dyn Env<f64>>> {
        let base: Box<dyn Env<f64>> = match &self.env {
            EnvConfig::Bandit { .. } => Box::new(Bandit::new()),
            EnvConfig::Pointmass { env, .. } => Box::new(PointMass::new(env.clone())),
        };
        Ok(match self.reward_delay {
            Some(m) => Box::new(DelayedReward::new(base, m)?),
            None => base,
        })
    }

    /// Offline data for a run: read from `dataset_path` or generated.
    pub fn dataset(&self, seed: u64) -> Result<OfflineDataset<f64>> {
        if let Some(path) = &self.dataset_path {
            return OfflineDataset::load(path);
        }
        let seed = self.dataset_seed.unwrap_or(seed);
        match &self.env {
            EnvConfig::Bandit { dataset } => bandit_dataset(dataset, seed),
            EnvConfig::Pointmass {
                behavior,
                dataset_steps,
                ..
            } => generate_offline(self.build_env()?.as_mut(), *behavior, *dataset_steps, seed),
        }
    }

    /// `(random, expert)` reference returns for score normalization.
    pub fn reference_returns(&self) -> Result<(f64, f64)> {
        match &self.env {
            EnvConfig::Bandit { .. } => Ok((BANDIT_RANDOM_MEAN, 1.0)),
            EnvConfig::Pointmass { env, .. } => pointmass_references(env),
        }
    }
}

/// Mean returns of the random and oracle behaviors over 100 episodes each.
pub fn pointmass_references(cfg: &PointMassConfig) -> Result<(f64, f64)> {
    let episodes = 100;
    let mean = |behavior| -> Result<f64> {
        let mut env = PointMass::<f64>::new(cfg.clone());
        let mut total = 0.0;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7_777);
        for _ in 0..episodes {
            let mut state = env.reset(&mut rng);
            loop {
                let a = crate::envs::behavior_action(&env, behavior, &state, &mut rng)?;
                let out = env.step(&a)?;
                total += out.reward;
                state = out.next_state;
                if out.done {
                    break;
                }
            }
        }
        Ok(total / episodes as f64)
    };
    Ok((mean(Behavior::Random)?, mean(Behavior::Oracle)?))
}

/// Metrics of one seed: the row after pretraining followed by one row per
/// online epoch.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Vec<EpochMetrics>,
    pub trainer: Trainer<f64>,
}

impl SeedRun {
    pub fn pretrained(&self) -> &EpochMetrics {
        &self.metrics[0]
    }

    pub fn last(&self) -> &EpochMetrics {
        self.metrics.last().expect("at least the pretraining row")
    }
}

/// Pretrains on the offline data and finetunes online for one seed.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochMetrics, &Trainer<f64>) -> Result<()>,
) -> Result<SeedRun> {
    cfg.validate()?;
    let mut env = cfg.build_env()?;
    let data = cfg.dataset(seed)?;
    let mut trainer = Trainer::new(cfg.train.clone(), cfg.agent.clone(), seed)?;
    trainer.load_offline(&data)?;
    trainer.pretrain()?;
    let first = trainer.snapshot(env.as_mut())?;
    on_epoch(&first, &trainer)?;
    let mut metrics = vec![first];
    metrics.extend(trainer.finetune(env.as_mut(), &mut on_epoch)?);
    Ok(SeedRun {
        seed,
        metrics,
        trainer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            preset(name).unwrap().validate().unwrap();
        }
        assert!(matches!(preset("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let base = preset("bandit-td3-odt").unwrap();
        let cfg = apply_overrides(
            &base,
            &[
                "train.batch_size=7".into(),
                "agent.critic_hidden.0=33".into(),
                "train.eviction=keep-top-k".into(),
                "seeds=[9]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.batch_size, 7);
        assert_eq!(cfg.agent.critic_hidden, vec![33, 128]);
        assert_eq!(cfg.train.eviction, Eviction::KeepTopK);
        assert_eq!(cfg.seeds, vec![9]);
        assert!(apply_overrides(&base, &["train.nope=1".into()]).is_err());
        assert!(apply_overrides(&base, &["train.batch_size=\"x\"".into()]).is_err());
    }

    #[test]
    fn ddpg_preset_flips_all_toggles() {
        let c = preset("bandit-ddpg").unwrap();
        assert!(c.agent.single_critic);
        assert_eq!(c.agent.policy_noise, 0.0);
        assert_eq!(c.train.policy_delay, 1);
    }
}
