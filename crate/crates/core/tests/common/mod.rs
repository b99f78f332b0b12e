//! Fixtures shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod data;
pub mod td3;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use dtfine::agent::{Agent, AgentConfig};
use dtfine::data::{Eviction, ReplayBuffer, Segment, StateNormalizer, Trajectory};
use dtfine::diffmodel::{ParamId, ParamSet, TransformerConfig};
use dtfine::train::{
    actor_graph, critic_graph, critic_loss, mixed_actor_loss, odt_loss, ActorWeights,
};

/// One-layer, two-head transformer over 2-d states and 2-d actions with
/// 2×32 critics.
pub fn grad_agent(seed: u64) -> Agent<f64> {
    let policy = TransformerConfig {
        n_layers: 1,
        n_heads: 2,
        embed_dim: 8,
        dropout_rate: 0.0,
        context_len: 3,
        use_positional_embedding: true,
        max_timestep: 8,
        state_dim: 2,
        action_dim: 2,
        action_low: vec![-1.0, -2.0],
        action_high: vec![1.0, 0.5],
    };
    let mut cfg = AgentConfig::new(policy);
    cfg.critic_hidden = vec![32, 32];
    cfg.policy_noise = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = Agent::new(cfg, &mut rng).unwrap();
    // move away from the small-weight initialization so that no gradient
    // entry is tiny enough to drown in rounding noise
    for p in agent.policy_params.iter_mut() {
        for x in p.value.data.iter_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
    let trajs = random_trajectories(seed + 100, &[5, 2]);
    agent.normalizer = StateNormalizer::fit(&trajs).unwrap();
    agent
}

/// Trajectories with uniform states, actions and rewards of the given lengths.
pub fn random_trajectories(seed: u64, lengths: &[usize]) -> Vec<Trajectory<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lengths
        .iter()
        .map(|&n| {
            let states = (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let actions = (0..n)
                .flat_map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..0.5)])
                .collect();
            let rewards = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut dones = vec![false; n];
            dones[n - 1] = true;
            Trajectory::new(2, 2, states, actions, rewards, dones).unwrap()
        })
        .collect()
}

/// Full, left-padded and terminal windows of length 3.
pub fn grad_batch(seed: u64) -> Vec<Segment<f64>> {
    let trajs = random_trajectories(seed + 100, &[5, 2]);
    vec![
        Segment::from_trajectory(&trajs[0], 3, 3),
        Segment::from_trajectory(&trajs[0], 4, 3),
        Segment::from_trajectory(&trajs[1], 0, 3),
        Segment::from_trajectory(&trajs[1], 1, 3),
    ]
}

/// Denominator floor of the relative error. Entries whose true gradient
/// vanishes identically (a key bias shifts every score of a query equally)
/// differ only by rounding noise, which is far below this.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct FdResult {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// Central differences of `eval` against `analytic` over every entry of the
/// parameter set selected by `select`.
pub fn finite_difference(
    agent: &mut Agent<f64>,
    select: fn(&mut Agent<f64>) -> &mut ParamSet<f64>,
    analytic: &ParamSet<f64>,
    h: f64,
    mut eval: impl FnMut(&Agent<f64>) -> f64,
) -> FdResult {
    let mut out = FdResult {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for pi in 0..analytic.len() {
        let id = ParamId(pi);
        for j in 0..analytic.value(id).len() {
            let orig = select(agent).value(id).data[j];
            select(agent).value_mut(id).data[j] = orig + h;
            let up = eval(agent);
            select(agent).value_mut(id).data[j] = orig - h;
            let down = eval(agent);
            select(agent).value_mut(id).data[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id).grad.data[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(REL_FLOOR);
            out.checked += 1;
            if rel > out.max_rel_error || rel.is_nan() {
                out.max_rel_error = rel;
                out.worst = format!(
                    "{}[{j}] analytic {a:e} numeric {numeric:e}",
                    analytic.get(id).name
                );
            }
        }
    }
    out
}

fn policy(agent: &mut Agent<f64>) -> &mut ParamSet<f64> {
    &mut agent.policy_params
}

fn critic0(agent: &mut Agent<f64>) -> &mut ParamSet<f64> {
    &mut agent.critics.params[0]
}

fn critic1(agent: &mut Agent<f64>) -> &mut ParamSet<f64> {
    &mut agent.critics.params[1]
}

fn actor_grads(agent: &Agent<f64>, batch: &[Segment<f64>], alpha: f64) -> ParamSet<f64> {
    let weights = ActorWeights {
        alpha,
        bc: 1.0,
        kl: 0.0,
    };
    let mut g = actor_graph(agent, batch, weights, None, None).unwrap();
    g.tape.backward(g.loss).unwrap();
    let mut params = agent.policy_params.clone();
    params.zero_grads();
    g.tape.write_grads(&g.policy, &mut params).unwrap();
    params
}

/// Gradient checks of the supervised loss, the mixed actor loss at α = 0.1
/// and the twin-critic loss, with step `h = 1e-5`.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, FdResult)> {
    const H: f64 = 1e-5;
    let batch = grad_batch(seed);
    let mut agent = grad_agent(seed);
    let mut out = Vec::new();

    let g = actor_grads(&agent, &batch, 0.0);
    out.push((
        "supervised",
        finite_difference(&mut agent, policy, &g, H, |a| odt_loss(a, &batch).unwrap()),
    ));

    let g = actor_grads(&agent, &batch, 0.1);
    out.push((
        "mixed",
        finite_difference(&mut agent, policy, &g, H, |a| {
            mixed_actor_loss(a, &batch, 0.1, None).unwrap()
        }),
    ));

    // targets come from the target networks, so they stay fixed while the
    // live critics are perturbed
    let targets_rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let rows = dtfine::agent::valid_rows(&batch);
    let targets = agent
        .target_values(&batch, &rows, &mut targets_rng.clone())
        .unwrap();
    let mut g = critic_graph(&agent, &batch, &targets).unwrap();
    g.tape.backward(g.loss).unwrap();
    for (i, select) in [
        (0, critic0 as fn(&mut Agent<f64>) -> &mut ParamSet<f64>),
        (1, critic1),
    ] {
        let mut grads = agent.critics.params[i].clone();
        grads.zero_grads();
        g.tape.write_grads(&g.critics[i], &mut grads).unwrap();
        let name = if i == 0 { "critic1" } else { "critic2" };
        out.push((
            name,
            finite_difference(&mut agent, select, &grads, H, |a| {
                critic_loss(a, &batch, &mut targets_rng.clone()).unwrap()
            }),
        ));
    }
    out
}

/// Upper-tail p-value of Pearson's statistic against equal expected counts.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64)
        .unwrap()
        .cdf(stat)
}

/// One-dimensional trajectory whose state at step `i` is `i`.
pub fn line(len: usize) -> Trajectory<f64> {
    let mut dones = vec![false; len];
    dones[len - 1] = true;
    Trajectory::new(
        1,
        1,
        (0..len).map(|i| i as f64).collect(),
        vec![0.0; len],
        vec![1.0; len],
        dones,
    )
    .unwrap()
}

/// Context length seen by step `j` in every sampled window containing it.
pub fn context_lengths_at(j: usize, draws: usize, t_train: usize, seed: u64) -> Vec<u64> {
    let mut b = ReplayBuffer::new(1, Eviction::Fifo).unwrap();
    b.insert(line(1000));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; t_train];
    for _ in 0..draws {
        let s = b.sample_segment(t_train, &mut rng).unwrap();
        let first = s.first_valid().unwrap();
        if let Some(p) = (first..s.len).find(|&p| s.timesteps[p] == j) {
            counts[p - first] += 1;
        }
    }
    counts
}
