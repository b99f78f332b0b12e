use rand::RngCore;

use crate::agent::{collect_episode, Agent, ExploreNoise};
use crate::envs::Env;
use crate::error::{arg_err, Result};
use crate::scalar::Real;

/// Mean and population standard deviation of the returns of `n_episodes`
/// noise-free rollouts conditioned on `rtg`.
pub fn evaluate<F: Real, E: Env<F> + ?Sized>(
    agent: &Agent<F>,
    env: &mut E,
    n_episodes: usize,
    rtg: F,
    window: usize,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64)> {
    if n_episodes == 0 {
        return Err(arg_err!("evaluation needs at least one episode"));
    }
    let mut returns = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let traj = collect_episode(agent, env, rtg, window, ExploreNoise::None, rng)?;
        returns.push(traj.total_return().as_f64());
    }
    let n = n_episodes as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// `100·(ret − random) / (expert − random)`.
pub fn normalized_score(ret: f64, random: f64, expert: f64) -> f64 {
    100.0 * (ret - random) / (expert - random)
}
