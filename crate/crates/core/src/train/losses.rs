//! Actor and critic objectives recorded on a tape.
//!
//! Actor terms average over the valid positions of each segment and then
//! over the batch. The critic loss sums squared errors over valid positions
//! and averages over the batch.

use rand::RngCore;

use crate::agent::{valid_rows, Agent};
use crate::data::Segment;
use crate::diffmodel::{Bound, ParamSet, Tape, Tensor, Var};
use crate::error::{arg_err, Result};
use crate::scalar::Real;

/// Weights of the actor objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActorWeights<F> {
    /// Coefficient of `-Q_1(s, μ)`.
    pub alpha: F,
    /// Coefficient of the supervised term `‖μ − a‖²`.
    pub bc: F,
    /// Coefficient of `‖μ − μ_anchor‖²`; used only with an anchor.
    pub kl: F,
}

impl<F: Real> ActorWeights<F> {
    pub fn supervised() -> Self {
        Self {
            alpha: F::zero(),
            bc: F::one(),
            kl: F::zero(),
        }
    }
}

/// A recorded actor loss with the policy binding needed to read gradients.
pub struct ActorGraph<F> {
    pub tape: Tape<F>,
    pub policy: Bound,
    pub loss: Var,
    /// Mean of `Q_1(s, μ)` over valid positions; zero when `alpha = 0`.
    pub mean_q: F,
}

/// Per-row weights averaging within each segment, then across the batch.
fn row_weights<F: Real>(segments: &[Segment<F>], rows: &[usize]) -> Vec<F> {
    let len = segments[0].len;
    let b = F::of_usize(segments.len());
    rows.iter()
        .map(|&r| F::one() / (b * F::of_usize(segments[r / len].valid_count())))
        .collect()
}

fn check_batch<F: Real>(segments: &[Segment<F>]) -> Result<Vec<usize>> {
    if segments.is_empty() {
        return Err(arg_err!("empty segment batch"));
    }
    if let Some(i) = segments.iter().position(|s| s.valid_count() == 0) {
        return Err(arg_err!("segment {i} has no valid position"));
    }
    Ok(valid_rows(segments))
}

/// Records `alpha·(−Q_1(s, μ)) + bc·‖μ − a‖² + kl·‖μ − μ_anchor‖²`.
/// Critic parameters enter as constants, so gradients reach the policy
/// through the critic's action input only.
pub fn actor_graph<F: Real>(
    agent: &Agent<F>,
    segments: &[Segment<F>],
    weights: ActorWeights<F>,
    anchor: Option<&ParamSet<F>>,
    train_rng: Option<&mut dyn RngCore>,
) -> Result<ActorGraph<F>> {
    let rows = check_batch(segments)?;
    let w = row_weights(segments, &rows);
    let ad = agent.action_dim();
    let tokens = agent.segment_tokens(segments, false)?;
    let mut tape = Tape::new();
    let policy = tape.bind(&agent.policy_params, true);
    let out = agent
        .policy
        .forward(&mut tape, &policy, &tokens, train_rng)?;
    let mu = tape.gather_rows(out, rows.clone())?;
    let per_elem: Vec<F> = w
        .iter()
        .flat_map(|&x| std::iter::repeat_n(x, ad))
        .collect();

    let mut terms = Vec::new();
    if weights.bc != F::zero() {
        let data = tape.constant(agent.gather_actions(segments, &rows));
        let diff = tape.sub(mu, data)?;
        let sq = tape.square(diff);
        terms.push(tape.weighted_sum(sq, per_elem.iter().map(|&x| x * weights.bc).collect())?);
    }
    if let (Some(anchor), true) = (anchor, weights.kl != F::zero()) {
        let frozen = agent.policy.predict(anchor, &tokens)?;
        let mut target = Tensor::zeros(rows.len(), ad);
        for (i, &r) in rows.iter().enumerate() {
            target.row_mut(i).copy_from_slice(frozen.row(r));
        }
        let target = tape.constant(target);
        let diff = tape.sub(mu, target)?;
        let sq = tape.square(diff);
        terms.push(tape.weighted_sum(sq, per_elem.iter().map(|&x| x * weights.kl).collect())?);
    }
    let mut mean_q = F::zero();
    if weights.alpha != F::zero() {
        let critic = tape.bind(&agent.critics.params[0], false);
        let states = tape.constant(agent.gather_states(segments, &rows, false));
        let q = agent.critics.forward(&mut tape, &critic, states, mu)?;
        mean_q = tape
            .value(q)
            .data
            .iter()
            .zip(&w)
            .map(|(&q, &w)| q * w)
            .sum();
        terms.push(tape.weighted_sum(q, w.iter().map(|&x| -x * weights.alpha).collect())?);
    }
    let loss = match terms.len() {
        0 => {
            let zero = tape.constant(Tensor::zeros(rows.len(), ad));
            let prod = tape.mul(mu, zero)?;
            tape.sum(prod)
        }
        _ => {
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = tape.add(acc, t)?;
            }
            acc
        }
    };
    Ok(ActorGraph {
        tape,
        policy,
        loss,
        mean_q,
    })
}

/// Supervised return-conditioned loss: per-segment mean over valid positions
/// of `‖μ − a‖²`, averaged over the batch.
pub fn odt_loss<F: Real>(agent: &Agent<F>, segments: &[Segment<F>]) -> Result<F> {
    let g = actor_graph(agent, segments, ActorWeights::supervised(), None, None)?;
    Ok(g.tape.value(g.loss).data[0])
}

/// `−alpha·Q_1(s, μ) + ‖μ − a‖²` averaged like [`odt_loss`], plus
/// `kl·‖μ − μ_anchor‖²` when an anchor policy is given.
pub fn mixed_actor_loss<F: Real>(
    agent: &Agent<F>,
    segments: &[Segment<F>],
    alpha: F,
    kl: Option<(&ParamSet<F>, F)>,
) -> Result<F> {
    let weights = ActorWeights {
        alpha,
        bc: F::one(),
        kl: kl.map_or(F::zero(), |k| k.1),
    };
    let g = actor_graph(agent, segments, weights, kl.map(|k| k.0), None)?;
    Ok(g.tape.value(g.loss).data[0])
}

/// A recorded critic loss over both critics.
pub struct CriticGraph<F> {
    pub tape: Tape<F>,
    pub critics: [Bound; 2],
    pub loss: Var,
    pub mean_q: F,
}

/// Records `Σ_t (Q_1 − y)² + (Q_2 − y)²` over valid positions, averaged over
/// the batch, with `targets` (one per valid row) held constant.
pub fn critic_graph<F: Real>(
    agent: &Agent<F>,
    segments: &[Segment<F>],
    targets: &[F],
) -> Result<CriticGraph<F>> {
    let rows = check_batch(segments)?;
    if targets.len() != rows.len() {
        return Err(arg_err!(
            "{} targets for {} valid positions",
            targets.len(),
            rows.len()
        ));
    }
    let inv_b = F::one() / F::of_usize(segments.len());
    let mut tape = Tape::new();
    let states = tape.constant(agent.gather_states(segments, &rows, false));
    let actions = tape.constant(agent.gather_actions(segments, &rows));
    let y = tape.constant(Tensor::from_vec(rows.len(), 1, targets.to_vec())?);
    let b0 = tape.bind(&agent.critics.params[0], true);
    let b1 = tape.bind(&agent.critics.params[1], true);
    let mut parts = Vec::with_capacity(2);
    let mut mean_q = F::zero();
    for (i, bound) in [&b0, &b1].into_iter().enumerate() {
        let q = agent.critics.forward(&mut tape, bound, states, actions)?;
        if i == 0 {
            mean_q = tape.value(q).data.iter().copied().sum::<F>() / F::of_usize(rows.len());
        }
        let diff = tape.sub(q, y)?;
        let sq = tape.square(diff);
        parts.push(tape.weighted_sum(sq, vec![inv_b; rows.len()])?);
    }
    let loss = tape.add(parts[0], parts[1])?;
    Ok(CriticGraph {
        tape,
        critics: [b0, b1],
        loss,
        mean_q,
    })
}

/// Value of the critic loss against freshly computed TD targets.
pub fn critic_loss<F: Real>(
    agent: &Agent<F>,
    segments: &[Segment<F>],
    rng: &mut dyn RngCore,
) -> Result<F> {
    let rows = check_batch(segments)?;
    let targets = agent.target_values(segments, &rows, rng)?;
    let g = critic_graph(agent, segments, &targets)?;
    Ok(g.tape.value(g.loss).data[0])
}
