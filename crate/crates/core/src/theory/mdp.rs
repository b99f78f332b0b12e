//! Small finite-horizon MDPs whose return distributions can be enumerated.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// Largest number of action/state paths `exact_rtg_distribution` enumerates.
pub const MAX_PATHS: usize = 1_000_000;

const ROW_TOL: f64 = 1e-12;

/// Tabular MDP with deterministic rewards `r(s, a)` and a stochastic
/// behavior policy `β(a|s)`. Tables are row-major:
/// `transition[(s·A + a)·S + s']`, `reward[s·A + a]`, `behavior[s·A + a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumerableMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub initial: Vec<f64>,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub behavior: Vec<f64>,
}

fn check_rows(name: &str, table: &[f64], row: usize) -> Result<()> {
    for (i, r) in table.chunks(row).enumerate() {
        let sum: f64 = r.iter().sum();
        if r.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
            return Err(arg_err!("{name} row {i} is not a distribution (sum {sum})"));
        }
    }
    Ok(())
}

fn random_simplex(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    // exponential spacings give a uniform point on the simplex
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

impl EnumerableMdp {
    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 || !(1..=4).contains(&self.horizon) {
            return Err(arg_err!("need states, actions and a horizon in 1..=4"));
        }
        if self.initial.len() != s
            || self.transition.len() != s * a * s
            || self.reward.len() != s * a
            || self.behavior.len() != s * a
        {
            return Err(arg_err!(
                "table sizes do not match {s} states and {a} actions"
            ));
        }
        if self.reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Numeric("mdp reward".into()));
        }
        check_rows("initial", &self.initial, s)?;
        check_rows("transition", &self.transition, s)?;
        check_rows("behavior", &self.behavior, a)
    }

    /// Random MDP with rewards on the grid `{0, ¼, ½, ¾, 1}`, so that sums of
    /// rewards are exact and equal returns coincide bit for bit.
    pub fn random(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transition.extend(random_simplex(n_states, rng));
        }
        let mut behavior = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            behavior.extend(random_simplex(n_actions, rng));
        }
        let mdp = Self {
            n_states,
            n_actions,
            horizon,
            initial: random_simplex(n_states, rng),
            transition,
            reward: (0..n_states * n_actions)
                .map(|_| rng.gen_range(0..=4) as f64 / 4.0)
                .collect(),
            behavior,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Single state, horizon one, actions with the given rewards.
    pub fn bandit(rewards: &[f64], behavior: &[f64]) -> Result<Self> {
        let mdp = Self {
            n_states: 1,
            n_actions: rewards.len(),
            horizon: 1,
            initial: vec![1.0],
            transition: vec![1.0; rewards.len()],
            reward: rewards.to_vec(),
            behavior: behavior.to_vec(),
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn max_reward(&self) -> f64 {
        self.reward
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_reward(&self) -> f64 {
        self.reward.iter().copied().fold(f64::INFINITY, f64::min)
    }

    #[inline]
    fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    #[inline]
    fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    #[inline]
    fn beta(&self, s: usize, a: usize) -> f64 {
        self.behavior[s * self.n_actions + a]
    }

    /// Number of (action, next state) paths from one start state.
    pub fn paths_per_start(&self) -> usize {
        let per_step = self.n_actions.saturating_mul(self.n_states);
        (1..self.horizon).fold(self.n_actions, |acc, _| acc.saturating_mul(per_step))
    }

    fn check_capacity(&self) -> Result<()> {
        let total = self.paths_per_start().saturating_mul(self.n_states);
        if total > MAX_PATHS {
            return Err(Error::Capacity(format!(
                "{total} paths exceed the limit of {MAX_PATHS}"
            )));
        }
        Ok(())
    }

    /// Calls `visit(return, probability)` for every continuation from state
    /// `s` at step `t` with accumulated return `ret` and probability `prob`.
    fn walk(&self, s: usize, t: usize, ret: f64, prob: f64, visit: &mut dyn FnMut(f64, f64)) {
        for a in 0..self.n_actions {
            let pa = prob * self.beta(s, a);
            if pa == 0.0 {
                continue;
            }
            self.step_after_action(s, a, t, ret, pa, visit);
        }
    }

    fn step_after_action(
        &self,
        s: usize,
        a: usize,
        t: usize,
        ret: f64,
        prob: f64,
        visit: &mut dyn FnMut(f64, f64),
    ) {
        let ret = ret + self.r(s, a);
        if t + 1 == self.horizon {
            visit(ret, prob);
            return;
        }
        for next in 0..self.n_states {
            let pn = prob * self.p(s, a, next);
            if pn != 0.0 {
                self.walk(next, t + 1, ret, pn, visit);
            }
        }
    }

    /// Samples one episode return from start state `s` under `β`.
    pub fn sample_return(&self, s: usize, rng: &mut dyn RngCore) -> f64 {
        let pick = |row: &[f64], rng: &mut dyn RngCore| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            row.len() - 1
        };
        let (na, ns) = (self.n_actions, self.n_states);
        let mut state = s;
        let mut ret = 0.0;
        for t in 0..self.horizon {
            let a = pick(&self.behavior[state * na..(state + 1) * na], rng);
            ret += self.r(state, a);
            if t + 1 < self.horizon {
                let base = (state * na + a) * ns;
                state = pick(&self.transition[base..base + ns], rng);
            }
        }
        ret
    }
}

/// What a return distribution is conditioned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    State(usize),
    StateAction(usize, usize),
    /// Pooled returns of a dataset.
    Dataset,
}

/// Discrete return distribution: sorted distinct support values with their
/// probabilities. `samples` is set when it comes from data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtgDistribution {
    pub key: Conditioning,
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
    pub samples: Option<usize>,
}

impl RtgDistribution {
    /// Merges `(value, probability)` atoms with identical values.
    pub fn from_atoms(key: Conditioning, mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms
            .iter()
            .any(|(v, p)| !v.is_finite() || !(p.is_finite() && *p >= 0.0))
        {
            return Err(Error::Numeric("return distribution atom".into()));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<f64> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for (v, p) in atoms {
            match support.last() {
                Some(&last) if last == v => *probs.last_mut().expect("parallel vectors") += p,
                _ => {
                    support.push(v);
                    probs.push(p);
                }
            }
        }
        Ok(Self {
            key,
            support,
            probs,
            samples: None,
        })
    }

    /// Empirical distribution of `values`, each with weight `1/n`.
    pub fn from_samples(key: Conditioning, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(arg_err!("no samples"));
        }
        let w = 1.0 / values.len() as f64;
        let mut d = Self::from_atoms(key, values.iter().map(|&v| (v, w)).collect())?;
        d.samples = Some(values.len());
        Ok(d)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| v * p)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| p * (v - m) * (v - m))
            .sum()
    }

    pub fn max(&self) -> f64 {
        *self.support.last().expect("non-empty support")
    }

    /// Probability of exactly `value`, zero off the support.
    pub fn prob_at(&self, value: f64) -> f64 {
        self.support
            .iter()
            .position(|&v| v == value)
            .map_or(0.0, |i| self.probs[i])
    }

    /// `Pr(RTG ≥ threshold)`.
    pub fn tail(&self, threshold: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .filter(|(&v, _)| v >= threshold)
            .map(|(_, &p)| p)
            .sum()
    }

    /// The same distribution with every value shifted by `offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            support: self.support.iter().map(|v| v + offset).collect(),
            ..self.clone()
        }
    }
}

/// Exact conditional return distributions of an enumerable MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactRtg {
    /// `P_β(RTG | s₁ = s)` for every state.
    pub by_state: Vec<RtgDistribution>,
    /// `P_β(RTG | s₁ = s, a₁ = a)` at index `s·A + a`.
    pub by_state_action: Vec<RtgDistribution>,
}

/// Enumerates every path under `β` from each start state (and each forced
/// first action) and collects the returns.
pub fn exact_rtg_distribution(mdp: &EnumerableMdp) -> Result<ExactRtg> {
    mdp.validate()?;
    mdp.check_capacity()?;
    let mut by_state = Vec::with_capacity(mdp.n_states);
    let mut by_state_action = Vec::with_capacity(mdp.n_states * mdp.n_actions);
    for s in 0..mdp.n_states {
        let mut atoms = Vec::new();
        mdp.walk(s, 0, 0.0, 1.0, &mut |r, p| atoms.push((r, p)));
        by_state.push(RtgDistribution::from_atoms(Conditioning::State(s), atoms)?);
        for a in 0..mdp.n_actions {
            let mut atoms = Vec::new();
            mdp.step_after_action(s, a, 0, 0.0, 1.0, &mut |r, p| atoms.push((r, p)));
            by_state_action.push(RtgDistribution::from_atoms(
                Conditioning::StateAction(s, a),
                atoms,
            )?);
        }
    }
    Ok(ExactRtg {
        by_state,
        by_state_action,
    })
}

/// `π^DT(a | s, g)` from its definition: the probability of first action `a`
/// among trajectories from `s` whose return equals `g`.
pub fn conditioned_policy(mdp: &EnumerableMdp, s: usize, g: f64) -> Result<Vec<f64>> {
    mdp.validate()?;
    mdp.check_capacity()?;
    let mut joint = vec![0.0; mdp.n_actions];
    for (a, slot) in joint.iter_mut().enumerate() {
        let pa = mdp.beta(s, a);
        if pa == 0.0 {
            continue;
        }
        mdp.step_after_action(s, a, 0, 0.0, pa, &mut |r, p| {
            if r == g {
                *slot += p;
            }
        });
    }
    let total: f64 = joint.iter().sum();
    if total == 0.0 {
        return Err(Error::Domain(format!(
            "return {g} has probability zero from state {s}"
        )));
    }
    Ok(joint.iter().map(|j| j / total).collect())
}

/// `max_a |π^DT(a|s,g) − β(a|s)·P(g|s,a)/P(g|s)|`.
pub fn bayes_identity_residual(
    mdp: &EnumerableMdp,
    exact: &ExactRtg,
    s: usize,
    g: f64,
) -> Result<f64> {
    if s >= mdp.n_states {
        return Err(arg_err!("state {s} out of range"));
    }
    let p_g = exact.by_state[s].prob_at(g);
    if p_g == 0.0 {
        return Err(Error::Domain(format!(
            "return {g} has probability zero from state {s}"
        )));
    }
    let lhs = conditioned_policy(mdp, s, g)?;
    Ok(lhs
        .iter()
        .enumerate()
        .map(|(a, &l)| {
            let rhs =
                mdp.beta(s, a) * exact.by_state_action[s * mdp.n_actions + a].prob_at(g) / p_g;
            (l - rhs).abs()
        })
        .fold(0.0, f64::max))
}

/// Largest Bayes residual over every state and every supported return.
pub fn max_bayes_residual(mdp: &EnumerableMdp) -> Result<f64> {
    let exact = exact_rtg_distribution(mdp)?;
    let mut worst = 0.0f64;
    for s in 0..mdp.n_states {
        for &g in &exact.by_state[s].support {
            worst = worst.max(bayes_identity_residual(mdp, &exact, s, g)?);
        }
    }
    Ok(worst)
}
