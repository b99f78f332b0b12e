//! Offline datasets: behavior-policy rollouts and the line-delimited JSON
//! file format.
//!
//! A file starts with one header object followed by one object per step:
//!
//! ```text
//! {"env":"bandit","seed":0,"generator":"random","state_dim":1,"action_dim":1}
//! {"traj_id":0,"t":0,"state":[0.0],"action":[-0.3],"reward":0.49,"done":1}
//! ```
//!
//! Reals are written as shortest round-trip decimals, so an `f64` dataset
//! reads back bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Env;
use crate::data::Trajectory;
use crate::error::{arg_err, Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    /// Uniform over the action box.
    Random,
    /// A controller that makes progress but is visibly worse than `Oracle`.
    ScriptedSuboptimal,
    Oracle,
}

impl Behavior {
    pub fn tag(self) -> &'static str {
        match self {
            Behavior::Random => "random",
            Behavior::ScriptedSuboptimal => "scripted-suboptimal",
            Behavior::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Behavior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Behavior::Random),
            "scripted-suboptimal" => Ok(Behavior::ScriptedSuboptimal),
            "oracle" => Ok(Behavior::Oracle),
            _ => Err(arg_err!("unknown behavior `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: String,
    pub seed: u64,
    pub generator: String,
    pub state_dim: usize,
    pub action_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset<F> {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory<F>>,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    traj_id: usize,
    t: usize,
    state: Vec<f64>,
    action: Vec<f64>,
    reward: f64,
    done: u8,
}

impl<F: Real> OfflineDataset<F> {
    pub fn new(meta: DatasetMeta, trajectories: Vec<Trajectory<F>>) -> Self {
        Self { meta, trajectories }
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn returns(&self) -> Vec<F> {
        self.trajectories
            .iter()
            .map(Trajectory::total_return)
            .collect()
    }

    /// Mean episode return; zero for an empty dataset.
    pub fn return_mean(&self) -> F {
        if self.trajectories.is_empty() {
            return F::zero();
        }
        self.returns().into_iter().sum::<F>() / F::of_usize(self.trajectories.len())
    }

    /// Population standard deviation of episode returns.
    pub fn return_std(&self) -> F {
        if self.trajectories.is_empty() {
            return F::zero();
        }
        let m = self.return_mean();
        let var = self
            .returns()
            .into_iter()
            .map(|r| (r - m) * (r - m))
            .sum::<F>()
            / F::of_usize(self.trajectories.len());
        var.sqrt()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<dataset writer>", e);
        serde_json::to_writer(&mut w, &self.meta)?;
        w.write_all(b"\n").map_err(io)?;
        for (id, traj) in self.trajectories.iter().enumerate() {
            for t in 0..traj.len() {
                let rec = StepRecord {
                    traj_id: id,
                    t,
                    state: traj.state(t).iter().map(|x| x.as_f64()).collect(),
                    action: traj.action(t).iter().map(|x| x.as_f64()).collect(),
                    reward: traj.rewards()[t].as_f64(),
                    done: traj.dones()[t] as u8,
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n").map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            e => e,
        })
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines().enumerate();
        let parse = |line: usize, msg: String| Error::Parse {
            line: line + 1,
            msg,
        };
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse(0, "missing header".into()))?;
        let header = header.map_err(|e| parse(0, e.to_string()))?;
        let meta: DatasetMeta =
            serde_json::from_str(&header).map_err(|e| parse(0, e.to_string()))?;

        let mut trajectories = Vec::new();
        let mut cur: Option<(usize, Vec<F>, Vec<F>, Vec<F>, Vec<bool>)> = None;
        let mut finish =
            |cur: Option<(usize, Vec<F>, Vec<F>, Vec<F>, Vec<bool>)>, line: usize| -> Result<()> {
                if let Some((_, s, a, r, d)) = cur {
                    let traj = Trajectory::new(meta.state_dim, meta.action_dim, s, a, r, d)
                        .map_err(|e| parse(line, e.to_string()))?;
                    trajectories.push(traj);
                }
                Ok(())
            };
        let mut last_line = 0;
        for (i, line) in lines {
            last_line = i;
            let line = line.map_err(|e| parse(i, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StepRecord =
                serde_json::from_str(&line).map_err(|e| parse(i, e.to_string()))?;
            if rec.state.len() != meta.state_dim || rec.action.len() != meta.action_dim {
                return Err(parse(
                    i,
                    "state or action length disagrees with header".into(),
                ));
            }
            if rec.done > 1 {
                return Err(parse(i, format!("done must be 0 or 1, got {}", rec.done)));
            }
            let continues = matches!(&cur, Some((id, ..)) if *id == rec.traj_id);
            if !continues {
                finish(cur.take(), i)?;
                cur = Some((rec.traj_id, Vec::new(), Vec::new(), Vec::new(), Vec::new()));
            }
            let (_, s, a, r, d) = cur.as_mut().expect("current trajectory");
            if rec.t != d.len() {
                return Err(parse(
                    i,
                    format!("expected t = {}, found {}", d.len(), rec.t),
                ));
            }
            s.extend(rec.state.iter().map(|&x| F::c(x)));
            a.extend(rec.action.iter().map(|&x| F::c(x)));
            r.push(F::c(rec.reward));
            d.push(rec.done == 1);
        }
        finish(cur, last_line)?;
        Ok(Self { meta, trajectories })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}

/// Rolls `behavior` in `env` for exactly `n_steps` steps. An episode still
/// running when the budget runs out is cut there and its last step marked done.
pub fn generate_offline<F: Real, E: Env<F> + ?Sized>(
    env: &mut E,
    behavior: Behavior,
    n_steps: usize,
    seed: u64,
) -> Result<OfflineDataset<F>> {
    if n_steps == 0 {
        return Err(arg_err!("n_steps must be at least 1"));
    }
    let spec = env.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::new();
    let mut steps = 0;
    while steps < n_steps {
        let mut state = env.reset(&mut rng);
        let (mut s, mut a, mut r, mut d) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        loop {
            let action = behavior_action(env, behavior, &state, &mut rng)?;
            let out = env.step(&action)?;
            s.extend_from_slice(&state);
            a.extend_from_slice(&action);
            r.push(out.reward);
            steps += 1;
            let done = out.done || steps == n_steps;
            d.push(done);
            state = out.next_state;
            if done {
                break;
            }
        }
        trajectories.push(Trajectory::new(
            spec.state_dim,
            spec.action_dim,
            s,
            a,
            r,
            d,
        )?);
    }
    let meta = DatasetMeta {
        env: spec.name.clone(),
        seed,
        generator: behavior.tag().into(),
        state_dim: spec.state_dim,
        action_dim: spec.action_dim,
    };
    Ok(OfflineDataset::new(meta, trajectories))
}

/// The action `behavior` takes in `state`.
pub fn behavior_action<F: Real, E: Env<F> + ?Sized>(
    env: &E,
    behavior: Behavior,
    state: &[F],
    rng: &mut dyn RngCore,
) -> Result<Vec<F>> {
    let spec = env.spec();
    match behavior {
        Behavior::Random => Ok(spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(&lo, &hi)| F::c(rng.gen_range(lo..hi)))
            .collect()),
        b => env
            .scripted_action(b, state)
            .ok_or_else(|| arg_err!("{} has no {} controller", spec.name, b.tag())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Bandit, PointMass, PointMassConfig};

    #[test]
    fn random_bandit_one_trajectory_per_step() {
        let ds = generate_offline::<f64, _>(&mut Bandit::new(), Behavior::Random, 128, 1).unwrap();
        assert_eq!(ds.trajectories.len(), 128);
        assert_eq!(ds.total_steps(), 128);
        assert_eq!(ds.meta.generator, "random");
    }

    #[test]
    fn budget_cuts_last_episode() {
        let mut env = PointMass::<f64>::new(PointMassConfig::default());
        let ds = generate_offline(&mut env, Behavior::Random, 250, 4).unwrap();
        assert_eq!(ds.total_steps(), 250);
        let last = ds.trajectories.last().unwrap();
        assert!(*last.dones().last().unwrap());
    }

    #[test]
    fn return_statistics() {
        let ds = generate_offline::<f64, _>(&mut Bandit::new(), Behavior::Random, 50, 2).unwrap();
        let rets: Vec<f64> = ds
            .trajectories
            .iter()
            .map(|t| t.rewards().iter().sum())
            .collect();
        let mean = rets.iter().sum::<f64>() / 50.0;
        assert!((ds.return_mean() - mean).abs() < 1e-12);
        let var = rets.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 50.0;
        assert!((ds.return_std() - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let mut env = PointMass::<f64>::new(PointMassConfig::default());
        let ds = generate_offline(&mut env, Behavior::Random, 230, 9).unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let back = OfflineDataset::<f64>::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        let first = String::from_utf8(buf).unwrap();
        assert!(first.starts_with("{\"env\":\"pointmass\",\"seed\":9,\"generator\":\"random\""));
    }

    #[test]
    fn malformed_lines_report_position() {
        let text = "{\"env\":\"bandit\",\"seed\":0,\"generator\":\"x\",\"state_dim\":1,\"action_dim\":1}\n\
                    {\"traj_id\":0,\"t\":0,\"state\":[0.0],\"action\":[0.1],\"reward\":0.8,\"done\":1}\n\
                    {\"traj_id\":1,\"t\":3,\"state\":[0.0],\"action\":[0.1],\"reward\":0.8,\"done\":1}\n";
        match OfflineDataset::<f64>::read_from(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn scripted_behavior_needs_controller() {
        struct NoController(Bandit);
        impl Env<f64> for NoController {
            fn spec(&self) -> &crate::envs::EnvSpec {
                Env::<f64>::spec(&self.0)
            }
            fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
                self.0.reset(rng)
            }
            fn step(&mut self, a: &[f64]) -> Result<crate::envs::StepResult<f64>> {
                self.0.step(a)
            }
        }
        let err = generate_offline(&mut NoController(Bandit::new()), Behavior::Oracle, 4, 0);
        assert!(matches!(err, Err(Error::Argument(_))));
    }
}
