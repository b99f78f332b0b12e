//! Command-line front end: argument definitions and subcommand bodies.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::experiment::{apply_overrides, preset, run_seed, ExperimentConfig, SeedRun};
use crate::theory;
use crate::train::{evaluate, normalized_score, write_metrics_csv};

pub const OUT_ENV: &str = "DTFINE_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "dtfine",
    version,
    about = "Online finetuning of decision transformers with TD3 gradients"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write an offline dataset in the line-delimited format.
    GenData(ExperimentArgs),
    /// Pretrain and finetune every seed; write metrics, summary and checkpoints.
    Run(RunArgs),
    /// Run the analytical checks and write a report.
    Theory(TheoryArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment file; takes precedence over --preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Replaces the seed list; repeatable.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Dotted `key=value` override; repeatable.
    #[arg(long = "override")]
    pub overrides: Vec<String>,
    /// Output directory; defaults to $DTFINE_OUT, then `runs`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// `key=v1,v2,...`; the run covers the product of all sweeps.
    #[arg(long = "sweep")]
    pub sweeps: Vec<String>,
    /// Stop after pretraining.
    #[arg(long)]
    pub pretrain_only: bool,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed of the enumerable-MDP suite.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of random MDPs in the suite.
    #[arg(long, default_value_t = 24)]
    pub mdps: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    /// Overrides the stored evaluation target return.
    #[arg(long)]
    pub rtg: Option<f64>,
}

pub fn out_root(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs")),
    }
}

/// Resolves a config file or preset, then seeds and overrides, and validates.
pub fn resolve(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => preset(name)?,
        (None, None) => {
            return Err(Error::Config(
                "either --config or --preset is required".into(),
            ))
        }
    };
    if !args.overrides.is_empty() {
        cfg = apply_overrides(&cfg, &args.overrides)?;
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_gen_data(args: &ExperimentArgs) -> Result<Vec<PathBuf>> {
    let cfg = resolve(args)?;
    let dir = out_root(args.out.as_deref());
    create_dir(&dir)?;
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        let data = cfg.dataset(seed)?;
        let path = dir.join(format!(
            "{}-{}-seed{seed}.jsonl",
            data.meta.env, data.meta.generator
        ));
        data.save(&path)?;
        println!(
            "{}: {} trajectories, {} steps, return {:.4} ± {:.4}",
            path.display(),
            data.trajectories.len(),
            data.total_steps(),
            data.return_mean(),
            data.return_std()
        );
        written.push(path);
    }
    Ok(written)
}

/// Expands `key=v1,v2` sweeps into labelled override lists.
fn sweep_variants(sweeps: &[String]) -> Result<Vec<(String, Vec<String>)>> {
    let mut variants = vec![(String::new(), Vec::new())];
    for s in sweeps {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("sweep `{s}` is not key=v1,v2,...")))?;
        let mut next = Vec::new();
        for (label, ovs) in &variants {
            for v in values.split(',') {
                let mut ovs = ovs.clone();
                ovs.push(format!("{key}={v}"));
                let label = if label.is_empty() {
                    format!("{key}={v}")
                } else {
                    format!("{label},{key}={v}")
                };
                next.push((label, ovs));
            }
        }
        variants = next;
    }
    Ok(variants)
}

/// `final(+delta)` with one decimal.
pub fn final_delta(final_mean: f64, initial_mean: f64) -> String {
    let delta = final_mean - initial_mean;
    let sign = if delta >= 0.0 { "+" } else { "" };
    format!("{final_mean:.1}({sign}{delta:.1})")
}

/// One line per toggle of the TD3 mechanics, for auditing presets.
pub fn mechanics_line(cfg: &ExperimentConfig) -> String {
    format!(
        "mechanics: critic={} clipped_double_q={} target_smoothing={} policy_delay={} alpha_online={} bc_coeff={}",
        cfg.train.use_critic,
        cfg.train.use_critic && !cfg.agent.single_critic,
        cfg.train.use_critic && cfg.agent.policy_noise > 0.0,
        if cfg.train.use_critic { cfg.train.policy_delay } else { 1 },
        cfg.train.alpha_online,
        cfg.train.bc_coeff
    )
}

pub const SUMMARY_HEADER: &str = "variant,seeds,pretrained_mean,final_mean,final_std,final_delta";

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let base = resolve(&args.exp)?;
    let variants = sweep_variants(&args.sweeps)?;
    // validate every variant before spending any compute
    let mut configs = Vec::with_capacity(variants.len());
    for (label, ovs) in &variants {
        let cfg = apply_overrides(&base, ovs)?;
        cfg.validate()?;
        configs.push((label.clone(), cfg));
    }
    let root = out_root(args.exp.out.as_deref()).join(&base.name);
    create_dir(&root)?;
    let mut summary = vec![SUMMARY_HEADER.to_string()];
    for (label, cfg) in &configs {
        let dir = if label.is_empty() {
            root.clone()
        } else {
            root.join(label)
        };
        create_dir(&dir)?;
        write_text(
            &dir.join("config.json"),
            &serde_json::to_string_pretty(cfg)?,
        )?;
        println!("{}", mechanics_line(cfg));
        let mut runs = Vec::new();
        for &seed in &cfg.seeds {
            let run = run_one(cfg, seed, &dir, args.pretrain_only)?;
            runs.push(run);
        }
        let n = runs.len() as f64;
        let pre = runs.iter().map(|r| r.pretrained().eval_mean).sum::<f64>() / n;
        let fin = runs.iter().map(|r| r.last().eval_mean).sum::<f64>() / n;
        let std = (runs
            .iter()
            .map(|r| (r.last().eval_mean - fin).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let name = if label.is_empty() {
            cfg.name.clone()
        } else {
            format!("\"{label}\"")
        };
        summary.push(format!(
            "{name},{},{pre},{fin},{std},{}",
            runs.len(),
            final_delta(fin, pre)
        ));
        println!("{} final {}", cfg.name, final_delta(fin, pre));
    }
    write_text(&root.join("summary.csv"), &(summary.join("\n") + "\n"))
}

fn run_one(cfg: &ExperimentConfig, seed: u64, dir: &Path, pretrain_only: bool) -> Result<SeedRun> {
    let mut cfg = cfg.clone();
    if pretrain_only {
        cfg.train.online_max_env_steps = 0;
    }
    let stdout = std::io::stdout();
    let run = run_seed(&cfg, seed, |m, _| {
        let mut out = stdout.lock();
        let _ = writeln!(
            out,
            "seed {seed} epoch {:>3} env_steps {:>6} eval {:.4} ± {:.4}",
            m.epoch, m.env_steps, m.eval_mean, m.eval_std
        );
        Ok(())
    })?;
    write_metrics_csv(&dir.join(format!("seed{seed}.csv")), &run.metrics)?;
    Checkpoint::new(cfg.clone(), run.trainer.clone())
        .save(&dir.join(format!("checkpoint_seed{seed}.json")))?;
    Ok(run)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(f64, f64)> {
    let ck = Checkpoint::<f64>::load(&args.checkpoint)?;
    let cfg = &ck.experiment;
    let mut env = cfg.build_env()?;
    let rtg = args.rtg.unwrap_or(cfg.train.rtg_eval);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(ck.trainer.seed);
    let (mean, std) = evaluate(
        &ck.trainer.agent,
        env.as_mut(),
        args.episodes,
        rtg,
        cfg.train.eval_context_len,
        &mut rng,
    )?;
    let (random, expert) = cfg.reference_returns()?;
    println!(
        "{} seed {}: return {mean:.4} ± {std:.4}, normalized {:.1}",
        cfg.name,
        ck.trainer.seed,
        normalized_score(mean, random, expert)
    );
    Ok((mean, std))
}

/// Returns whether every check passed.
pub fn cmd_theory(args: &TheoryArgs) -> Result<bool> {
    let report = theory::full_report(args.seed, args.mdps)?;
    let dir = out_root(args.out.as_deref()).join("theory");
    create_dir(&dir)?;
    let path = dir.join("report.csv");
    write_text(&path, &report.to_csv())?;
    let failed = report.failures();
    println!(
        "{}: {} checks, {} failed",
        path.display(),
        report.rows.len(),
        failed.len()
    );
    for row in failed {
        println!("FAILED {}", row.check);
    }
    Ok(report.all_passed())
}

/// Dispatches a parsed command line; the exit code is nonzero on any error
/// and when a theory check fails.
pub fn main_with(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a).map(|_| true),
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Theory(a) => cmd_theory(a),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_delta_format() {
        assert_eq!(final_delta(0.9512, 0.12), "1.0(+0.8)");
        assert_eq!(final_delta(-10.04, -3.0), "-10.0(-7.0)");
    }

    #[test]
    fn sweeps_form_a_product() {
        let v = sweep_variants(&["a=1,2".into(), "b=x,y,z".into()]).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v[0].1, vec!["a=1".to_string(), "b=x".to_string()]);
        assert_eq!(v[5].0, "a=2,b=z");
    }
}
