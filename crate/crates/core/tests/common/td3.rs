//! TD3 mechanics checks. Each panics with a description on failure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dtfine::agent::{td_target, valid_rows, Agent};
use dtfine::experiment::{apply_overrides, preset};
use dtfine::train::{Trainer, UpdateSchedule};

use super::{grad_agent, grad_batch};

/// The clipped target never exceeds the single-critic target and equals
/// `r + γ·min(q1, q2)` off terminal steps.
pub fn min_dominance(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        let r: f64 = rng.gen_range(-5.0..5.0);
        let gamma: f64 = rng.gen_range(0.0..1.0);
        let (q1, q2): (f64, f64) = (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
        let done = rng.gen_bool(0.2);
        let clipped = td_target(r, done, gamma, q1, q2, false);
        let single = td_target(r, done, gamma, q1, q2, true);
        assert!(clipped <= single, "{clipped} > {single}");
        let expected = if done { r } else { r + gamma * q1.min(q2) };
        assert_eq!(clipped, expected);
    }

    let mut agent = grad_agent(seed);
    agent.config.policy_noise = 0.2;
    let batch = grad_batch(seed);
    let rows = valid_rows(&batch);
    let noise = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut strict = 0;
    // both orderings of the critics, so the minimum binds strictly on one
    for _ in 0..2 {
        agent.config.single_critic = false;
        let clipped = agent
            .target_values(&batch, &rows, &mut noise.clone())
            .unwrap();
        agent.config.single_critic = true;
        let single = agent
            .target_values(&batch, &rows, &mut noise.clone())
            .unwrap();
        for (c, s) in clipped.iter().zip(&single) {
            assert!(c <= s, "clipped target {c} above single {s}");
            strict += usize::from(c < s);
        }
        agent.target_critics.params.swap(0, 1);
    }
    assert!(strict > 0, "the minimum never differed from critic 1");
}

/// With both target critics reading back the first action coordinate, the
/// TD target exposes the smoothed target action, whose offset from the
/// target policy output never exceeds the noise clip.
pub fn smoothing_is_clipped(seed: u64) {
    let clip = 0.5;
    let mut agent = grad_agent(seed);
    agent.config.policy_noise = 2.0;
    agent.config.noise_clip = clip;
    agent.config.gamma = 1.0;
    let state_dim = agent.state_dim();
    let net = agent.target_critics.net.clone();
    let last = net.num_layers() - 1;
    for params in agent.target_critics.params.iter_mut() {
        params.zero_values();
        // h = relu(a0 + 10) passes through every hidden layer; output h − 10
        for l in 0..=last {
            let w = params.value_mut(net.weight_id(l));
            let cols = w.cols;
            let row = if l == 0 { state_dim } else { 0 };
            w.data[row * cols] = 1.0;
        }
        params.value_mut(net.bias_id(0)).data[0] = 10.0;
        params.value_mut(net.bias_id(last)).data[0] = -10.0;
    }

    let batch = grad_batch(seed);
    let rows = valid_rows(&batch);
    let tokens = agent.segment_tokens(&batch, true).unwrap();
    let mu = agent
        .policy
        .predict(&agent.target_policy_params, &tokens)
        .unwrap();
    let (low, high) = (
        agent.config.policy.action_low[0],
        agent.config.policy.action_high[0],
    );
    let len = batch[0].len;
    let rs = agent.config.reward_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let (mut checked, mut inside_rows, mut at_clip) = (0, 0, 0);
    for _ in 0..200 {
        let y = agent.target_values(&batch, &rows, &mut rng).unwrap();
        for (i, &r) in rows.iter().enumerate() {
            let s = &batch[r / len];
            let p = r % len;
            if s.dones[p] {
                continue;
            }
            let action = y[i] - rs * s.rewards[p];
            let offset = action - mu.at(r, 0);
            assert!(
                offset.abs() <= clip + 1e-12,
                "smoothed action {action} is {offset} from {}",
                mu.at(r, 0)
            );
            assert!(action >= low - 1e-12 && action <= high + 1e-12);
            checked += 1;
            let inside = mu.at(r, 0) + clip < high && mu.at(r, 0) - clip > low;
            if inside {
                inside_rows += 1;
                at_clip += usize::from((offset.abs() - clip).abs() < 1e-9);
            }
        }
    }
    // with σ = 4·clip about 80% of unbounded draws saturate
    assert!(checked > 0 && inside_rows > 0);
    assert!(
        at_clip * 10 > inside_rows * 7,
        "{at_clip} of {inside_rows} at the clip"
    );
}

/// `k` Polyak updates toward frozen live weights leave
/// `θ_tar = θ + (1 − τ)^k (θ_tar,0 − θ)`.
pub fn polyak_closed_form(seed: u64) {
    let mut agent: Agent<f64> = grad_agent(seed);
    agent.config.tau = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    for p in agent.policy_params.iter_mut() {
        p.value
            .data
            .iter_mut()
            .for_each(|x| *x += rng.gen_range(-1.0..1.0));
    }
    for set in agent.critics.params.iter_mut() {
        for p in set.iter_mut() {
            p.value
                .data
                .iter_mut()
                .for_each(|x| *x += rng.gen_range(-1.0..1.0));
        }
    }
    let live = agent.clone();
    let k = 10;
    for _ in 0..k {
        agent.polyak_update().unwrap();
    }
    let decay = (1.0 - agent.config.tau).powi(k);
    let pairs = [
        (
            &agent.target_policy_params,
            &live.target_policy_params,
            &live.policy_params,
        ),
        (
            &agent.target_critics.params[0],
            &live.target_critics.params[0],
            &live.critics.params[0],
        ),
        (
            &agent.target_critics.params[1],
            &live.target_critics.params[1],
            &live.critics.params[1],
        ),
    ];
    let mut worst: f64 = 0.0;
    for (now, start, theta) in pairs {
        for ((a, b), c) in now.iter().zip(start.iter()).zip(theta.iter()) {
            for ((&x, &x0), &t) in a.value.data.iter().zip(&b.value.data).zip(&c.value.data) {
                worst = worst.max((x - (t + decay * (x0 - t))).abs());
            }
        }
    }
    assert!(worst <= 1e-12, "polyak deviation {worst:e}");
    assert_eq!(agent.policy_params, live.policy_params);
    assert_eq!(agent.critics, live.critics);
}

/// A bandit trainer with small networks.
fn small_bandit(
    name: &str,
    seed: u64,
    iterations: usize,
) -> (Trainer<f64>, Box<dyn dtfine::envs::Env<f64>>) {
    let mut cfg = apply_overrides(
        &preset(name).unwrap(),
        &[
            "agent.critic_hidden=[32,32]".into(),
            "agent.policy.embed_dim=16".into(),
        ],
    )
    .unwrap();
    cfg.train.updates = UpdateSchedule::Fixed { iterations };
    let env = cfg.build_env().unwrap();
    let mut trainer = Trainer::new(cfg.train.clone(), cfg.agent.clone(), seed).unwrap();
    trainer.load_offline(&cfg.dataset(seed).unwrap()).unwrap();
    (trainer, env)
}

/// An epoch of 600 update iterations with delay 2 takes 600 critic and 300
/// actor steps; with delay 1, 600 of each.
pub fn update_bookkeeping(seed: u64) {
    for (name, actor) in [("bandit-td3-odt", 300), ("bandit-ddpg-odt", 600)] {
        let (mut trainer, mut env) = small_bandit(name, seed, 600);
        let m = trainer.online_epoch(env.as_mut()).unwrap();
        assert_eq!(trainer.critic_steps, 600, "{name}");
        assert_eq!(trainer.actor_steps, actor, "{name}");
        assert_eq!(m.grad_steps, 600 + actor, "{name}");
    }
}

/// Target values ignore the live networks, actor steps leave every critic
/// untouched and critic steps leave the live policy untouched.
pub fn stop_gradient(seed: u64) {
    let agent = grad_agent(seed);
    let batch = grad_batch(seed);
    let rows = valid_rows(&batch);
    let noise = ChaCha8Rng::seed_from_u64(seed + 4);
    let before = agent
        .target_values(&batch, &rows, &mut noise.clone())
        .unwrap();
    let mut moved = agent.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 5);
    for p in moved.policy_params.iter_mut() {
        p.value
            .data
            .iter_mut()
            .for_each(|x| *x += rng.gen_range(-1.0..1.0));
    }
    for set in moved.critics.params.iter_mut() {
        for p in set.iter_mut() {
            p.value
                .data
                .iter_mut()
                .for_each(|x| *x += rng.gen_range(-1.0..1.0));
        }
    }
    let after = moved
        .target_values(&batch, &rows, &mut noise.clone())
        .unwrap();
    assert_eq!(before, after);

    let (mut trainer, _) = small_bandit("bandit-td3-odt", seed, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 6);
    let batch = trainer.buffer.sample_batch(8, 1, &mut rng).unwrap();
    let critics = trainer.agent.critics.clone();
    let targets = trainer.agent.target_critics.clone();
    let target_policy = trainer.agent.target_policy_params.clone();
    let policy = trainer.agent.policy_params.clone();
    trainer.actor_step(&batch, 10.0).unwrap();
    assert_eq!(trainer.agent.critics, critics);
    assert_eq!(trainer.agent.target_critics, targets);
    assert_eq!(trainer.agent.target_policy_params, target_policy);
    assert_ne!(trainer.agent.policy_params, policy);

    let policy = trainer.agent.policy_params.clone();
    trainer.critic_step(&batch).unwrap();
    assert_eq!(trainer.agent.policy_params, policy);
    assert_ne!(trainer.agent.critics, critics);
}
