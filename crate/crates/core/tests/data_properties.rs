//! Trajectory storage, sampling and reward-delay properties.

mod common;

use common::{chi_square_uniform, context_lengths_at, data};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dtfine::data::{compute_rtg, Eviction, ReplayBuffer, StateNormalizer, Trajectory};
use dtfine::envs::{generate_offline, Behavior, Env, PointMass, PointMassConfig};

#[test]
fn pointmass_episode_return_equals_direct_sum() {
    let mut env = PointMass::<f64>::new(PointMassConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    env.reset(&mut rng);
    let mut rewards = Vec::new();
    for _ in 0..50 {
        let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let out = env.step(&a).unwrap();
        rewards.push(out.reward);
        if out.done {
            break;
        }
    }
    assert_eq!(rewards.len(), 50);
    let direct: f64 = rewards.iter().sum();
    let rtg = compute_rtg(&rewards);
    assert!((rtg[0] - direct).abs() <= 1e-12 * direct.abs().max(1.0));
}

proptest! {
    #[test]
    fn suffix_sums_telescope(rewards in prop::collection::vec(-100.0f64..100.0, 1..60)) {
        let rtg = compute_rtg(&rewards);
        prop_assert_eq!(rtg.len(), rewards.len() + 1);
        prop_assert_eq!(rtg[rewards.len()], 0.0);
        for t in 0..rewards.len() {
            prop_assert_eq!(rtg[t], rewards[t] + rtg[t + 1]);
        }
    }
}

#[test]
fn interior_context_length_is_uniform() {
    for j in [20, 500, 979] {
        let counts = context_lengths_at(j, 100_000, 20, j as u64);
        let p = chi_square_uniform(&counts);
        assert!(p > 0.01, "step {j}: p = {p}, counts {counts:?}");
    }
}

#[test]
fn early_context_is_capped_at_trajectory_start() {
    let counts = context_lengths_at(4, 100_000, 20, 9);
    assert!(counts[5..].iter().all(|&c| c == 0));
    // lengths 1..4 each come from one window end, length 5 from the other 16
    assert!(counts[4] > 10 * counts[0]);
    assert!(chi_square_uniform(&counts[..4]) > 0.01);
}

#[test]
fn window_end_is_uniform_over_buffer_steps() {
    let lengths = [3, 9, 1, 17];
    let mut b = ReplayBuffer::new(10, Eviction::Fifo).unwrap();
    for (id, &len) in lengths.iter().enumerate() {
        let mut dones = vec![false; len];
        dones[len - 1] = true;
        // the action carries the trajectory id
        b.insert(
            Trajectory::new(
                1,
                1,
                vec![0.0; len],
                vec![id as f64; len],
                vec![0.0; len],
                dones,
            )
            .unwrap(),
        );
    }
    let starts = [0, 3, 12, 13];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut counts = vec![0u64; 30];
    for _ in 0..100_000 {
        let s = b.sample_segment(4, &mut rng).unwrap();
        let last = s.len - 1;
        let id = s.action(last)[0] as usize;
        counts[starts[id] + s.timesteps[last]] += 1;
    }
    assert!(chi_square_uniform(&counts) > 0.01, "{counts:?}");
}

#[test]
fn normalizer_round_trip() {
    let mut env = PointMass::<f64>::new(PointMassConfig::default());
    let data = generate_offline(&mut env, Behavior::Random, 2000, 3).unwrap();
    let norm = StateNormalizer::fit(&data.trajectories).unwrap();
    for t in &data.trajectories {
        for i in 0..t.len() {
            let s = t.state(i);
            let back = norm.invert(&norm.apply(s));
            for (a, b) in s.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}

#[test]
fn stored_trajectories_telescope() {
    data::stored_trajectories_telescope();
}

#[test]
fn fifo_evicts_in_insertion_order() {
    data::fifo_evicts_in_insertion_order();
}

#[test]
fn delayed_rewards_release_exact_chunk_sums() {
    data::delayed_rewards_release_exact_chunk_sums();
}
