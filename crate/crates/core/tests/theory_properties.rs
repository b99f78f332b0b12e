//! Exact return distributions against simulation, the Bayes identity and
//! the zero-coverage gap.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dtfine::theory::{
    alpha_f_estimate, exact_rtg_distribution, full_report, max_bayes_residual,
    performance_gap_bound, EnumerableMdp, GapBound,
};

#[test]
fn exact_distribution_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mdp = EnumerableMdp::random(3, 2, 2, &mut rng).unwrap();
    let exact = exact_rtg_distribution(&mdp).unwrap();
    let n = 1_000_000;
    for s in 0..mdp.n_states {
        let dist = &exact.by_state[s];
        let mut counts = vec![0u64; dist.support.len()];
        for _ in 0..n {
            let g = mdp.sample_return(s, &mut rng);
            // quarter-grid rewards: sums are exact, so lookup is by equality
            let i = dist
                .support
                .iter()
                .position(|&x| x == g)
                .unwrap_or_else(|| panic!("return {g} from state {s} is off the support"));
            counts[i] += 1;
        }
        for (i, (&p, &c)) in dist.probs.iter().zip(&counts).enumerate() {
            let freq = c as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "state {s} atom {i} ({}): exact {p}, sampled {freq}",
                dist.support[i]
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn bayes_identity_holds(
        seed in any::<u64>(),
        states in 1usize..=4,
        actions in 2usize..=3,
        horizon in 1usize..=3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = EnumerableMdp::random(states, actions, horizon, &mut rng).unwrap();
        let residual = max_bayes_residual(&mdp).unwrap();
        prop_assert!(residual < 1e-12, "residual {}", residual);
    }
}

#[test]
fn uncovered_target_return_has_unbounded_gap() {
    // the best arm is never pulled by the behavior policy
    let mdp = EnumerableMdp::bandit(&[0.0, 0.5, 1.0], &[0.5, 0.5, 0.0]).unwrap();
    let exact = exact_rtg_distribution(&mdp).unwrap();
    let alpha = alpha_f_estimate(&exact.by_state, 1.0);
    assert_eq!(alpha, 0.0);
    assert_eq!(performance_gap_bound(0.1, alpha, 1.0), GapBound::Unbounded);

    let alpha = alpha_f_estimate(&exact.by_state, 0.5);
    assert_eq!(alpha, 0.5);
    assert_eq!(
        performance_gap_bound(0.1, alpha, 1.0),
        GapBound::Finite { value: 0.1 * 4.0 }
    );
}

#[test]
fn report_passes_on_default_suite() {
    let report = full_report(0, 24).unwrap();
    assert!(report.group("bayes.").len() >= 20);
    let failures = report.failures();
    assert!(failures.is_empty(), "{failures:?}");
}
