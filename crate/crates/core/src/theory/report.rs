//! The full battery of analytical checks, one CSV row per check.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bounds::{
    alpha_f_estimate, awac_ratio_check, coverage_margin, eps_for_delta, lipschitz_tail_check,
    performance_gap_bound, rtg_tail_bound, superlinearity_probe, GapBound, PiecewiseLinear,
    TailBoundInputs,
};
use super::mdp::{
    exact_rtg_distribution, max_bayes_residual, Conditioning, EnumerableMdp, RtgDistribution,
};
use crate::envs::{bandit_dataset, BanditDatasetConfig};
use crate::error::{arg_err, Result};

pub const REPORT_HEADER: &str = "check,bound,empirical,status,reward_offset";

/// Tolerance of the Bayes identity.
pub const BAYES_TOL: f64 = 1e-9;
/// Tolerance of the advantage-ratio identity.
pub const AWAC_TOL: f64 = 1e-10;
/// Confidence level used to pick `ε` for the concentration bound.
pub const TAIL_DELTA: f64 = 0.05;
/// Sample count assumed for exactly enumerated distributions.
pub const NOTIONAL_SAMPLES: u64 = 1000;
pub const GRID_POINTS: usize = 20;
pub const AWAC_DRAWS: usize = 1000;
pub const LIPSCHITZ_DRAWS: usize = 200;

/// One check. `bound` is the side that must not be smaller than `empirical`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub check: String,
    pub bound: f64,
    pub empirical: f64,
    pub passed: bool,
    /// Shift applied to rewards before computing the bound.
    pub reward_offset: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TheoryReport {
    pub rows: Vec<ReportRow>,
}

impl TheoryReport {
    pub fn push(
        &mut self,
        check: impl Into<String>,
        bound: f64,
        empirical: f64,
        passed: bool,
        reward_offset: f64,
    ) {
        self.rows.push(ReportRow {
            check: check.into(),
            bound,
            empirical,
            passed,
            reward_offset,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let status = if r.passed { "pass" } else { "fail" };
            let _ = writeln!(
                out,
                "{},{},{},{status},{}",
                r.check,
                num(r.bound),
                num(r.empirical),
                num(r.reward_offset)
            );
        }
        out
    }

    pub fn failures(&self) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| !r.passed).collect()
    }

    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    /// Rows whose name starts with `prefix`.
    pub fn group(&self, prefix: &str) -> Vec<&ReportRow> {
        self.rows
            .iter()
            .filter(|r| r.check.starts_with(prefix))
            .collect()
    }
}

/// Shortest round-trip text, in exponent form for tiny magnitudes.
fn num(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-4 {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

/// The seeded suite of small MDPs: up to 4 states, 2–3 actions, horizon ≤ 3.
pub fn mdp_suite(seed: u64, count: usize) -> Result<Vec<EnumerableMdp>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let s = rng.gen_range(1..=4);
            let a = rng.gen_range(2..=3);
            let h = rng.gen_range(1..=3);
            EnumerableMdp::random(s, a, h, &mut rng)
        })
        .collect()
}

/// Offsets `c_k = k/20 · (R_max·T − V)` for `k = 1..=20`.
fn offset_grid(ceiling: f64, value: f64) -> Vec<f64> {
    let span = ceiling - value;
    if span <= 0.0 {
        return Vec::new();
    }
    (1..=GRID_POINTS)
        .map(|k| span * k as f64 / GRID_POINTS as f64)
        .collect()
}

/// Worst grid point of the concentration bound for one distribution:
/// `(bound, empirical tail)` at the smallest slack, and whether all passed.
fn tail_bound_worst(
    dist: &RtgDistribution,
    r_max: f64,
    horizon: f64,
    n: u64,
    squared: bool,
) -> Result<(f64, f64, bool)> {
    let value = dist.mean();
    let inp = TailBoundInputs {
        rtg_beta_max: dist.max(),
        r_max,
        horizon,
        eps: eps_for_delta(n, TAIL_DELTA)?,
        value,
    };
    let mut worst: Option<(f64, f64)> = None;
    let mut all = true;
    for c in offset_grid(r_max * horizon, value) {
        let bound = rtg_tail_bound(&inp, c, squared);
        let tail = dist.tail(value + c);
        if worst.is_none_or(|(b, t)| bound - tail < b - t) {
            worst = Some((bound, tail));
        }
        all &= tail <= bound;
    }
    // with no offset above the mean every tail beyond it is empty
    let (bound, tail) = worst.unwrap_or((0.0, 0.0));
    Ok((bound, tail, all))
}

struct Dataset {
    name: String,
    dists: Vec<RtgDistribution>,
    r_max: f64,
    horizon: f64,
    n: u64,
    offset: f64,
}

fn tail_and_coverage_rows(report: &mut TheoryReport, data: &Dataset) -> Result<()> {
    for (variant, squared) in [("literal", false), ("squared", true)] {
        let mut agg = (f64::INFINITY, 0.0, true);
        for d in &data.dists {
            let w = tail_bound_worst(d, data.r_max, data.horizon, data.n, squared)?;
            if w.0 - w.1 < agg.0 - agg.1 {
                agg.0 = w.0;
                agg.1 = w.1;
            }
            agg.2 &= w.2;
        }
        report.push(
            format!("tail_bound.{variant}.{}", data.name),
            agg.0,
            agg.1,
            agg.2,
            data.offset,
        );
    }

    let mut exact = true;
    let mut ratio_worst = 4.0f64;
    let mut cov = (f64::INFINITY, 0.0, true);
    for d in &data.dists {
        let var = d.variance();
        if var <= 0.0 {
            continue;
        }
        let grid = offset_grid(data.r_max * data.horizon, d.mean());
        for row in superlinearity_probe(var, &grid)? {
            exact &= row.quadratic_exact;
            let ratio = (2.0 * row.c) * (2.0 * row.c) / var / row.inv_alpha_lower;
            if (ratio - 4.0).abs() > (ratio_worst - 4.0).abs() {
                ratio_worst = ratio;
            }
        }
        // α_f at g is at most var/(g − V)²
        if let Some((_, inv_p, lower)) = coverage_margin(d) {
            let (bound, p) = (1.0 / lower, 1.0 / inv_p);
            if bound - p < cov.0 - cov.1 {
                cov = (bound, p, cov.2);
            }
            cov.2 &= inv_p >= lower;
        }
    }
    report.push(
        format!("superlinear.ratio.{}", data.name),
        4.0,
        ratio_worst,
        exact,
        data.offset,
    );
    if cov.0.is_finite() {
        report.push(
            format!("superlinear.coverage.{}", data.name),
            cov.0,
            cov.1,
            cov.2,
            data.offset,
        );
    }
    Ok(())
}

/// Runs every check on `n_mdps` seeded MDPs, the bandit dataset, and random
/// draws for the density identities.
pub fn full_report(seed: u64, n_mdps: usize) -> Result<TheoryReport> {
    if n_mdps == 0 {
        return Err(arg_err!("the MDP suite needs at least one MDP"));
    }
    let mut report = TheoryReport::default();
    let suite = mdp_suite(seed, n_mdps)?;

    for (i, mdp) in suite.iter().enumerate() {
        let residual = max_bayes_residual(mdp)?;
        report.push(
            format!("bayes.mdp{i:02}"),
            BAYES_TOL,
            residual,
            residual < BAYES_TOL,
            0.0,
        );
    }

    for (i, mdp) in suite.iter().enumerate() {
        let exact = exact_rtg_distribution(mdp)?;
        let dists = (0..mdp.n_states)
            .filter(|&s| mdp.initial[s] > 0.0)
            .map(|s| exact.by_state[s].clone())
            .collect();
        let offset = (-mdp.min_reward()).max(0.0);
        tail_and_coverage_rows(
            &mut report,
            &Dataset {
                name: format!("mdp{i:02}"),
                dists: dists_shifted(dists, offset * mdp.horizon as f64),
                r_max: mdp.max_reward() + offset,
                horizon: mdp.horizon as f64,
                n: NOTIONAL_SAMPLES,
                offset,
            },
        )?;
    }

    // bandit: rewards live in [-1, 1], shifted by +1 into [0, 2]
    let data = bandit_dataset::<f64>(&BanditDatasetConfig::default(), seed)?;
    let offset = 1.0;
    let returns: Vec<f64> = data.returns().into_iter().map(|r| r + offset).collect();
    let dist = RtgDistribution::from_samples(Conditioning::Dataset, &returns)?;
    tail_and_coverage_rows(
        &mut report,
        &Dataset {
            name: "bandit".into(),
            dists: vec![dist.clone()],
            r_max: 1.0 + offset,
            horizon: 1.0,
            n: returns.len() as u64,
            offset,
        },
    )?;
    let alpha_f = alpha_f_estimate(&[dist], 1.0 + offset);
    let gap = performance_gap_bound(
        eps_for_delta(returns.len() as u64, TAIL_DELTA)?,
        alpha_f,
        1.0,
    );
    report.push(
        "perf_gap.bandit",
        gap.as_f64(),
        alpha_f,
        alpha_f == 0.0 && gap == GapBound::Unbounded,
        offset,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut worst = 0.0f64;
    for _ in 0..AWAC_DRAWS {
        let q = rng.gen_range(-1.0..1.0);
        let v = rng.gen_range(-1.0..1.0);
        let sigma = rng.gen_range(0.5..2.0);
        let rtg = f64::max(q, v) + rng.gen_range(0.0..10.0);
        worst = worst.max(awac_ratio_check(q, v, sigma, rtg)?.2);
    }
    report.push("awac.ratio", AWAC_TOL, worst, worst < AWAC_TOL, 0.0);

    let (mut margin, mut row) = (f64::INFINITY, (0.0, 0.0));
    let mut all = true;
    let mut drawn = 0;
    while drawn < LIPSCHITZ_DRAWS {
        let knots = rng.gen_range(3..=8);
        let mut xs: Vec<f64> = (0..knots).map(|_| rng.gen_range(0.0..10.0)).collect();
        xs.sort_by(f64::total_cmp);
        if xs.windows(2).any(|w| w[1] - w[0] < 1e-3) {
            continue;
        }
        let mut ys: Vec<f64> = (0..knots).map(|_| rng.gen_range(0.0..1.0)).collect();
        ys[knots - 1] = 0.0;
        let density = PiecewiseLinear::new(xs.clone(), ys)?;
        let beta_max = xs[rng.gen_range(0..knots - 1)];
        let x0 = rng.gen_range(beta_max..xs[knots - 1]);
        let Some((tail, tri)) = lipschitz_tail_check(&density, x0) else {
            continue;
        };
        drawn += 1;
        // p₀ ≤ √(2K·tail) is the same statement as tail ≥ p₀²/(2K)
        let p0 = density.density(x0);
        let bound = (p0 * p0 * tail / tri).sqrt();
        all &= tail >= tri * (1.0 - 1e-12);
        if bound - p0 < margin {
            margin = bound - p0;
            row = (bound, p0);
        }
    }
    report.push("lipschitz.tail", row.0, row.1, all, 0.0);
    Ok(report)
}

fn dists_shifted(dists: Vec<RtgDistribution>, by: f64) -> Vec<RtgDistribution> {
    if by == 0.0 {
        dists
    } else {
        dists.iter().map(|d| d.shifted(by)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_report_passes() {
        let report = full_report(0, 24).unwrap();
        let failed: Vec<_> = report.failures().iter().map(|r| r.check.clone()).collect();
        assert!(failed.is_empty(), "{failed:?}");
        assert_eq!(report.group("bayes.").len(), 24);
        for r in &report.rows {
            // equality cases may land one rounding step apart
            assert!(
                r.bound >= r.empirical * (1.0 - 1e-12),
                "{}: {} < {}",
                r.check,
                r.bound,
                r.empirical
            );
        }
    }

    #[test]
    fn bandit_coverage_is_zero_with_unbounded_gap() {
        let report = full_report(3, 2).unwrap();
        let row = &report.group("perf_gap.bandit")[0];
        assert_eq!(row.empirical, 0.0);
        assert!(row.bound.is_infinite());
        assert!(report.to_csv().contains("perf_gap.bandit,inf,0,pass,1"));
    }

    #[test]
    fn csv_layout() {
        let mut r = TheoryReport::default();
        r.push("x", 1.5, 0.25, true, 0.0);
        r.push("y", 0.0, 1.0, false, 1.0);
        r.push("z", 1e-9, 2.5e-16, true, 0.0);
        assert_eq!(
            r.to_csv(),
            "check,bound,empirical,status,reward_offset\nx,1.5,0.25,pass,0\ny,0,1,fail,1\nz,1e-9,2.5e-16,pass,0\n"
        );
        assert!(!r.all_passed());
        assert_eq!(r.failures().len(), 1);
    }

    #[test]
    fn empty_suite_rejected() {
        assert!(full_report(0, 0).is_err());
    }
}
