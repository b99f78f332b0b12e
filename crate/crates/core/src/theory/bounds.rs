//! Tail bounds, return coverage and the advantage-ratio identity.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::mdp::RtgDistribution;
use crate::error::{arg_err, Result};
use crate::scalar::Real;

/// `min(1, var / c²)`.
pub fn chebyshev_tail<F: Real>(var: F, c: F) -> Result<F> {
    if !(c > F::zero()) {
        return Err(arg_err!(
            "chebyshev threshold must be positive, got {}",
            c.as_f64()
        ));
    }
    if var < F::zero() {
        return Err(arg_err!("negative variance {}", var.as_f64()));
    }
    Ok((var / (c * c)).min(F::one()))
}

/// Inputs of the concentration bound on `Pr(RTG − V ≥ c)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBoundInputs {
    /// Largest return in the dataset.
    pub rtg_beta_max: f64,
    /// Per-step reward ceiling after shifting rewards into `[0, R_max]`.
    pub r_max: f64,
    pub horizon: f64,
    pub eps: f64,
    /// Dataset value `V^β(s)`.
    pub value: f64,
}

/// `((1−ε)·X + ε·R_max²T² − V²) / c²` capped at 1, where `X` is
/// `RTG_βmax` as printed, or `RTG_βmax²` with `squared`. Non-positive `c`
/// gives the trivial bound 1.
pub fn rtg_tail_bound(inp: &TailBoundInputs, c: f64, squared: bool) -> f64 {
    if !(c > 0.0) {
        return 1.0;
    }
    let x = if squared {
        inp.rtg_beta_max * inp.rtg_beta_max
    } else {
        inp.rtg_beta_max
    };
    let rt = inp.r_max * inp.horizon;
    let second_moment = (1.0 - inp.eps) * x + inp.eps * rt * rt;
    ((second_moment - inp.value * inp.value) / (c * c)).min(1.0)
}

/// `1 − εⁿ⁺¹`, one minus the `Beta(n+1, 1)` CDF at `ε`.
pub fn beta_posterior_delta(n: u64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(arg_err!("eps must lie in (0, 1), got {eps}"));
    }
    Ok(1.0 - eps.powf(n as f64 + 1.0))
}

/// The `ε` at which [`beta_posterior_delta`] equals `delta`.
pub fn eps_for_delta(n: u64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(arg_err!("delta must lie in (0, 1), got {delta}"));
    }
    Ok((1.0 - delta).powf(1.0 / (n as f64 + 1.0)))
}

/// Smallest probability any start state assigns to exactly `rtg_eval`.
pub fn alpha_f_estimate(by_start: &[RtgDistribution], rtg_eval: f64) -> f64 {
    by_start
        .iter()
        .map(|d| d.prob_at(rtg_eval))
        .fold(f64::INFINITY, f64::min)
        .min(1.0)
}

/// Value of the performance-gap bound; unbounded when coverage is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GapBound {
    Finite { value: f64 },
    Unbounded,
}

impl GapBound {
    pub fn as_f64(&self) -> f64 {
        match self {
            GapBound::Finite { value } => *value,
            GapBound::Unbounded => f64::INFINITY,
        }
    }
}

/// `ε·(1/α_f + 2)·H²`.
pub fn performance_gap_bound(eps: f64, alpha_f: f64, horizon: f64) -> GapBound {
    if alpha_f <= 0.0 {
        GapBound::Unbounded
    } else {
        GapBound::Finite {
            value: eps * (1.0 / alpha_f + 2.0) * horizon * horizon,
        }
    }
}

/// One grid point of the superlinearity probe.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperlinearRow {
    pub c: f64,
    /// `c² / var`, a lower bound on `1/α_f` at `RTG = V + c`.
    pub inv_alpha_lower: f64,
    /// Whether the bound at `2c` is exactly four times the bound at `c`.
    pub quadratic_exact: bool,
}

fn rational(x: f64) -> Option<BigRational> {
    BigRational::from_f64(x)
}

/// Chebyshev lower bound on `1/α_f` along a grid of offsets above the mean.
/// The ratio check runs in exact rational arithmetic on the float inputs.
pub fn superlinearity_probe(var: f64, grid: &[f64]) -> Result<Vec<SuperlinearRow>> {
    if !(var > 0.0) || !var.is_finite() {
        return Err(arg_err!(
            "superlinearity probe needs a positive variance, got {var}"
        ));
    }
    let var_q = rational(var).expect("finite");
    let four = BigRational::from_integer(BigInt::from(4));
    let two = BigRational::from_integer(BigInt::from(2));
    grid.iter()
        .map(|&c| {
            if !(c > 0.0) || !c.is_finite() {
                return Err(arg_err!("grid offsets must be positive, got {c}"));
            }
            let cq = rational(c).expect("finite");
            let at_c = &cq * &cq / &var_q;
            let c2 = &two * &cq;
            let at_2c = &c2 * &c2 / &var_q;
            Ok(SuperlinearRow {
                c,
                inv_alpha_lower: c * c / var,
                quadratic_exact: !at_c.is_zero() && at_2c == &four * &at_c,
            })
        })
        .collect()
}

/// Worst margin `1/P(g) − (g − V)²/var` over supported `g > V`; non-negative
/// when the exact coverage respects the Chebyshev lower bound everywhere.
pub fn coverage_margin(dist: &RtgDistribution) -> Option<(f64, f64, f64)> {
    let v = dist.mean();
    let var = dist.variance();
    if var <= 0.0 {
        return None;
    }
    dist.support
        .iter()
        .zip(&dist.probs)
        .filter(|(&g, &p)| g > v && p > 0.0)
        .map(|(&g, &p)| (g, 1.0 / p, (g - v) * (g - v) / var))
        .min_by(|a, b| (a.1 - a.2).total_cmp(&(b.1 - b.2)))
}

fn laplace_log_density(x: f64, loc: f64, scale: f64) -> f64 {
    -(2.0 * scale).ln() - (x - loc).abs() / scale
}

/// Ratio of Laplace densities at `rtg` with locations `q` and `v`, against
/// `exp((q − v)/σ)`. Returns `(lhs, rhs, |lhs − rhs|)`.
pub fn awac_ratio_check(q: f64, v: f64, sigma: f64, rtg: f64) -> Result<(f64, f64, f64)> {
    if !(sigma > 0.0) {
        return Err(arg_err!("Laplace scale must be positive, got {sigma}"));
    }
    if rtg < q.max(v) {
        return Err(arg_err!("return {rtg} lies below max(Q, V) = {}", q.max(v)));
    }
    let lhs = (laplace_log_density(rtg, q, sigma) - laplace_log_density(rtg, v, sigma)).exp();
    let rhs = ((q - v) / sigma).exp();
    Ok((lhs, rhs, (lhs - rhs).abs()))
}

/// Piecewise-linear density on knots `xs` with values `ys`, zero outside.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinear {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl PiecewiseLinear {
    /// Normalizes the values so the density integrates to one.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(arg_err!("need at least two knots with one value each"));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) || ys.iter().any(|&y| !(y >= 0.0)) {
            return Err(arg_err!("knots must increase and values be non-negative"));
        }
        let mut d = Self { xs, ys };
        let mass = d.mass_between(f64::NEG_INFINITY, f64::INFINITY);
        if !(mass > 0.0) {
            return Err(arg_err!("density has zero mass"));
        }
        d.ys.iter_mut().for_each(|y| *y /= mass);
        Ok(d)
    }

    pub fn density(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            return 0.0;
        }
        let i = self.xs.partition_point(|&k| k <= x).clamp(1, n - 1);
        let (x0, x1, y0, y1) = (self.xs[i - 1], self.xs[i], self.ys[i - 1], self.ys[i]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Exact integral over `[lo, hi]` by trapezoids on the clipped segments.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        self.xs
            .windows(2)
            .map(|w| {
                let a = w[0].max(lo);
                let b = w[1].min(hi);
                if b <= a {
                    0.0
                } else {
                    0.5 * (self.density(a) + self.density(b)) * (b - a)
                }
            })
            .sum()
    }

    /// Largest absolute slope over segments ending beyond `x`.
    pub fn lipschitz_beyond(&self, x: f64) -> f64 {
        self.xs
            .windows(2)
            .zip(self.ys.windows(2))
            .filter(|(xs, _)| xs[1] > x)
            .map(|(xs, ys)| ((ys[1] - ys[0]) / (xs[1] - xs[0])).abs())
            .fold(0.0, f64::max)
    }
}

/// Tail mass beyond `x0` and the triangle bound `p(x0)² / (2K)` for a density
/// whose slope beyond `x0` is at most `K`.
pub fn lipschitz_tail_check(density: &PiecewiseLinear, x0: f64) -> Option<(f64, f64)> {
    let p0 = density.density(x0);
    let k = density.lipschitz_beyond(x0);
    if p0 <= 0.0 || k <= 0.0 {
        return None;
    }
    Some((density.mass_between(x0, f64::INFINITY), p0 * p0 / (2.0 * k)))
}
