//! Executable checks of the return-coverage analysis: exact return
//! distributions of small MDPs, the Bayes form of return-conditioned
//! policies, concentration bounds, and the advantage-ratio identity.

pub mod bounds;
pub mod mdp;
mod report;

pub use bounds::{
    alpha_f_estimate, awac_ratio_check, beta_posterior_delta, chebyshev_tail, coverage_margin,
    eps_for_delta, lipschitz_tail_check, performance_gap_bound, rtg_tail_bound,
    superlinearity_probe, GapBound, PiecewiseLinear, SuperlinearRow, TailBoundInputs,
};
pub use mdp::{
    bayes_identity_residual, conditioned_policy, exact_rtg_distribution, max_bayes_residual,
    Conditioning, EnumerableMdp, ExactRtg, RtgDistribution, MAX_PATHS,
};
pub use report::{full_report, mdp_suite, ReportRow, TheoryReport, REPORT_HEADER};
