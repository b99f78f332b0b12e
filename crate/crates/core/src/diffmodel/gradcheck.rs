//! Central finite-difference verification of recorded gradients.

use super::params::{ParamId, ParamSet};
use super::tape::{Bound, Tape, Var};
use crate::error::Result;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked entries of `|analytic − numeric| / max(1e-12, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Compares the gradient of `loss` recorded on a tape with central
/// differences of step `h` for every entry of every parameter in `params`.
///
/// `loss` must be deterministic; it receives a fresh tape and the leaves of
/// `params` (bound as trainable) and returns the scalar loss node.
/// `stride` > 1 checks every `stride`-th entry of each parameter only.
pub fn grad_check<F, L>(
    params: &ParamSet<F>,
    h: F,
    tolerance: f64,
    stride: usize,
    mut loss: L,
) -> Result<GradCheckReport>
where
    F: Real,
    L: FnMut(&mut Tape<F>, &Bound) -> Result<Var>,
{
    let mut work = params.clone();
    work.zero_grads();
    let mut tape = Tape::new();
    let bound = tape.bind(&work, true);
    let out = loss(&mut tape, &bound)?;
    tape.backward(out)?;
    tape.write_grads(&bound, &mut work)?;
    let analytic: Vec<Vec<F>> = work.iter().map(|p| p.grad.data.clone()).collect();

    let mut eval = |ps: &ParamSet<F>| -> Result<F> {
        let mut tape = Tape::new();
        let bound = tape.bind(ps, false);
        let out = loss(&mut tape, &bound)?;
        Ok(tape.value(out).data[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        tolerance,
    };
    let two_h = h + h;
    for pi in 0..work.len() {
        let id = ParamId(pi);
        let n = work.value(id).len();
        for j in (0..n).step_by(stride.max(1)) {
            let orig = work.value(id).data[j];
            work.value_mut(id).data[j] = orig + h;
            let up = eval(&work)?;
            work.value_mut(id).data[j] = orig - h;
            let down = eval(&work)?;
            work.value_mut(id).data[j] = orig;
            let numeric = ((up - down) / two_h).as_f64();
            let a = analytic[pi][j].as_f64();
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst_param = work.get(id).name.clone();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}
