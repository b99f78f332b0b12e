use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmodel::{Bound, Mlp, MlpConfig, ParamSet, Tape, Tensor, Var};
use crate::error::{dim_err, Result};
use crate::scalar::Real;

/// Two state-action value networks sharing one layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticPair<F> {
    pub net: Mlp,
    pub params: [ParamSet<F>; 2],
}

impl<F: Real> CriticPair<F> {
    pub fn new<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        config: MlpConfig,
        rng1: &mut R1,
        rng2: &mut R2,
    ) -> Result<Self> {
        let mut p1 = ParamSet::new();
        let mut p2 = ParamSet::new();
        let net = Mlp::new(config.clone(), &mut p1, "q", rng1)?;
        Mlp::new(config, &mut p2, "q", rng2)?;
        Ok(Self {
            net,
            params: [p1, p2],
        })
    }

    /// Records `Q_i` on the tape for rows `[states | actions]`.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        states: Var,
        actions: Var,
    ) -> Result<Var> {
        let x = tape.concat_cols(&[states, actions])?;
        self.net.forward(tape, bound, x)
    }

    /// `Q_i(s, a)` for each row, without gradients.
    pub fn values(&self, i: usize, states: &Tensor<F>, actions: &Tensor<F>) -> Result<Vec<F>> {
        if states.rows != actions.rows {
            return Err(dim_err!(
                "{} states against {} actions",
                states.rows,
                actions.rows
            ));
        }
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params[i], false);
        let s = tape.constant(states.clone());
        let a = tape.constant(actions.clone());
        let q = self.forward(&mut tape, &bound, s, a)?;
        Ok(tape.value(q).data.clone())
    }
}
