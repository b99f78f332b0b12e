use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{arg_err, dim_err, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    /// Adam direction rescaled per parameter tensor by `‖θ‖ / ‖update‖`.
    Lamb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled from the gradient.
    pub weight_decay: f64,
    /// Linear warmup of the learning rate over this many steps.
    pub warmup_steps: Option<u64>,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_steps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(arg_err!("learning rate {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(arg_err!("betas ({}, {})", self.beta1, self.beta2));
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 {
            return Err(arg_err!(
                "weight decay and eps must be nonnegative/positive"
            ));
        }
        Ok(())
    }
}

/// Moment estimates and step count for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer<F> {
    pub config: OptimizerConfig,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
    step: u64,
}

impl<F: Real> Optimizer<F> {
    pub fn new(config: OptimizerConfig, params: &ParamSet<F>) -> Result<Self> {
        config.validate()?;
        let zeros = |p: &super::params::Param<F>| Tensor::zeros(p.value.rows, p.value.cols);
        Ok(Self {
            config,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Learning rate used by the next step.
    pub fn current_lr(&self) -> f64 {
        let next = (self.step + 1) as f64;
        match self.config.warmup_steps {
            Some(w) if w > 0 => self.config.lr * (next / w as f64).min(1.0),
            _ => self.config.lr,
        }
    }

    /// Applies one update from the accumulated gradients. Gradients are left
    /// in place; callers zero them before the next backward pass.
    pub fn step(&mut self, params: &mut ParamSet<F>) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(dim_err!(
                "optimizer built for {} parameters, got {}",
                self.first.len(),
                params.len()
            ));
        }
        params.check_grads_finite()?;
        let lr = F::c(self.current_lr());
        self.step += 1;
        let c = &self.config;
        let (b1, b2, eps, wd) = (
            F::c(c.beta1),
            F::c(c.beta2),
            F::c(c.eps),
            F::c(c.weight_decay),
        );
        let t = self.step as i32;
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);
        let mut update = Vec::new();
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            update.clear();
            for j in 0..p.value.len() {
                let g = p.grad.data[j];
                m.data[j] = b1 * m.data[j] + (F::one() - b1) * g;
                v.data[j] = b2 * v.data[j] + (F::one() - b2) * g * g;
                let mhat = m.data[j] / bc1;
                let vhat = v.data[j] / bc2;
                update.push(mhat / (vhat.sqrt() + eps) + wd * p.value.data[j]);
            }
            let ratio = match c.kind {
                OptimizerKind::Adam => F::one(),
                OptimizerKind::Lamb => {
                    let wn = p.value.norm();
                    let un = update.iter().map(|&u| u * u).sum::<F>().sqrt();
                    if wn > F::zero() && un > F::zero() {
                        wn / un
                    } else {
                        F::one()
                    }
                }
            };
            for (x, &u) in p.value.data.iter_mut().zip(&update) {
                *x -= lr * ratio * u;
            }
        }
        Ok(())
    }
}
