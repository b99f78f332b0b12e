use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::scalar::Real;

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
}

/// Named trainable tensors, each paired with a gradient slot of the same shape.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet<F> {
    params: Vec<Param<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let grad = Tensor::zeros(value.rows, value.cols);
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.params.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(F::zero());
        }
    }

    /// Adds `grad` into the slot of `id`.
    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor<F>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.shape() != grad.shape() {
            return Err(dim_err!(
                "gradient {:?} for parameter {} of shape {:?}",
                grad.shape(),
                p.name,
                p.grad.shape()
            ));
        }
        p.grad.add_assign(grad);
        Ok(())
    }

    /// Names the first parameter whose gradient is not finite.
    pub fn check_grads_finite(&self) -> Result<()> {
        match self.params.iter().find(|p| !p.grad.is_finite()) {
            Some(p) => Err(Error::Numeric(format!("gradient of parameter {}", p.name))),
            None => Ok(()),
        }
    }

    pub fn same_layout(&self, other: &ParamSet<F>) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }

    /// `self ← (1 − tau)·self + tau·source`, parameter by parameter.
    pub fn polyak_from(&mut self, source: &ParamSet<F>, tau: F) -> Result<()> {
        if !self.same_layout(source) {
            return Err(dim_err!("polyak update between mismatched parameter sets"));
        }
        let keep = F::one() - tau;
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            for (x, &y) in t.value.data.iter_mut().zip(&s.value.data) {
                *x = keep * *x + tau * y;
            }
        }
        Ok(())
    }

    /// Copies values from `source`, leaving gradients untouched.
    pub fn copy_values_from(&mut self, source: &ParamSet<F>) -> Result<()> {
        if !self.same_layout(source) {
            return Err(dim_err!("copy between mismatched parameter sets"));
        }
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            t.value.data.copy_from_slice(&s.value.data);
        }
        Ok(())
    }

    /// Sets every value to zero.
    pub fn zero_values(&mut self) {
        for p in &mut self.params {
            p.value.fill(F::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_slots_mirror_values() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add("w", Tensor::filled(2, 3, 1.5));
        assert_eq!(ps.get(id).grad.shape(), (2, 3));
        ps.accumulate(id, &Tensor::filled(2, 3, 2.0)).unwrap();
        ps.accumulate(id, &Tensor::filled(2, 3, 2.0)).unwrap();
        assert!(ps.get(id).grad.data.iter().all(|&g| g == 4.0));
        ps.zero_grads();
        assert!(ps.get(id).grad.data.iter().all(|&g| g == 0.0));
        assert!(ps.accumulate(id, &Tensor::zeros(3, 2)).is_err());
    }

    #[test]
    fn non_finite_grad_is_named() {
        let mut ps = ParamSet::<f64>::new();
        ps.add("fine", Tensor::zeros(1, 1));
        let bad = ps.add("head.w", Tensor::zeros(1, 2));
        ps.accumulate(bad, &Tensor::row_vector(vec![0.0, f64::NAN]))
            .unwrap();
        let err = ps.check_grads_finite().unwrap_err().to_string();
        assert!(err.contains("head.w"), "{err}");
    }
}
