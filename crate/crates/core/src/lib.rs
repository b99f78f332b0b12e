//! Online finetuning of decision transformers with mixed TD3 and supervised
//! gradients, toy environments that expose the failure mode of purely
//! return-conditioned finetuning, and executable checks of the bounds that
//! explain it.

pub mod agent;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod diffmodel;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod scalar;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tape64 = diffmodel::Tape<f64>;
pub type ParamSet64 = diffmodel::ParamSet<f64>;
pub type Tensor64 = diffmodel::Tensor<f64>;
