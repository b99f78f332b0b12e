//! Differentiable numeric substrate: tensors, a reverse-mode tape, MLP and
//! decision-transformer models, optimizers and a finite-difference checker.

pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod transformer;

pub use gradcheck::{grad_check, GradCheckReport};
pub use mlp::{Activation, Mlp, MlpConfig};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{Param, ParamId, ParamSet};
pub use tape::{AttentionLayout, Bound, Tape, Var};
pub use tensor::Tensor;
pub use transformer::{action_affine, DecisionTransformer, TokenBatch, TransformerConfig};
