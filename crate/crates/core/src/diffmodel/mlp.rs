use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamSet};
use super::tape::{Bound, Tape, Var};
use super::tensor::Tensor;
use crate::error::{arg_err, dim_err, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Gelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Normalize after each hidden activation.
    pub layer_norm: bool,
}

impl MlpConfig {
    pub fn new(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        layer_norm: bool,
    ) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self {
            widths,
            activation,
            layer_norm,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
    norm: Option<(ParamId, ParamId)>,
}

/// Feed-forward network whose weights live in a [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Layer>,
}

impl Mlp {
    /// Registers the network's parameters in `params` with uniform
    /// `±1/sqrt(fan_in)` initialization.
    pub fn new<F: Real, R: Rng + ?Sized>(
        config: MlpConfig,
        params: &mut ParamSet<F>,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        if config.widths.len() < 2 || config.widths.contains(&0) {
            return Err(arg_err!("mlp widths {:?}", config.widths));
        }
        let n = config.widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (i, pair) in config.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = uniform_tensor(fan_in, fan_out, bound, rng);
            let b = uniform_tensor(1, fan_out, bound, rng);
            let weight = params.add(format!("{prefix}.l{i}.w"), w);
            let bias = params.add(format!("{prefix}.l{i}.b"), b);
            let norm = (config.layer_norm && i + 1 < n).then(|| {
                (
                    params.add(
                        format!("{prefix}.l{i}.ln.g"),
                        Tensor::filled(1, fan_out, F::one()),
                    ),
                    params.add(format!("{prefix}.l{i}.ln.b"), Tensor::zeros(1, fan_out)),
                )
            });
            layers.push(Layer { weight, bias, norm });
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn weight_id(&self, layer: usize) -> ParamId {
        self.layers[layer].weight
    }

    pub fn bias_id(&self, layer: usize) -> ParamId {
        self.layers[layer].bias
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Records the forward pass of a batch `x` (rows are samples).
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var) -> Result<Var> {
        let width = tape.value(x).cols;
        if width != self.config.input_dim() {
            return Err(dim_err!(
                "mlp input width {width}, expected {}",
                self.config.input_dim()
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = tape.linear(h, bound.var(layer.weight), bound.var(layer.bias))?;
            if i < last {
                h = match self.config.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                    Activation::Gelu => tape.gelu(h),
                };
                if let Some((g, b)) = layer.norm {
                    h = tape.layer_norm(h, bound.var(g), bound.var(b))?;
                }
            }
        }
        Ok(h)
    }

    /// Evaluates a single input vector without keeping gradients.
    pub fn forward_vec<F: Real>(&self, params: &ParamSet<F>, input: &[F]) -> Result<Vec<F>> {
        let mut tape = Tape::new();
        let bound = tape.bind(params, false);
        let x = tape.constant(Tensor::row_vector(input.to_vec()));
        let y = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(y).data.clone())
    }
}

pub(crate) fn uniform_tensor<F: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    bound: f64,
    rng: &mut R,
) -> Tensor<F> {
    let data = (0..rows * cols)
        .map(|_| F::c(rng.gen_range(-bound..bound)))
        .collect();
    Tensor { rows, cols, data }
}
