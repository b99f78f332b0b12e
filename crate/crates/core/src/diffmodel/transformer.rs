//! GPT-style causal decision transformer with a deterministic action head.
//!
//! Each timestep contributes three tokens in the order (return-to-go, state,
//! action). The action for step `t` is read out at the state token of `t`, so
//! it sees every token of earlier steps plus the return-to-go and state of
//! `t`, but never the action token of `t` itself.

use std::rc::Rc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mlp::uniform_tensor;
use super::params::{ParamId, ParamSet};
use super::tape::{AttentionLayout, Bound, Tape, Var};
use super::tensor::Tensor;
use crate::error::{arg_err, dim_err, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    pub dropout_rate: f64,
    /// Longest sequence of timesteps the model is trained on.
    pub context_len: usize,
    /// Adds a learned embedding of the absolute timestep to every token.
    pub use_positional_embedding: bool,
    pub max_timestep: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl TransformerConfig {
    /// One layer, two heads, width 64.
    pub fn desk_scale(
        state_dim: usize,
        action_dim: usize,
        low: Vec<f64>,
        high: Vec<f64>,
        context_len: usize,
    ) -> Self {
        Self {
            n_layers: 1,
            n_heads: 2,
            embed_dim: 64,
            dropout_rate: 0.0,
            context_len,
            use_positional_embedding: false,
            max_timestep: 1024,
            state_dim,
            action_dim,
            action_low: low,
            action_high: high,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.embed_dim == 0 {
            return Err(arg_err!("transformer sizes must be positive"));
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(arg_err!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim,
                self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(arg_err!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            ));
        }
        if self.context_len == 0
            || self.state_dim == 0
            || self.action_dim == 0
            || self.max_timestep == 0
        {
            return Err(arg_err!("context length and dims must be positive"));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(arg_err!(
                "action bounds must have length {}",
                self.action_dim
            ));
        }
        if self
            .action_low
            .iter()
            .zip(&self.action_high)
            .any(|(l, h)| l >= h)
        {
            return Err(arg_err!("action_low must be below action_high"));
        }
        Ok(())
    }
}

/// Token inputs for a batch of equal-length, left-padded sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch<F> {
    pub batch: usize,
    pub len: usize,
    /// `batch·len` returns-to-go (already scaled).
    pub rtgs: Vec<F>,
    /// `batch·len·state_dim`.
    pub states: Vec<F>,
    /// `batch·len·action_dim`.
    pub actions: Vec<F>,
    pub timesteps: Vec<usize>,
    /// `false` marks padding.
    pub mask: Vec<bool>,
}

impl<F: Real> TokenBatch<F> {
    fn check(&self, cfg: &TransformerConfig) -> Result<()> {
        let n = self.batch * self.len;
        if n == 0 {
            return Err(arg_err!("empty token batch"));
        }
        if self.len > cfg.context_len {
            return Err(arg_err!(
                "sequence length {} exceeds context length {}",
                self.len,
                cfg.context_len
            ));
        }
        if self.rtgs.len() != n
            || self.states.len() != n * cfg.state_dim
            || self.actions.len() != n * cfg.action_dim
            || self.timesteps.len() != n
            || self.mask.len() != n
        {
            return Err(dim_err!(
                "token batch arrays do not match batch {}x{}",
                self.batch,
                self.len
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Block {
    ln1: (ParamId, ParamId),
    wq: (ParamId, ParamId),
    wk: (ParamId, ParamId),
    wv: (ParamId, ParamId),
    proj: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

/// Parameter layout of a decision transformer; values live in a [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTransformer {
    config: TransformerConfig,
    embed_rtg: (ParamId, ParamId),
    embed_state: (ParamId, ParamId),
    embed_action: (ParamId, ParamId),
    embed_time: Option<ParamId>,
    embed_ln: (ParamId, ParamId),
    blocks: Vec<Block>,
    ln_f: (ParamId, ParamId),
    head: (ParamId, ParamId),
}

impl DecisionTransformer {
    pub fn new<F: Real, R: Rng + ?Sized>(
        config: TransformerConfig,
        params: &mut ParamSet<F>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let gpt = |rows: usize, cols: usize, rng: &mut R| -> Tensor<F> {
            let data = (0..rows * cols).map(|_| F::c(normal.sample(rng))).collect();
            Tensor { rows, cols, data }
        };
        let lin =
            |params: &mut ParamSet<F>, name: &str, fan_in: usize, fan_out: usize, rng: &mut R| {
                let b = 1.0 / (fan_in as f64).sqrt();
                (
                    params.add(format!("{name}.w"), uniform_tensor(fan_in, fan_out, b, rng)),
                    params.add(format!("{name}.b"), uniform_tensor(1, fan_out, b, rng)),
                )
            };
        let ln = |params: &mut ParamSet<F>, name: &str, width: usize| {
            (
                params.add(format!("{name}.g"), Tensor::filled(1, width, F::one())),
                params.add(format!("{name}.b"), Tensor::zeros(1, width)),
            )
        };
        let embed_rtg = lin(params, "embed_rtg", 1, d, rng);
        let embed_state = lin(params, "embed_state", config.state_dim, d, rng);
        let embed_action = lin(params, "embed_action", config.action_dim, d, rng);
        let embed_time = config
            .use_positional_embedding
            .then(|| params.add("embed_time", gpt(config.max_timestep, d, rng)));
        let embed_ln = ln(params, "embed_ln", d);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let mut dense =
                |params: &mut ParamSet<F>, name: &str, fan_in: usize, fan_out: usize| {
                    (
                        params.add(format!("h{i}.{name}.w"), gpt(fan_in, fan_out, rng)),
                        params.add(format!("h{i}.{name}.b"), Tensor::zeros(1, fan_out)),
                    )
                };
            let wq = dense(params, "q", d, d);
            let wk = dense(params, "k", d, d);
            let wv = dense(params, "v", d, d);
            let proj = dense(params, "proj", d, d);
            let fc1 = dense(params, "fc1", d, 4 * d);
            let fc2 = dense(params, "fc2", 4 * d, d);
            blocks.push(Block {
                ln1: ln(params, &format!("h{i}.ln1"), d),
                wq,
                wk,
                wv,
                proj,
                ln2: ln(params, &format!("h{i}.ln2"), d),
                fc1,
                fc2,
            });
        }
        let ln_f = ln(params, "ln_f", d);
        let head = lin(params, "head", d, config.action_dim, rng);
        Ok(Self {
            config,
            embed_rtg,
            embed_state,
            embed_action,
            embed_time,
            embed_ln,
            blocks,
            ln_f,
            head,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    /// Records the forward pass and returns the `(batch·len) × action_dim`
    /// matrix of actions, one row per (sequence, position). Rows of padded
    /// positions are defined but meaningless. Dropout is applied only when
    /// `train_rng` is provided.
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        tokens: &TokenBatch<F>,
        mut train_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let cfg = &self.config;
        tokens.check(cfg)?;
        let (b, l) = (tokens.batch, tokens.len);
        let n = b * l;
        let p = |id: (ParamId, ParamId)| (bound.var(id.0), bound.var(id.1));

        let rtg_in = tape.constant(Tensor::from_vec(n, 1, tokens.rtgs.clone())?);
        let state_in = tape.constant(Tensor::from_vec(n, cfg.state_dim, tokens.states.clone())?);
        let action_in = tape.constant(Tensor::from_vec(n, cfg.action_dim, tokens.actions.clone())?);
        let (w, bias) = p(self.embed_rtg);
        let mut e_rtg = tape.linear(rtg_in, w, bias)?;
        let (w, bias) = p(self.embed_state);
        let mut e_state = tape.linear(state_in, w, bias)?;
        let (w, bias) = p(self.embed_action);
        let mut e_action = tape.linear(action_in, w, bias)?;
        if let Some(table) = self.embed_time {
            let idx = tokens
                .timesteps
                .iter()
                .map(|&t| t.min(cfg.max_timestep - 1))
                .collect();
            let te = tape.gather_rows(bound.var(table), idx)?;
            e_rtg = tape.add(e_rtg, te)?;
            e_state = tape.add(e_state, te)?;
            e_action = tape.add(e_action, te)?;
        }
        let stacked = tape.concat_rows(&[e_rtg, e_state, e_action])?;
        let seq = 3 * l;
        let mut order = Vec::with_capacity(3 * n);
        for bi in 0..b {
            for t in 0..l {
                for k in 0..3 {
                    order.push(k * n + bi * l + t);
                }
            }
        }
        let mut x = tape.gather_rows(stacked, order)?;
        let (g, beta) = p(self.embed_ln);
        x = tape.layer_norm(x, g, beta)?;
        x = dropout(tape, x, cfg.dropout_rate, &mut train_rng)?;

        let key_valid: Rc<Vec<bool>> =
            Rc::new(tokens.mask.iter().flat_map(|&m| [m, m, m]).collect());
        for blk in &self.blocks {
            let (g, beta) = p(blk.ln1);
            let h = tape.layer_norm(x, g, beta)?;
            let (w, bias) = p(blk.wq);
            let q = tape.linear(h, w, bias)?;
            let (w, bias) = p(blk.wk);
            let k = tape.linear(h, w, bias)?;
            let (w, bias) = p(blk.wv);
            let v = tape.linear(h, w, bias)?;
            let att = tape.causal_attention(
                q,
                k,
                v,
                AttentionLayout {
                    batch: b,
                    seq_len: seq,
                    n_heads: cfg.n_heads,
                    key_valid: key_valid.clone(),
                },
            )?;
            let (w, bias) = p(blk.proj);
            let mut a = tape.linear(att, w, bias)?;
            a = dropout(tape, a, cfg.dropout_rate, &mut train_rng)?;
            x = tape.add(x, a)?;
            let (g, beta) = p(blk.ln2);
            let h = tape.layer_norm(x, g, beta)?;
            let (w, bias) = p(blk.fc1);
            let mut m = tape.linear(h, w, bias)?;
            m = tape.gelu(m);
            let (w, bias) = p(blk.fc2);
            m = tape.linear(m, w, bias)?;
            m = dropout(tape, m, cfg.dropout_rate, &mut train_rng)?;
            x = tape.add(x, m)?;
        }
        let (g, beta) = p(self.ln_f);
        x = tape.layer_norm(x, g, beta)?;
        let state_rows = (0..b)
            .flat_map(|bi| (0..l).map(move |t| bi * seq + 3 * t + 1))
            .collect();
        let hs = tape.gather_rows(x, state_rows)?;
        let (w, bias) = p(self.head);
        let raw = tape.linear(hs, w, bias)?;
        let squashed = tape.tanh(raw);
        let (scale, shift) = action_affine::<F>(&cfg.action_low, &cfg.action_high);
        tape.scale_shift_cols(squashed, &scale, &shift)
    }

    /// Deterministic forward pass returning the action matrix values.
    pub fn predict<F: Real>(
        &self,
        params: &ParamSet<F>,
        tokens: &TokenBatch<F>,
    ) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let bound = tape.bind(params, false);
        let out = self.forward(&mut tape, &bound, tokens, None)?;
        Ok(tape.value(out).clone())
    }
}

/// Per-dimension `(half-width, midpoint)` mapping `[-1, 1]` onto the bounds.
pub fn action_affine<F: Real>(low: &[f64], high: &[f64]) -> (Vec<F>, Vec<F>) {
    low.iter()
        .zip(high)
        .map(|(&l, &h)| (F::c(0.5 * (h - l)), F::c(0.5 * (h + l))))
        .unzip()
}

fn dropout<F: Real>(
    tape: &mut Tape<F>,
    x: Var,
    rate: f64,
    rng: &mut Option<&mut dyn RngCore>,
) -> Result<Var> {
    match rng.as_mut() {
        Some(rng) if rate > 0.0 => {
            let keep = F::c(1.0 / (1.0 - rate));
            let mask = (0..tape.value(x).len())
                .map(|_| {
                    if rng.gen::<f64>() < rate {
                        F::zero()
                    } else {
                        keep
                    }
                })
                .collect();
            tape.dropout_with_mask(x, mask)
        }
        _ => Ok(x),
    }
}
