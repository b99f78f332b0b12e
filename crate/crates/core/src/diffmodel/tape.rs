//! Reverse-mode differentiation over a recorded sequence of matrix operations.
//!
//! A [`Tape`] is built fresh for every forward pass. Parameters enter through
//! [`Tape::bind`], which copies the current values of a [`ParamSet`] onto the
//! tape as leaves. After [`Tape::backward`], [`Tape::write_grads`] adds the
//! gradient of each bound leaf into the parameter set's accumulators.
//! Leaves bound with `trainable = false` are constants: no gradient is
//! propagated into them, while gradients still flow through the operations
//! that consume them.

use std::rc::Rc;

use super::params::{ParamId, ParamSet};
use super::tensor::{matmul_at_acc, matmul_bt_acc, Tensor};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::scalar::Real;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Leaves created for one parameter set by [`Tape::bind`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    trainable: bool,
}

impl Bound {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }
}

/// Shape information for the fused causal attention op.
#[derive(Clone, Debug)]
pub struct AttentionLayout {
    pub batch: usize,
    pub seq_len: usize,
    pub n_heads: usize,
    /// `false` marks a padded token that may not be attended to.
    pub key_valid: Rc<Vec<bool>>,
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    ScaleShiftCols(Var, Vec<F>),
    Relu(Var),
    Tanh(Var),
    Gelu(Var),
    Square(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        probs: Vec<F>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Dropout(Var, Vec<F>),
    WeightedSum(Var, Vec<F>),
    Sum(Var),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Recorded computation graph.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    grads: Option<Vec<Option<Tensor<F>>>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

const LN_EPS: f64 = 1e-5;

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.as_ref()?.get(v.0)?.as_ref()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor<F>, needs_grad: bool) -> Var {
        self.push(value, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// Copies every parameter of `params` onto the tape as a leaf.
    pub fn bind(&mut self, params: &ParamSet<F>, trainable: bool) -> Bound {
        let vars = params
            .iter()
            .map(|p| self.leaf(p.value.clone(), trainable))
            .collect();
        Bound { vars, trainable }
    }

    // ----- operations -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(dim_err!("{what}: {sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (ta, tb) = (self.value(a), self.value(b));
        Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data: ta
                .data
                .iter()
                .zip(&tb.data)
                .map(|(&x, &y)| f(x, y))
                .collect(),
        }
    }

    fn map(&self, a: Var, f: impl Fn(F) -> F) -> Tensor<F> {
        let ta = self.value(a);
        Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data: ta.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Adds a `1 × m` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        if tr.rows != 1 || tr.cols != tx.cols {
            return Err(dim_err!(
                "add_row: {:?} broadcast onto {:?}",
                tr.shape(),
                tx.shape()
            ));
        }
        let mut out = tx.clone();
        for r in 0..out.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&tr.data) {
                *o += b;
            }
        }
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(out, Op::AddRow(x, row), ng))
    }

    /// `x · W + b` with `W` of shape `in × out` and `b` of shape `1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let out = self.map(x, |v| v * c);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    /// `y[r][j] = x[r][j]·scale[j] + shift[j]` with constant per-column factors.
    pub fn scale_shift_cols(&mut self, x: Var, scale: &[F], shift: &[F]) -> Result<Var> {
        let tx = self.value(x);
        if scale.len() != tx.cols || shift.len() != tx.cols {
            return Err(dim_err!(
                "scale_shift_cols: {} columns, {} scales, {} shifts",
                tx.cols,
                scale.len(),
                shift.len()
            ));
        }
        let mut out = tx.clone();
        for r in 0..out.rows {
            for ((o, &s), &t) in out.row_mut(r).iter_mut().zip(scale).zip(shift) {
                *o = *o * s + t;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::ScaleShiftCols(x, scale.to_vec()), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| if v > F::zero() { v } else { F::zero() });
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.tanh());
        let ng = self.ng(x);
        self.push(out, Op::Tanh(x), ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| gelu_fwd(v).0);
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v * v);
        let ng = self.ng(x);
        self.push(out, Op::Square(x), ng)
    }

    /// Per-row normalization with learned `1 × cols` scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = tx.shape();
        for p in [gamma, beta] {
            if self.value(p).shape() != (1, cols) {
                return Err(dim_err!(
                    "layer_norm parameter {:?} for width {cols}",
                    self.value(p).shape()
                ));
            }
        }
        let eps = F::c(LN_EPS);
        let n = F::of_usize(cols);
        let mut xhat = vec![F::zero(); rows * cols];
        let mut inv_std = vec![F::zero(); rows];
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let is = F::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..cols {
                let h = (row[j] - mean) * is;
                xhat[r * cols + j] = h;
                out.data[r * cols + j] = h * g[j] + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Multi-head causal self-attention over `batch` sequences of `seq_len`
    /// tokens stacked row-wise. Query `i` attends to keys `j ≤ i` whose
    /// `key_valid` flag is set; a query with no admissible key outputs zero.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (rows, dim) = tq.shape();
        let AttentionLayout {
            batch,
            seq_len,
            n_heads,
            ref key_valid,
        } = layout;
        if tk.shape() != (rows, dim) || tv.shape() != (rows, dim) {
            return Err(dim_err!("attention q/k/v shapes differ"));
        }
        if rows != batch * seq_len || key_valid.len() != rows {
            return Err(dim_err!(
                "attention over {rows} rows with batch {batch}, length {seq_len}, mask {}",
                key_valid.len()
            ));
        }
        if n_heads == 0 || dim % n_heads != 0 {
            return Err(dim_err!("width {dim} not divisible into {n_heads} heads"));
        }
        let dh = dim / n_heads;
        let scale = F::one() / F::of_usize(dh).sqrt();
        let mut probs = vec![F::zero(); batch * n_heads * seq_len * seq_len];
        let mut out = Tensor::zeros(rows, dim);
        let mut scores = vec![F::zero(); seq_len];
        for b in 0..batch {
            let base = b * seq_len;
            for h in 0..n_heads {
                let off = h * dh;
                for i in 0..seq_len {
                    let qi = &tq.row(base + i)[off..off + dh];
                    let mut max = F::neg_infinity();
                    for j in 0..=i {
                        if !key_valid[base + j] {
                            continue;
                        }
                        let kj = &tk.row(base + j)[off..off + dh];
                        let mut s = F::zero();
                        for (&x, &y) in qi.iter().zip(kj) {
                            s += x * y;
                        }
                        s *= scale;
                        scores[j] = s;
                        if s > max {
                            max = s;
                        }
                    }
                    if max == F::neg_infinity() {
                        continue;
                    }
                    let p_row =
                        &mut probs[((b * n_heads + h) * seq_len + i) * seq_len..][..seq_len];
                    let mut total = F::zero();
                    for j in 0..=i {
                        if key_valid[base + j] {
                            let e = (scores[j] - max).exp();
                            p_row[j] = e;
                            total += e;
                        }
                    }
                    for p in p_row[..=i].iter_mut() {
                        *p /= total;
                    }
                    let o_row = &mut out.data[(base + i) * dim + off..(base + i) * dim + off + dh];
                    for j in 0..=i {
                        let p = p_row[j];
                        if p == F::zero() {
                            continue;
                        }
                        let vj = &tv.row(base + j)[off..off + dh];
                        for (o, &x) in o_row.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols)
            .ok_or_else(|| arg_err!("concat_rows of nothing"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols != cols {
                return Err(dim_err!("concat_rows widths {} and {cols}", t.cols));
            }
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor { rows, cols, data },
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows)
            .ok_or_else(|| arg_err!("concat_cols of nothing"))?;
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows != rows {
                return Err(dim_err!("concat_cols heights {} and {rows}", t.rows));
            }
            cols += t.cols;
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let t = self.value(p);
                out.data[r * cols + c0..r * cols + c0 + t.cols].copy_from_slice(t.row(r));
                c0 += t.cols;
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Output row `i` is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= t.rows) {
            return Err(dim_err!("row {bad} of a {}-row tensor", t.rows));
        }
        let mut out = Tensor::zeros(index.len(), t.cols);
        for (i, &src) in index.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(src));
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::GatherRows(x, index), ng))
    }

    /// Multiplies elementwise by a fixed mask (already scaled by `1/(1-p)`).
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<F>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(dim_err!("dropout mask length"));
        }
        let t = self.value(x);
        let out = Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().zip(&mask).map(|(&a, &m)| a * m).collect(),
        };
        let ng = self.ng(x);
        Ok(self.push(out, Op::Dropout(x, mask), ng))
    }

    /// `Σ weights[i]·x[i]` as a `1 × 1` tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<F>) -> Result<Var> {
        let t = self.value(x);
        if weights.len() != t.len() {
            return Err(dim_err!(
                "weighted_sum of {} values with {} weights",
                t.len(),
                weights.len()
            ));
        }
        let s = t.data.iter().zip(&weights).map(|(&a, &w)| a * w).sum();
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(x, weights), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().copied().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    // ----- reverse pass -----

    /// Propagates `d loss / d node` from the scalar `loss` back to every node
    /// that depends on a trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::State(
                "backward on a variable that was never recorded".into(),
            ));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(arg_err!(
                "backward from a non-scalar of shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::one()));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Adds the gradients of the leaves in `bound` into `params`.
    pub fn write_grads(&self, bound: &Bound, params: &mut ParamSet<F>) -> Result<()> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| Error::State("gradients requested before backward".into()))?;
        if bound.vars.len() != params.len() {
            return Err(dim_err!(
                "{} bound leaves for {} parameters",
                bound.vars.len(),
                params.len()
            ));
        }
        for (i, v) in bound.vars.iter().enumerate() {
            if let Some(g) = grads.get(v.0).and_then(|g| g.as_ref()) {
                params.accumulate(ParamId(i), g)?;
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let nodes = &self.nodes;
        let ng = |v: Var| nodes[v.0].needs_grad;
        let val = |v: Var| &nodes[v.0].value;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if ng(*a) {
                    let ga = slot(grads, *a, ta);
                    matmul_bt_acc(&g.data, &tb.data, &mut ga.data, ta.rows, ta.cols, tb.cols);
                }
                if ng(*b) {
                    let gb = slot(grads, *b, tb);
                    matmul_at_acc(&ta.data, &g.data, &mut gb.data, ta.rows, ta.cols, tb.cols);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if ng(v) {
                        slot(grads, v, val(v)).add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if ng(*a) {
                    slot(grads, *a, val(*a)).add_assign(g);
                }
                if ng(*b) {
                    let gb = slot(grads, *b, val(*b));
                    for (o, &x) in gb.data.iter_mut().zip(&g.data) {
                        *o -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if ng(*a) {
                    let ga = slot(grads, *a, ta);
                    for ((o, &x), &y) in ga.data.iter_mut().zip(&g.data).zip(&tb.data) {
                        *o += x * y;
                    }
                }
                if ng(*b) {
                    let gb = slot(grads, *b, tb);
                    for ((o, &x), &y) in gb.data.iter_mut().zip(&g.data).zip(&ta.data) {
                        *o += x * y;
                    }
                }
            }
            Op::AddRow(x, row) => {
                if ng(*x) {
                    slot(grads, *x, val(*x)).add_assign(g);
                }
                if ng(*row) {
                    let gr = slot(grads, *row, val(*row));
                    for r in 0..g.rows {
                        for (o, &x) in gr.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                let gx = slot(grads, *x, val(*x));
                for (o, &d) in gx.data.iter_mut().zip(&g.data) {
                    *o += d * *c;
                }
            }
            Op::ScaleShiftCols(x, scale) => {
                let gx = slot(grads, *x, val(*x));
                let cols = g.cols;
                for (i, (o, &d)) in gx.data.iter_mut().zip(&g.data).enumerate() {
                    *o += d * scale[i % cols];
                }
            }
            Op::Relu(x) => {
                let tx = val(*x);
                let gx = slot(grads, *x, tx);
                for ((o, &d), &v) in gx.data.iter_mut().zip(&g.data).zip(&tx.data) {
                    if v > F::zero() {
                        *o += d;
                    }
                }
            }
            Op::Tanh(x) => {
                let y = &nodes[idx].value;
                let gx = slot(grads, *x, val(*x));
                for ((o, &d), &t) in gx.data.iter_mut().zip(&g.data).zip(&y.data) {
                    *o += d * (F::one() - t * t);
                }
            }
            Op::Gelu(x) => {
                let tx = val(*x);
                let gx = slot(grads, *x, tx);
                for ((o, &d), &v) in gx.data.iter_mut().zip(&g.data).zip(&tx.data) {
                    *o += d * gelu_fwd(v).1;
                }
            }
            Op::Square(x) => {
                let tx = val(*x);
                let gx = slot(grads, *x, tx);
                let two = F::c(2.0);
                for ((o, &d), &v) in gx.data.iter_mut().zip(&g.data).zip(&tx.data) {
                    *o += two * v * d;
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = g.shape();
                let gam = &val(*gamma).data;
                if ng(*gamma) {
                    let gg = slot(grads, *gamma, val(*gamma));
                    for r in 0..rows {
                        for j in 0..cols {
                            gg.data[j] += g.data[r * cols + j] * xhat[r * cols + j];
                        }
                    }
                }
                if ng(*beta) {
                    let gb = slot(grads, *beta, val(*beta));
                    for r in 0..rows {
                        for (o, &d) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += d;
                        }
                    }
                }
                if ng(*x) {
                    let gx = slot(grads, *x, val(*x));
                    let n = F::of_usize(cols);
                    let mut dxhat = vec![F::zero(); cols];
                    for r in 0..rows {
                        let mut sum_d = F::zero();
                        let mut sum_dx = F::zero();
                        for j in 0..cols {
                            let d = g.data[r * cols + j] * gam[j];
                            dxhat[j] = d;
                            sum_d += d;
                            sum_dx += d * xhat[r * cols + j];
                        }
                        let k = inv_std[r] / n;
                        for j in 0..cols {
                            gx.data[r * cols + j] +=
                                k * (n * dxhat[j] - sum_d - xhat[r * cols + j] * sum_dx);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            } => self.attention_backward(*q, *k, *v, layout, probs, g, grads),
            Op::ConcatRows(parts) => {
                let mut r0 = 0;
                for &p in parts {
                    let tp = val(p);
                    if ng(p) {
                        let gp = slot(grads, p, tp);
                        let n = tp.len();
                        let off = r0 * g.cols;
                        for (o, &d) in gp.data.iter_mut().zip(&g.data[off..off + n]) {
                            *o += d;
                        }
                    }
                    r0 += tp.rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let tp = val(p);
                    if ng(p) {
                        let gp = slot(grads, p, tp);
                        for r in 0..g.rows {
                            let src = &g.data[r * g.cols + c0..r * g.cols + c0 + tp.cols];
                            for (o, &d) in gp.row_mut(r).iter_mut().zip(src) {
                                *o += d;
                            }
                        }
                    }
                    c0 += tp.cols;
                }
            }
            Op::GatherRows(x, index) => {
                let gx = slot(grads, *x, val(*x));
                for (i, &src) in index.iter().enumerate() {
                    for (o, &d) in gx.row_mut(src).iter_mut().zip(g.row(i)) {
                        *o += d;
                    }
                }
            }
            Op::Dropout(x, mask) => {
                let gx = slot(grads, *x, val(*x));
                for ((o, &d), &m) in gx.data.iter_mut().zip(&g.data).zip(mask) {
                    *o += d * m;
                }
            }
            Op::WeightedSum(x, w) => {
                let gx = slot(grads, *x, val(*x));
                let d = g.data[0];
                for (o, &wi) in gx.data.iter_mut().zip(w) {
                    *o += d * wi;
                }
            }
            Op::Sum(x) => {
                let gx = slot(grads, *x, val(*x));
                let d = g.data[0];
                for o in gx.data.iter_mut() {
                    *o += d;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        layout: &AttentionLayout,
        probs: &[F],
        g: &Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
    ) {
        let nodes = &self.nodes;
        let (tq, tk, tv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
        let (rows, dim) = tq.shape();
        let (batch, seq_len, n_heads) = (layout.batch, layout.seq_len, layout.n_heads);
        let dh = dim / n_heads;
        let scale = F::one() / F::of_usize(dh).sqrt();
        let mut dq = Tensor::zeros(rows, dim);
        let mut dk = Tensor::zeros(rows, dim);
        let mut dv = Tensor::zeros(rows, dim);
        let mut dp = vec![F::zero(); seq_len];
        for b in 0..batch {
            let base = b * seq_len;
            for h in 0..n_heads {
                let off = h * dh;
                for i in 0..seq_len {
                    let p_row = &probs[((b * n_heads + h) * seq_len + i) * seq_len..][..seq_len];
                    let go = &g.row(base + i)[off..off + dh];
                    let mut dot = F::zero();
                    for j in 0..=i {
                        let p = p_row[j];
                        if p == F::zero() {
                            dp[j] = F::zero();
                            continue;
                        }
                        let vj = &tv.row(base + j)[off..off + dh];
                        let mut s = F::zero();
                        for (&a, &c) in go.iter().zip(vj) {
                            s += a * c;
                        }
                        dp[j] = s;
                        dot += p * s;
                        let dvj = &mut dv.data[(base + j) * dim + off..(base + j) * dim + off + dh];
                        for (o, &a) in dvj.iter_mut().zip(go) {
                            *o += p * a;
                        }
                    }
                    let qi = &tq.row(base + i)[off..off + dh];
                    for j in 0..=i {
                        let p = p_row[j];
                        if p == F::zero() {
                            continue;
                        }
                        let ds = p * (dp[j] - dot) * scale;
                        let kj = &tk.row(base + j)[off..off + dh];
                        let dqi = &mut dq.data[(base + i) * dim + off..(base + i) * dim + off + dh];
                        for (o, &c) in dqi.iter_mut().zip(kj) {
                            *o += ds * c;
                        }
                        let dkj = &mut dk.data[(base + j) * dim + off..(base + j) * dim + off + dh];
                        for (o, &c) in dkj.iter_mut().zip(qi) {
                            *o += ds * c;
                        }
                    }
                }
            }
        }
        for (var, d) in [(q, dq), (k, dk), (v, dv)] {
            if nodes[var.0].needs_grad {
                slot(grads, var, &nodes[var.0].value).add_assign(&d);
            }
        }
    }
}

fn slot<'a, F: Real>(
    grads: &'a mut [Option<Tensor<F>>],
    v: Var,
    like: &Tensor<F>,
) -> &'a mut Tensor<F> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.rows, like.cols))
}

/// GELU value and derivative (tanh approximation).
fn gelu_fwd<F: Real>(x: F) -> (F, F) {
    let c = F::c(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = F::c(0.044_715);
    let half = F::c(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let y = half * x * (F::one() + t);
    let dinner = c * (F::one() + F::c(3.0) * a * x * x);
    let dy = half * (F::one() + t) + half * x * (F::one() - t * t) * dinner;
    (y, dy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_single_weight_has_unit_gradient() {
        let mut ps = ParamSet::<f64>::new();
        let w = ps.add("w", Tensor::scalar(0.7));
        let mut tape = Tape::new();
        let b = tape.bind(&ps, true);
        let loss = tape.sum(b.var(w));
        tape.backward(loss).unwrap();
        tape.write_grads(&b, &mut ps).unwrap();
        assert_eq!(ps.get(w).grad.data, vec![1.0]);
    }

    #[test]
    fn square_gradient_and_accumulation() {
        let mut ps = ParamSet::<f64>::new();
        let w = ps.add("w", Tensor::scalar(3.0));
        for expected in [6.0, 12.0] {
            let mut tape = Tape::new();
            let b = tape.bind(&ps, true);
            let sq = tape.square(b.var(w));
            let loss = tape.sum(sq);
            tape.backward(loss).unwrap();
            tape.write_grads(&b, &mut ps).unwrap();
            assert_eq!(ps.get(w).grad.data, vec![expected]);
        }
    }

    #[test]
    fn backward_requires_recorded_scalar() {
        let mut tape = Tape::<f64>::new();
        assert!(matches!(tape.backward(Var(0)), Err(Error::State(_))));
        let x = tape.leaf(Tensor::zeros(2, 2), true);
        assert!(tape.backward(x).is_err());
        let ps = ParamSet::<f64>::new();
        let mut ps2 = ps.clone();
        let b = tape.bind(&ps, true);
        assert!(matches!(
            tape.write_grads(&b, &mut ps2),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn frozen_leaves_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::scalar(2.0), false);
        let x = tape.leaf(Tensor::scalar(5.0), true);
        let y = tape.mul(a, x).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert!(tape.grad(a).is_none());
        assert_eq!(tape.grad(x).unwrap().data, vec![2.0]);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.3, 2.0f64] {
            let h = 1e-6;
            let fd = (gelu_fwd(x + h).0 - gelu_fwd(x - h).0) / (2.0 * h);
            assert!((fd - gelu_fwd(x).1).abs() < 1e-8);
        }
    }
}
