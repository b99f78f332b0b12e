use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::scalar::Real;

/// Dense row-major matrix. Vectors are `1 × n` or `n × 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: F) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_err!(
                "{} values cannot fill a {rows}x{cols} tensor",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row_vector(data: Vec<F>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(value: F) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = F::one();
        }
        t
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn fill(&mut self, value: F) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn add_assign(&mut self, other: &Tensor<F>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn norm(&self) -> F {
        self.data.iter().map(|&x| x * x).sum::<F>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        if self.cols != other.rows {
            return Err(dim_err!(
                "matmul {}x{} by {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        matmul_acc(
            &self.data,
            &other.data,
            &mut out.data,
            self.rows,
            self.cols,
            other.cols,
        );
        Ok(out)
    }
}

/// `out[n×m] += a[n×k] · b[k×m]`.
pub(crate) fn matmul_acc<F: Real>(a: &[F], b: &[F], out: &mut [F], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == F::zero() {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &bpj) in out_row.iter_mut().zip(b_row) {
                *o += aip * bpj;
            }
        }
    }
}

/// `out[n×k] += g[n×m] · b[k×m]ᵀ`.
pub(crate) fn matmul_bt_acc<F: Real>(
    g: &[F],
    b: &[F],
    out: &mut [F],
    n: usize,
    k: usize,
    m: usize,
) {
    // transposing b turns the inner loop into a contiguous axpy
    let mut bt = vec![F::zero(); m * k];
    for p in 0..k {
        for j in 0..m {
            bt[j * k + p] = b[p * m + j];
        }
    }
    matmul_acc(g, &bt, out, n, m, k);
}

/// `out[k×m] += a[n×k]ᵀ · g[n×m]`.
pub(crate) fn matmul_at_acc<F: Real>(
    a: &[F],
    g: &[F],
    out: &mut [F],
    n: usize,
    k: usize,
    m: usize,
) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * m..(i + 1) * m];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == F::zero() {
                continue;
            }
            let out_row = &mut out[p * m..(p + 1) * m];
            for (o, &gij) in out_row.iter_mut().zip(g_row) {
                *o += aip * gij;
            }
        }
    }
}
