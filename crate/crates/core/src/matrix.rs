//! Dense row-major embedding storage and the handful of BLAS-style kernels
//! the pipeline needs.

use nalgebra::DMatrix;

use crate::error::{ensure_contract, Error, Result};

/// `rows × dim` matrix of finite `f64`, row `i` holding the vector of word `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        ensure_contract!(
            data.len() == rows * dim,
            "{} values cannot form a {rows}x{dim} matrix",
            data.len()
        );
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value at row {}, column {}",
                pos / dim.max(1),
                pos % dim.max(1)
            )));
        }
        Ok(EmbeddingMatrix { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingMatrix {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            ensure_contract!(r.len() == dim, "row {i} has {} values, expected {dim}", r.len());
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    /// Skips the finiteness scan; callers guarantee finite input.
    pub(crate) fn from_raw(rows: usize, dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * dim);
        EmbeddingMatrix { rows, dim, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    /// Copy of the first `n` rows (all rows when `n >= rows`).
    pub fn head(&self, n: usize) -> EmbeddingMatrix {
        let n = n.min(self.rows);
        EmbeddingMatrix::from_raw(n, self.dim, self.data[..n * self.dim].to_vec())
    }

    pub fn select_rows(&self, indices: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix::from_raw(indices.len(), self.dim, data)
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.iter_rows().map(norm).collect()
    }

    /// Dimension-wise mean of the rows; zeros for an empty matrix.
    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for r in self.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        if self.rows > 0 {
            let n = self.rows as f64;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        mean
    }

    /// `self · w` for a `dim × dim'` transform.
    pub fn transform(&self, w: &DMatrix<f64>) -> Result<EmbeddingMatrix> {
        ensure_contract!(
            w.nrows() == self.dim,
            "transform has {} rows, embeddings have dimension {}",
            w.nrows(),
            self.dim
        );
        let out_dim = w.ncols();
        let mut out = vec![0.0; self.rows * out_dim];
        if self.rows > 0 && self.dim > 0 && out_dim > 0 {
            // nalgebra storage is column-major: element (r, c) at c * nrows + r
            unsafe {
                matrixmultiply::dgemm(
                    self.rows,
                    self.dim,
                    out_dim,
                    1.0,
                    self.data.as_ptr(),
                    self.dim as isize,
                    1,
                    w.as_slice().as_ptr(),
                    1,
                    self.dim as isize,
                    0.0,
                    out.as_mut_ptr(),
                    out_dim as isize,
                    1,
                );
            }
        }
        Ok(EmbeddingMatrix::from_raw(self.rows, out_dim, out))
    }

    /// `selfᵀ · other` as a `dim × dim` matrix; both operands must have the
    /// same shape.
    pub fn cross_covariance(&self, other: &EmbeddingMatrix) -> Result<DMatrix<f64>> {
        ensure_contract!(
            self.rows == other.rows && self.dim == other.dim,
            "shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.dim,
            other.rows,
            other.dim
        );
        let d = self.dim;
        let mut out = DMatrix::<f64>::zeros(d, other.dim);
        if self.rows > 0 && d > 0 {
            // Aᵀ is A with swapped strides; write C column-major.
            unsafe {
                matrixmultiply::dgemm(
                    d,
                    self.rows,
                    other.dim,
                    1.0,
                    self.data.as_ptr(),
                    1,
                    d as isize,
                    other.data.as_ptr(),
                    other.dim as isize,
                    1,
                    0.0,
                    out.as_mut_slice().as_mut_ptr(),
                    1,
                    d as isize,
                );
            }
        }
        Ok(out)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Row-major `C = A · Bᵀ` with `A: m×k`, `B: n×k`, `C: m×n`.
pub(crate) fn gemm_abt(a: &[f64], m: usize, b: &[f64], n: usize, k: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// Max absolute entry of `WᵀW − I`.
pub fn orthogonality_error(w: &DMatrix<f64>) -> f64 {
    let wtw = w.transpose() * w;
    let mut worst = 0.0f64;
    for r in 0..wtw.nrows() {
        for c in 0..wtw.ncols() {
            let target = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((wtw[(r, c)] - target).abs());
        }
    }
    worst
}
