//! Shared numerical kernels: compressed sparse row products, dense symmetric
//! eigendecomposition, SPD direct solve, and a matrix-exponential oracle used
//! for cross-validating the time integrator.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Compressed row-oriented sparse matrix.
///
/// Column indices are strictly increasing within each row and no explicit
/// zeros are stored.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from (row, col, value) triplets. Duplicates are summed and
    /// exact zeros are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(i, j, _) in &triplets {
            if i >= rows || j >= cols {
                return Err(Error::DimensionMismatch(format!(
                    "triplet ({i}, {j}) outside {rows}x{cols}"
                )));
            }
        }
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
            if *values.last().unwrap() == 0.0 {
                col_idx.pop();
                values.pop();
                row_ptr[i + 1] -= 1;
                last = None;
            }
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Number of stored entries in column `j`.
    pub fn column_nnz(&self, j: usize) -> usize {
        self.col_idx.iter().filter(|&&c| c == j).count()
    }

    /// y = M v.
    pub fn spmv(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "spmv: vector length {} vs {} columns",
                v.len(),
                self.cols
            )));
        }
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * v[self.col_idx[k]];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    /// y = M^T v.
    pub fn spmv_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "spmv_transpose: vector length {} vs {} rows",
                v.len(),
                self.rows
            )));
        }
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.values[k] * vi;
            }
        }
        Ok(y)
    }

    /// Scales column `j` by `f[j]` in place.
    pub fn scale_columns(&mut self, f: &[f64]) -> Result<()> {
        if f.len() != self.cols {
            return Err(Error::DimensionMismatch(
                "scale_columns: factor length".into(),
            ));
        }
        for k in 0..self.values.len() {
            self.values[k] *= f[self.col_idx[k]];
        }
        Ok(())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.values[k];
            }
        }
        m
    }

    /// Iterates stored entries as (row, col, value).
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    /// Checks the CSR structural invariants.
    pub fn check_invariants(&self) -> bool {
        if self.row_ptr.len() != self.rows + 1 || self.row_ptr[0] != 0 {
            return false;
        }
        if *self.row_ptr.last().unwrap() != self.values.len() {
            return false;
        }
        for i in 0..self.rows {
            let r = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
            if !r.windows(2).all(|w| w[0] < w[1]) {
                return false;
            }
        }
        self.values.iter().all(|&v| v != 0.0)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Symmetric eigendecomposition with ascending eigenvalues and orthonormal
/// eigenvector columns.
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn dense_eig_sym(a: &DMatrix<f64>) -> Result<SymEig> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch("dense_eig_sym: square input".into()));
    }
    let scale = a.amax().max(1.0);
    for i in 0..a.nrows() {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidParameter(format!(
                    "dense_eig_sym: input not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig { values, vectors })
}

/// Cached Cholesky factorization of a symmetric positive definite matrix.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Cholesky::new(a)
            .map(|chol| SpdFactor { chol })
            .ok_or_else(|| {
                Error::Factorization(format!(
                    "Cholesky failed on a {n}x{n} matrix; the system is not positive definite"
                ))
            })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = DVector::from_column_slice(b);
        self.chol.solve(&rhs).as_slice().to_vec()
    }
}

/// e^{tM} v by segmented Taylor summation.
///
/// The horizon is split so each segment satisfies ||t M||_1 / s <= 4; within
/// a segment the plain series converges fast and without destructive
/// cancellation. Used as the integrator oracle, so it must stay independent
/// of the Runge-Kutta path.
pub fn dense_expm_apply(m: &DMatrix<f64>, t: f64, v: &[f64]) -> Result<Vec<f64>> {
    if m.nrows() != m.ncols() || m.ncols() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "dense_expm_apply: {}x{} matrix vs vector length {}",
            m.nrows(),
            m.ncols(),
            v.len()
        )));
    }
    if t == 0.0 {
        return Ok(v.to_vec());
    }
    let norm1 = one_norm(m) * t.abs();
    let segments = (norm1 / 4.0).ceil().max(1.0) as usize;
    let dt = t / segments as f64;
    let mut y = DVector::from_column_slice(v);
    let mut term = DVector::zeros(v.len());
    for _ in 0..segments {
        term.copy_from(&y);
        let mut acc = y.clone();
        for k in 1..=120 {
            term = m * &term;
            term *= dt / k as f64;
            acc += &term;
            if term.norm() <= 1e-16 * acc.norm() {
                break;
            }
        }
        y = acc;
    }
    Ok(y.as_slice().to_vec())
}

/// Full dense matrix exponential (Pade scaling-and-squaring).
pub fn dense_expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().exp()
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest eigenvalue of G^T G by power iteration; deterministic start and
/// iteration count so every caller sees the same value.
pub fn gram_norm_sq_estimate(g: &SparseMatrix, iterations: usize) -> f64 {
    let n = g.cols();
    if n == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let gv = g.spmv(&v).expect("dims fixed");
        let av = g.spmv_transpose(&gv).expect("dims fixed");
        let nv = norm(&av);
        if nv == 0.0 {
            return 0.0;
        }
        lambda = dot(&v, &av);
        for (vi, ai) in v.iter_mut().zip(&av) {
            *vi = ai / nv;
        }
    }
    lambda
}
