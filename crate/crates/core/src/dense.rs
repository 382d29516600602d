//! Dense matrices used as oracles and for small reduced systems.

use std::ops::{Index, IndexMut};

use faer::linalg::solvers::DenseSolveCore;
use faer::{Accum, Mat, Par, Side};

use crate::error::{Error, Result};

/// Real dense matrix. Thin wrapper over [`faer::Mat`] so the rest of the crate
/// does not depend on faer's API directly.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix(pub(crate) Mat<f64>);

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(Mat::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self(Mat::identity(n, n))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self(Mat::from_fn(rows, cols, f))
    }

    /// Builds from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Ok(Self::from_fn(rows, cols, |i, j| entries[i * cols + j]))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 })
    }

    /// Column vector.
    pub fn column(v: &[f64]) -> Self {
        Self::from_fn(v.len(), 1, |i, _| v[i])
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose().to_owned())
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols() != rhs.rows() {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        let mut out = Mat::zeros(self.rows(), rhs.cols());
        faer::linalg::matmul::matmul(out.as_mut(), Accum::Replace, self.0.as_ref(), rhs.0.as_ref(), 1.0, Par::Seq);
        Ok(Self(out))
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols() != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.cols()
            )));
        }
        let mut y = vec![0.0; self.rows()];
        for j in 0..self.cols() {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            let col = self.0.col_as_slice(j);
            for (yi, a) in y.iter_mut().zip(col) {
                *yi += a * xj;
            }
        }
        Ok(y)
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.rows() != other.rows() || self.cols() != other.cols() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows(),
                self.cols(),
                other.rows(),
                other.cols()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self(&self.0 + &other.0))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self(&self.0 - &other.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(self.rows(), self.cols(), |i, j| s * self.0[(i, j)])
    }

    /// Subtracts the identity in place (square matrices only).
    pub fn sub_identity(mut self) -> Self {
        let k = self.rows().min(self.cols());
        for i in 0..k {
            self.0[(i, i)] -= 1.0;
        }
        self
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.cols() {
            for &v in self.0.col_as_slice(j) {
                m = m.max(v.abs());
            }
        }
        m
    }

    pub fn frobenius(&self) -> f64 {
        let mut s = 0.0;
        for j in 0..self.cols() {
            for &v in self.0.col_as_slice(j) {
                s += v * v;
            }
        }
        s.sqrt()
    }

    /// Max-abs entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        let mut m = 0.0f64;
        for j in 0..self.cols() {
            for (a, b) in self.0.col_as_slice(j).iter().zip(other.0.col_as_slice(j)) {
                m = m.max((a - b).abs());
            }
        }
        Ok(m)
    }

    /// Max-abs entry of `self - I`.
    pub fn max_abs_from_identity(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.cols() {
            for (i, &v) in self.0.col_as_slice(j).iter().enumerate() {
                let t = if i == j { v - 1.0 } else { v };
                m = m.max(t.abs());
            }
        }
        m
    }

    /// Frobenius norm of `self - I`.
    pub fn frobenius_from_identity(&self) -> f64 {
        let mut s = 0.0;
        for j in 0..self.cols() {
            for (i, &v) in self.0.col_as_slice(j).iter().enumerate() {
                let t = if i == j { v - 1.0 } else { v };
                s += t * t;
            }
        }
        s.sqrt()
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.rows() {
            for j in 0..i {
                m = m.max((self.0[(i, j)] - self.0[(j, i)]).abs());
            }
        }
        m
    }

    /// Entrywise `self <= other + tol`.
    pub fn entrywise_le(&self, other: &Self, tol: f64) -> Result<bool> {
        self.check_same_shape(other)?;
        for j in 0..self.cols() {
            for (a, b) in self.0.col_as_slice(j).iter().zip(other.0.col_as_slice(j)) {
                if *a > *b + tol {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows().min(self.cols())).map(|i| self.0[(i, i)]).sum()
    }

    /// Inverse of a symmetric positive-definite matrix via Cholesky.
    pub fn spd_inverse(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch("inverse of a non-square matrix".into()));
        }
        let llt = self
            .0
            .llt(Side::Lower)
            .map_err(|e| Error::Factorization(format!("Cholesky: {e:?}")))?;
        Ok(Self(llt.inverse()))
    }

    /// Eigenvalues of a symmetric matrix, ascending.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<f64>> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch("eigenvalues of a non-square matrix".into()));
        }
        self.0
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Factorization(format!("symmetric eigensolver: {e:?}")))
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kronecker(&self, other: &Self) -> Self {
        let (p, q) = (other.rows(), other.cols());
        Self::from_fn(self.rows() * p, self.cols() * q, |r, c| {
            self.0[(r / p, c / q)] * other.0[(r % p, c % q)]
        })
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, idx: (usize, usize)) -> &mut f64 {
        &mut self.0[idx]
    }
}

/// Partition of `total` rows or columns into consecutive blocks.
fn partition_offsets(parts: &[usize], total: usize, what: &str) -> Result<Vec<usize>> {
    let mut offs = Vec::with_capacity(parts.len() + 1);
    let mut acc = 0;
    for &p in parts {
        offs.push(acc);
        acc += p;
    }
    offs.push(acc);
    if acc != total {
        return Err(Error::DimensionMismatch(format!(
            "{what} partition sums to {acc} but the matrix has {total}"
        )));
    }
    Ok(offs)
}

/// Khatri–Rao product of two conformally partitioned matrices: block `(i, j)`
/// of the result is `A_ij ⊗ B_ij`.
///
/// Partition sizes may be zero; the corresponding block row or column of the
/// result is then empty.
pub fn khatri_rao(
    a: &DenseMatrix,
    row_parts_a: &[usize],
    col_parts_a: &[usize],
    b: &DenseMatrix,
    row_parts_b: &[usize],
    col_parts_b: &[usize],
) -> Result<DenseMatrix> {
    if row_parts_a.len() != row_parts_b.len() || col_parts_a.len() != col_parts_b.len() {
        return Err(Error::DimensionMismatch(format!(
            "partition counts differ: A is {}x{} blocks, B is {}x{} blocks",
            row_parts_a.len(),
            col_parts_a.len(),
            row_parts_b.len(),
            col_parts_b.len()
        )));
    }
    let ra = partition_offsets(row_parts_a, a.rows(), "row (A)")?;
    let ca = partition_offsets(col_parts_a, a.cols(), "column (A)")?;
    let rb = partition_offsets(row_parts_b, b.rows(), "row (B)")?;
    let cb = partition_offsets(col_parts_b, b.cols(), "column (B)")?;

    let out_rows: Vec<usize> = row_parts_a.iter().zip(row_parts_b).map(|(m, p)| m * p).collect();
    let out_cols: Vec<usize> = col_parts_a.iter().zip(col_parts_b).map(|(n, q)| n * q).collect();
    let ro = partition_offsets(&out_rows, out_rows.iter().sum(), "row (out)")?;
    let co = partition_offsets(&out_cols, out_cols.iter().sum(), "column (out)")?;

    let mut out = DenseMatrix::zeros(ro[ro.len() - 1], co[co.len() - 1]);
    for bi in 0..row_parts_a.len() {
        let (m, p) = (row_parts_a[bi], row_parts_b[bi]);
        for bj in 0..col_parts_a.len() {
            let (nn, q) = (col_parts_a[bj], col_parts_b[bj]);
            for r in 0..m * p {
                let (ar, br) = (ra[bi] + r / p, rb[bi] + r % p);
                for c in 0..nn * q {
                    let (ac, bc) = (ca[bj] + c / q, cb[bj] + c % q);
                    out.0[(ro[bi] + r, co[bj] + c)] = a.0[(ar, ac)] * b.0[(br, bc)];
                }
            }
        }
    }
    Ok(out)
}
