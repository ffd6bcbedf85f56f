use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Batches of samples are stored one sample per column, so a mini-batch of
/// `m` vectors of dimension `d` is a `d × m` matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting empty shapes, length
    /// mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Validation(format!(
                "matrix shape must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Validation(format!(
                "data length {} does not match shape {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "entry ({}, {}) is {}",
                pos / cols,
                pos % cols,
                data[pos]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Like [`Matrix::new`] but without validation. Shape must be consistent.
    pub(crate) fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_vec(rows, cols, data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|row| row.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != c {
                return Err(Error::Validation(format!(
                    "row {i} has length {}, expected {c}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    /// Square matrix with `diag` on the diagonal.
    pub fn diag_embed(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · other`, checking conformability.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(gemm(self, false, other, false))
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul: inner dimensions differ");
        gemm(self, true, other, false)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t: inner dimensions differ");
        gemm(self, false, other, true)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn trace(&self) -> Result<f64> {
        if !self.is_square() {
            return Err(Error::Validation(format!(
                "trace of non-square {}x{} matrix",
                self.rows, self.cols
            )));
        }
        Ok((0..self.rows).map(|i| self[(i, i)]).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn diag_extract(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// Frobenius inner product `tr(selfᵀ other)`.
    pub fn dot(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "dot: shapes differ");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        self.map(|v| alpha * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "elementwise op: shapes differ");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }

    /// `(self + selfᵀ) / 2`.
    pub fn symmetrize(&self) -> Matrix {
        assert!(self.is_square());
        let n = self.rows;
        Matrix::from_fn(n, n, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    /// Largest `|a_ij − a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_lower_triangular(&self) -> bool {
        (0..self.rows).all(|i| ((i + 1)..self.cols).all(|j| self[(i, j)] == 0.0))
    }

    /// Mean of each row.
    pub fn row_means(&self) -> Vec<f64> {
        let inv = 1.0 / self.cols as f64;
        (0..self.rows).map(|i| self.row(i).iter().sum::<f64>() * inv).collect()
    }

    /// Sum of each row.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum::<f64>()).collect()
    }

    /// Subtracts `v[i]` from every entry of row `i`.
    pub fn sub_row_vector(&self, v: &[f64]) -> Matrix {
        assert_eq!(v.len(), self.rows);
        let mut out = self.clone();
        for (i, &vi) in v.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|x| *x -= vi);
        }
        out
    }

    /// Adds `v[i]` to every entry of row `i`.
    pub fn add_row_vector(&self, v: &[f64]) -> Matrix {
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        self.sub_row_vector(&neg)
    }

    /// Multiplies row `i` by `v[i]`.
    pub fn scale_rows(&self, v: &[f64]) -> Matrix {
        assert_eq!(v.len(), self.rows);
        let mut out = self.clone();
        for (i, &vi) in v.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|x| *x *= vi);
        }
        out
    }

    /// Copy of rows `start..start + count`.
    pub fn row_block(&self, start: usize, count: usize) -> Matrix {
        assert!(start + count <= self.rows);
        Matrix::from_vec(
            count,
            self.cols,
            self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        )
    }

    /// Overwrites rows `start..start + block.rows()` with `block`.
    pub fn set_row_block(&mut self, start: usize, block: &Matrix) {
        assert_eq!(block.cols, self.cols);
        assert!(start + block.rows <= self.rows);
        let c = self.cols;
        self.data[start * c..(start + block.rows) * c].copy_from_slice(&block.data);
    }

    /// Copy of the square diagonal block starting at `(start, start)`.
    pub fn diag_block(&self, start: usize, size: usize) -> Matrix {
        Matrix::from_fn(size, size, |i, j| self[(start + i, start + j)])
    }

    /// Copy of columns `start..start + count`.
    pub fn col_block(&self, start: usize, count: usize) -> Matrix {
        assert!(start + count <= self.cols);
        Matrix::from_fn(self.rows, count, |i, j| self[(i, start + j)])
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hstack(blocks: &[Matrix]) -> Matrix {
        let rows = blocks[0].rows;
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for b in blocks {
            assert_eq!(b.rows, rows);
            for i in 0..rows {
                out.data[i * cols + offset..i * cols + offset + b.cols].copy_from_slice(b.row(i));
            }
            offset += b.cols;
        }
        out
    }

    /// Block-diagonal matrix assembled from square blocks.
    pub fn block_diag(blocks: &[Matrix]) -> Matrix {
        let n = blocks.iter().map(|b| b.rows).sum();
        let mut out = Matrix::zeros(n, n);
        let mut offset = 0;
        for b in blocks {
            assert!(b.is_square());
            for i in 0..b.rows {
                for j in 0..b.cols {
                    out[(offset + i, offset + j)] = b[(i, j)];
                }
            }
            offset += b.rows;
        }
        out
    }

    /// `(1/m) X Xᵀ` for a `d × m` matrix.
    pub fn gram(&self) -> Matrix {
        let mut g = self.matmul_t(self);
        let inv = 1.0 / self.cols as f64;
        g.data.iter_mut().for_each(|v| *v *= inv);
        g.symmetrize()
    }

    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += value;
        }
    }
}

/// Checked matmul as a free function.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

pub fn transpose(a: &Matrix) -> Matrix {
    a.transpose()
}

pub fn trace(a: &Matrix) -> Result<f64> {
    a.trace()
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.frobenius_norm()
}

pub fn diag_extract(a: &Matrix) -> Vec<f64> {
    a.diag_extract()
}

pub fn diag_embed(diag: &[f64]) -> Matrix {
    Matrix::diag_embed(diag)
}

fn gemm(a: &Matrix, a_t: bool, b: &Matrix, b_t: bool) -> Matrix {
    let (m, k) = if a_t { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if b_t { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2);
    let mut c = Matrix::zeros(m, n);
    let (rsa, csa) = if a_t { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if b_t { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides describe the row-major buffers of `a`, `b` and `c`
    // exactly and the extents were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

// Operator impls panic on shape mismatch; use `matmul` for a checked product.

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols,
            rhs.rows,
            "matmul: {:?} x {:?}",
            self.shape(),
            rhs.shape()
        );
        gemm(self, false, rhs, false)
    }
}

impl Mul<f64> for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: f64) -> Matrix {
        self.scale(rhs)
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Neg for &Matrix {
    type Output = Matrix;

    fn neg(self) -> Matrix {
        self.map(|v| -v)
    }
}

impl AddAssign<&Matrix> for Matrix {
    fn add_assign(&mut self, rhs: &Matrix) {
        assert_eq!(self.shape(), rhs.shape());
        self.data.iter_mut().zip(&rhs.data).for_each(|(a, b)| *a += b);
    }
}

impl SubAssign<&Matrix> for Matrix {
    fn sub_assign(&mut self, rhs: &Matrix) {
        assert_eq!(self.shape(), rhs.shape());
        self.data.iter_mut().zip(&rhs.data).for_each(|(a, b)| *a -= b);
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for v in self.row(i) {
                write!(f, "{v:>12.8} ")?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let a = m(&[&[2.0, 1.0], &[1.0, 2.0]]);
        assert_eq!(Matrix::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn trace_and_norm() {
        assert_eq!(m(&[&[3.0, 9.0], &[9.0, 1.0]]).trace().unwrap(), 4.0);
        assert_eq!(m(&[&[3.0, 4.0], &[0.0, 0.0]]).frobenius_norm(), 5.0);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        match a.matmul(&b) {
            Err(Error::DimensionMismatch { left, right, .. }) => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(a.trace().is_err());
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Matrix::new(0, 2, vec![]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn transposed_products_agree() {
        let a = Matrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64 * 0.1 - 0.7);
        let b = Matrix::from_fn(3, 4, |i, j| (i + 2 * j) as f64 * 0.3 - 1.0);
        assert_eq!(a.t_matmul(&b), &a.transpose() * &b);
        let c = Matrix::from_fn(4, 5, |i, j| (i as f64 - j as f64).sin());
        assert_eq!(a.matmul_t(&c), &a * &c.transpose());
    }

    #[test]
    fn diag_roundtrip() {
        let d = vec![1.0, -2.0, 3.5];
        assert_eq!(Matrix::diag_embed(&d).diag_extract(), d);
    }

    #[test]
    fn blocks() {
        let a = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let top = a.row_block(0, 2);
        let bottom = a.row_block(2, 2);
        let mut b = Matrix::zeros(4, 3);
        b.set_row_block(0, &top);
        b.set_row_block(2, &bottom);
        assert_eq!(a, b);
        assert_eq!(Matrix::hstack(&[a.col_block(0, 1), a.col_block(1, 2)]), a);
    }
}
