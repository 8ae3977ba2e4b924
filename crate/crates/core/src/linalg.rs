//! Small dense row-major matrices and a Cholesky solver.
//!
//! Block sizes in this model are tiny (d, K², m), so a straightforward
//! dense implementation is all that is needed.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from row-major data; `None` when the length does not match.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
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
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Sum of squared entries, i.e. tr(M Mᵀ).
    pub fn frobenius_sq(&self) -> T {
        crate::scalar::squared_norm(&self.data)
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|r| (0..r).all(|c| (self[(r, c)] - self[(c, r)]).abs() <= tol))
    }

    /// `y = M x`.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| crate::scalar::dot(self.row(r), x)).collect()
    }

    /// `xᵀ M x` for square M.
    pub fn quad_form(&self, x: &[T]) -> T {
        crate::scalar::dot(x, &self.mul_vec(x))
    }

    /// Adds `alpha · w wᵀ` in place.
    pub fn add_outer(&mut self, alpha: T, w: &[T]) {
        debug_assert!(self.rows == w.len() && self.cols == w.len());
        for (r, &wr) in w.iter().enumerate() {
            if wr == T::zero() {
                continue;
            }
            let scale = alpha * wr;
            for (dst, &wc) in self.row_mut(r).iter_mut().zip(w) {
                *dst += scale * wc;
            }
        }
    }

    pub fn add_diagonal(&mut self, value: T) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += value;
        }
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * alpha).collect() }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factorizes `a`; `None` if `a` is not (numerically) positive definite.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn new(a: &Matrix<T>) -> Option<Self> {
        let n = a.rows();
        if a.cols() != n {
            return None;
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > T::zero()) || !diag.is_finite() {
                return None;
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut v = a[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / ljj;
            }
        }
        Some(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut v = y[i];
            for k in 0..i {
                v -= l[(i, k)] * y[k];
            }
            y[i] = v / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut v = y[i];
            for k in (i + 1)..n {
                v -= l[(k, i)] * y[k];
            }
            y[i] = v / l[(i, i)];
        }
        y
    }
}
