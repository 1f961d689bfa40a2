//! Dense real-matrix kernels: linear solves, the Laplacian pseudoinverse,
//! the Helmert projection basis and a Lyapunov solver.
//!
//! Everything here is O(n³) dense arithmetic on row-major storage. That is a
//! deliberate trade: the graphs this library targets stay in the low
//! thousands of nodes, where a straightforward Gaussian elimination beats the
//! complexity (and nondeterminism risk) of sparse or iterative machinery.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular to working precision (pivot {pivot:e} at column {col})")]
    Singular { col: usize, pivot: f64 },
    #[error("laplacian pseudoinverse requires a connected graph (defining-identity residual {residual:e})")]
    DisconnectedLaplacian { residual: f64 },
    #[error("orthonormal complement basis requires n >= 2, got {0}")]
    BasisTooSmall(usize),
    #[error("lyapunov sign iteration did not converge within {max_iter} iterations (last step {last_step:e})")]
    LyapunovNonConvergence { max_iter: usize, last_step: f64 },
    #[error("lyapunov sign iteration hit a singular iterate: spectrum touches the imaginary axis")]
    LyapunovSingularIterate,
    #[error("lyapunov residual {residual:e} exceeds tolerance {tol:e}: input matrix is not stable enough")]
    LyapunovResidual { residual: f64, tol: f64 },
    #[error("non-finite entry produced at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Row-major dense matrix over a [`Scalar`] type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        let m = DenseMatrix { rows, cols, data };
        debug_assert!(m.first_non_finite().is_none());
        m
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged row lengths");
        let m = DenseMatrix { rows: r, cols: c, data: rows.into_iter().flatten().collect() };
        assert!(m.first_non_finite().is_none(), "non-finite entry in from_rows");
        m
    }

    /// Column vector (n×1) from a slice.
    pub fn column(values: &[T]) -> Self {
        DenseMatrix { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|x| !x.is_finite())
            .map(|p| (p / self.cols, p % self.cols))
    }

    fn check_finite(&self) -> Result<(), LinalgError> {
        match self.first_non_finite() {
            Some((row, col)) => Err(LinalgError::NonFinite { row, col }),
            None => Ok(()),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Self::zeros(self.rows, other.cols);
        let work = self.rows * self.cols * other.cols;
        if work >= 1 << 22 {
            // Row-parallel: each output row depends on one input row, so the
            // result is bitwise identical to the serial loop.
            use rayon::prelude::*;
            out.data
                .par_chunks_mut(other.cols)
                .enumerate()
                .for_each(|(i, out_row)| matmul_row(self.row(i), other, out_row));
        } else {
            for i in 0..self.rows {
                let (head, tail) = out.data.split_at_mut(i * other.cols);
                let _ = head;
                matmul_row(self.row(i), other, &mut tail[..other.cols]);
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "elementwise shape mismatch");
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Largest absolute entry; zero for an empty matrix.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// ‖a − b‖_max, the entrywise max-norm distance.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.sub(other).max_abs()
    }
}

fn matmul_row<T: Scalar>(lhs_row: &[T], rhs: &DenseMatrix<T>, out_row: &mut [T]) {
    // ikj ordering: stream over rhs rows so the inner loop is contiguous.
    for (k, &a) in lhs_row.iter().enumerate() {
        if a == T::zero() {
            continue;
        }
        for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
            *o += a * b;
        }
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Solve `a · x = b` by Gaussian elimination with partial pivoting. `b` may
/// carry multiple right-hand sides as columns.
pub fn solve_linear_system<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch(format!(
            "coefficient matrix must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.rows() != b.rows() {
        return Err(LinalgError::DimensionMismatch(format!(
            "rhs has {} rows, expected {}",
            b.rows(),
            a.rows()
        )));
    }
    let n = a.rows();
    let k = b.cols();
    let pivot_floor = T::PIVOT_REL_TOL * a.max_abs().max(T::one());
    let mut lu = a.clone();
    let mut x = b.clone();

    for col in 0..n {
        // partial pivot: largest magnitude in the remaining column
        let mut pivot_row = col;
        let mut pivot_mag = lu[(col, col)].abs();
        for r in (col + 1)..n {
            let mag = lu[(r, col)].abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if pivot_mag < pivot_floor {
            return Err(LinalgError::Singular { col, pivot: pivot_mag.to_f64() });
        }
        if pivot_row != col {
            swap_rows(&mut lu, col, pivot_row);
            swap_rows(&mut x, col, pivot_row);
        }
        let pivot = lu[(col, col)];
        for r in (col + 1)..n {
            let factor = lu[(r, col)] / pivot;
            if factor == T::zero() {
                continue;
            }
            lu[(r, col)] = T::zero();
            for c in (col + 1)..n {
                let v = lu[(col, c)];
                lu[(r, c)] -= factor * v;
            }
            for c in 0..k {
                let v = x[(col, c)];
                x[(r, c)] -= factor * v;
            }
        }
    }
    // back substitution
    for col in (0..n).rev() {
        let pivot = lu[(col, col)];
        for c in 0..k {
            let mut acc = x[(col, c)];
            for j in (col + 1)..n {
                acc -= lu[(col, j)] * x[(j, c)];
            }
            x[(col, c)] = acc / pivot;
        }
    }
    x.check_finite()?;
    Ok(x)
}

fn swap_rows<T: Scalar>(m: &mut DenseMatrix<T>, a: usize, b: usize) {
    if a == b {
        return;
    }
    let cols = m.cols();
    let (lo, hi) = (a.min(b), a.max(b));
    let (head, tail) = m.data_mut().split_at_mut(hi * cols);
    head[lo * cols..(lo + 1) * cols].swap_with_slice(&mut tail[..cols]);
}

pub fn inverse<T: Scalar>(a: &DenseMatrix<T>) -> Result<DenseMatrix<T>, LinalgError> {
    solve_linear_system(a, &DenseMatrix::identity(a.rows()))
}

/// Moore–Penrose pseudoinverse of a connected undirected graph's Laplacian,
/// computed with the rank-one shift `(L + (1/n)·𝟙𝟙ᵀ)⁻¹ − (1/n)·𝟙𝟙ᵀ`.
///
/// The shift formula is exact when the kernel of `L` is spanned by 𝟙 alone,
/// i.e. when the graph is connected. A disconnected graph makes the shifted
/// matrix singular (or leaves a large defining-identity residual), and both
/// routes are reported as [`LinalgError::DisconnectedLaplacian`].
pub fn laplacian_pseudoinverse<T: Scalar>(
    l: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>, LinalgError> {
    if !l.is_square() {
        return Err(LinalgError::DimensionMismatch(format!(
            "laplacian must be square, got {}x{}",
            l.rows(),
            l.cols()
        )));
    }
    let n = l.rows();
    let shift = T::one() / T::from_usize(n);
    let shifted = l.add_scalar_all(shift);
    let pinv = match inverse(&shifted) {
        Ok(inv) => inv.add_scalar_all(-shift),
        Err(LinalgError::Singular { .. }) => {
            return Err(LinalgError::DisconnectedLaplacian { residual: f64::INFINITY })
        }
        Err(e) => return Err(e),
    };
    // Defining identity L·L†·L = L; fails for disconnected graphs where the
    // shift formula no longer equals the true pseudoinverse.
    let residual = l.matmul(&pinv).matmul(l).max_abs_diff(l);
    let tol = T::SOLVE_TOL * (T::one() + l.max_abs());
    if residual > tol {
        return Err(LinalgError::DisconnectedLaplacian { residual: residual.to_f64() });
    }
    Ok(pinv)
}

impl<T: Scalar> DenseMatrix<T> {
    fn add_scalar_all(&self, s: T) -> Self {
        self.map(|x| x + s)
    }

    /// `selfᵀ · self` without materializing the transpose.
    pub fn matmul_t_self(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let row = self.row(i);
            for (a_idx, &a) in row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (b_idx, &b) in row.iter().enumerate() {
                    out[(a_idx, b_idx)] += a * b;
                }
            }
        }
        out
    }
}

/// Deterministic (n−1)×n Helmert basis with orthonormal rows spanning 𝟙⊥.
///
/// Row k (1-indexed) is `(1, …, 1, −k, 0, …, 0) / √(k(k+1))` with k leading
/// ones, so `Q Qᵀ = I_{n−1}` and `Qᵀ Q = I − (1/n)𝟙𝟙ᵀ` hold by construction.
pub fn orthonormal_complement_basis<T: Scalar>(
    n: usize,
) -> Result<DenseMatrix<T>, LinalgError> {
    if n < 2 {
        return Err(LinalgError::BasisTooSmall(n));
    }
    let mut q = DenseMatrix::zeros(n - 1, n);
    for k in 1..n {
        let norm = (T::from_usize(k) * T::from_usize(k + 1)).sqrt();
        for j in 0..k {
            q[(k - 1, j)] = T::one() / norm;
        }
        q[(k - 1, k)] = -T::from_usize(k) / norm;
    }
    Ok(q)
}

/// Solve the Lyapunov equation `a·Σ + Σ·aᵀ = I` for a positive-stable `a`
/// (all eigenvalues in the open right half-plane), via the matrix-sign
/// Newton iteration on the block embedding
///
/// ```text
/// Z₀ = [ a  −I ]      sign(Z₀) = [ I  −2Σ ]
///      [ 0  −aᵀ ]                [ 0   −I ]
/// ```
///
/// iterating `Z ← ½(Z + Z⁻¹)` until the step falls below
/// [`Scalar::SIGN_STEP_TOL`]. The defining residual is checked on every
/// return, so an unstable input surfaces as an error instead of a silently
/// wrong Σ.
pub fn lyapunov_solve<T: Scalar>(a: &DenseMatrix<T>) -> Result<DenseMatrix<T>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch(format!(
            "lyapunov input must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    const MAX_ITER: usize = 100;
    let m = a.rows();
    let mut z = DenseMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            z[(i, j)] = a[(i, j)];
            z[(m + i, m + j)] = -a[(j, i)];
        }
        z[(i, m + i)] = -T::one();
    }

    let half = T::from_f64(0.5);
    let mut last_step = f64::INFINITY;
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let z_inv = match inverse(&z) {
            Ok(inv) => inv,
            Err(LinalgError::Singular { .. }) => {
                return Err(LinalgError::LyapunovSingularIterate)
            }
            Err(e) => return Err(e),
        };
        let next = z.add(&z_inv).scale(half);
        let step = next.max_abs_diff(&z);
        z = next;
        last_step = step.to_f64();
        if step <= T::SIGN_STEP_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::LyapunovNonConvergence { max_iter: MAX_ITER, last_step });
    }

    let mut sigma = DenseMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            sigma[(i, j)] = -half * z[(i, m + j)];
        }
    }
    sigma.check_finite()?;

    let residual =
        a.matmul(&sigma).add(&sigma.matmul(&a.transpose())).max_abs_diff(&DenseMatrix::identity(m));
    if residual > T::SOLVE_TOL {
        return Err(LinalgError::LyapunovResidual {
            residual: residual.to_f64(),
            tol: T::SOLVE_TOL.to_f64(),
        });
    }
    Ok(sigma)
}
