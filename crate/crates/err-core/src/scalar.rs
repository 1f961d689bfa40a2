//! Scalar abstraction for the numerical kernels.
//!
//! Everything downstream of [`crate::linalg::DenseMatrix`] is generic over a
//! floating-point scalar. The per-type tolerance constants exist because a
//! residual bound that is comfortable in f64 is unreachable in f32; the f64
//! constants are the ones the library is specified and tested against.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Floating-point scalar usable by the dense kernels, the rewiring scores,
/// the GNN engine and the diagnostics.
pub trait Scalar:
    Float + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
    /// Residual tolerance for linear solves and defining-identity checks.
    const SOLVE_TOL: Self;
    /// Step tolerance for the matrix-sign Newton iteration.
    const SIGN_STEP_TOL: Self;
    /// Relative pivot threshold for Gaussian elimination.
    const PIVOT_REL_TOL: Self;
    /// Smallest admissible PairNorm denominator before embeddings count as collapsed.
    const COLLAPSE_TOL: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_usize(x: usize) -> Self {
        Self::from_f64(x as f64)
    }
}

impl Scalar for f64 {
    const SOLVE_TOL: Self = 1e-8;
    const SIGN_STEP_TOL: Self = 1e-12;
    const PIVOT_REL_TOL: Self = 1e-12;
    const COLLAPSE_TOL: Self = 1e-12;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    const SOLVE_TOL: Self = 1e-3;
    const SIGN_STEP_TOL: Self = 1e-6;
    const PIVOT_REL_TOL: Self = 1e-6;
    const COLLAPSE_TOL: Self = 1e-6;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}
