//! Resistance-guided graph rewiring with a from-scratch GNN training engine
//! and representation diagnostics.
//!
//! Numerical code is generic over the [`Scalar`] float type; the aliases at
//! the crate root pin the `f64` instantiations most callers want.

pub mod curvature;
pub mod dataset;
pub mod diagnostics;
pub mod gnn;
pub mod graph;
pub mod linalg;
pub mod pipeline;
pub mod resistance;
pub mod rewiring;
pub mod scalar;

pub use graph::{Graph, GraphError, GraphMode, NeighborKind, SccDecomposition};
pub use linalg::{DenseMatrix, LinalgError};
pub use scalar::Scalar;

/// Dense `f64` matrix, the concrete type the library is specified against.
pub type Mat = DenseMatrix<f64>;

/// Pairwise effective-resistance report over `f64`.
pub type ResistanceReport = resistance::ResistanceReport<f64>;

/// Per-edge Ollivier-Ricci curvature report over `f64`.
pub type CurvatureReport = curvature::CurvatureReport<f64>;

/// A loaded dataset with `f64` features.
pub type Dataset = dataset::Dataset<f64>;

/// Training configuration over `f64`.
pub type GnnConfig = gnn::GnnConfig<f64>;

/// Training report over `f64`.
pub type TrainReport = gnn::TrainReport<f64>;
