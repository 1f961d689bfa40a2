//! Effective resistance in undirected and directed modes, resistance per
//! hop, and the admissible pair set used by the rewiring operators.
//!
//! Undirected resistance uses the Laplacian pseudoinverse once per graph and
//! reads every pair in O(1). Directed resistance generalizes through the
//! projected out-Laplacian: per strongly connected component, solve the
//! Lyapunov equation `L̄Σ + ΣL̄ᵀ = I` and evaluate the quadratic form of
//! `X = 2QᵀΣQ`. Pairs in different SCCs have no finite directed resistance
//! and are simply absent from the report.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{Graph, GraphError, GraphMode, SccDecomposition};
use crate::linalg::{
    laplacian_pseudoinverse, lyapunov_solve, orthonormal_complement_basis, DenseMatrix,
    LinalgError,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ResistanceError {
    #[error("operation requires {expected:?} mode, graph is {actual:?}")]
    WrongMode { expected: GraphMode, actual: GraphMode },
    #[error("graph is disconnected; effective resistance needs a connected graph")]
    Disconnected,
    #[error("lyapunov solve failed on SCC {scc_index} ({scc_size} nodes): {source}")]
    Lyapunov { scc_index: usize, scc_size: usize, source: LinalgError },
    #[error("zero hop distance for distinct pair ({0}, {1})")]
    ZeroDistance(usize, usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResistanceScope {
    AllPairs,
    WithinScc,
}

/// Pairwise resistance values. Undirected reports hold one entry per
/// unordered pair (key `(i, j)` with `i < j`); directed reports hold both
/// ordered copies of each within-SCC pair.
#[derive(Debug, Clone)]
pub struct ResistanceReport<T> {
    pub mode: GraphMode,
    pub scope: ResistanceScope,
    pub pair_values: BTreeMap<(usize, usize), T>,
    pub scc: Option<SccDecomposition>,
}

impl<T: Scalar> ResistanceReport<T> {
    /// Value for a pair, canonicalizing the key in undirected mode. `None`
    /// when the pair is absent (different SCCs, or `i == j`).
    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        let key = match self.mode {
            GraphMode::Undirected => (i.min(j), i.max(j)),
            GraphMode::Directed => (i, j),
        };
        self.pair_values.get(&key).copied()
    }
}

/// Effective resistance for every pair, dispatching on graph mode.
pub fn effective_resistance<T: Scalar>(g: &Graph) -> Result<ResistanceReport<T>, ResistanceError> {
    match g.mode() {
        GraphMode::Undirected => effective_resistance_undirected(g),
        GraphMode::Directed => effective_resistance_directed(g),
    }
}

/// `R_ij = (e_i − e_j)ᵀ L† (e_i − e_j)` over all unordered pairs of a
/// connected undirected graph.
pub fn effective_resistance_undirected<T: Scalar>(
    g: &Graph,
) -> Result<ResistanceReport<T>, ResistanceError> {
    if g.mode() != GraphMode::Undirected {
        return Err(ResistanceError::WrongMode {
            expected: GraphMode::Undirected,
            actual: g.mode(),
        });
    }
    if !g.is_connected() {
        return Err(ResistanceError::Disconnected);
    }
    let n = g.n_nodes();
    let pinv = match laplacian_pseudoinverse(&laplacian::<T>(g)) {
        Ok(p) => p,
        Err(LinalgError::DisconnectedLaplacian { .. }) => return Err(ResistanceError::Disconnected),
        Err(e) => return Err(e.into()),
    };
    let mut pair_values = BTreeMap::new();
    for i in 0..n {
        for j in (i + 1)..n {
            pair_values.insert((i, j), quadratic_form(&pinv, i, j));
        }
    }
    Ok(ResistanceReport {
        mode: GraphMode::Undirected,
        scope: ResistanceScope::AllPairs,
        pair_values,
        scc: None,
    })
}

/// Directed effective resistance, computed independently on each SCC's
/// induced subgraph and evaluated for every ordered within-SCC pair.
pub fn effective_resistance_directed<T: Scalar>(
    g: &Graph,
) -> Result<ResistanceReport<T>, ResistanceError> {
    if g.mode() != GraphMode::Directed {
        return Err(ResistanceError::WrongMode {
            expected: GraphMode::Directed,
            actual: g.mode(),
        });
    }
    let scc = g.strongly_connected_components();
    // SCC solves are independent; merge in component order for determinism.
    let per_scc: Vec<Result<Vec<((usize, usize), T)>, ResistanceError>> = scc
        .components
        .par_iter()
        .enumerate()
        .map(|(scc_index, comp)| scc_pair_values(g, scc_index, comp))
        .collect();
    let mut pair_values = BTreeMap::new();
    for result in per_scc {
        pair_values.extend(result?);
    }
    Ok(ResistanceReport {
        mode: GraphMode::Directed,
        scope: ResistanceScope::WithinScc,
        pair_values,
        scc: Some(scc),
    })
}

fn scc_pair_values<T: Scalar>(
    g: &Graph,
    scc_index: usize,
    comp: &[usize],
) -> Result<Vec<((usize, usize), T)>, ResistanceError> {
    let m = comp.len();
    if m < 2 {
        return Ok(Vec::new());
    }
    // induced subgraph out-Laplacian on local indices (comp is sorted)
    let mut l = DenseMatrix::<T>::zeros(m, m);
    for (a, &u) in comp.iter().enumerate() {
        for (b, &v) in comp.iter().enumerate() {
            if a != b && g.has_edge(u, v) {
                l[(a, b)] = -T::one();
                l[(a, a)] += T::one();
            }
        }
    }
    let q = orthonormal_complement_basis::<T>(m)?;
    let l_bar = q.matmul(&l).matmul(&q.transpose());
    let sigma = lyapunov_solve(&l_bar).map_err(|source| ResistanceError::Lyapunov {
        scc_index,
        scc_size: m,
        source,
    })?;
    let x = q.transpose().matmul(&sigma).matmul(&q).scale(T::from_f64(2.0));
    let mut out = Vec::with_capacity(m * (m - 1));
    for a in 0..m {
        for b in 0..m {
            if a != b {
                out.push(((comp[a], comp[b]), quadratic_form(&x, a, b)));
            }
        }
    }
    Ok(out)
}

/// `(e_i − e_j)ᵀ M (e_i − e_j)`, clamped at zero to keep tiny negative
/// rounding out of the report. Symmetric in `(i, j)` by construction.
fn quadratic_form<T: Scalar>(m: &DenseMatrix<T>, i: usize, j: usize) -> T {
    (m[(i, i)] + m[(j, j)] - m[(i, j)] - m[(j, i)]).max(T::zero())
}

fn laplacian<T: Scalar>(g: &Graph) -> DenseMatrix<T> {
    let n = g.n_nodes();
    let mut l = DenseMatrix::zeros(n, n);
    for (u, v) in g.edges() {
        l[(u, v)] -= T::one();
        l[(u, u)] += T::one();
        if g.mode() == GraphMode::Undirected {
            l[(v, u)] -= T::one();
            l[(v, v)] += T::one();
        }
    }
    l
}

/// `R_hop = R / d(i, j)` with BFS hop distances that respect edge direction.
/// Pairs whose distance is unreachable are dropped (cannot happen within an
/// SCC, so in practice nothing is dropped).
pub fn resistance_per_hop<T: Scalar>(
    report: &ResistanceReport<T>,
    g: &Graph,
) -> Result<ResistanceReport<T>, ResistanceError> {
    let sources: BTreeSet<usize> = report.pair_values.keys().map(|&(i, _)| i).collect();
    let mut dist: BTreeMap<usize, Vec<Option<usize>>> = BTreeMap::new();
    for i in sources {
        dist.insert(i, g.bfs_distances(i)?);
    }
    let mut pair_values = BTreeMap::new();
    for (&(i, j), &r) in &report.pair_values {
        match dist[&i][j] {
            Some(0) => return Err(ResistanceError::ZeroDistance(i, j)),
            Some(d) => {
                pair_values.insert((i, j), r / T::from_usize(d));
            }
            None => {}
        }
    }
    Ok(ResistanceReport {
        mode: report.mode,
        scope: report.scope,
        pair_values,
        scc: report.scc.clone(),
    })
}

/// Admissible pair set Ω: all unordered distinct pairs for undirected
/// graphs; all ordered distinct pairs inside a common SCC for directed
/// graphs.
pub fn admissible_pairs(g: &Graph) -> BTreeSet<(usize, usize)> {
    let n = g.n_nodes();
    let mut pairs = BTreeSet::new();
    match g.mode() {
        GraphMode::Undirected => {
            for i in 0..n {
                for j in (i + 1)..n {
                    pairs.insert((i, j));
                }
            }
        }
        GraphMode::Directed => {
            let scc = g.strongly_connected_components();
            for comp in &scc.components {
                for &i in comp {
                    for &j in comp {
                        if i != j {
                            pairs.insert((i, j));
                        }
                    }
                }
            }
        }
    }
    pairs
}
