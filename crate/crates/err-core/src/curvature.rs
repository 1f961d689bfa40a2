//! Ollivier-Ricci edge curvature via exact Wasserstein-1 transport.
//!
//! κ(u,v) = 1 − W1(μ_u, μ_v)/d(u,v), where μ_v is the uniform measure over
//! the union neighborhood of v with zero self-mass, and the ground metric is
//! the shortest-path hop distance. These conventions (no laziness, union
//! neighbors, symmetrized ground distances for directed graphs) are fixed
//! here as configuration constants so the diagnostic is reproducible.
//!
//! W1 is solved exactly as a min-cost flow with integer-scaled masses, so
//! curvature values carry no LP-solver noise.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{Graph, GraphError, GraphMode, NeighborKind};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum CurvatureError {
    #[error("node {0} is isolated; neighbor measure undefined")]
    IsolatedNode(usize),
    #[error("edge ({0}, {1}) not present")]
    EdgeNotPresent(usize, usize),
    #[error("infinite ground distance from {from} to {to}")]
    InfiniteDistance { from: usize, to: usize },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Probability measure on a small set of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMeasure<T> {
    support: Vec<usize>,
    mass: Vec<T>,
}

impl<T: Scalar> NeighborMeasure<T> {
    pub fn new(support: Vec<usize>, mass: Vec<T>) -> Result<Self, CurvatureError> {
        if support.len() != mass.len() {
            return Err(CurvatureError::InvalidMeasure(format!(
                "support has {} nodes but {} masses",
                support.len(),
                mass.len()
            )));
        }
        let mut seen = support.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(CurvatureError::InvalidMeasure("duplicate support node".into()));
        }
        if mass.iter().any(|&m| m < T::zero()) {
            return Err(CurvatureError::InvalidMeasure("negative mass".into()));
        }
        let total: T = mass.iter().copied().sum();
        if (total - T::one()).abs() > T::from_f64(1e-12) {
            return Err(CurvatureError::InvalidMeasure(format!("masses sum to {total}, not 1")));
        }
        Ok(NeighborMeasure { support, mass })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn mass(&self) -> &[T] {
        &self.mass
    }

    /// Point mass at a single node.
    pub fn dirac(node: usize) -> Self {
        NeighborMeasure { support: vec![node], mass: vec![T::one()] }
    }
}

/// Per-edge curvature values keyed by the graph's canonical edge pairs.
#[derive(Debug, Clone)]
pub struct CurvatureReport<T> {
    pub edge_values: BTreeMap<(usize, usize), T>,
}

/// Uniform measure over the union neighborhood of `v`, with no self-mass.
pub fn neighbor_measure<T: Scalar>(
    g: &Graph,
    v: usize,
) -> Result<NeighborMeasure<T>, CurvatureError> {
    let support = g.neighbors(v, NeighborKind::Union)?;
    if support.is_empty() {
        return Err(CurvatureError::IsolatedNode(v));
    }
    let w = T::one() / T::from_usize(support.len());
    let mass = vec![w; support.len()];
    Ok(NeighborMeasure { support, mass })
}

/// Exact Wasserstein-1 distance between two measures with the hop-distance
/// ground metric of `g` (symmetrized first when `g` is directed, so the
/// metric is finite and symmetric).
pub fn wasserstein1<T: Scalar>(
    g: &Graph,
    mu: &NeighborMeasure<T>,
    nu: &NeighborMeasure<T>,
) -> Result<T, CurvatureError> {
    let ground = match g.mode() {
        GraphMode::Undirected => g.clone(),
        GraphMode::Directed => g.symmetrize(),
    };
    let cost = ground_costs(&ground, mu.support(), nu.support())?;
    Ok(w1_transport(mu, nu, &cost))
}

/// κ(u,v) = 1 − W1(μ_u, μ_v)/d(u,v) for an existing edge.
pub fn ollivier_ricci_edge<T: Scalar>(
    g: &Graph,
    e: (usize, usize),
) -> Result<T, CurvatureError> {
    let (u, v) = e;
    if !g.has_edge(u, v) {
        return Err(CurvatureError::EdgeNotPresent(u, v));
    }
    let ground = match g.mode() {
        GraphMode::Undirected => g.clone(),
        GraphMode::Directed => g.symmetrize(),
    };
    edge_curvature(g, &ground, (u, v))
}

fn edge_curvature<T: Scalar>(
    g: &Graph,
    ground: &Graph,
    (u, v): (usize, usize),
) -> Result<T, CurvatureError> {
    let mu = neighbor_measure::<T>(g, u)?;
    let nu = neighbor_measure::<T>(g, v)?;
    let cost = ground_costs(ground, mu.support(), nu.support())?;
    let w1 = w1_transport(&mu, &nu, &cost);
    // d(u,v) = 1 whenever the (symmetrized) edge exists; kept general for
    // robustness.
    let d = ground
        .shortest_path_distance(u, v)?
        .ok_or(CurvatureError::InfiniteDistance { from: u, to: v })?;
    if d == 0 {
        return Err(CurvatureError::InvalidMeasure("zero-distance edge".into()));
    }
    Ok(T::one() - w1 / T::from_usize(d))
}

/// Curvature for every edge, in canonical edge order.
pub fn curvature_all_edges<T: Scalar>(g: &Graph) -> Result<CurvatureReport<T>, CurvatureError> {
    let ground = match g.mode() {
        GraphMode::Undirected => g.clone(),
        GraphMode::Directed => g.symmetrize(),
    };
    let edges: Vec<(usize, usize)> = g.edges().collect();
    let values: Vec<Result<T, CurvatureError>> = edges
        .par_iter()
        .map(|&e| edge_curvature(g, &ground, e))
        .collect();
    let mut edge_values = BTreeMap::new();
    for (e, value) in edges.into_iter().zip(values) {
        edge_values.insert(e, value?);
    }
    Ok(CurvatureReport { edge_values })
}

/// Hop-distance cost table between two support sets; errors when any pair
/// is mutually unreachable.
fn ground_costs(
    ground: &Graph,
    from: &[usize],
    to: &[usize],
) -> Result<Vec<Vec<usize>>, CurvatureError> {
    let mut cost = Vec::with_capacity(from.len());
    for &s in from {
        let dist = ground.bfs_distances(s).map_err(CurvatureError::Graph)?;
        let mut row = Vec::with_capacity(to.len());
        for &t in to {
            row.push(dist[t].ok_or(CurvatureError::InfiniteDistance { from: s, to: t })?);
        }
        cost.push(row);
    }
    Ok(cost)
}

/// Exact transport cost by successive shortest augmenting paths on the
/// bipartite support graph with integer masses.
fn w1_transport<T: Scalar>(
    mu: &NeighborMeasure<T>,
    nu: &NeighborMeasure<T>,
    cost: &[Vec<usize>],
) -> T {
    let (supply, demand, scale) = integer_masses(mu.mass(), nu.mass());
    let total_cost = min_cost_transport(&supply, &demand, cost);
    T::from_f64(total_cost as f64 / scale as f64)
}

/// Scale both mass vectors to integers summing to the same total.
///
/// Uniform neighbor measures scale exactly by lcm of the support sizes;
/// anything else falls back to a 10⁹ grid with largest-remainder rounding,
/// accurate to the module's 1e-9 tolerance.
fn integer_masses<T: Scalar>(mu: &[T], nu: &[T]) -> (Vec<i64>, Vec<i64>, i64) {
    let exact_scale = lcm(mu.len() as i64, nu.len() as i64);
    if exact_scale <= 1 << 20 {
        let try_exact = |mass: &[T]| -> Option<Vec<i64>> {
            let mut out = Vec::with_capacity(mass.len());
            let mut sum = 0i64;
            for &m in mass {
                let scaled = m.to_f64() * exact_scale as f64;
                let rounded = scaled.round();
                if (scaled - rounded).abs() > 1e-9 * exact_scale as f64 {
                    return None;
                }
                out.push(rounded as i64);
                sum += rounded as i64;
            }
            (sum == exact_scale).then_some(out)
        };
        if let (Some(a), Some(b)) = (try_exact(mu), try_exact(nu)) {
            return (a, b, exact_scale);
        }
    }
    const GRID: i64 = 1_000_000_000;
    (round_to_grid(mu, GRID), round_to_grid(nu, GRID), GRID)
}

/// Floor to the grid, then hand out the leftover units by largest fractional
/// part (ties broken by index) so the rounded masses sum exactly to `grid`.
fn round_to_grid<T: Scalar>(mass: &[T], grid: i64) -> Vec<i64> {
    let scaled: Vec<f64> = mass.iter().map(|&m| m.to_f64() * grid as f64).collect();
    let mut out: Vec<i64> = scaled.iter().map(|&s| s.floor() as i64).collect();
    let deficit = grid - out.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..mass.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = scaled[a] - scaled[a].floor();
        let fb = scaled[b] - scaled[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for k in 0..deficit.max(0) as usize {
        out[order[k % order.len()]] += 1;
    }
    out
}

fn lcm(a: i64, b: i64) -> i64 {
    a / gcd(a, b) * b
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct FlowArc {
    to: usize,
    rev: usize,
    cap: i64,
    cost: i64,
}

/// Min-cost flow on the bipartite transportation network, by SPFA-based
/// successive shortest augmenting paths. Exact for integer data.
fn min_cost_transport(supply: &[i64], demand: &[i64], cost: &[Vec<usize>]) -> i64 {
    let a = supply.len();
    let b = demand.len();
    let n = a + b + 2;
    let (src, dst) = (a + b, a + b + 1);
    let mut adj: Vec<Vec<FlowArc>> = (0..n).map(|_| Vec::new()).collect();
    let add_arc = |adj: &mut Vec<Vec<FlowArc>>, u: usize, v: usize, cap: i64, cost: i64| {
        let (ru, rv) = (adj[u].len(), adj[v].len());
        adj[u].push(FlowArc { to: v, rev: rv, cap, cost });
        adj[v].push(FlowArc { to: u, rev: ru, cap: 0, cost: -cost });
    };
    for (i, &s) in supply.iter().enumerate() {
        add_arc(&mut adj, src, i, s, 0);
    }
    for (j, &d) in demand.iter().enumerate() {
        add_arc(&mut adj, a + j, dst, d, 0);
    }
    for i in 0..a {
        for j in 0..b {
            add_arc(&mut adj, i, a + j, i64::MAX / 4, cost[i][j] as i64);
        }
    }

    let total: i64 = supply.iter().sum();
    let mut pushed = 0i64;
    let mut total_cost = 0i64;
    while pushed < total {
        // SPFA shortest path in the residual network
        let mut dist = vec![i64::MAX; n];
        let mut in_queue = vec![false; n];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
        dist[src] = 0;
        let mut queue = std::collections::VecDeque::from([src]);
        in_queue[src] = true;
        while let Some(u) = queue.pop_front() {
            in_queue[u] = false;
            for (idx, arc) in adj[u].iter().enumerate() {
                if arc.cap > 0 && dist[u] + arc.cost < dist[arc.to] {
                    dist[arc.to] = dist[u] + arc.cost;
                    prev[arc.to] = Some((u, idx));
                    if !in_queue[arc.to] {
                        queue.push_back(arc.to);
                        in_queue[arc.to] = true;
                    }
                }
            }
        }
        assert!(dist[dst] < i64::MAX, "transport network must be feasible");
        // bottleneck along the path
        let mut bottleneck = total - pushed;
        let mut at = dst;
        while let Some((u, idx)) = prev[at] {
            bottleneck = bottleneck.min(adj[u][idx].cap);
            at = u;
        }
        let mut at = dst;
        while let Some((u, idx)) = prev[at] {
            adj[u][idx].cap -= bottleneck;
            let rev = adj[u][idx].rev;
            adj[at][rev].cap += bottleneck;
            at = u;
        }
        pushed += bottleneck;
        total_cost += bottleneck * dist[dst];
    }
    total_cost
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphMode;

    fn ugraph(pairs: &[(usize, usize)], n: usize) -> Graph {
        Graph::from_edge_list(pairs, n, GraphMode::Undirected).unwrap()
    }

    fn k_n(n: usize) -> Graph {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                pairs.push((i, j));
            }
        }
        ugraph(&pairs, n)
    }

    fn c_n(n: usize) -> Graph {
        ugraph(&(0..n).map(|i| (i, (i + 1) % n)).collect::<Vec<_>>(), n)
    }

    #[test]
    fn neighbor_measure_examples() {
        let c4 = c_n(4);
        let m = neighbor_measure::<f64>(&c4, 0).unwrap();
        assert_eq!(m.support(), &[1, 3]);
        assert_eq!(m.mass(), &[0.5, 0.5]);

        let p3 = ugraph(&[(0, 1), (1, 2)], 3);
        let m = neighbor_measure::<f64>(&p3, 0).unwrap();
        assert_eq!(m.support(), &[1]);
        assert_eq!(m.mass(), &[1.0]);

        let k4 = k_n(4);
        let m = neighbor_measure::<f64>(&k4, 0).unwrap();
        assert_eq!(m.support(), &[1, 2, 3]);
        for &w in m.mass() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }

        let lonely = ugraph(&[(0, 1)], 3);
        assert!(matches!(
            neighbor_measure::<f64>(&lonely, 2),
            Err(CurvatureError::IsolatedNode(2))
        ));
    }

    #[test]
    fn measure_validation() {
        assert!(NeighborMeasure::<f64>::new(vec![0, 0], vec![0.5, 0.5]).is_err());
        assert!(NeighborMeasure::<f64>::new(vec![0, 1], vec![0.7, 0.7]).is_err());
        assert!(NeighborMeasure::<f64>::new(vec![0, 1], vec![-0.5, 1.5]).is_err());
        assert!(NeighborMeasure::<f64>::new(vec![0, 1], vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn w1_identity_and_point_masses() {
        let g = c_n(5);
        let mu = neighbor_measure::<f64>(&g, 0).unwrap();
        assert!(wasserstein1(&g, &mu, &mu).unwrap().abs() <= 1e-12);

        let a = NeighborMeasure::<f64>::dirac(0);
        let b = NeighborMeasure::<f64>::dirac(2);
        let w = wasserstein1(&g, &a, &b).unwrap();
        assert!((w - 2.0).abs() <= 1e-12); // d(0, 2) in C5
    }

    #[test]
    fn k3_edge_curvature() {
        let g = k_n(3);
        // mu_0 = {1,2 each 1/2}, mu_1 = {0,2 each 1/2}: half a unit of mass
        // moves one hop, the shared mass at 2 stays put.
        let mu = neighbor_measure::<f64>(&g, 0).unwrap();
        let nu = neighbor_measure::<f64>(&g, 1).unwrap();
        let w = wasserstein1(&g, &mu, &nu).unwrap();
        assert!((w - 0.5).abs() <= 1e-12, "w1 = {w}");
        let kappa = ollivier_ricci_edge::<f64>(&g, (0, 1)).unwrap();
        assert!((kappa - 0.5).abs() <= 1e-12, "kappa = {kappa}");
    }

    #[test]
    fn c4_and_p3_flat_edges() {
        let c4 = c_n(4);
        for e in c4.edges().collect::<Vec<_>>() {
            let k = ollivier_ricci_edge::<f64>(&c4, e).unwrap();
            assert!(k.abs() <= 1e-12, "C4 edge {e:?} has kappa {k}");
        }
        let p3 = ugraph(&[(0, 1), (1, 2)], 3);
        let k = ollivier_ricci_edge::<f64>(&p3, (0, 1)).unwrap();
        assert!(k.abs() <= 1e-12, "P3 edge kappa {k}");
    }

    #[test]
    fn star_edges_equal_by_symmetry() {
        let s4 = ugraph(&[(0, 1), (0, 2), (0, 3)], 4);
        let report = curvature_all_edges::<f64>(&s4).unwrap();
        let vals: Vec<f64> = report.edge_values.values().copied().collect();
        for &v in &vals[1..] {
            assert!((v - vals[0]).abs() <= 1e-12);
        }
    }

    #[test]
    fn vertex_transitive_graphs_have_constant_curvature() {
        for g in [c_n(5), c_n(6), k_n(4), k_n(5)] {
            let report = curvature_all_edges::<f64>(&g).unwrap();
            let vals: Vec<f64> = report.edge_values.values().copied().collect();
            for &v in &vals[1..] {
                assert!((v - vals[0]).abs() <= 1e-9);
            }
            assert!(vals.iter().all(|&v| v <= 1.0 + 1e-12));
        }
    }

    /// Brute-force transport oracle: enumerate every integer transport plan
    /// with the given margins and take the cheapest.
    fn w1_enumeration(mu: &NeighborMeasure<f64>, nu: &NeighborMeasure<f64>, cost: &[Vec<usize>]) -> f64 {
        let (supply, demand, scale) = integer_masses(mu.mass(), nu.mass());
        let mut best = i64::MAX;
        let mut plan = vec![vec![0i64; demand.len()]; supply.len()];
        enumerate_plans(&supply, &demand, cost, &mut plan, 0, 0, &mut best);
        best as f64 / scale as f64
    }

    fn enumerate_plans(
        supply: &[i64],
        demand: &[i64],
        cost: &[Vec<usize>],
        plan: &mut Vec<Vec<i64>>,
        cell: usize,
        cost_so_far: i64,
        best: &mut i64,
    ) {
        let (a, b) = (supply.len(), demand.len());
        if cell == a * b {
            let rows_ok = (0..a).all(|i| plan[i].iter().sum::<i64>() == supply[i]);
            let cols_ok = (0..b).all(|j| (0..a).map(|i| plan[i][j]).sum::<i64>() == demand[j]);
            if rows_ok && cols_ok {
                *best = (*best).min(cost_so_far);
            }
            return;
        }
        let (i, j) = (cell / b, cell % b);
        let row_used: i64 = plan[i][..j].iter().sum();
        let col_used: i64 = (0..i).map(|r| plan[r][j]).sum();
        let max_here = (supply[i] - row_used).min(demand[j] - col_used);
        for f in 0..=max_here.max(0) {
            plan[i][j] = f;
            enumerate_plans(supply, demand, cost, plan, cell + 1, cost_so_far + f * cost[i][j] as i64, best);
        }
        plan[i][j] = 0;
    }

    #[test]
    fn flow_matches_enumeration_oracle() {
        // deterministic pseudo-random sparse graphs, supports <= 4
        let mut state = 0x6a09e667f3bcc908u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let mut checked = 0;
        for _ in 0..12 {
            let n = 8;
            let mut pairs: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
            for u in 0..n {
                for v in (u + 2)..n {
                    if next() % 6 == 0 {
                        pairs.push((u, v));
                    }
                }
            }
            let g = ugraph(&pairs, n);
            for (u, v) in g.edges().collect::<Vec<_>>() {
                let mu = neighbor_measure::<f64>(&g, u).unwrap();
                let nu = neighbor_measure::<f64>(&g, v).unwrap();
                if mu.support().len() > 4 || nu.support().len() > 4 {
                    continue;
                }
                let cost = ground_costs(&g, mu.support(), nu.support()).unwrap();
                let flow = w1_transport(&mu, &nu, &cost);
                let brute = w1_enumeration(&mu, &nu, &cost);
                assert!((flow - brute).abs() <= 1e-9, "edge ({u},{v}): {flow} vs {brute}");
                checked += 1;
            }
        }
        assert!(checked >= 20, "oracle exercised only {checked} edges");
    }

    #[test]
    fn w1_is_symmetric_and_triangular() {
        let g = ugraph(&[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)], 4);
        let measures: Vec<NeighborMeasure<f64>> =
            (0..4).map(|v| neighbor_measure(&g, v).unwrap()).collect();
        for a in 0..4 {
            for b in 0..4 {
                let ab = wasserstein1(&g, &measures[a], &measures[b]).unwrap();
                let ba = wasserstein1(&g, &measures[b], &measures[a]).unwrap();
                assert!((ab - ba).abs() <= 1e-9, "symmetry ({a},{b})");
                for c in 0..4 {
                    let ac = wasserstein1(&g, &measures[a], &measures[c]).unwrap();
                    let cb = wasserstein1(&g, &measures[c], &measures[b]).unwrap();
                    assert!(ab <= ac + cb + 1e-9, "triangle ({a},{c},{b})");
                }
            }
        }
    }

    #[test]
    fn directed_mode_uses_union_neighbors_and_symmetrized_distances() {
        let g = Graph::from_edge_list(&[(0, 1), (1, 2)], 3, GraphMode::Directed).unwrap();
        let m1 = neighbor_measure::<f64>(&g, 1).unwrap();
        assert_eq!(m1.support(), &[0, 2]);
        // same κ as the undirected P3 edge
        let k = ollivier_ricci_edge::<f64>(&g, (0, 1)).unwrap();
        assert!(k.abs() <= 1e-12, "kappa = {k}");
        // report covers both stored edges
        let report = curvature_all_edges::<f64>(&g).unwrap();
        assert_eq!(report.edge_values.len(), 2);
    }

    #[test]
    fn mismatched_supports_still_exact() {
        // non-uniform-compatible sizes: lcm path with supports 2 and 3
        let g = ugraph(&[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)], 5);
        let mu = neighbor_measure::<f64>(&g, 0).unwrap(); // 3 neighbors
        let nu = neighbor_measure::<f64>(&g, 3).unwrap(); // 2 neighbors
        let cost = ground_costs(&g, mu.support(), nu.support()).unwrap();
        let flow = w1_transport(&mu, &nu, &cost);
        let brute = w1_enumeration(&mu, &nu, &cost);
        assert!((flow - brute).abs() <= 1e-9);
    }
}
