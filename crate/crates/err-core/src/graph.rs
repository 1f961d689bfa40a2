//! Simple-graph representation with directed/undirected modes, BFS,
//! strongly connected components and the structure-preservation predicates
//! used by the rewiring operators.
//!
//! Edges are stored in an ordered set of canonical pairs (undirected pairs
//! are normalized to `u < v`) alongside sorted per-node adjacency lists, so
//! every iteration order — and therefore every argmax/argmin tie scan built
//! on top — is deterministic.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("node index {node} out of range for graph with {n_nodes} nodes")]
    NodeOutOfRange { node: usize, n_nodes: usize },
    #[error("self-loop ({0}, {0}) is not allowed")]
    SelfLoop(usize),
    #[error("graph must have at least one node")]
    EmptyGraph,
    #[error("edge ({0}, {1}) not present")]
    EdgeNotPresent(usize, usize),
    #[error("edge ({0}, {1}) already present")]
    EdgeAlreadyPresent(usize, usize),
    #[error("operation requires {expected:?} mode, graph is {actual:?}")]
    WrongMode { expected: GraphMode, actual: GraphMode },
    #[error("malformed edge list: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    Directed,
    Undirected,
}

/// Which adjacency to report for a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborKind {
    In,
    Out,
    Union,
}

/// Simple graph: no self-loops, no duplicate edges. In undirected mode the
/// stored pair is canonical (`u < v`) and membership is symmetric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_nodes: usize,
    mode: GraphMode,
    edges: BTreeSet<(usize, usize)>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
}

impl Graph {
    /// Build a graph from an edge list, deduplicating pairs.
    ///
    /// Undirected mode canonicalizes each pair, so `(u, v)` and `(v, u)`
    /// collapse to one edge. Rejects self-loops and out-of-range indices.
    pub fn from_edge_list(
        pairs: &[(usize, usize)],
        n_nodes: usize,
        mode: GraphMode,
    ) -> Result<Self, GraphError> {
        if n_nodes == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let mut g = Graph {
            n_nodes,
            mode,
            edges: BTreeSet::new(),
            out_adj: vec![Vec::new(); n_nodes],
            in_adj: vec![Vec::new(); n_nodes],
        };
        for &(u, v) in pairs {
            g.check_node(u)?;
            g.check_node(v)?;
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            let key = g.canonical(u, v);
            if g.edges.insert(key) {
                g.link(key.0, key.1);
            }
        }
        Ok(g)
    }

    pub fn empty(n_nodes: usize, mode: GraphMode) -> Result<Self, GraphError> {
        Self::from_edge_list(&[], n_nodes, mode)
    }

    fn check_node(&self, v: usize) -> Result<(), GraphError> {
        if v >= self.n_nodes {
            return Err(GraphError::NodeOutOfRange { node: v, n_nodes: self.n_nodes });
        }
        Ok(())
    }

    fn canonical(&self, u: usize, v: usize) -> (usize, usize) {
        match self.mode {
            GraphMode::Directed => (u, v),
            GraphMode::Undirected => (u.min(v), u.max(v)),
        }
    }

    fn link(&mut self, u: usize, v: usize) {
        insert_sorted(&mut self.out_adj[u], v);
        insert_sorted(&mut self.in_adj[v], u);
        if self.mode == GraphMode::Undirected {
            insert_sorted(&mut self.out_adj[v], u);
            insert_sorted(&mut self.in_adj[u], v);
        }
    }

    fn unlink(&mut self, u: usize, v: usize) {
        remove_sorted(&mut self.out_adj[u], v);
        remove_sorted(&mut self.in_adj[v], u);
        if self.mode == GraphMode::Undirected {
            remove_sorted(&mut self.out_adj[v], u);
            remove_sorted(&mut self.in_adj[u], v);
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn is_directed(&self) -> bool {
        self.mode == GraphMode::Directed
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Stored (canonical) edges in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u != v
            && u < self.n_nodes
            && v < self.n_nodes
            && self.edges.contains(&self.canonical(u, v))
    }

    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<(), GraphError> {
        self.check_node(u)?;
        self.check_node(v)?;
        if u == v {
            return Err(GraphError::SelfLoop(u));
        }
        let key = self.canonical(u, v);
        if !self.edges.insert(key) {
            return Err(GraphError::EdgeAlreadyPresent(u, v));
        }
        self.link(key.0, key.1);
        Ok(())
    }

    pub fn remove_edge(&mut self, u: usize, v: usize) -> Result<(), GraphError> {
        let key = self.canonical(u, v);
        if !self.edges.remove(&key) {
            return Err(GraphError::EdgeNotPresent(u, v));
        }
        self.unlink(key.0, key.1);
        Ok(())
    }

    /// Neighbors of `v` as a sorted list. For undirected graphs all three
    /// kinds coincide; `Union` is in ∪ out for directed graphs.
    pub fn neighbors(&self, v: usize, kind: NeighborKind) -> Result<Vec<usize>, GraphError> {
        self.check_node(v)?;
        Ok(match (self.mode, kind) {
            (GraphMode::Undirected, _) | (GraphMode::Directed, NeighborKind::Out) => {
                self.out_adj[v].clone()
            }
            (GraphMode::Directed, NeighborKind::In) => self.in_adj[v].clone(),
            (GraphMode::Directed, NeighborKind::Union) => {
                merge_sorted(&self.out_adj[v], &self.in_adj[v])
            }
        })
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.out_adj[v].len()
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_adj[v].len()
    }

    /// BFS hop distances from `source`, following edge direction in directed
    /// mode. `None` marks unreachable nodes; `dist[source] == Some(0)`.
    pub fn bfs_distances(&self, source: usize) -> Result<Vec<Option<usize>>, GraphError> {
        self.check_node(source)?;
        let mut dist = vec![None; self.n_nodes];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &w in &self.out_adj[u] {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        Ok(dist)
    }

    /// Shortest-path hop distance from `i` to `j`; `None` when unreachable.
    pub fn shortest_path_distance(&self, i: usize, j: usize) -> Result<Option<usize>, GraphError> {
        self.check_node(j)?;
        Ok(self.bfs_distances(i)?[j])
    }

    /// Is every node reachable from every other, ignoring edge direction?
    /// (For directed graphs this is weak connectivity.)
    pub fn is_connected(&self) -> bool {
        if self.n_nodes == 0 {
            return true;
        }
        let mut seen = vec![false; self.n_nodes];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &w in self.out_adj[u].iter().chain(self.in_adj[u].iter()) {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n_nodes
    }

    /// Strongly connected components (connected components in undirected
    /// mode). Components are ordered by their smallest node index and each
    /// component lists its nodes in ascending order.
    pub fn strongly_connected_components(&self) -> SccDecomposition {
        let raw = match self.mode {
            GraphMode::Directed => self.tarjan_components(),
            GraphMode::Undirected => self.undirected_components(),
        };
        SccDecomposition::from_components(self, raw)
    }

    fn undirected_components(&self) -> Vec<Vec<usize>> {
        let mut comp = vec![usize::MAX; self.n_nodes];
        let mut components = Vec::new();
        for start in 0..self.n_nodes {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = components.len();
            comp[start] = id;
            let mut nodes = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &w in &self.out_adj[u] {
                    if comp[w] == usize::MAX {
                        comp[w] = id;
                        nodes.push(w);
                        queue.push_back(w);
                    }
                }
            }
            components.push(nodes);
        }
        components
    }

    /// Iterative Tarjan; recursion would overflow on long path-like graphs.
    fn tarjan_components(&self) -> Vec<Vec<usize>> {
        const UNSET: usize = usize::MAX;
        let n = self.n_nodes;
        let mut index = vec![UNSET; n];
        let mut lowlink = vec![UNSET; n];
        let mut on_stack = vec![false; n];
        let mut stack: Vec<usize> = Vec::new();
        let mut next_index = 0usize;
        let mut components = Vec::new();
        // call stack frames: (node, next child position)
        let mut frames: Vec<(usize, usize)> = Vec::new();

        for root in 0..n {
            if index[root] != UNSET {
                continue;
            }
            frames.push((root, 0));
            index[root] = next_index;
            lowlink[root] = next_index;
            next_index += 1;
            stack.push(root);
            on_stack[root] = true;

            while let Some(&mut (v, ref mut child)) = frames.last_mut() {
                if *child < self.out_adj[v].len() {
                    let w = self.out_adj[v][*child];
                    *child += 1;
                    if index[w] == UNSET {
                        index[w] = next_index;
                        lowlink[w] = next_index;
                        next_index += 1;
                        stack.push(w);
                        on_stack[w] = true;
                        frames.push((w, 0));
                    } else if on_stack[w] {
                        lowlink[v] = lowlink[v].min(index[w]);
                    }
                } else {
                    frames.pop();
                    if let Some(&(parent, _)) = frames.last() {
                        lowlink[parent] = lowlink[parent].min(lowlink[v]);
                    }
                    if lowlink[v] == index[v] {
                        let mut comp = Vec::new();
                        while let Some(w) = stack.pop() {
                            on_stack[w] = false;
                            comp.push(w);
                            if w == v {
                                break;
                            }
                        }
                        components.push(comp);
                    }
                }
            }
        }
        components
    }

    /// True iff removing `e` keeps its endpoints mutually reachable in the
    /// undirected sense, i.e. `e` is not a bridge.
    pub fn removal_preserves_connectivity(&self, e: (usize, usize)) -> Result<bool, GraphError> {
        if self.mode != GraphMode::Undirected {
            return Err(GraphError::WrongMode {
                expected: GraphMode::Undirected,
                actual: self.mode,
            });
        }
        let (u, v) = e;
        if !self.has_edge(u, v) {
            return Err(GraphError::EdgeNotPresent(u, v));
        }
        // BFS from u to v skipping the edge under test.
        let mut seen = vec![false; self.n_nodes];
        seen[u] = true;
        let mut queue = VecDeque::from([u]);
        while let Some(x) = queue.pop_front() {
            for &w in &self.out_adj[x] {
                if (x == u && w == v) || (x == v && w == u) {
                    continue;
                }
                if w == v {
                    return Ok(true);
                }
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        Ok(false)
    }

    /// True iff removing directed edge `e` leaves the SCC containing both
    /// endpoints intact. An edge whose endpoints already lie in different
    /// SCCs cannot split anything and reports `true`.
    pub fn removal_preserves_scc(&self, e: (usize, usize)) -> Result<bool, GraphError> {
        if self.mode != GraphMode::Directed {
            return Err(GraphError::WrongMode {
                expected: GraphMode::Directed,
                actual: self.mode,
            });
        }
        let (u, v) = e;
        if !self.has_edge(u, v) {
            return Err(GraphError::EdgeNotPresent(u, v));
        }
        let scc = self.strongly_connected_components();
        if scc.component_id[u] != scc.component_id[v] {
            return Ok(true);
        }
        // A simple path v -> u never uses (u, v), so mutual reachability after
        // removal reduces to: can u still reach v?
        let mut seen = vec![false; self.n_nodes];
        seen[u] = true;
        let mut queue = VecDeque::from([u]);
        while let Some(x) = queue.pop_front() {
            for &w in &self.out_adj[x] {
                if x == u && w == v {
                    continue;
                }
                if w == v {
                    return Ok(true);
                }
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        Ok(false)
    }

    /// Undirected graph whose edge set is the canonicalized edge set of a
    /// directed graph (antiparallel pairs collapse to one edge).
    pub fn symmetrize(&self) -> Graph {
        match self.mode {
            GraphMode::Undirected => self.clone(),
            GraphMode::Directed => {
                let pairs: Vec<(usize, usize)> = self.edges.iter().copied().collect();
                Graph::from_edge_list(&pairs, self.n_nodes, GraphMode::Undirected)
                    .expect("edges of a valid graph stay valid under symmetrization")
            }
        }
    }
}

/// Partition of the nodes into strongly connected components plus the edge
/// set of the condensation (edges between component ids).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SccDecomposition {
    pub component_id: Vec<usize>,
    pub components: Vec<Vec<usize>>,
    pub condensation_edges: BTreeSet<(usize, usize)>,
}

impl SccDecomposition {
    fn from_components(g: &Graph, mut components: Vec<Vec<usize>>) -> Self {
        for comp in &mut components {
            comp.sort_unstable();
        }
        components.sort_by_key(|c| c[0]);
        let mut component_id = vec![0usize; g.n_nodes()];
        for (id, comp) in components.iter().enumerate() {
            for &v in comp {
                component_id[v] = id;
            }
        }
        let mut condensation_edges = BTreeSet::new();
        for (u, v) in g.edges() {
            let (cu, cv) = (component_id[u], component_id[v]);
            if cu != cv {
                condensation_edges.insert((cu, cv));
                if g.mode() == GraphMode::Undirected {
                    condensation_edges.insert((cv, cu));
                }
            }
        }
        SccDecomposition { component_id, components, condensation_edges }
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn same_component(&self, u: usize, v: usize) -> bool {
        self.component_id[u] == self.component_id[v]
    }
}

fn insert_sorted(list: &mut Vec<usize>, v: usize) {
    if let Err(pos) = list.binary_search(&v) {
        list.insert(pos, v);
    }
}

fn remove_sorted(list: &mut Vec<usize>, v: usize) {
    if let Ok(pos) = list.binary_search(&v) {
        list.remove(pos);
    }
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        out.push(next);
    }
    out
}

/// Result of parsing the edge-list text format. Self-loops in the raw input
/// are dropped rather than rejected; the count is surfaced so callers can
/// log it.
#[derive(Debug, Clone)]
pub struct ParsedGraph {
    pub graph: Graph,
    pub self_loops_dropped: usize,
}

/// Parse the edge-list text format:
///
/// ```text
/// # nodes=N directed={0|1}
/// u v
/// ...
/// ```
///
/// The header line is required. Later lines starting with `#` are comments.
pub fn parse_edge_list(text: &str) -> Result<ParsedGraph, GraphError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| GraphError::Parse("empty input, expected header".into()))?;
    let (n_nodes, mode) = parse_header(header)?;
    let mut pairs = Vec::new();
    let mut self_loops_dropped = 0usize;
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse_id = |tok: Option<&str>| -> Result<usize, GraphError> {
            tok.ok_or_else(|| GraphError::Parse(format!("line {}: expected \"u v\"", lineno + 2)))?
                .parse::<usize>()
                .map_err(|e| GraphError::Parse(format!("line {}: {}", lineno + 2, e)))
        };
        let u = parse_id(it.next())?;
        let v = parse_id(it.next())?;
        if it.next().is_some() {
            return Err(GraphError::Parse(format!(
                "line {}: trailing tokens after \"u v\"",
                lineno + 2
            )));
        }
        if u == v {
            self_loops_dropped += 1;
            continue;
        }
        pairs.push((u, v));
    }
    let graph = Graph::from_edge_list(&pairs, n_nodes, mode)?;
    Ok(ParsedGraph { graph, self_loops_dropped })
}

fn parse_header(header: &str) -> Result<(usize, GraphMode), GraphError> {
    let body = header
        .strip_prefix('#')
        .ok_or_else(|| GraphError::Parse("header must start with '#'".into()))?;
    let mut n_nodes = None;
    let mut directed = None;
    for tok in body.split_whitespace() {
        if let Some(v) = tok.strip_prefix("nodes=") {
            n_nodes = Some(
                v.parse::<usize>()
                    .map_err(|e| GraphError::Parse(format!("bad nodes= value: {e}")))?,
            );
        } else if let Some(v) = tok.strip_prefix("directed=") {
            directed = Some(match v {
                "0" => false,
                "1" => true,
                other => {
                    return Err(GraphError::Parse(format!(
                        "bad directed= value: {other} (expected 0 or 1)"
                    )))
                }
            });
        } else {
            return Err(GraphError::Parse(format!("unexpected header token: {tok}")));
        }
    }
    let n_nodes = n_nodes.ok_or_else(|| GraphError::Parse("header missing nodes=N".into()))?;
    let directed =
        directed.ok_or_else(|| GraphError::Parse("header missing directed={0|1}".into()))?;
    Ok((n_nodes, if directed { GraphMode::Directed } else { GraphMode::Undirected }))
}

/// Serialize a graph in the edge-list text format, edges in canonical order.
pub fn write_edge_list(g: &Graph) -> String {
    let mut out = format!(
        "# nodes={} directed={}\n",
        g.n_nodes(),
        if g.is_directed() { 1 } else { 0 }
    );
    for (u, v) in g.edges() {
        out.push_str(&format!("{u} {v}\n"));
    }
    out
}
