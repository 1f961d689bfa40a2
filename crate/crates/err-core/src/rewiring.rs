//! Budgeted add/remove rewiring driven by effective resistance (or its
//! per-hop variant), plus the curvature baseline.
//!
//! One iteration = one addition step and, for the add-and-remove strategies,
//! one removal step on freshly recomputed scores. The budget counts added
//! edges only: `B = floor(r · E₀)`, a two-edge neighbor-bridge addition
//! consumes two units and the run stops early rather than overshoot. Skipped
//! additions perform no removal, so `removed_count` never exceeds
//! `added_count`.
//!
//! Every decision (argmax, argmin, candidate choice) breaks ties by smallest
//! lexicographic node pair, which makes whole runs reproducible
//! byte-for-byte in the edit log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curvature::{curvature_all_edges, ollivier_ricci_edge, CurvatureError};
use crate::graph::{Graph, GraphError, GraphMode, NeighborKind};
use crate::resistance::{effective_resistance, resistance_per_hop, ResistanceError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum RewiringError {
    #[error("budget_fraction must lie in [0, 1], got {0}")]
    InvalidBudget(f64),
    #[error("admissible pair set is empty; nothing to rewire")]
    EmptyAdmissibleSet,
    #[error(transparent)]
    Resistance(#[from] ResistanceError),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("rewiring aborted at iteration {t} after {} edits: {source}", state.edits.len())]
    Aborted { t: usize, state: Box<RewiringState>, source: Box<RewiringError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ResistanceAddRemove,
    ResistanceHopAddRemove,
    ResistanceAddOnly,
    ResistanceHopAddOnly,
    CurvatureAddRemove,
    None,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::ResistanceAddRemove,
        Strategy::ResistanceHopAddRemove,
        Strategy::ResistanceAddOnly,
        Strategy::ResistanceHopAddOnly,
        Strategy::CurvatureAddRemove,
        Strategy::None,
    ];

    pub fn removes(self) -> bool {
        matches!(
            self,
            Strategy::ResistanceAddRemove
                | Strategy::ResistanceHopAddRemove
                | Strategy::CurvatureAddRemove
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ResistanceAddRemove => "resistance_add_remove",
            Strategy::ResistanceHopAddRemove => "resistance_hop_add_remove",
            Strategy::ResistanceAddOnly => "resistance_add_only",
            Strategy::ResistanceHopAddOnly => "resistance_hop_add_only",
            Strategy::CurvatureAddRemove => "curvature_add_remove",
            Strategy::None => "none",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewiringConfig {
    pub strategy: Strategy,
    pub budget_fraction: f64,
    /// Reserved for future stochastic strategies; every current strategy is
    /// fully deterministic.
    pub seed: u64,
}

impl RewiringConfig {
    pub fn validate(&self) -> Result<(), RewiringError> {
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return Err(RewiringError::InvalidBudget(self.budget_fraction));
        }
        Ok(())
    }

    pub fn budget(&self, initial_edges: usize) -> usize {
        (self.budget_fraction * initial_edges as f64).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditAction {
    Add,
    AddPair,
    Remove,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub t: usize,
    pub action: EditAction,
    pub edges: Vec<(usize, usize)>,
    pub score: Option<f64>,
    pub reason: String,
}

/// Rewired graph plus the full, replayable edit history.
#[derive(Debug, Clone)]
pub struct RewiringState {
    pub graph: Graph,
    pub edits: Vec<EditRecord>,
    pub added_count: usize,
    pub removed_count: usize,
}

/// Addition decision for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum AdditionPlan<T> {
    /// The argmax pair is absent: add it directly.
    Single { edge: (usize, usize), score: T },
    /// The argmax pair is already an edge: bridge the two endpoints into
    /// each other's neighborhoods with two new edges.
    Pair { edges: [(usize, usize); 2], argmax: (usize, usize), score: T },
}

impl<T> AdditionPlan<T> {
    pub fn budget_units(&self) -> usize {
        match self {
            AdditionPlan::Single { .. } => 1,
            AdditionPlan::Pair { .. } => 2,
        }
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        match self {
            AdditionPlan::Single { edge, .. } => vec![*edge],
            AdditionPlan::Pair { edges, .. } => edges.to_vec(),
        }
    }
}

/// Pick this iteration's addition: the maximum-score admissible pair if it
/// is absent (Case 1), otherwise two edges joining the pair's endpoints to
/// each other's neighborhoods, chosen to minimize the summed score of the
/// new edges (Case 2). Ties break on the smallest lexicographic pair.
///
/// Scores within [`Scalar::SOLVE_TOL`] of each other count as tied, so that
/// mathematically equal values (automorphic pairs) keep their lexicographic
/// resolution despite solver rounding.
pub fn select_addition<T: Scalar>(
    g: &Graph,
    scores: &BTreeMap<(usize, usize), T>,
) -> Result<Option<AdditionPlan<T>>, RewiringError> {
    if scores.is_empty() {
        return Err(RewiringError::EmptyAdmissibleSet);
    }
    // argmax over the admissible set; BTreeMap iteration is ascending and an
    // update requires clearing the tie tolerance, so the lexicographically
    // smallest member of the top tie group wins.
    let mut argmax: Option<((usize, usize), T)> = None;
    for (&pair, &s) in scores.iter() {
        let better = match &argmax {
            None => true,
            Some((_, bs)) => s > *bs + T::SOLVE_TOL,
        };
        if better {
            argmax = Some((pair, s));
        }
    }
    let ((u, v), score) = argmax.expect("non-empty scores");

    if !g.has_edge(u, v) {
        return Ok(Some(AdditionPlan::Single { edge: (u, v), score }));
    }

    // Case 2: n_u ∈ 𝒩(u), n_v ∈ 𝒩(v); candidate edges (u, n_v) and (v, n_u)
    // must be absent non-loops with defined scores.
    let lookup = |a: usize, b: usize| -> Option<T> {
        let key = match g.mode() {
            GraphMode::Undirected => (a.min(b), a.max(b)),
            GraphMode::Directed => (a, b),
        };
        scores.get(&key).copied()
    };
    let n_u_candidates = g.neighbors(u, NeighborKind::Union)?;
    let n_v_candidates = g.neighbors(v, NeighborKind::Union)?;
    let mut best: Option<([(usize, usize); 2], T)> = None;
    for &n_u in &n_u_candidates {
        for &n_v in &n_v_candidates {
            if n_v == u || n_u == v || g.has_edge(u, n_v) || g.has_edge(v, n_u) {
                continue;
            }
            let (s1, s2) = match (lookup(u, n_v), lookup(v, n_u)) {
                (Some(a), Some(b)) => (a, b),
                _ => continue,
            };
            let sum = s1 + s2;
            // improvement must clear the tie tolerance, keeping the first
            // (n_u, n_v) in ascending order on ties
            if best.as_ref().map_or(true, |&(_, bs)| sum < bs - T::SOLVE_TOL) {
                best = Some(([(u, n_v), (v, n_u)], sum));
            }
        }
    }
    Ok(best.map(|(edges, _)| AdditionPlan::Pair { edges, argmax: (u, v), score }))
}

/// Pick this iteration's removal: scan current edges in ascending score
/// order (lexicographic tie-break) and return the first one whose removal
/// preserves connectivity (undirected) or its SCC (directed). Edges without
/// a score (directed cross-SCC edges) are not candidates.
pub fn select_removal<T: Scalar>(
    g: &Graph,
    scores: &BTreeMap<(usize, usize), T>,
) -> Option<((usize, usize), T)> {
    let mut candidates: Vec<((usize, usize), T)> = g
        .edges()
        .filter_map(|e| scores.get(&e).map(|&s| (e, s)))
        .collect();
    sort_with_tie_groups(&mut candidates, true);
    first_removable(g, candidates.into_iter())
}

/// Sort candidates by score (ascending or descending), then re-sort each
/// run of scores within [`Scalar::SOLVE_TOL`] of its head lexicographically,
/// so rounding noise cannot reorder mathematically tied entries.
fn sort_with_tie_groups<T: Scalar>(candidates: &mut [((usize, usize), T)], ascending: bool) {
    candidates.sort_by(|a, b| {
        let ord = a.1.partial_cmp(&b.1).unwrap();
        (if ascending { ord } else { ord.reverse() }).then(a.0.cmp(&b.0))
    });
    let mut i = 0;
    while i < candidates.len() {
        let head = candidates[i].1;
        let mut j = i + 1;
        while j < candidates.len() && (candidates[j].1 - head).abs() <= T::SOLVE_TOL {
            j += 1;
        }
        candidates[i..j].sort_by(|a, b| a.0.cmp(&b.0));
        i = j;
    }
}

fn first_removable<T: Scalar>(
    g: &Graph,
    candidates: impl Iterator<Item = ((usize, usize), T)>,
) -> Option<((usize, usize), T)> {
    for (e, s) in candidates {
        let ok = match g.mode() {
            GraphMode::Undirected => g
                .removal_preserves_connectivity(e)
                .expect("candidate edge exists"),
            GraphMode::Directed => g.removal_preserves_scc(e).expect("candidate edge exists"),
        };
        if ok {
            return Some((e, s));
        }
    }
    None
}

/// Strategy score map over the admissible pair set of the current graph.
fn strategy_scores<T: Scalar>(
    g: &Graph,
    strategy: Strategy,
) -> Result<BTreeMap<(usize, usize), T>, RewiringError> {
    let report = effective_resistance::<T>(g)?;
    match strategy {
        Strategy::ResistanceAddRemove | Strategy::ResistanceAddOnly => Ok(report.pair_values),
        Strategy::ResistanceHopAddRemove | Strategy::ResistanceHopAddOnly => {
            Ok(resistance_per_hop(&report, g)?.pair_values)
        }
        Strategy::CurvatureAddRemove | Strategy::None => {
            unreachable!("strategy {strategy} does not use resistance scores")
        }
    }
}

/// Run the full rewiring procedure for any strategy. `Strategy::None`
/// returns the untouched graph; the curvature baseline dispatches to
/// [`curvature_rewire`].
pub fn err_rewire<T: Scalar>(
    g0: &Graph,
    cfg: &RewiringConfig,
) -> Result<RewiringState, RewiringError> {
    cfg.validate()?;
    match cfg.strategy {
        Strategy::None => Ok(RewiringState {
            graph: g0.clone(),
            edits: Vec::new(),
            added_count: 0,
            removed_count: 0,
        }),
        Strategy::CurvatureAddRemove => curvature_rewire::<T>(g0, cfg),
        _ => run_loop(g0, cfg, &ResistancePlanner::<T> {
            strategy: cfg.strategy,
            _marker: std::marker::PhantomData,
        }),
    }
}

/// SDRF-style curvature baseline: target the most negatively curved edge,
/// add the neighborhood edge that raises its curvature the most, then remove
/// the maximum-curvature edge that passes the preservation predicate.
pub fn curvature_rewire<T: Scalar>(
    g0: &Graph,
    cfg: &RewiringConfig,
) -> Result<RewiringState, RewiringError> {
    cfg.validate()?;
    run_loop(g0, cfg, &CurvaturePlanner::<T> { _marker: std::marker::PhantomData })
}

/// One strategy's decision rules, so the budget/termination loop is shared.
trait StepPlanner<T: Scalar> {
    fn addition(&self, g: &Graph) -> Result<Option<PlannedAddition>, RewiringError>;
    fn removal(&self, g: &Graph) -> Result<Option<PlannedRemoval>, RewiringError>;
}

struct PlannedAddition {
    action: EditAction,
    edges: Vec<(usize, usize)>,
    score: f64,
    reason: String,
}

struct PlannedRemoval {
    edge: (usize, usize),
    score: f64,
    reason: String,
}

struct ResistancePlanner<T> {
    strategy: Strategy,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> StepPlanner<T> for ResistancePlanner<T> {
    fn addition(&self, g: &Graph) -> Result<Option<PlannedAddition>, RewiringError> {
        let scores = strategy_scores::<T>(g, self.strategy)?;
        Ok(select_addition(g, &scores)?.map(|plan| match plan {
            AdditionPlan::Single { edge, score } => PlannedAddition {
                action: EditAction::Add,
                edges: vec![edge],
                score: score.to_f64(),
                reason: format!("pair ({}, {}) maximizes score", edge.0, edge.1),
            },
            AdditionPlan::Pair { edges, argmax, score } => PlannedAddition {
                action: EditAction::AddPair,
                edges: edges.to_vec(),
                score: score.to_f64(),
                reason: format!(
                    "pair ({}, {}) already linked; bridging via neighbors",
                    argmax.0, argmax.1
                ),
            },
        }))
    }

    fn removal(&self, g: &Graph) -> Result<Option<PlannedRemoval>, RewiringError> {
        let scores = strategy_scores::<T>(g, self.strategy)?;
        Ok(select_removal(g, &scores).map(|(edge, score)| PlannedRemoval {
            edge,
            score: score.to_f64(),
            reason: "minimum-score removable edge".into(),
        }))
    }
}

struct CurvaturePlanner<T> {
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> StepPlanner<T> for CurvaturePlanner<T> {
    fn addition(&self, g: &Graph) -> Result<Option<PlannedAddition>, RewiringError> {
        let report = curvature_all_edges::<T>(g)?;
        // most negatively curved edge; ascending map iteration plus the tie
        // tolerance keeps the lexicographically first minimum
        let mut target: Option<((usize, usize), T)> = None;
        for (&e, &k) in report.edge_values.iter() {
            let better = match &target {
                None => true,
                Some((_, bk)) => k < *bk - T::SOLVE_TOL,
            };
            if better {
                target = Some((e, k));
            }
        }
        let Some(((u, v), _)) = target else {
            return Ok(None);
        };
        let mut best: Option<((usize, usize), T)> = None;
        for &i in &g.neighbors(u, NeighborKind::Union)? {
            for &j in &g.neighbors(v, NeighborKind::Union)? {
                if i == j || g.has_edge(i, j) {
                    continue;
                }
                let mut trial = g.clone();
                trial.add_edge(i, j)?;
                let kappa = ollivier_ricci_edge::<T>(&trial, (u, v))?;
                if best.as_ref().map_or(true, |&(_, bk)| kappa > bk + T::SOLVE_TOL) {
                    best = Some(((i, j), kappa));
                }
            }
        }
        Ok(best.map(|(edge, kappa)| PlannedAddition {
            action: EditAction::Add,
            edges: vec![edge],
            score: kappa.to_f64(),
            reason: format!("raises curvature of edge ({u}, {v})"),
        }))
    }

    fn removal(&self, g: &Graph) -> Result<Option<PlannedRemoval>, RewiringError> {
        let report = curvature_all_edges::<T>(g)?;
        let mut candidates: Vec<((usize, usize), T)> =
            report.edge_values.into_iter().collect();
        // maximum curvature first, lexicographic pair on ties
        sort_with_tie_groups(&mut candidates, false);
        Ok(first_removable(g, candidates.into_iter()).map(|(edge, score)| PlannedRemoval {
            edge,
            score: score.to_f64(),
            reason: "maximum-curvature removable edge".into(),
        }))
    }
}

fn run_loop<T: Scalar>(
    g0: &Graph,
    cfg: &RewiringConfig,
    planner: &dyn StepPlanner<T>,
) -> Result<RewiringState, RewiringError> {
    let budget = cfg.budget(g0.edge_count());
    let removes = cfg.strategy.removes();
    let mut state = RewiringState {
        graph: g0.clone(),
        edits: Vec::new(),
        added_count: 0,
        removed_count: 0,
    };
    let mut consecutive_skips = 0usize;
    let mut t = 0usize;
    loop {
        if state.added_count >= budget || t >= 2 * budget {
            break;
        }
        let plan = match planner.addition(&state.graph) {
            Ok(p) => p,
            Err(e) => return Err(abort(t, state, e)),
        };
        let applied = match plan {
            None => {
                state.edits.push(EditRecord {
                    t,
                    action: EditAction::Skip,
                    edges: Vec::new(),
                    score: None,
                    reason: "no valid addition candidate".into(),
                });
                consecutive_skips += 1;
                if consecutive_skips >= 2 {
                    break;
                }
                false
            }
            Some(add) => {
                let units = if add.action == EditAction::AddPair { 2 } else { 1 };
                if state.added_count + units > budget {
                    state.edits.push(EditRecord {
                        t,
                        action: EditAction::Skip,
                        edges: add.edges,
                        score: Some(add.score),
                        reason: "addition needs 2 budget units, 1 remaining".into(),
                    });
                    break;
                }
                for &(a, b) in &add.edges {
                    if let Err(e) = state.graph.add_edge(a, b) {
                        return Err(abort(t, state, e.into()));
                    }
                }
                state.edits.push(EditRecord {
                    t,
                    action: add.action,
                    edges: add.edges,
                    score: Some(add.score),
                    reason: add.reason,
                });
                state.added_count += units;
                consecutive_skips = 0;
                true
            }
        };
        if applied && removes {
            match planner.removal(&state.graph) {
                Ok(Some(rm)) => {
                    if let Err(e) = state.graph.remove_edge(rm.edge.0, rm.edge.1) {
                        return Err(abort(t, state, e.into()));
                    }
                    state.edits.push(EditRecord {
                        t,
                        action: EditAction::Remove,
                        edges: vec![rm.edge],
                        score: Some(rm.score),
                        reason: rm.reason,
                    });
                    state.removed_count += 1;
                }
                Ok(None) => {
                    state.edits.push(EditRecord {
                        t,
                        action: EditAction::Skip,
                        edges: Vec::new(),
                        score: None,
                        reason: "no removable edge".into(),
                    });
                }
                Err(e) => return Err(abort(t, state, e)),
            }
        }
        t += 1;
    }
    Ok(state)
}

fn abort(t: usize, state: RewiringState, source: RewiringError) -> RewiringError {
    RewiringError::Aborted { t, state: Box::new(state), source: Box::new(source) }
}

/// Apply an edit log to a starting graph; the result must equal the graph a
/// rewiring run ended with.
pub fn replay_edits(g0: &Graph, edits: &[EditRecord]) -> Result<Graph, RewiringError> {
    let mut g = g0.clone();
    for edit in edits {
        match edit.action {
            EditAction::Add | EditAction::AddPair => {
                for &(u, v) in &edit.edges {
                    g.add_edge(u, v)?;
                }
            }
            EditAction::Remove => {
                for &(u, v) in &edit.edges {
                    g.remove_edge(u, v)?;
                }
            }
            EditAction::Skip => {}
        }
    }
    Ok(g)
}
