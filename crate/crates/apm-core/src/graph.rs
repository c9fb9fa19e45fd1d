//! Observed-outcome-overlap graph and identification diagnostics.
//!
//! Cohorts are nodes; an edge between two distinct cohorts means their
//! overlapping observed outcomes span `r` factor dimensions. At diagnosis
//! time the factor matrix is unknown, so the default edge rule is the
//! overlap-count criterion `|T_c1 ∩ T_c2| >= r`, which is necessary in
//! general and sufficient when the factor vectors are in general position.
//! An optional basis-aware mode re-checks edges with an estimated basis.
//!
//! Connectivity of this graph governs which cohort outcome means are
//! identified; disconnected graphs restrict estimation to the target's
//! component. Two auxiliary graphs (the unit-outcome bipartite graph and the
//! outcome-outcome "check" graph) reproduce the connectivity criteria used
//! by fixed-effects identification arguments; for rank one all three agree.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::numerical_rank;
use crate::panel::CohortIndex;
use crate::scalar::{real, Scalar};

/// Default relative singular-value tolerance for basis-aware edge checks.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Cohort overlap graph for a given factor rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapGraph {
    n_cohorts: usize,
    r: usize,
    adjacency: Vec<bool>,
    overlap_counts: Vec<usize>,
}

impl OverlapGraph {
    /// Number of cohort nodes.
    pub fn n_cohorts(&self) -> usize {
        self.n_cohorts
    }

    /// Factor rank the edge rule was evaluated at.
    pub fn rank(&self) -> usize {
        self.r
    }

    /// Whether cohorts `a` and `b` share an edge.
    #[inline]
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.n_cohorts + b]
    }

    /// Number of overlapping observed outcomes `|T_a ∩ T_b|`.
    #[inline]
    pub fn overlap_count(&self, a: usize, b: usize) -> usize {
        self.overlap_counts[a * self.n_cohorts + b]
    }

    /// Edge list `(a, b, overlap)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.n_cohorts {
            for b in (a + 1)..self.n_cohorts {
                if self.has_edge(a, b) {
                    out.push((a, b, self.overlap_count(a, b)));
                }
            }
        }
        out
    }

    /// True when the whole graph is one connected component.
    pub fn is_connected(&self) -> bool {
        connected_components(self).len() == 1
    }
}

/// Build the overlap graph for rank `r`.
///
/// Without `factor_basis`, an edge exists iff `|T_a ∩ T_b| >= r`. With a
/// `T x r` basis, an edge exists iff the basis rows restricted to the overlap
/// have numerical rank `r` (relative tolerance [`DEFAULT_RANK_TOL`]).
pub fn build_overlap_graph<T: Scalar>(
    index: &CohortIndex,
    r: usize,
    factor_basis: Option<&DMatrix<T>>,
) -> Result<OverlapGraph> {
    build_overlap_graph_with_tol(index, r, factor_basis, real::<T>(DEFAULT_RANK_TOL))
}

/// [`build_overlap_graph`] with an explicit rank tolerance.
pub fn build_overlap_graph_with_tol<T: Scalar>(
    index: &CohortIndex,
    r: usize,
    factor_basis: Option<&DMatrix<T>>,
    rank_tol: T,
) -> Result<OverlapGraph> {
    let t = index.n_outcomes();
    if r == 0 || r >= t {
        return Err(Error::BadRank { r, t });
    }
    if let Some(basis) = factor_basis {
        if basis.nrows() != t {
            return Err(Error::DimensionMismatch(format!(
                "factor basis has {} rows, panel has {} outcomes",
                basis.nrows(),
                t
            )));
        }
    }
    let c = index.n_cohorts();
    let mut adjacency = vec![false; c * c];
    let mut overlap_counts = vec![0usize; c * c];
    for a in 0..c {
        for b in (a + 1)..c {
            let overlap: Vec<usize> = intersect_sorted(
                &index.cohorts()[a].t_set,
                &index.cohorts()[b].t_set,
            );
            overlap_counts[a * c + b] = overlap.len();
            overlap_counts[b * c + a] = overlap.len();
            let edge = match factor_basis {
                None => overlap.len() >= r,
                Some(basis) => {
                    if overlap.len() < r {
                        false
                    } else {
                        let rows = select_rows(basis, &overlap);
                        numerical_rank(&rows, rank_tol) == r
                    }
                }
            };
            adjacency[a * c + b] = edge;
            adjacency[b * c + a] = edge;
        }
    }
    Ok(OverlapGraph { n_cohorts: c, r, adjacency, overlap_counts })
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn select_rows<T: Scalar>(m: &DMatrix<T>, rows: &[usize]) -> DMatrix<T> {
    let mut out = DMatrix::zeros(rows.len(), m.ncols());
    for (dst, &src) in rows.iter().enumerate() {
        out.set_row(dst, &m.row(src));
    }
    out
}

/// Partition cohorts into connected components by breadth-first search.
///
/// Components are labeled by their smallest member and returned in label
/// order, each sorted ascending.
pub fn connected_components(g: &OverlapGraph) -> Vec<Vec<usize>> {
    let mut seen = vec![false; g.n_cohorts];
    let mut components = Vec::new();
    for start in 0..g.n_cohorts {
        if seen[start] {
            continue;
        }
        let mut component = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(node) = queue.pop_front() {
            component.push(node);
            for next in 0..g.n_cohorts {
                if !seen[next] && g.has_edge(node, next) {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
        component.sort_unstable();
        components.push(component);
    }
    components
}

/// Cumulative outcome coverage by BFS depth from a start cohort.
///
/// Entry `d` is the sorted set of outcomes observed by some cohort within
/// edge distance `d` of `start`. Depth-1 coverage tells which outcomes admit
/// a reference cohort for block-missingness identification.
pub fn reach_profile(g: &OverlapGraph, index: &CohortIndex, start: usize) -> Vec<Vec<usize>> {
    assert!(start < g.n_cohorts(), "start cohort out of range");
    let mut depth = vec![usize::MAX; g.n_cohorts()];
    depth[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut max_depth = 0usize;
    while let Some(node) = queue.pop_front() {
        for next in 0..g.n_cohorts() {
            if depth[next] == usize::MAX && g.has_edge(node, next) {
                depth[next] = depth[node] + 1;
                max_depth = max_depth.max(depth[next]);
                queue.push_back(next);
            }
        }
    }
    let mut covered: BTreeSet<usize> = BTreeSet::new();
    let mut profile = Vec::with_capacity(max_depth + 1);
    for d in 0..=max_depth {
        for (c, cohort) in index.cohorts().iter().enumerate() {
            if depth[c] == d {
                covered.extend(cohort.t_set.iter().copied());
            }
        }
        profile.push(covered.iter().copied().collect());
    }
    profile
}

/// Connectivity of the two auxiliary identification graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EquivalenceReport {
    /// Unit-outcome bipartite graph (one node per retained unit and per
    /// outcome, one edge per observed cell) is connected.
    pub bipartite_connected: bool,
    /// Outcome-outcome check graph (edge between two outcomes iff some
    /// cohort observes both) is connected.
    pub check_connected: bool,
}

/// Build and test connectivity of the rank-one auxiliary graphs.
pub fn equivalence_graphs(index: &CohortIndex) -> EquivalenceReport {
    EquivalenceReport {
        bipartite_connected: bipartite_connected(index),
        check_connected: check_graph_connected(index),
    }
}

fn bipartite_connected(index: &CohortIndex) -> bool {
    let t = index.n_outcomes();
    // Node ids: units first (by position among retained members), outcomes after.
    let mut unit_cohort = Vec::new();
    for (c, cohort) in index.cohorts().iter().enumerate() {
        for _ in &cohort.members {
            unit_cohort.push(c);
        }
    }
    let n = unit_cohort.len();
    if n == 0 {
        return false;
    }
    let mut outcome_units: Vec<Vec<usize>> = vec![Vec::new(); t];
    for (u, &c) in unit_cohort.iter().enumerate() {
        for &out in &index.cohorts()[c].t_set {
            outcome_units[out].push(u);
        }
    }
    let mut seen_unit = vec![false; n];
    let mut seen_outcome = vec![false; t];
    let mut queue = VecDeque::from([0usize]);
    seen_unit[0] = true;
    while let Some(u) = queue.pop_front() {
        for &out in &index.cohorts()[unit_cohort[u]].t_set {
            if !seen_outcome[out] {
                seen_outcome[out] = true;
                for &v in &outcome_units[out] {
                    if !seen_unit[v] {
                        seen_unit[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
    }
    seen_unit.iter().all(|&s| s) && seen_outcome.iter().all(|&s| s)
}

fn check_graph_connected(index: &CohortIndex) -> bool {
    let t = index.n_outcomes();
    if t == 0 {
        return false;
    }
    let mut adjacent = vec![false; t * t];
    for cohort in index.cohorts() {
        for (i, &a) in cohort.t_set.iter().enumerate() {
            for &b in &cohort.t_set[i + 1..] {
                adjacent[a * t + b] = true;
                adjacent[b * t + a] = true;
            }
        }
    }
    let mut seen = vec![false; t];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(a) = queue.pop_front() {
        for b in 0..t {
            if !seen[b] && adjacent[a * t + b] {
                seen[b] = true;
                queue.push_back(b);
            }
        }
    }
    seen.iter().all(|&s| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{cohortize, Panel};

    /// Panel whose cohorts observe exactly the given outcome sets.
    fn panel_with_sets(t: usize, sets: &[&[usize]], per_cohort: usize) -> Panel<f64> {
        let mut cells = Vec::new();
        for (c, set) in sets.iter().enumerate() {
            for u in 0..per_cohort {
                for &out in set.iter() {
                    cells.push((
                        format!("c{c}u{u}"),
                        format!("t{out:02}"),
                        (c + u + out) as f64,
                    ));
                }
            }
        }
        // Outcomes absent from all sets would shift column indices.
        let mut present = vec![false; t];
        for set in sets {
            for &out in set.iter() {
                present[out] = true;
            }
        }
        assert!(present.iter().all(|&p| p), "all outcomes must appear in some set");
        Panel::from_cells(&cells).unwrap()
    }

    fn index_for(t: usize, sets: &[&[usize]]) -> CohortIndex {
        let panel = panel_with_sets(t, sets, 1);
        cohortize(&panel, 1).unwrap().0
    }

    #[test]
    fn staircase_chain_edges() {
        let index = index_for(4, &[&[0, 1], &[1, 2], &[2, 3]]);
        let g = build_overlap_graph::<f64>(&index, 1, None).unwrap();
        assert!(g.has_edge(0, 1));
        assert!(g.has_edge(1, 2));
        assert!(!g.has_edge(0, 2));
        assert!(g.is_connected());
        assert_eq!(g.edges(), vec![(0, 1, 1), (1, 2, 1)]);
    }

    #[test]
    fn disjoint_supports_disconnect() {
        let index = index_for(4, &[&[0, 1], &[2, 3]]);
        let g = build_overlap_graph::<f64>(&index, 1, None).unwrap();
        assert!(g.edges().is_empty());
        assert_eq!(connected_components(&g).len(), 2);
    }

    #[test]
    fn basis_aware_edge_requires_numerical_rank() {
        let index = index_for(4, &[&[0, 1, 2], &[1, 2, 3]]);
        // Overlap {1,2}: both basis rows equal (1,0) so the overlap block has
        // rank 1 even though the overlap count is 2.
        let basis =
            DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let count_rule = build_overlap_graph::<f64>(&index, 2, None).unwrap();
        assert!(count_rule.has_edge(0, 1));
        let basis_rule = build_overlap_graph(&index, 2, Some(&basis)).unwrap();
        assert!(!basis_rule.has_edge(0, 1));
        assert_eq!(basis_rule.overlap_count(0, 1), 2);
    }

    #[test]
    fn bad_rank_rejected() {
        let index = index_for(2, &[&[0, 1]]);
        assert!(matches!(
            build_overlap_graph::<f64>(&index, 2, None).unwrap_err(),
            Error::BadRank { r: 2, t: 2 }
        ));
    }

    #[test]
    fn components_examples() {
        let chain = index_for(4, &[&[0, 1], &[1, 2], &[2, 3]]);
        let g = build_overlap_graph::<f64>(&chain, 1, None).unwrap();
        assert_eq!(connected_components(&g), vec![vec![0, 1, 2]]);

        let pairs = index_for(6, &[&[0, 1], &[1, 2], &[3, 4], &[4, 5]]);
        let g = build_overlap_graph::<f64>(&pairs, 1, None).unwrap();
        assert_eq!(connected_components(&g), vec![vec![0, 1], vec![2, 3]]);

        let singletons = index_for(8, &[&[0, 1], &[2, 3], &[4, 5], &[6, 7]]);
        let g = build_overlap_graph::<f64>(&singletons, 1, None).unwrap();
        assert_eq!(connected_components(&g).len(), 4);
    }

    #[test]
    fn reach_profile_staircase() {
        let index = index_for(4, &[&[0, 1], &[1, 2], &[2, 3]]);
        let g = build_overlap_graph::<f64>(&index, 1, None).unwrap();
        let profile = reach_profile(&g, &index, 0);
        assert_eq!(profile, vec![vec![0, 1], vec![0, 1, 2], vec![0, 1, 2, 3]]);
    }

    #[test]
    fn reach_profile_complete_and_isolated() {
        let complete = index_for(3, &[&[0, 1, 2], &[0, 1], &[1, 2]]);
        let g = build_overlap_graph::<f64>(&complete, 1, None).unwrap();
        let profile = reach_profile(&g, &complete, 1);
        assert_eq!(profile[1], vec![0, 1, 2]);

        let isolated = index_for(4, &[&[0, 1], &[2, 3]]);
        let g = build_overlap_graph::<f64>(&isolated, 1, None).unwrap();
        let profile = reach_profile(&g, &isolated, 0);
        assert_eq!(profile, vec![vec![0, 1]]);
    }

    #[test]
    fn equivalence_graph_examples() {
        let connected = index_for(3, &[&[0, 1], &[1, 2]]);
        let rep = equivalence_graphs(&connected);
        assert!(rep.bipartite_connected);
        assert!(rep.check_connected);
        let g = build_overlap_graph::<f64>(&connected, 1, None).unwrap();
        assert!(g.is_connected());

        let disconnected = index_for(2, &[&[0], &[1]]);
        let rep = equivalence_graphs(&disconnected);
        assert!(!rep.bipartite_connected);
        assert!(!rep.check_connected);

        let single = index_for(3, &[&[0, 1, 2]]);
        let rep = equivalence_graphs(&single);
        assert!(rep.bipartite_connected);
        assert!(rep.check_connected);
    }

    #[test]
    fn raising_rank_never_adds_edges() {
        let index = index_for(5, &[&[0, 1, 2], &[1, 2, 3], &[2, 3, 4]]);
        let g1 = build_overlap_graph::<f64>(&index, 1, None).unwrap();
        let g2 = build_overlap_graph::<f64>(&index, 2, None).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                if a != b && g2.has_edge(a, b) {
                    assert!(g1.has_edge(a, b));
                }
            }
        }
    }
}
