//! Discrete marginal systems on graphs.
//!
//! A [`MarginalSystem`] carries one univariate table per node and one
//! bivariate table per edge. Probabilities live in dense arrays indexed by
//! support position; the outcome values themselves are kept in a
//! [`Support`] so that objective coefficients always use real outcomes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for "sums to one" checks on marginal tables.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Default max-norm tolerance used by [`check_consistency`].
pub const DEFAULT_CONSISTENCY_TOL: f64 = 1e-9;

/// Node identifier as it appears in input files.
pub type NodeId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("support must be non-empty")]
    EmptySupport,
    #[error("support values must be finite and strictly increasing (position {position})")]
    UnsortedSupport { position: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid probability {value} at position {position}")]
    InvalidProbability { position: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("absolute continuity violated at position {position}: p = {p}, q = 0")]
    AbsoluteContinuityViolation { position: usize, p: f64 },
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("self loop on node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(NodeId, NodeId),
    #[error("edge ({i}, {j}): table is {rows}x{cols}, supports are {m_i}x{m_j}")]
    EdgeShape {
        i: NodeId,
        j: NodeId,
        rows: usize,
        cols: usize,
        m_i: usize,
        m_j: usize,
    },
}

/// Ordered set of outcome values taken by one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Support {
    values: Vec<f64>,
}

impl Support {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptySupport);
        }
        for (position, w) in values.windows(2).enumerate() {
            if !(w[0] < w[1]) {
                return Err(ModelError::UnsortedSupport {
                    position: position + 1,
                });
            }
        }
        if let Some(position) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::UnsortedSupport { position });
        }
        Ok(Self { values })
    }

    /// The support `{1, 2, ..., m}`.
    pub fn range(m: usize) -> Self {
        Self {
            values: (1..=m).map(|v| v as f64).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Same support with values negated and order reversed.
    pub fn reversed(&self) -> Self {
        Self {
            values: self.values.iter().rev().map(|v| -v).collect(),
        }
    }
}

impl TryFrom<Vec<f64>> for Support {
    type Error = ModelError;
    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Support::new(values)
    }
}

impl From<Support> for Vec<f64> {
    fn from(s: Support) -> Self {
        s.values
    }
}

fn validate_probabilities(probs: &[f64], tol: f64) -> Result<(), ModelError> {
    for (position, &value) in probs.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(ModelError::InvalidProbability { position, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(ModelError::NotNormalized { sum });
    }
    Ok(())
}

/// Clamps tiny negatives to zero and rescales to unit mass.
///
/// Used on solver outputs, which satisfy the simplex constraints only up to
/// the solver tolerance.
pub fn clean_probabilities(probs: &mut [f64]) {
    for p in probs.iter_mut() {
        if !(*p > 0.0) {
            *p = 0.0;
        }
    }
    let sum: f64 = probs.iter().sum();
    if sum > 0.0 {
        for p in probs.iter_mut() {
            *p /= sum;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateMarginal {
    node: NodeId,
    support: Support,
    probs: Vec<f64>,
}

impl UnivariateMarginal {
    pub fn new(node: NodeId, support: Support, probs: Vec<f64>) -> Result<Self, ModelError> {
        if probs.len() != support.len() {
            return Err(ModelError::DimensionMismatch {
                expected: support.len(),
                actual: probs.len(),
            });
        }
        validate_probabilities(&probs, NORMALIZATION_TOL)?;
        Ok(Self {
            node,
            support,
            probs,
        })
    }

    /// Builds a marginal after clamping and renormalizing `probs`.
    pub fn from_unnormalized(
        node: NodeId,
        support: Support,
        mut probs: Vec<f64>,
    ) -> Result<Self, ModelError> {
        clean_probabilities(&mut probs);
        Self::new(node, support, probs)
    }

    pub fn uniform(node: NodeId, support: Support) -> Self {
        let m = support.len();
        Self {
            node,
            support,
            probs: vec![1.0 / m as f64; m],
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.support
            .values()
            .iter()
            .zip(&self.probs)
            .map(|(c, p)| c * p)
            .sum()
    }

    /// Cumulative probabilities `F(c_1), ..., F(c_m)`; the last entry is exactly 1.
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out: Vec<f64> = self
            .probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = out.last_mut() {
            *last = 1.0;
        }
        out
    }

    pub fn with_node(mut self, node: NodeId) -> Self {
        self.node = node;
        self
    }
}

/// Which marginal of a bivariate table to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Row sums: the marginal of the first variable.
    Left,
    /// Column sums: the marginal of the second variable.
    Right,
}

/// Joint table of an edge `(i, j)`, stored row-major with rows indexed by
/// the support of `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BivariateMarginal {
    edge: (NodeId, NodeId),
    rows: usize,
    cols: usize,
    probs: Vec<f64>,
}

impl BivariateMarginal {
    /// Builds an edge table. A reversed edge (`i > j`) is normalized by
    /// transposing the matrix.
    pub fn new(
        i: NodeId,
        j: NodeId,
        rows: usize,
        cols: usize,
        probs: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if i == j {
            return Err(ModelError::SelfLoop(i));
        }
        if probs.len() != rows * cols {
            return Err(ModelError::DimensionMismatch {
                expected: rows * cols,
                actual: probs.len(),
            });
        }
        validate_probabilities(&probs, NORMALIZATION_TOL)?;
        let table = Self {
            edge: (i, j),
            rows,
            cols,
            probs,
        };
        Ok(if i > j { table.transposed() } else { table })
    }

    /// Builds an edge table from nested rows.
    pub fn from_rows(i: NodeId, j: NodeId, rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let cols = rows.first().map_or(0, Vec::len);
        for r in rows {
            if r.len() != cols {
                return Err(ModelError::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
        }
        let flat = rows.iter().flatten().copied().collect();
        Self::new(i, j, rows.len(), cols, flat)
    }

    /// Builds an edge table after clamping and renormalizing `probs`.
    pub fn from_unnormalized(
        i: NodeId,
        j: NodeId,
        rows: usize,
        cols: usize,
        mut probs: Vec<f64>,
    ) -> Result<Self, ModelError> {
        clean_probabilities(&mut probs);
        Self::new(i, j, rows, cols, probs)
    }

    /// Independence coupling `u ⊗ v`.
    pub fn product(u: &UnivariateMarginal, v: &UnivariateMarginal) -> Self {
        let probs = u
            .probs()
            .iter()
            .flat_map(|a| v.probs().iter().map(move |b| a * b))
            .collect();
        let table = Self {
            edge: (u.node(), v.node()),
            rows: u.len(),
            cols: v.len(),
            probs,
        };
        if u.node() > v.node() {
            table.transposed()
        } else {
            table
        }
    }

    pub fn edge(&self) -> (NodeId, NodeId) {
        self.edge
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.probs[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.probs[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transposed(&self) -> Self {
        let mut probs = vec![0.0; self.probs.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                probs[c * self.rows + r] = self.get(r, c);
            }
        }
        Self {
            edge: (self.edge.1, self.edge.0),
            rows: self.cols,
            cols: self.rows,
            probs,
        }
    }
}

/// Row sums (`Left`) or column sums (`Right`) of a bivariate table.
pub fn project_bivariate_to_univariate(b: &BivariateMarginal, side: Side) -> Vec<f64> {
    match side {
        Side::Left => (0..b.rows).map(|r| b.row(r).iter().sum()).collect(),
        Side::Right => {
            let mut out = vec![0.0; b.cols];
            for r in 0..b.rows {
                for (acc, p) in out.iter_mut().zip(b.row(r)) {
                    *acc += p;
                }
            }
            out
        }
    }
}

/// `Σ p_s log(p_s / q_s)` with `0 log(0/q) = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, ModelError> {
    if p.len() != q.len() {
        return Err(ModelError::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    let mut total = 0.0;
    for (position, (&ps, &qs)) in p.iter().zip(q).enumerate() {
        if ps <= 0.0 {
            continue;
        }
        if qs <= 0.0 {
            return Err(ModelError::AbsoluteContinuityViolation { position, p: ps });
        }
        total += ps * (ps / qs).ln();
    }
    // Rounding can push the sum a hair below zero for p == q.
    Ok(total.max(0.0))
}

/// Univariate tables on nodes plus bivariate tables on edges.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSystem {
    nodes: Vec<UnivariateMarginal>,
    edges: Vec<BivariateMarginal>,
    index: BTreeMap<NodeId, usize>,
}

impl MarginalSystem {
    /// Validates shapes and builds the system. Nodes are kept sorted by id
    /// and edges sorted lexicographically. Cycles are allowed here; use
    /// [`validate_tree`] to test for them.
    pub fn new(
        mut nodes: Vec<UnivariateMarginal>,
        edges: Vec<BivariateMarginal>,
    ) -> Result<Self, ModelError> {
        nodes.sort_by_key(UnivariateMarginal::node);
        let mut index = BTreeMap::new();
        for (pos, n) in nodes.iter().enumerate() {
            if index.insert(n.node(), pos).is_some() {
                return Err(ModelError::DuplicateNode(n.node()));
            }
        }
        let mut edges = edges;
        edges.sort_by_key(BivariateMarginal::edge);
        for w in edges.windows(2) {
            if w[0].edge() == w[1].edge() {
                let (i, j) = w[0].edge();
                return Err(ModelError::DuplicateEdge(i, j));
            }
        }
        for e in &edges {
            let (i, j) = e.edge();
            let ni = index.get(&i).ok_or(ModelError::UnknownNode(i))?;
            let nj = index.get(&j).ok_or(ModelError::UnknownNode(j))?;
            let (m_i, m_j) = (nodes[*ni].len(), nodes[*nj].len());
            if e.rows() != m_i || e.cols() != m_j {
                return Err(ModelError::EdgeShape {
                    i,
                    j,
                    rows: e.rows(),
                    cols: e.cols(),
                    m_i,
                    m_j,
                });
            }
        }
        Ok(Self {
            nodes,
            edges,
            index,
        })
    }

    pub fn nodes(&self) -> &[UnivariateMarginal] {
        &self.nodes
    }

    pub fn edges(&self) -> &[BivariateMarginal] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Position of a node id in [`Self::nodes`].
    pub fn position(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn node(&self, id: NodeId) -> Option<&UnivariateMarginal> {
        self.position(id).map(|p| &self.nodes[p])
    }

    /// Positions `(p_i, p_j)` of the endpoints of edge `e`.
    pub fn edge_positions(&self, e: usize) -> (usize, usize) {
        let (i, j) = self.edges[e].edge();
        (self.index[&i], self.index[&j])
    }

    /// Same nodes, different bivariate tables. Edge sets must match.
    pub fn with_bivariates(&self, edges: Vec<BivariateMarginal>) -> Result<Self, ModelError> {
        Self::new(self.nodes.clone(), edges)
    }

    /// Number of points in the product space `C_1 × ... × C_n`, saturating.
    pub fn product_space_size(&self) -> usize {
        self.nodes
            .iter()
            .fold(1usize, |acc, n| acc.saturating_mul(n.len()))
    }

    pub fn supports(&self) -> Vec<Support> {
        self.nodes.iter().map(|n| n.support().clone()).collect()
    }
}

/// Outcome of [`validate_tree`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TreeReport {
    /// True when the graph has no cycle (a forest; each component a tree).
    pub is_forest: bool,
    /// Node ids per connected component, each sorted ascending.
    pub components: Vec<Vec<NodeId>>,
    /// First edge found to close a cycle, if any.
    pub cycle_edge: Option<(NodeId, NodeId)>,
}

impl TreeReport {
    pub fn is_single_tree(&self) -> bool {
        self.is_forest && self.components.len() == 1
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Checks the edge set for cycles and lists connected components.
pub fn validate_tree(system: &MarginalSystem) -> TreeReport {
    let n = system.node_count();
    let mut sets = DisjointSets::new(n);
    let mut cycle_edge = None;
    for (e, table) in system.edges().iter().enumerate() {
        let (a, b) = system.edge_positions(e);
        if !sets.union(a, b) && cycle_edge.is_none() {
            cycle_edge = Some(table.edge());
        }
    }
    let mut groups: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (pos, node) in system.nodes().iter().enumerate() {
        groups.entry(sets.find(pos)).or_default().push(node.node());
    }
    TreeReport {
        is_forest: cycle_edge.is_none(),
        components: groups.into_values().collect(),
        cycle_edge,
    }
}

/// Projection residuals of one edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeResidual {
    pub edge: (NodeId, NodeId),
    /// Max-norm gap between the row sums and `μ_i`.
    pub left: f64,
    /// Max-norm gap between the column sums and `μ_j`.
    pub right: f64,
}

impl EdgeResidual {
    pub fn max(&self) -> f64 {
        self.left.max(self.right)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub consistent: bool,
    pub tolerance: f64,
    pub max_residual: f64,
    pub edges: Vec<EdgeResidual>,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Verifies that every bivariate table projects onto its two univariates.
pub fn check_consistency(system: &MarginalSystem, tol: f64) -> ConsistencyReport {
    let edges: Vec<EdgeResidual> = system
        .edges()
        .iter()
        .enumerate()
        .map(|(e, table)| {
            let (pi, pj) = system.edge_positions(e);
            EdgeResidual {
                edge: table.edge(),
                left: max_abs_diff(
                    &project_bivariate_to_univariate(table, Side::Left),
                    system.nodes()[pi].probs(),
                ),
                right: max_abs_diff(
                    &project_bivariate_to_univariate(table, Side::Right),
                    system.nodes()[pj].probs(),
                ),
            }
        })
        .collect();
    let max_residual = edges.iter().map(EdgeResidual::max).fold(0.0, f64::max);
    ConsistencyReport {
        consistent: max_residual <= tol,
        tolerance: tol,
        max_residual,
        edges,
    }
}

/// Dense probability table over the product of node supports.
///
/// Entries are stored row-major: the last node varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    supports: Vec<Support>,
    probs: Vec<f64>,
}

impl JointDistribution {
    pub fn new(supports: Vec<Support>, probs: Vec<f64>) -> Result<Self, ModelError> {
        let size = supports.iter().map(Support::len).product::<usize>();
        if probs.len() != size {
            return Err(ModelError::DimensionMismatch {
                expected: size,
                actual: probs.len(),
            });
        }
        validate_probabilities(&probs, 1e-10)?;
        Ok(Self { supports, probs })
    }

    pub fn supports(&self) -> &[Support] {
        &self.supports
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn dims(&self) -> Vec<usize> {
        self.supports.iter().map(Support::len).collect()
    }

    /// Iterates `(support indices, probability)` over all cells.
    pub fn cells(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        let dims = self.dims();
        let mut idx = vec![0usize; dims.len()];
        let mut first = true;
        self.probs.iter().map(move |&p| {
            if !first {
                for d in (0..dims.len()).rev() {
                    idx[d] += 1;
                    if idx[d] < dims[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            first = false;
            (idx.clone(), p)
        })
    }

    /// Marginal of variable `a` (by position).
    pub fn project_univariate(&self, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.supports[a].len()];
        for (idx, p) in self.cells() {
            out[idx[a]] += p;
        }
        out
    }

    /// Row-major marginal table of variables `a` and `b` (by position).
    pub fn project_bivariate(&self, a: usize, b: usize) -> Vec<f64> {
        let cols = self.supports[b].len();
        let mut out = vec![0.0; self.supports[a].len() * cols];
        for (idx, p) in self.cells() {
            out[idx[a] * cols + idx[b]] += p;
        }
        out
    }
}

impl fmt::Display for TreeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some((i, j)) = self.cycle_edge {
            write!(f, "cycle detected (closing edge ({i}, {j}))")
        } else if self.components.len() == 1 {
            write!(f, "tree, 1 component")
        } else {
            write!(f, "forest, {} components", self.components.len())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uni(node: NodeId, probs: &[f64]) -> UnivariateMarginal {
        UnivariateMarginal::new(node, Support::range(probs.len()), probs.to_vec()).unwrap()
    }

    fn path(n: u32, m: usize) -> MarginalSystem {
        let nodes: Vec<_> = (1..=n)
            .map(|i| UnivariateMarginal::uniform(i, Support::range(m)))
            .collect();
        let edges = (1..n)
            .map(|i| BivariateMarginal::product(&nodes[i as usize - 1], &nodes[i as usize]))
            .collect();
        MarginalSystem::new(nodes, edges).unwrap()
    }

    #[test]
    fn kl_examples() {
        let u = [0.25; 4];
        assert_eq!(kl_divergence(&u, &u).unwrap(), 0.0);
        let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        // 0.75 ln 1.5 + 0.25 ln 0.5
        let v = kl_divergence(&[0.75, 0.25], &[0.5, 0.5]).unwrap();
        assert!((v - 0.130_812_035_941_137).abs() < 1e-14);
    }

    #[test]
    fn kl_errors() {
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0]),
            Err(ModelError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(ModelError::AbsoluteContinuityViolation { position: 1, .. })
        ));
        // zero mass on a zero reference is fine
        assert_eq!(kl_divergence(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn projections() {
        let u = uni(1, &[0.2, 0.8]);
        let v = uni(2, &[0.1, 0.3, 0.6]);
        let b = BivariateMarginal::product(&u, &v);
        let left = project_bivariate_to_univariate(&b, Side::Left);
        assert!(max_abs_diff(&left, u.probs()) < 1e-15);
        let d = BivariateMarginal::from_rows(1, 2, &[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert_eq!(project_bivariate_to_univariate(&d, Side::Right), vec![0.5, 0.5]);
    }

    #[test]
    fn reversed_edge_is_transposed() {
        let b = BivariateMarginal::from_rows(2, 1, &[vec![0.1, 0.2, 0.3], vec![0.4, 0.0, 0.0]])
            .unwrap();
        assert_eq!(b.edge(), (1, 2));
        assert_eq!((b.rows(), b.cols()), (3, 2));
        assert_eq!(b.get(0, 1), 0.4);
        assert_eq!(b.get(2, 0), 0.3);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(Support::new(vec![]).is_err());
        assert!(Support::new(vec![1.0, 1.0]).is_err());
        assert!(UnivariateMarginal::new(1, Support::range(2), vec![0.5, 0.6]).is_err());
        assert!(UnivariateMarginal::new(1, Support::range(2), vec![1.5, -0.5]).is_err());
        assert!(BivariateMarginal::from_rows(1, 1, &[vec![1.0]]).is_err());
        let nodes = vec![uni(1, &[0.5, 0.5]), uni(2, &[1.0])];
        let bad = BivariateMarginal::from_rows(1, 2, &[vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            MarginalSystem::new(nodes.clone(), vec![bad]),
            Err(ModelError::EdgeShape { .. })
        ));
        let missing = BivariateMarginal::from_rows(1, 3, &[vec![0.5], vec![0.5]]).unwrap();
        assert_eq!(
            MarginalSystem::new(nodes, vec![missing]),
            Err(ModelError::UnknownNode(3))
        );
    }

    #[test]
    fn tree_validation() {
        let report = validate_tree(&path(5, 2));
        assert!(report.is_single_tree());
        assert_eq!(report.components, vec![vec![1, 2, 3, 4, 5]]);

        let nodes: Vec<_> = (1..=3).map(|i| uni(i, &[0.5, 0.5])).collect();
        let anti = |i, j| {
            BivariateMarginal::from_rows(i, j, &[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap()
        };
        let cyc = MarginalSystem::new(nodes.clone(), vec![anti(1, 2), anti(2, 3), anti(1, 3)])
            .unwrap();
        let report = validate_tree(&cyc);
        assert!(!report.is_forest);
        assert_eq!(report.cycle_edge, Some((2, 3)));

        let empty = MarginalSystem::new(nodes, vec![]).unwrap();
        let report = validate_tree(&empty);
        assert!(report.is_forest);
        assert_eq!(report.components.len(), 3);
    }

    #[test]
    fn consistency_checks() {
        let report = check_consistency(&path(4, 3), DEFAULT_CONSISTENCY_TOL);
        assert!(report.consistent);
        assert_eq!(report.max_residual, 0.0);

        let u = UnivariateMarginal::uniform(1, Support::range(3));
        let w = UnivariateMarginal::uniform(2, Support::range(3));
        let third = 1.0 / 3.0;
        let diag = BivariateMarginal::new(
            1,
            2,
            3,
            3,
            vec![third, 0.0, 0.0, 0.0, third, 0.0, 0.0, 0.0, third],
        )
        .unwrap();
        let sys = MarginalSystem::new(vec![u, w], vec![diag]).unwrap();
        assert!(check_consistency(&sys, DEFAULT_CONSISTENCY_TOL).consistent);

        let skew = uni(2, &[0.2, 0.3, 0.5]);
        let sys = MarginalSystem::new(
            vec![UnivariateMarginal::uniform(1, Support::range(3)), skew],
            sys.edges().to_vec(),
        )
        .unwrap();
        let report = check_consistency(&sys, DEFAULT_CONSISTENCY_TOL);
        assert!(!report.consistent);
        assert!((report.edges[0].right - (0.5 - third)).abs() < 1e-12);
        assert!(report.edges[0].left < 1e-15);
    }

    #[test]
    fn joint_projection_and_cells() {
        let supports = vec![Support::range(2), Support::range(3)];
        let probs = vec![0.1, 0.2, 0.3, 0.0, 0.25, 0.15];
        let joint = JointDistribution::new(supports, probs).unwrap();
        let cells: Vec<_> = joint.cells().map(|(i, _)| i).collect();
        assert_eq!(cells[4], vec![1, 1]);
        let p0 = joint.project_univariate(0);
        assert!((p0[0] - 0.6).abs() < 1e-15 && (p0[1] - 0.4).abs() < 1e-15);
        assert_eq!(joint.project_bivariate(0, 1), joint.probs());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn simplex(m: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(0.01f64..1.0, m).prop_map(|v| {
                let s: f64 = v.iter().sum();
                v.into_iter().map(|x| x / s).collect()
            })
        }

        proptest! {
            #[test]
            fn kl_zero_iff_equal(p in simplex(5), q in simplex(5)) {
                prop_assert!(kl_divergence(&p, &p).unwrap() < 1e-12);
                let d = kl_divergence(&p, &q).unwrap();
                prop_assert!(d >= 0.0);
                if max_abs_diff(&p, &q) > 1e-6 {
                    prop_assert!(d > 0.0);
                }
            }

            #[test]
            fn kl_permutation_invariant(p in simplex(6), q in simplex(6), shift in 0usize..6) {
                let rot = |v: &[f64]| { let mut w = v.to_vec(); w.rotate_left(shift); w };
                let a = kl_divergence(&p, &q).unwrap();
                let b = kl_divergence(&rot(&p), &rot(&q)).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }

            #[test]
            fn projections_are_distributions(t in simplex(12)) {
                let b = BivariateMarginal::new(1, 2, 3, 4, t).unwrap();
                for side in [Side::Left, Side::Right] {
                    let p = project_bivariate_to_univariate(&b, side);
                    prop_assert!(p.iter().all(|x| *x >= 0.0));
                    prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }

            #[test]
            fn forest_iff_edge_count(edges in proptest::collection::btree_set((1u32..=6, 1u32..=6), 0..8)) {
                let nodes: Vec<_> = (1..=6).map(|i| UnivariateMarginal::uniform(i, Support::range(2))).collect();
                let mut seen = std::collections::BTreeSet::new();
                let tables: Vec<_> = edges.into_iter()
                    .filter(|(i, j)| i != j)
                    .map(|(i, j)| (i.min(j), i.max(j)))
                    .filter(|e| seen.insert(*e))
                    .map(|(i, j)| BivariateMarginal::product(&nodes[i as usize - 1], &nodes[j as usize - 1]))
                    .collect();
                let sys = MarginalSystem::new(nodes, tables).unwrap();
                let report = validate_tree(&sys);
                let per_component_ok = report.components.iter().all(|comp| {
                    let inside = sys.edges().iter().filter(|e| comp.contains(&e.edge().0)).count();
                    inside + 1 == comp.len()
                });
                prop_assert_eq!(report.is_forest, per_component_ok);
            }
        }
    }
}
