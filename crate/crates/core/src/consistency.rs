//! Closest consistent marginals, maximum-entropy fitting, and the Chow-Liu
//! joint distribution.
//!
//! All solvers here work edge table by edge table: a fitted table `θ_ij`
//! must project onto the univariate tables of its endpoints, and its
//! distance to the expert table `μ_ij` is measured by KL divergence.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    check_consistency, kl_divergence, project_bivariate_to_univariate, validate_tree,
    BivariateMarginal, JointDistribution, MarginalSystem, ModelError, NodeId, Side, TreeReport,
    UnivariateMarginal, DEFAULT_CONSISTENCY_TOL,
};
use crate::solver::{
    solve, solve_lp, ConicProgram, EntropyBudget, Sense, SolveStatus, SolveTolerances,
    SolverError,
};

/// Sinkhorn stops once the max-norm marginal residual is below this.
pub const SINKHORN_TOL: f64 = 1e-10;
pub const SINKHORN_MAX_ITER: usize = 100_000;
/// Default product-space cap for [`chow_liu_joint`].
pub const DEFAULT_JOINT_CAP: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsistencyError {
    #[error("edge set is not a forest: {0}")]
    NotATree(TreeReport),
    #[error(
        "edge ({}, {}): {side:?} support point {position} has positive univariate mass \
         but the expert table has no mass there",
        edge.0, edge.1
    )]
    AbsoluteContinuityInfeasible {
        edge: (NodeId, NodeId),
        side: Side,
        position: usize,
    },
    #[error("no table with the required marginals is absolutely continuous w.r.t. the expert table on edge ({}, {})", .0.0, .0.1)]
    SupportPatternInfeasible((NodeId, NodeId)),
    #[error("Sinkhorn did not converge on edge ({}, {}) after {iterations} iterations (residual {residual:e})", edge.0, edge.1)]
    NonConvergence {
        edge: (NodeId, NodeId),
        iterations: usize,
        residual: f64,
    },
    #[error("bivariates are inconsistent with univariates (max residual {max_residual:e})")]
    InconsistentInputs { max_residual: f64 },
    #[error("product space has {size} points, cap is {cap}")]
    ProductSpaceTooLarge { size: usize, cap: usize },
    #[error("no covariance target for edge ({0}, {1})")]
    MissingTarget(NodeId, NodeId),
    #[error("non-finite covariance target for edge ({0}, {1})")]
    NonFiniteTarget(NodeId, NodeId),
    #[error("solver returned {0:?}")]
    SolverStatus(SolveStatus),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyResult {
    pub rho_star: f64,
    pub fitted_bivariates: Vec<BivariateMarginal>,
    /// Only set by [`closest_consistent_perturbed_univariates`].
    pub fitted_univariates: Option<Vec<UnivariateMarginal>>,
    pub per_edge_kl: Vec<f64>,
    /// `KL(θ_i, μ_i)` per node, alongside `fitted_univariates`.
    pub per_node_kl: Option<Vec<f64>>,
}

pub(crate) fn require_forest(system: &MarginalSystem) -> Result<(), ConsistencyError> {
    let report = validate_tree(system);
    if report.is_forest {
        Ok(())
    } else {
        Err(ConsistencyError::NotATree(report))
    }
}

/// Rejects edges where a univariate puts mass on a point whose whole row
/// (or column) of the expert table is zero; no KL-finite table exists then.
pub(crate) fn check_absolute_continuity(system: &MarginalSystem) -> Result<(), ConsistencyError> {
    for (e, table) in system.edges().iter().enumerate() {
        let (pi, pj) = system.edge_positions(e);
        for (side, target, proj) in [
            (
                Side::Left,
                system.nodes()[pi].probs(),
                project_bivariate_to_univariate(table, Side::Left),
            ),
            (
                Side::Right,
                system.nodes()[pj].probs(),
                project_bivariate_to_univariate(table, Side::Right),
            ),
        ] {
            if let Some(position) = (0..target.len()).find(|&s| target[s] > 0.0 && proj[s] == 0.0)
            {
                return Err(ConsistencyError::AbsoluteContinuityInfeasible {
                    edge: table.edge(),
                    side,
                    position,
                });
            }
        }
    }
    Ok(())
}

/// Right-hand side of a row or column sum constraint.
#[derive(Clone, Copy)]
pub(crate) enum Margin<'a> {
    Fixed(&'a [f64]),
    /// Variables `first..first + len` of the program.
    Vars(usize),
}

/// Adds row sums `Σ_c x[r, c] = rows[r]` and column sums
/// `Σ_r x[r, c] = cols[c]` for the row-major block starting at `first`.
///
/// The last column sum is implied by the others whenever both margins have
/// the same total, so it is left out: a rank-deficient equality block with a
/// rounding-level inconsistency stalls the interior-point method.
pub(crate) fn add_margin_equalities(
    program: &mut ConicProgram,
    first: usize,
    nrows: usize,
    ncols: usize,
    rows: Margin<'_>,
    cols: Margin<'_>,
) {
    for r in 0..nrows {
        let mut terms: Vec<_> = (0..ncols).map(|c| (first + r * ncols + c, 1.0)).collect();
        let rhs = match rows {
            Margin::Fixed(v) => v[r],
            Margin::Vars(start) => {
                terms.push((start + r, -1.0));
                0.0
            }
        };
        program.add_equality(terms, rhs);
    }
    for c in 0..ncols.saturating_sub(1) {
        let mut terms: Vec<_> = (0..nrows).map(|r| (first + r * ncols + c, 1.0)).collect();
        let rhs = match cols {
            Margin::Fixed(v) => v[c],
            Margin::Vars(start) => {
                terms.push((start + c, -1.0));
                0.0
            }
        };
        program.add_equality(terms, rhs);
    }
}

/// Entropy terms `(x_s, μ_s)` for a table block.
pub(crate) fn kl_terms(first: usize, reference: &[f64]) -> Vec<(usize, f64)> {
    reference
        .iter()
        .enumerate()
        .map(|(s, &q)| (first + s, q))
        .collect()
}

/// Turns a solver block into a valid table, forcing exact zeros wherever the
/// reference has none.
pub(crate) fn table_from_block(
    edge: (NodeId, NodeId),
    nrows: usize,
    ncols: usize,
    values: &[f64],
    reference: &[f64],
) -> Result<BivariateMarginal, ModelError> {
    let probs = values
        .iter()
        .zip(reference)
        .map(|(&v, &q)| if q == 0.0 { 0.0 } else { v })
        .collect();
    BivariateMarginal::from_unnormalized(edge.0, edge.1, nrows, ncols, probs)
}

fn univariate_from_block(
    node: &UnivariateMarginal,
    values: &[f64],
) -> Result<UnivariateMarginal, ModelError> {
    let probs = values
        .iter()
        .zip(node.probs())
        .map(|(&v, &q)| if q == 0.0 { 0.0 } else { v })
        .collect();
    UnivariateMarginal::from_unnormalized(node.node(), node.support().clone(), probs)
}

fn edge_kls(
    system: &MarginalSystem,
    fitted: &[BivariateMarginal],
) -> Result<Vec<f64>, ModelError> {
    fitted
        .iter()
        .zip(system.edges())
        .map(|(t, m)| kl_divergence(t.probs(), m.probs()))
        .collect()
}

fn unchanged(system: &MarginalSystem, with_univariates: bool) -> ConsistencyResult {
    ConsistencyResult {
        rho_star: 0.0,
        fitted_bivariates: system.edges().to_vec(),
        fitted_univariates: with_univariates.then(|| system.nodes().to_vec()),
        per_edge_kl: vec![0.0; system.edges().len()],
        per_node_kl: with_univariates.then(|| vec![0.0; system.node_count()]),
    }
}

fn status_error(status: SolveStatus, system: &MarginalSystem) -> ConsistencyError {
    match status {
        SolveStatus::Infeasible => {
            let edge = system.edges().first().map_or((0, 0), BivariateMarginal::edge);
            ConsistencyError::SupportPatternInfeasible(edge)
        }
        other => ConsistencyError::SolverStatus(other),
    }
}

/// Smallest `ρ` such that every edge admits a table with the prescribed
/// univariates within KL distance `ρ` of its expert table, together with
/// one such family of tables.
pub fn closest_consistent(
    system: &MarginalSystem,
    tol: &SolveTolerances,
) -> Result<ConsistencyResult, ConsistencyError> {
    require_forest(system)?;
    if check_consistency(system, DEFAULT_CONSISTENCY_TOL).consistent {
        return Ok(unchanged(system, false));
    }
    check_absolute_continuity(system)?;

    let mut program = ConicProgram::new(Sense::Minimize);
    let rho = program.add_var(true);
    program.add_objective(rho, 1.0);
    let mut blocks = Vec::with_capacity(system.edges().len());
    for (e, table) in system.edges().iter().enumerate() {
        let (pi, pj) = system.edge_positions(e);
        let first = program.add_vars(table.probs().len(), true);
        add_margin_equalities(
            &mut program,
            first,
            table.rows(),
            table.cols(),
            Margin::Fixed(system.nodes()[pi].probs()),
            Margin::Fixed(system.nodes()[pj].probs()),
        );
        program.add_entropy_budget(EntropyBudget {
            terms: kl_terms(first, table.probs()),
            budget: 0.0,
            budget_terms: vec![(rho, 1.0)],
            mass_preserving: false,
        })?;
        blocks.push(first);
    }

    let sol = solve(&program, tol)?;
    if !sol.is_optimal() {
        return Err(status_error(sol.status, system));
    }
    let fitted = system
        .edges()
        .iter()
        .zip(&blocks)
        .map(|(t, &first)| {
            let block = &sol.primal[first..first + t.probs().len()];
            table_from_block(t.edge(), t.rows(), t.cols(), block, t.probs())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let per_edge_kl = edge_kls(system, &fitted)?;
    Ok(ConsistencyResult {
        rho_star: per_edge_kl.iter().copied().fold(0.0, f64::max),
        fitted_bivariates: fitted,
        fitted_univariates: None,
        per_edge_kl,
        per_node_kl: None,
    })
}

/// Variant of [`closest_consistent`] that also lets the univariates move,
/// with the same radius `ρ` bounding `KL(θ_i, μ_i)` and `KL(θ_ij, μ_ij)`.
pub fn closest_consistent_perturbed_univariates(
    system: &MarginalSystem,
    tol: &SolveTolerances,
) -> Result<ConsistencyResult, ConsistencyError> {
    require_forest(system)?;
    if check_consistency(system, DEFAULT_CONSISTENCY_TOL).consistent {
        return Ok(unchanged(system, true));
    }

    let mut program = ConicProgram::new(Sense::Minimize);
    let rho = program.add_var(true);
    program.add_objective(rho, 1.0);
    let mut node_blocks = Vec::with_capacity(system.node_count());
    for node in system.nodes() {
        let first = program.add_vars(node.len(), true);
        program.add_equality((first..first + node.len()).map(|v| (v, 1.0)).collect(), 1.0);
        program.add_entropy_budget(EntropyBudget {
            terms: kl_terms(first, node.probs()),
            budget: 0.0,
            budget_terms: vec![(rho, 1.0)],
            mass_preserving: false,
        })?;
        node_blocks.push(first);
    }
    let mut edge_blocks = Vec::with_capacity(system.edges().len());
    for (e, table) in system.edges().iter().enumerate() {
        let (pi, pj) = system.edge_positions(e);
        let first = program.add_vars(table.probs().len(), true);
        add_margin_equalities(
            &mut program,
            first,
            table.rows(),
            table.cols(),
            Margin::Vars(node_blocks[pi]),
            Margin::Vars(node_blocks[pj]),
        );
        program.add_entropy_budget(EntropyBudget {
            terms: kl_terms(first, table.probs()),
            budget: 0.0,
            budget_terms: vec![(rho, 1.0)],
            mass_preserving: false,
        })?;
        edge_blocks.push(first);
    }

    let sol = solve(&program, tol)?;
    if !sol.is_optimal() {
        return Err(status_error(sol.status, system));
    }
    let univariates = system
        .nodes()
        .iter()
        .zip(&node_blocks)
        .map(|(n, &first)| univariate_from_block(n, &sol.primal[first..first + n.len()]))
        .collect::<Result<Vec<_>, _>>()?;
    let fitted = system
        .edges()
        .iter()
        .zip(&edge_blocks)
        .map(|(t, &first)| {
            let block = &sol.primal[first..first + t.probs().len()];
            table_from_block(t.edge(), t.rows(), t.cols(), block, t.probs())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let per_edge_kl = edge_kls(system, &fitted)?;
    let per_node_kl = univariates
        .iter()
        .zip(system.nodes())
        .map(|(t, m)| kl_divergence(t.probs(), m.probs()))
        .collect::<Result<Vec<_>, _>>()?;
    let rho_star = per_edge_kl
        .iter()
        .chain(&per_node_kl)
        .copied()
        .fold(0.0, f64::max);
    Ok(ConsistencyResult {
        rho_star,
        fitted_bivariates: fitted,
        fitted_univariates: Some(univariates),
        per_edge_kl,
        per_node_kl: Some(per_node_kl),
    })
}

/// Per-edge relative-entropy projections onto the transportation polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxEntropyFit {
    pub fitted_bivariates: Vec<BivariateMarginal>,
    /// `ρ_ij = KL(θ_ij, μ_ij)`.
    pub per_edge_kl: Vec<f64>,
    /// Sinkhorn sweeps per edge (0 for the conic variant).
    pub iterations: Vec<usize>,
}

impl MaxEntropyFit {
    /// `Σ ρ_ij`, the aggregate objective.
    pub fn total_kl(&self) -> f64 {
        self.per_edge_kl.iter().sum()
    }

    pub fn max_kl(&self) -> f64 {
        self.per_edge_kl.iter().copied().fold(0.0, f64::max)
    }
}

fn row_residual(theta: &[f64], ncols: usize, target: &[f64]) -> f64 {
    theta
        .chunks(ncols)
        .zip(target)
        .map(|(row, t)| (row.iter().sum::<f64>() - t).abs())
        .fold(0.0, f64::max)
}

fn sinkhorn(
    table: &BivariateMarginal,
    rows: &[f64],
    cols: &[f64],
) -> Result<(Vec<f64>, usize), ConsistencyError> {
    let ncols = table.cols();
    let mut theta = table.probs().to_vec();
    let mut residual = f64::INFINITY;
    for iter in 1..=SINKHORN_MAX_ITER {
        for (row, &target) in theta.chunks_mut(ncols).zip(rows) {
            let s: f64 = row.iter().sum();
            let scale = if s > 0.0 { target / s } else { 0.0 };
            row.iter_mut().for_each(|v| *v *= scale);
        }
        for (c, &target) in cols.iter().enumerate() {
            let s: f64 = theta.iter().skip(c).step_by(ncols).sum();
            let scale = if s > 0.0 { target / s } else { 0.0 };
            theta.iter_mut().skip(c).step_by(ncols).for_each(|v| *v *= scale);
        }
        residual = row_residual(&theta, ncols, rows);
        if residual <= SINKHORN_TOL {
            return Ok((theta, iter));
        }
    }
    Err(ConsistencyError::NonConvergence {
        edge: table.edge(),
        iterations: SINKHORN_MAX_ITER,
        residual,
    })
}

/// I-projection of edge `e`'s table onto the tables with the node marginals,
/// with its KL distance from the expert table. Every such table `θ` satisfies
/// `KL(θ, μ_ij) = KL(θ, θ*) + KL(θ*, μ_ij)`.
pub(crate) fn edge_projection(
    system: &MarginalSystem,
    e: usize,
) -> Result<(Vec<f64>, f64), ConsistencyError> {
    let table = &system.edges()[e];
    let (pi, pj) = system.edge_positions(e);
    let rows = system.nodes()[pi].probs();
    let cols = system.nodes()[pj].probs();
    let residual = |side, target: &[f64]| {
        project_bivariate_to_univariate(table, side)
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    if residual(Side::Left, rows).max(residual(Side::Right, cols)) <= DEFAULT_CONSISTENCY_TOL {
        return Ok((table.probs().to_vec(), 0.0));
    }
    let (theta, _) = sinkhorn(table, rows, cols)?;
    let kl = kl_divergence(&theta, table.probs())?;
    Ok((theta, kl))
}

/// Fits each edge by alternating row and column scaling (IPF) started
/// from the expert table.
pub fn max_entropy_fit(system: &MarginalSystem) -> Result<MaxEntropyFit, ConsistencyError> {
    require_forest(system)?;
    check_absolute_continuity(system)?;
    let fits = (0..system.edges().len())
        .into_par_iter()
        .map(|e| {
            let table = &system.edges()[e];
            let (pi, pj) = system.edge_positions(e);
            let (theta, iters) = sinkhorn(
                table,
                system.nodes()[pi].probs(),
                system.nodes()[pj].probs(),
            )?;
            let (i, j) = table.edge();
            let fitted =
                BivariateMarginal::from_unnormalized(i, j, table.rows(), table.cols(), theta)?;
            let kl = kl_divergence(fitted.probs(), table.probs())?;
            Ok((fitted, kl, iters))
        })
        .collect::<Result<Vec<_>, ConsistencyError>>()?;
    let mut out = MaxEntropyFit {
        fitted_bivariates: Vec::new(),
        per_edge_kl: Vec::new(),
        iterations: Vec::new(),
    };
    for (t, kl, it) in fits {
        out.fitted_bivariates.push(t);
        out.per_edge_kl.push(kl);
        out.iterations.push(it);
    }
    Ok(out)
}

/// Same projections as [`max_entropy_fit`], computed by one conic program
/// minimizing `Σ ρ_ij`. Used to cross-check the scaling iteration.
pub fn max_entropy_fit_conic(
    system: &MarginalSystem,
    tol: &SolveTolerances,
) -> Result<MaxEntropyFit, ConsistencyError> {
    require_forest(system)?;
    check_absolute_continuity(system)?;
    let mut program = ConicProgram::new(Sense::Minimize);
    let mut blocks = Vec::new();
    for (e, table) in system.edges().iter().enumerate() {
        let (pi, pj) = system.edge_positions(e);
        let rho = program.add_var(false);
        program.add_objective(rho, 1.0);
        let first = program.add_vars(table.probs().len(), true);
        add_margin_equalities(
            &mut program,
            first,
            table.rows(),
            table.cols(),
            Margin::Fixed(system.nodes()[pi].probs()),
            Margin::Fixed(system.nodes()[pj].probs()),
        );
        program.add_entropy_budget(EntropyBudget {
            terms: kl_terms(first, table.probs()),
            budget: 0.0,
            budget_terms: vec![(rho, 1.0)],
            mass_preserving: false,
        })?;
        blocks.push(first);
    }
    let sol = solve(&program, tol)?;
    if !sol.is_optimal() {
        return Err(status_error(sol.status, system));
    }
    let fitted = system
        .edges()
        .iter()
        .zip(&blocks)
        .map(|(t, &first)| {
            let block = &sol.primal[first..first + t.probs().len()];
            table_from_block(t.edge(), t.rows(), t.cols(), block, t.probs())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MaxEntropyFit {
        per_edge_kl: edge_kls(system, &fitted)?,
        iterations: vec![0; fitted.len()],
        fitted_bivariates: fitted,
    })
}

/// Target covariance per edge, keyed by `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CovarianceTarget {
    values: BTreeMap<(NodeId, NodeId), f64>,
}

impl CovarianceTarget {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, i: NodeId, j: NodeId, value: f64) {
        self.values.insert((i.min(j), i.max(j)), value);
    }

    pub fn get(&self, i: NodeId, j: NodeId) -> Option<f64> {
        self.values.get(&(i.min(j), i.max(j))).copied()
    }

    /// Covariances of the system's own bivariate tables.
    pub fn from_bivariates(system: &MarginalSystem) -> Self {
        let mut out = Self::new();
        for (e, t) in system.edges().iter().enumerate() {
            let (i, j) = t.edge();
            out.insert(i, j, table_covariance(system, e, t.probs()));
        }
        out
    }
}

/// `E[c_i c_j] − E[c_i] E[c_j]` of a row-major table on edge `e`.
pub fn table_covariance(system: &MarginalSystem, e: usize, probs: &[f64]) -> f64 {
    let (pi, pj) = system.edge_positions(e);
    let (si, sj) = (
        system.nodes()[pi].support().values(),
        system.nodes()[pj].support().values(),
    );
    let ncols = sj.len();
    let (mut exy, mut ex, mut ey) = (0.0, 0.0, 0.0);
    for (s, &p) in probs.iter().enumerate() {
        let (x, y) = (si[s / ncols], sj[s % ncols]);
        exy += p * x * y;
        ex += p * x;
        ey += p * y;
    }
    exy - ex * ey
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFit {
    /// `max_ij |Cov_θ(c_i, c_j) − Σ_ij|`.
    pub rho_star: f64,
    pub fitted_bivariates: Vec<BivariateMarginal>,
    pub covariances: Vec<f64>,
}

/// Couplings of the univariates whose covariances are closest to the
/// targets in max norm. The expert bivariate tables are not used.
pub fn closest_covariance(
    system: &MarginalSystem,
    target: &CovarianceTarget,
    tol: &SolveTolerances,
) -> Result<CovarianceFit, ConsistencyError> {
    require_forest(system)?;
    let mut program = ConicProgram::new(Sense::Minimize);
    let rho = program.add_var(true);
    program.add_objective(rho, 1.0);
    let mut blocks = Vec::new();
    for (e, table) in system.edges().iter().enumerate() {
        let (i, j) = table.edge();
        let sigma = target
            .get(i, j)
            .ok_or(ConsistencyError::MissingTarget(i, j))?;
        if !sigma.is_finite() {
            return Err(ConsistencyError::NonFiniteTarget(i, j));
        }
        let (pi, pj) = system.edge_positions(e);
        let (ui, uj) = (&system.nodes()[pi], &system.nodes()[pj]);
        let first = program.add_vars(table.probs().len(), true);
        add_margin_equalities(
            &mut program,
            first,
            table.rows(),
            table.cols(),
            Margin::Fixed(ui.probs()),
            Margin::Fixed(uj.probs()),
        );
        // E_θ[c_i c_j] − μ_i·μ_j means ∓ ρ + slack = Σ_ij, one row per side
        let offset = sigma + ui.mean() * uj.mean();
        let (si, sj) = (ui.support().values(), uj.support().values());
        let moment: Vec<(usize, f64)> = (0..table.probs().len())
            .map(|s| (first + s, si[s / table.cols()] * sj[s % table.cols()]))
            .collect();
        for sign in [1.0, -1.0] {
            let slack = program.add_var(true);
            let mut terms: Vec<_> = moment.iter().map(|&(v, c)| (v, sign * c)).collect();
            terms.push((rho, -1.0));
            terms.push((slack, 1.0));
            program.add_equality(terms, sign * offset);
        }
        blocks.push(first);
    }
    let sol = solve_lp(&program, tol)?;
    if !sol.is_optimal() {
        return Err(ConsistencyError::SolverStatus(sol.status));
    }
    let mut fitted = Vec::new();
    let mut covariances = Vec::new();
    let mut rho_star: f64 = 0.0;
    for (e, (t, &first)) in system.edges().iter().zip(&blocks).enumerate() {
        let (i, j) = t.edge();
        let block = sol.primal[first..first + t.probs().len()].to_vec();
        let table = BivariateMarginal::from_unnormalized(i, j, t.rows(), t.cols(), block)?;
        let cov = table_covariance(system, e, table.probs());
        rho_star = rho_star.max((cov - target.get(i, j).unwrap_or(0.0)).abs());
        covariances.push(cov);
        fitted.push(table);
    }
    Ok(CovarianceFit {
        rho_star,
        fitted_bivariates: fitted,
        covariances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointOptions {
    /// Max-norm projection residual tolerated on the inputs.
    pub consistency_tol: f64,
    pub max_cells: usize,
}

impl Default for JointOptions {
    fn default() -> Self {
        Self {
            consistency_tol: 1e-8,
            max_cells: DEFAULT_JOINT_CAP,
        }
    }
}

/// The conditionally independent joint
/// `θ(c) = Π_i μ_i(c_i) · Π_ij θ_ij(c_i, c_j) / (μ_i(c_i) μ_j(c_j))`.
pub fn chow_liu_joint(
    system: &MarginalSystem,
    options: &JointOptions,
) -> Result<JointDistribution, ConsistencyError> {
    require_forest(system)?;
    let report = check_consistency(system, options.consistency_tol);
    if !report.consistent {
        return Err(ConsistencyError::InconsistentInputs {
            max_residual: report.max_residual,
        });
    }
    let size = system.product_space_size();
    if size > options.max_cells {
        return Err(ConsistencyError::ProductSpaceTooLarge {
            size,
            cap: options.max_cells,
        });
    }
    let n = system.node_count();
    let dims: Vec<usize> = system.nodes().iter().map(UnivariateMarginal::len).collect();
    let edges: Vec<(usize, usize, &BivariateMarginal)> = (0..system.edges().len())
        .map(|e| {
            let (a, b) = system.edge_positions(e);
            (a, b, &system.edges()[e])
        })
        .collect();

    let mut probs = Vec::with_capacity(size);
    let mut idx = vec![0usize; n];
    for _ in 0..size {
        let mut p = 1.0;
        for (a, node) in system.nodes().iter().enumerate() {
            p *= node.probs()[idx[a]];
        }
        if p > 0.0 {
            for &(a, b, t) in &edges {
                let ma = system.nodes()[a].probs()[idx[a]];
                let mb = system.nodes()[b].probs()[idx[b]];
                p *= t.get(idx[a], idx[b]) / (ma * mb);
            }
        }
        probs.push(p);
        for d in (0..n).rev() {
            idx[d] += 1;
            if idx[d] < dims[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    let sum: f64 = probs.iter().sum();
    if sum > 0.0 && sum != 1.0 {
        probs.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(JointDistribution::new(system.supports(), probs)?)
}
