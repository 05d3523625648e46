//! Worst-case expectations of piecewise-linear objectives over Fréchet
//! classes with KL-neighborhoods of expert bivariates.
//!
//! The tree program splits the (unknown) joint distribution by which affine
//! piece attains the maximum: `w_k` is the probability that piece `k` wins,
//! `v^k_i` and `v^k_ij` are the corresponding sub-probability marginals. On a
//! tree these local variables are enough, so the program stays polynomial in
//! the support sizes. The full program works on the product space directly
//! and is used as a check.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::consistency::{
    add_margin_equalities, check_absolute_continuity, closest_consistent, edge_projection, kl_terms,
    require_forest, table_from_block, ConsistencyError, Margin,
};
use crate::model::{
    check_consistency, kl_divergence, BivariateMarginal, MarginalSystem, ModelError,
    UnivariateMarginal, DEFAULT_CONSISTENCY_TOL,
};
use crate::solver::{
    solve, solve_lp, Certificates, ConicProgram, EntropyBudget, Sense, SolveStatus,
    SolveTolerances, SolverError,
};

/// Pieces whose weight falls below this are left out of the certificates.
pub const PIECE_WEIGHT_FLOOR: f64 = 1e-9;
/// Slack under `ρ*` tolerated before a query is declared budget-infeasible.
pub const RHO_STAR_SLACK: f64 = 1e-9;
/// Default cap on product-space cells per piece for the full program.
pub const DEFAULT_FULL_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("objective has {actual} coefficients per piece, system has {expected} nodes")]
    ObjectiveShape { expected: usize, actual: usize },
    #[error("objective needs at least one piece")]
    NoPieces,
    #[error("radius must be finite and nonnegative, got {0}")]
    InvalidRho(f64),
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("radius {rho} is below the minimal consistent radius {rho_star}")]
    BudgetInfeasible { rho: f64, rho_star: f64 },
    #[error("bivariates are inconsistent with univariates (max residual {max_residual:e})")]
    Inconsistent { max_residual: f64 },
    #[error("the constraint set is empty")]
    Infeasible,
    #[error("product space has {size} points, cap is {cap}")]
    ProductSpaceTooLarge { size: usize, cap: usize },
    #[error("solver returned {0:?}")]
    SolverStatus(SolveStatus),
    #[error(transparent)]
    Consistency(#[from] ConsistencyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One affine piece `c ↦ a·c + b`, with `a` indexed by node position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Piece {
    pub a: Vec<f64>,
    pub b: f64,
}

/// `ψ(c) = max_k (a_k·c + b_k)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseObjective {
    pieces: Vec<Piece>,
}

impl PiecewiseObjective {
    pub fn new(pieces: Vec<Piece>) -> Result<Self, BoundError> {
        let first = pieces.first().ok_or(BoundError::NoPieces)?;
        for p in &pieces {
            if p.a.len() != first.a.len() {
                return Err(BoundError::ObjectiveShape {
                    expected: first.a.len(),
                    actual: p.a.len(),
                });
            }
        }
        Ok(Self { pieces })
    }

    pub fn linear(a: Vec<f64>, b: f64) -> Self {
        Self {
            pieces: vec![Piece { a, b }],
        }
    }

    /// `(x·c − β)^+` as the two pieces `(x, −β)` and `(0, 0)`.
    pub fn expected_shortfall(x: &[f64], beta: f64) -> Self {
        Self {
            pieces: vec![
                Piece {
                    a: x.to_vec(),
                    b: -beta,
                },
                Piece {
                    a: vec![0.0; x.len()],
                    b: 0.0,
                },
            ],
        }
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.pieces[0].a.len()
    }

    /// Value of each piece at the outcome vector `c`.
    pub fn piece_values(&self, c: &[f64]) -> impl Iterator<Item = f64> + '_ {
        let c = c.to_vec();
        self.pieces
            .iter()
            .map(move |p| p.a.iter().zip(&c).map(|(a, x)| a * x).sum::<f64>() + p.b)
    }

    pub fn evaluate(&self, c: &[f64]) -> f64 {
        self.piece_values(c).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the first piece attaining the maximum at `c`.
    pub fn argmax(&self, c: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, v) in self.piece_values(c).enumerate() {
            if v > best.1 {
                best = (k, v);
            }
        }
        best.0
    }

    fn check_against(&self, system: &MarginalSystem) -> Result<(), BoundError> {
        if self.num_nodes() != system.node_count() {
            return Err(BoundError::ObjectiveShape {
                expected: system.node_count(),
                actual: self.num_nodes(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOptions {
    pub tolerances: SolveTolerances,
    /// Known `ρ*` of the system, to skip recomputing it.
    pub rho_star: Option<f64>,
    pub full_cap: usize,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            tolerances: SolveTolerances::default(),
            rho_star: None,
            full_cap: DEFAULT_FULL_CAP,
        }
    }
}

/// Split tables of one winning piece.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PieceCertificate {
    pub piece: usize,
    pub weight: f64,
    /// `v^k_i` per node position.
    pub univariates: Vec<Vec<f64>>,
    /// `v^k_ij` per edge, row-major.
    pub bivariates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub value: f64,
    pub worst_bivariates: Vec<BivariateMarginal>,
    pub piece_weights: Vec<f64>,
    /// Pieces with weight at least [`PIECE_WEIGHT_FLOOR`].
    pub pieces: Vec<PieceCertificate>,
    pub realized_kl: Vec<f64>,
    pub certificates: Certificates,
}

impl BoundResult {
    /// Normalized tables `(v^k_i / w_k, v^k_ij / w_k)` of a piece, as a
    /// marginal system over the same graph.
    pub fn piece_system(
        &self,
        system: &MarginalSystem,
        piece: &PieceCertificate,
    ) -> Result<MarginalSystem, ModelError> {
        let nodes = system
            .nodes()
            .iter()
            .zip(&piece.univariates)
            .map(|(n, v)| {
                UnivariateMarginal::from_unnormalized(n.node(), n.support().clone(), v.clone())
            })
            .collect::<Result<Vec<_>, _>>()?;
        let edges = system
            .edges()
            .iter()
            .zip(&piece.bivariates)
            .map(|(t, v)| {
                let (i, j) = t.edge();
                BivariateMarginal::from_unnormalized(i, j, t.rows(), t.cols(), v.clone())
            })
            .collect::<Result<Vec<_>, _>>()?;
        MarginalSystem::new(nodes, edges)
    }
}

fn check_rho(rho: f64) -> Result<(), BoundError> {
    if rho.is_finite() && rho >= 0.0 {
        Ok(())
    } else {
        Err(BoundError::InvalidRho(rho))
    }
}

/// Returns `Some(ρ*)` when the system is inconsistent and `ρ` clears it;
/// errors when `ρ` falls short.
fn clear_rho_star(
    system: &MarginalSystem,
    rho: f64,
    options: &BoundOptions,
) -> Result<Option<f64>, BoundError> {
    if check_consistency(system, DEFAULT_CONSISTENCY_TOL).consistent {
        return Ok(None);
    }
    let rho_star = match options.rho_star {
        Some(r) => r,
        None => closest_consistent(system, &options.tolerances)?.rho_star,
    };
    if rho < rho_star - RHO_STAR_SLACK || rho == 0.0 {
        return Err(BoundError::BudgetInfeasible { rho, rho_star });
    }
    Ok(Some(rho_star))
}

/// A KL budget is inactive when `ρ ≥ max_s log(1/μ_s)` over the support
/// of `μ`, since `KL(θ, μ) ≤ Σ θ_s log(1/μ_s)` for any `θ` on that support.
fn budget_is_inactive(reference: &[f64], rho: f64) -> bool {
    let worst = reference
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|q| -q.ln())
        .fold(0.0, f64::max);
    rho >= worst
}

enum EdgeMode {
    /// `θ_ij = μ_ij`.
    Frozen,
    /// `θ_ij` free on the support of `μ_ij`.
    SupportOnly,
    /// `KL(θ_ij, μ_ij) ≤ ρ`.
    Budget,
}

fn edge_mode(reference: &[f64], rho: f64) -> EdgeMode {
    if rho == 0.0 {
        EdgeMode::Frozen
    } else if budget_is_inactive(reference, rho) {
        EdgeMode::SupportOnly
    } else {
        EdgeMode::Budget
    }
}

/// Budget reference for one edge: the I-projection `θ*` of the expert table
/// onto the node marginals and `KL(θ*, μ_ij)`. By the Pythagorean identity
/// `KL(θ, μ_ij) ≤ ρ` becomes `KL(θ, θ*) ≤ ρ − KL(θ*, μ_ij)`, which stays
/// well posed as `ρ` approaches the minimal consistent radius.
struct EdgeReference {
    probs: Vec<f64>,
    offset: f64,
}

impl EdgeReference {
    fn budget(&self, rho: f64) -> f64 {
        (rho - self.offset).max(0.0)
    }

    fn mode(&self, rho: f64) -> EdgeMode {
        edge_mode(&self.probs, self.budget(rho))
    }
}

fn edge_references(system: &MarginalSystem) -> Result<Vec<EdgeReference>, BoundError> {
    (0..system.edges().len())
        .map(|e| {
            let (probs, offset) = edge_projection(system, e)?;
            Ok(EdgeReference { probs, offset })
        })
        .collect()
}

/// Ties `θ_ij` to the reference: pinned when frozen, zero off its support,
/// KL-bounded when the budget binds.
fn add_edge_budget(
    p: &mut ConicProgram,
    reference: &EdgeReference,
    rho: f64,
    t: usize,
) -> Result<(), BoundError> {
    match reference.mode(rho) {
        EdgeMode::Budget => p.add_entropy_budget(
            EntropyBudget::fixed(kl_terms(t, &reference.probs), reference.budget(rho))
                .mass_preserving(),
        )?,
        EdgeMode::SupportOnly => {
            for (s, &q) in reference.probs.iter().enumerate() {
                if q == 0.0 {
                    p.add_equality(vec![(t + s, 1.0)], 0.0);
                }
            }
        }
        EdgeMode::Frozen => {}
    }
    Ok(())
}

struct TreeLayout {
    w: usize,
    /// `[k][node]` first variable of `v^k_i`.
    v_node: Vec<Vec<usize>>,
    /// `[k][edge]` first variable of `v^k_ij`.
    v_edge: Vec<Vec<usize>>,
    /// First variable of `θ_ij` per edge, absent for frozen edges.
    theta: Vec<Option<usize>>,
}

fn build_tree_program(
    system: &MarginalSystem,
    objective: &PiecewiseObjective,
    rho: f64,
    references: &[EdgeReference],
) -> Result<(ConicProgram, TreeLayout), BoundError> {
    let kk = objective.len();
    let mut p = ConicProgram::new(Sense::Maximize);
    let w = p.add_vars(kk, true);
    p.add_equality((w..w + kk).map(|v| (v, 1.0)).collect(), 1.0);

    let mut v_node = Vec::with_capacity(kk);
    let mut v_edge = Vec::with_capacity(kk);
    for (k, piece) in objective.pieces().iter().enumerate() {
        p.add_objective(w + k, piece.b);
        let mut nodes = Vec::with_capacity(system.node_count());
        for (a, node) in system.nodes().iter().enumerate() {
            let first = p.add_vars(node.len(), true);
            for (s, c) in node.support().values().iter().enumerate() {
                p.add_objective(first + s, piece.a[a] * c);
            }
            // Σ_c v^k_i(c) = w_k; implied for the last piece
            if k + 1 < kk {
                let mut terms: Vec<_> = (first..first + node.len()).map(|v| (v, 1.0)).collect();
                terms.push((w + k, -1.0));
                p.add_equality(terms, 0.0);
            }
            nodes.push(first);
        }
        let mut edges = Vec::with_capacity(system.edges().len());
        for (e, table) in system.edges().iter().enumerate() {
            let (pi, pj) = system.edge_positions(e);
            let first = p.add_vars(table.probs().len(), true);
            add_margin_equalities(
                &mut p,
                first,
                table.rows(),
                table.cols(),
                Margin::Vars(nodes[pi]),
                Margin::Vars(nodes[pj]),
            );
            edges.push(first);
        }
        v_node.push(nodes);
        v_edge.push(edges);
    }
    // Σ_k v^k_i = μ_i
    for (a, node) in system.nodes().iter().enumerate() {
        for (s, &mass) in node.probs().iter().enumerate() {
            p.add_equality((0..kk).map(|k| (v_node[k][a] + s, 1.0)).collect(), mass);
        }
    }
    // Σ_k v^k_ij = θ_ij
    let mut theta = Vec::with_capacity(system.edges().len());
    for (e, reference) in references.iter().enumerate() {
        let t = match reference.mode(rho) {
            EdgeMode::Frozen => None,
            _ => Some(p.add_vars(reference.probs.len(), true)),
        };
        for (s, &mass) in reference.probs.iter().enumerate() {
            let mut terms: Vec<_> = (0..kk).map(|k| (v_edge[k][e] + s, 1.0)).collect();
            match t {
                None => p.add_equality(terms, mass),
                Some(t) => {
                    terms.push((t + s, -1.0));
                    p.add_equality(terms, 0.0);
                }
            }
        }
        if let Some(t) = t {
            add_edge_budget(&mut p, reference, rho, t)?;
        }
        theta.push(t);
    }
    Ok((
        p,
        TreeLayout {
            w,
            v_node,
            v_edge,
            theta,
        },
    ))
}

fn run(program: &ConicProgram, tol: &SolveTolerances) -> Result<crate::solver::Solution, BoundError> {
    if program.entropy_budgets().is_empty() {
        Ok(solve_lp(program, tol)?)
    } else {
        Ok(solve(program, tol)?)
    }
}

fn worst_tables(
    system: &MarginalSystem,
    primal: &[f64],
    theta: &[Option<usize>],
    references: &[EdgeReference],
) -> Result<(Vec<BivariateMarginal>, Vec<f64>), BoundError> {
    let mut tables = Vec::with_capacity(theta.len());
    let mut kls = Vec::with_capacity(theta.len());
    for ((table, t), reference) in system.edges().iter().zip(theta).zip(references) {
        let values = match t {
            None if reference.offset == 0.0 => {
                kls.push(0.0);
                tables.push(table.clone());
                continue;
            }
            None => &reference.probs[..],
            Some(t) => &primal[*t..*t + table.probs().len()],
        };
        let fitted =
            table_from_block(table.edge(), table.rows(), table.cols(), values, &reference.probs)?;
        kls.push(kl_divergence(fitted.probs(), table.probs())?);
        tables.push(fitted);
    }
    Ok((tables, kls))
}

/// Worst-case `E[ψ(c̃)]` over joints with the given univariates whose edge
/// bivariates lie within KL distance `ρ` of the expert tables. The edge set
/// must be a forest.
pub fn frechet_bound_tree(
    system: &MarginalSystem,
    objective: &PiecewiseObjective,
    rho: f64,
    options: &BoundOptions,
) -> Result<BoundResult, BoundError> {
    require_forest(system)?;
    objective.check_against(system)?;
    check_rho(rho)?;
    let rho_star = clear_rho_star(system, rho, options)?;
    if rho_star.is_some() {
        check_absolute_continuity(system)?;
    }

    let references = edge_references(system)?;
    let (program, layout) = build_tree_program(system, objective, rho, &references)?;
    let sol = run(&program, &options.tolerances)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::BudgetInfeasible | SolveStatus::Infeasible if rho_star.is_some() => {
            return Err(BoundError::BudgetInfeasible {
                rho,
                rho_star: rho_star.unwrap_or(0.0),
            })
        }
        SolveStatus::Infeasible | SolveStatus::BudgetInfeasible => {
            return Err(BoundError::Infeasible)
        }
        other => return Err(BoundError::SolverStatus(other)),
    }

    let x = &sol.primal;
    let (worst_bivariates, realized_kl) = worst_tables(system, x, &layout.theta, &references)?;
    let piece_weights: Vec<f64> = (0..objective.len()).map(|k| x[layout.w + k]).collect();
    let pieces = piece_weights
        .iter()
        .enumerate()
        .filter(|(_, &wk)| wk >= PIECE_WEIGHT_FLOOR)
        .map(|(k, &weight)| PieceCertificate {
            piece: k,
            weight,
            univariates: system
                .nodes()
                .iter()
                .zip(&layout.v_node[k])
                .map(|(n, &f)| x[f..f + n.len()].to_vec())
                .collect(),
            bivariates: system
                .edges()
                .iter()
                .zip(&layout.v_edge[k])
                .map(|(t, &f)| x[f..f + t.probs().len()].to_vec())
                .collect(),
        })
        .collect();
    Ok(BoundResult {
        value: sol.objective_value,
        worst_bivariates,
        piece_weights,
        pieces,
        realized_kl,
        certificates: sol.certificates,
    })
}

/// Enumerates the product space, last node fastest.
pub(crate) fn product_cells(dims: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let size: usize = dims.iter().product();
    let mut idx = vec![0usize; dims.len()];
    (0..size).map(move |n| {
        if n > 0 {
            for d in (0..dims.len()).rev() {
                idx[d] += 1;
                if idx[d] < dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        idx.clone()
    })
}

/// Same worst case as [`frechet_bound_tree`], posed over the full product
/// space. Accepts any edge set, including cycles.
pub fn frechet_bound_full(
    system: &MarginalSystem,
    objective: &PiecewiseObjective,
    rho: f64,
    options: &BoundOptions,
) -> Result<BoundResult, BoundError> {
    objective.check_against(system)?;
    check_rho(rho)?;
    let size = system.product_space_size();
    let cap = options.full_cap.saturating_mul(objective.len());
    if size > cap {
        return Err(BoundError::ProductSpaceTooLarge { size, cap });
    }
    if !check_consistency(system, DEFAULT_CONSISTENCY_TOL).consistent {
        check_absolute_continuity(system)?;
    }
    let references = edge_references(system)?;
    let dims: Vec<usize> = system.nodes().iter().map(UnivariateMarginal::len).collect();
    let cells: Vec<Vec<usize>> = product_cells(&dims).collect();
    let values: Vec<Vec<f64>> = cells
        .iter()
        .map(|idx| {
            system
                .nodes()
                .iter()
                .zip(idx)
                .map(|(n, &s)| n.support().values()[s])
                .collect()
        })
        .collect();

    let mut p = ConicProgram::new(Sense::Maximize);
    let joint = p.add_vars(size, true);
    for (n, c) in values.iter().enumerate() {
        p.add_objective(joint + n, objective.evaluate(c));
    }
    // univariate projections; all but one total mass constraint are implied
    for (a, node) in system.nodes().iter().enumerate() {
        let last = if a == 0 { node.len() } else { node.len() - 1 };
        for s in 0..last {
            let terms = cells
                .iter()
                .enumerate()
                .filter(|(_, idx)| idx[a] == s)
                .map(|(n, _)| (joint + n, 1.0))
                .collect();
            p.add_equality(terms, node.probs()[s]);
        }
    }
    let mut theta = Vec::with_capacity(system.edges().len());
    for (e, (table, reference)) in system.edges().iter().zip(&references).enumerate() {
        let (pa, pb) = system.edge_positions(e);
        let t = match reference.mode(rho) {
            EdgeMode::Frozen => None,
            _ => Some(p.add_vars(table.probs().len(), true)),
        };
        for (s, &mass) in reference.probs.iter().enumerate() {
            let (r, c) = (s / table.cols(), s % table.cols());
            let mut terms: Vec<_> = cells
                .iter()
                .enumerate()
                .filter(|(_, idx)| idx[pa] == r && idx[pb] == c)
                .map(|(n, _)| (joint + n, 1.0))
                .collect();
            match t {
                None => p.add_equality(terms, mass),
                Some(t) => {
                    terms.push((t + s, -1.0));
                    p.add_equality(terms, 0.0);
                }
            }
        }
        if let Some(t) = t {
            add_edge_budget(&mut p, reference, rho, t)?;
        }
        theta.push(t);
    }

    let sol = run(&p, &options.tolerances)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(BoundError::Infeasible),
        SolveStatus::BudgetInfeasible => {
            let rho_star = if crate::model::validate_tree(system).is_forest {
                closest_consistent(system, &options.tolerances)?.rho_star
            } else {
                f64::NAN
            };
            return Err(BoundError::BudgetInfeasible { rho, rho_star });
        }
        other => return Err(BoundError::SolverStatus(other)),
    }

    let x = &sol.primal;
    let (worst_bivariates, realized_kl) = worst_tables(system, x, &theta, &references)?;
    let kk = objective.len();
    let mut piece_weights = vec![0.0; kk];
    let mut univariates: Vec<Vec<Vec<f64>>> = (0..kk)
        .map(|_| system.nodes().iter().map(|n| vec![0.0; n.len()]).collect())
        .collect();
    let mut bivariates: Vec<Vec<Vec<f64>>> = (0..kk)
        .map(|_| {
            system
                .edges()
                .iter()
                .map(|t| vec![0.0; t.probs().len()])
                .collect()
        })
        .collect();
    for (n, (idx, c)) in cells.iter().zip(&values).enumerate() {
        let mass = x[joint + n];
        let k = objective.argmax(c);
        piece_weights[k] += mass;
        for (a, &s) in idx.iter().enumerate() {
            univariates[k][a][s] += mass;
        }
        for (e, table) in system.edges().iter().enumerate() {
            let (pa, pb) = system.edge_positions(e);
            bivariates[k][e][idx[pa] * table.cols() + idx[pb]] += mass;
        }
    }
    let pieces = (0..kk)
        .filter(|&k| piece_weights[k] >= PIECE_WEIGHT_FLOOR)
        .map(|k| PieceCertificate {
            piece: k,
            weight: piece_weights[k],
            univariates: univariates[k].clone(),
            bivariates: bivariates[k].clone(),
        })
        .collect();
    Ok(BoundResult {
        value: sol.objective_value,
        worst_bivariates,
        piece_weights,
        pieces,
        realized_kl,
        certificates: sol.certificates,
    })
}

/// `E[ψ]` under the comonotone coupling of the univariates: all quantile
/// functions driven by one uniform variable.
pub fn comonotonic_bound(nodes: &[UnivariateMarginal], objective: &PiecewiseObjective) -> f64 {
    if objective
        .pieces()
        .iter()
        .any(|p| p.a.iter().any(|&a| a < 0.0))
    {
        log::warn!("negative piece coefficients: the comonotone coupling need not be the worst case");
    }
    let cdfs: Vec<Vec<f64>> = nodes.iter().map(UnivariateMarginal::cdf).collect();
    let mut cuts: Vec<f64> = cdfs.iter().flatten().copied().filter(|&u| u > 0.0 && u < 1.0).collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut total = 0.0;
    let mut outcome = vec![0.0; nodes.len()];
    for slab in cuts.windows(2) {
        let width = slab[1] - slab[0];
        if width <= 0.0 {
            continue;
        }
        let mid = 0.5 * (slab[0] + slab[1]);
        for (a, (node, cdf)) in nodes.iter().zip(&cdfs).enumerate() {
            let s = cdf.iter().position(|&f| f >= mid).unwrap_or(cdf.len() - 1);
            outcome[a] = node.support().values()[s];
        }
        total += width * objective.evaluate(&outcome);
    }
    total
}

/// Worst case with the bivariates known exactly (`ρ = 0`).
pub fn exact_bivariate_bound(
    system: &MarginalSystem,
    objective: &PiecewiseObjective,
    options: &BoundOptions,
) -> Result<BoundResult, BoundError> {
    let report = check_consistency(system, DEFAULT_CONSISTENCY_TOL);
    if !report.consistent {
        return Err(BoundError::Inconsistent {
            max_residual: report.max_residual,
        });
    }
    frechet_bound_tree(system, objective, 0.0, options)
}

/// Exact-bivariate bound after replacing the expert tables by `bivariates`
/// (for instance the output of a maximum-entropy fit).
pub fn frozen_bivariate_bound(
    system: &MarginalSystem,
    bivariates: Vec<BivariateMarginal>,
    objective: &PiecewiseObjective,
    options: &BoundOptions,
) -> Result<BoundResult, BoundError> {
    exact_bivariate_bound(&system.with_bivariates(bivariates)?, objective, options)
}

/// `min Σ x_i c_i` and `max Σ x_i c_i` over the product of supports.
pub fn portfolio_range(system: &MarginalSystem, x: &[f64]) -> (f64, f64) {
    system
        .nodes()
        .iter()
        .zip(x)
        .fold((0.0, 0.0), |(lo, hi), (n, &xi)| {
            let (a, b) = (xi * n.support().min(), xi * n.support().max());
            (lo + a.min(b), hi + a.max(b))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EsResult {
    pub value: f64,
    pub beta_star: f64,
    /// Number of inner bound evaluations.
    pub evaluations: usize,
}

/// One evaluation of `g(β) = β + bound(β) / (1 − α)` with a subgradient.
#[derive(Debug, Clone, Copy)]
struct EsPoint {
    beta: f64,
    g: f64,
    slope: f64,
}

/// Worst-case expected shortfall of `Σ x_i c̃_i` at level `α`:
/// `min_β β + sup E[(x·c̃ − β)^+] / (1 − α)`.
///
/// The outer minimization is a golden-section search on the support range,
/// finished by intersecting supporting lines. The inner bound's derivative
/// in `β` is `−w_1` (the weight of the `x·c − β` piece), which gives the
/// subgradient `1 − w_1 / (1 − α)` at no extra cost.
pub fn worst_case_expected_shortfall(
    system: &MarginalSystem,
    x: &[f64],
    alpha: f64,
    rho: f64,
    options: &BoundOptions,
) -> Result<EsResult, BoundError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(BoundError::InvalidAlpha(alpha));
    }
    check_rho(rho)?;
    if x.len() != system.node_count() {
        return Err(BoundError::ObjectiveShape {
            expected: system.node_count(),
            actual: x.len(),
        });
    }
    let mut options = *options;
    if options.rho_star.is_none() {
        options.rho_star = clear_rho_star(system, rho, &options)?;
    }
    let mut evaluations = 0;
    let mut eval = |beta: f64| -> Result<EsPoint, BoundError> {
        evaluations += 1;
        let objective = PiecewiseObjective::expected_shortfall(x, beta);
        let r = frechet_bound_tree(system, &objective, rho, &options)?;
        Ok(EsPoint {
            beta,
            g: beta + r.value / (1.0 - alpha),
            slope: 1.0 - r.piece_weights[0] / (1.0 - alpha),
        })
    };

    let (lo, hi) = portfolio_range(system, x);
    let range = hi - lo;
    if range <= 0.0 {
        let p = eval(lo)?;
        return Ok(EsResult {
            value: p.g,
            beta_star: lo,
            evaluations,
        });
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = eval(b - inv_phi * (b - a))?;
    let mut d = eval(a + inv_phi * (b - a))?;
    let mut points = vec![c, d];
    while b - a > 1e-4 * range {
        if c.g <= d.g {
            b = d.beta;
            d = c;
            c = eval(b - inv_phi * (b - a))?;
            points.push(c);
        } else {
            a = c.beta;
            c = d;
            d = eval(a + inv_phi * (b - a))?;
            points.push(d);
        }
    }
    points.push(eval(lo)?);
    points.push(eval(hi)?);

    // polish: intersect the supporting lines of the nearest points on each
    // side of the minimizer, replacing one side per step
    let best_of = |pts: &[EsPoint]| {
        *pts.iter()
            .min_by(|p, q| p.g.total_cmp(&q.g))
            .expect("nonempty")
    };
    for _ in 0..20 {
        let best = best_of(&points);
        if best.slope.abs() <= 1e-12 {
            break;
        }
        let left = points
            .iter()
            .filter(|p| p.slope < 0.0)
            .max_by(|p, q| p.beta.total_cmp(&q.beta))
            .copied();
        let right = points
            .iter()
            .filter(|p| p.slope > 0.0)
            .min_by(|p, q| p.beta.total_cmp(&q.beta))
            .copied();
        let (Some(l), Some(r)) = (left, right) else { break };
        if r.beta - l.beta <= 1e-12 * range.max(1.0) {
            break;
        }
        let beta = (r.g - l.g + l.slope * l.beta - r.slope * r.beta) / (l.slope - r.slope);
        if !(beta > l.beta && beta < r.beta) {
            break;
        }
        let lower = l.g + l.slope * (beta - l.beta);
        let p = eval(beta)?;
        points.push(p);
        if p.g - lower <= 1e-10 * p.g.abs().max(1.0) {
            break;
        }
    }
    let best = best_of(&points);
    Ok(EsResult {
        value: best.g,
        beta_star: best.beta,
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub beta: f64,
    pub rho: f64,
    pub outcome: Result<BoundResult, BoundError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub betas: Vec<f64>,
    pub rhos: Vec<f64>,
    /// Row-major: `cells[b * rhos.len() + r]`.
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn cell(&self, b: usize, r: usize) -> &SweepCell {
        &self.cells[b * self.rhos.len() + r]
    }
}

/// Tree bounds of the ES objective `(x·c − β)^+` on a `β × ρ` grid. Cells
/// are solved in parallel; a failing cell is recorded and the rest go on.
pub fn sweep(
    system: &MarginalSystem,
    x: &[f64],
    betas: &[f64],
    rhos: &[f64],
    options: &BoundOptions,
) -> Result<SweepTable, BoundError> {
    require_forest(system)?;
    let mut options = *options;
    if options.rho_star.is_none()
        && !check_consistency(system, DEFAULT_CONSISTENCY_TOL).consistent
    {
        options.rho_star = Some(closest_consistent(system, &options.tolerances)?.rho_star);
    }
    let grid: Vec<(f64, f64)> = betas
        .iter()
        .flat_map(|&b| rhos.iter().map(move |&r| (b, r)))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(beta, rho)| SweepCell {
            beta,
            rho,
            outcome: frechet_bound_tree(
                system,
                &PiecewiseObjective::expected_shortfall(x, beta),
                rho,
                &options,
            ),
        })
        .collect();
    Ok(SweepTable {
        betas: betas.to_vec(),
        rhos: rhos.to_vec(),
        cells,
    })
}
