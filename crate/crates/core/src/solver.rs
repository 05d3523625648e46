//! Structured convex programs: a linear objective, linear equalities,
//! nonnegativity, and relative-entropy budgets.
//!
//! An entropy budget reads
//!
//! ```text
//! Σ_s x_s log(x_s / q_s) ≤ ρ + Σ_l g_l y_l
//! ```
//!
//! where the right-hand side may depend linearly on other variables (this
//! is how epigraph variables such as a shared radius are expressed). Each
//! term `x log(x/q) ≤ t` is posed as `(q, x, -t)` in the exponential cone
//! `closure{(u, v, w) : v > 0, u ≥ v·exp(w/v)}`.
//!
//! Two backends sit behind the same [`Solution`] contract: [`solve`] hands
//! the conic form to an interior-point method, [`solve_lp`] runs a simplex
//! method on budget-free programs. Every returned solution is re-checked by
//! direct evaluation of the constraints; solver internals are not trusted.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("variable index {index} out of range ({num_vars} variables)")]
    VariableOutOfRange { index: usize, num_vars: usize },
    #[error("variable {0} appears in an entropy budget but is not constrained nonnegative")]
    BudgetVariableNotNonnegative(usize),
    #[error("reference weight {weight} for variable {index} must be nonnegative and finite")]
    InvalidReferenceWeight { index: usize, weight: f64 },
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("program has entropy budgets; use the conic backend")]
    NotLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearEquality {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyBudget {
    /// `(variable, reference weight q_s > 0)`.
    pub terms: Vec<(usize, f64)>,
    /// Constant part of the right-hand side.
    pub budget: f64,
    /// Linear part of the right-hand side, `Σ g_l y_l`.
    pub budget_terms: Vec<(usize, f64)>,
    /// Set when the constraints force `Σ x_s = Σ q_s`. Each cone then
    /// bounds the nonnegative term `x log(x/q) − x + q`, which has the same
    /// sum but avoids cancellation between terms when the budget is tiny.
    pub mass_preserving: bool,
}

impl EntropyBudget {
    pub fn fixed(terms: Vec<(usize, f64)>, budget: f64) -> Self {
        Self {
            terms,
            budget,
            budget_terms: Vec::new(),
            mass_preserving: false,
        }
    }

    pub fn mass_preserving(mut self) -> Self {
        self.mass_preserving = true;
        self
    }
}

/// Builder and container for one convex program.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    sense: Sense,
    objective: Vec<f64>,
    nonneg: Vec<bool>,
    equalities: Vec<LinearEquality>,
    budgets: Vec<EntropyBudget>,
}

impl ConicProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            objective: Vec::new(),
            nonneg: Vec::new(),
            equalities: Vec::new(),
            budgets: Vec::new(),
        }
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn equalities(&self) -> &[LinearEquality] {
        &self.equalities
    }

    pub fn entropy_budgets(&self) -> &[EntropyBudget] {
        &self.budgets
    }

    pub fn is_nonneg(&self, var: usize) -> bool {
        self.nonneg[var]
    }

    pub fn add_var(&mut self, nonneg: bool) -> usize {
        self.objective.push(0.0);
        self.nonneg.push(nonneg);
        self.objective.len() - 1
    }

    /// Adds `count` variables and returns the index of the first.
    pub fn add_vars(&mut self, count: usize, nonneg: bool) -> usize {
        let first = self.num_vars();
        for _ in 0..count {
            self.add_var(nonneg);
        }
        first
    }

    /// Adds `coef` to the objective coefficient of `var`.
    pub fn add_objective(&mut self, var: usize, coef: f64) {
        self.objective[var] += coef;
    }

    pub fn add_equality(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(LinearEquality { terms, rhs });
    }

    /// Adds an entropy budget. Terms whose reference weight is zero are
    /// removed from the budget and their variable is pinned to zero, since
    /// relative entropy is finite only on the support of the reference.
    pub fn add_entropy_budget(&mut self, budget: EntropyBudget) -> Result<(), SolverError> {
        let mut kept = Vec::with_capacity(budget.terms.len());
        for &(index, weight) in &budget.terms {
            self.check_index(index)?;
            if !self.nonneg[index] {
                return Err(SolverError::BudgetVariableNotNonnegative(index));
            }
            if !(weight >= 0.0) || !weight.is_finite() {
                return Err(SolverError::InvalidReferenceWeight { index, weight });
            }
            if weight == 0.0 {
                self.add_equality(vec![(index, 1.0)], 0.0);
            } else {
                kept.push((index, weight));
            }
        }
        for &(index, _) in &budget.budget_terms {
            self.check_index(index)?;
        }
        self.budgets.push(EntropyBudget {
            terms: kept,
            ..budget
        });
        Ok(())
    }

    fn check_index(&self, index: usize) -> Result<(), SolverError> {
        if index >= self.num_vars() {
            return Err(SolverError::VariableOutOfRange {
                index,
                num_vars: self.num_vars(),
            });
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), SolverError> {
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(SolverError::NonFinite("objective"));
        }
        for eq in &self.equalities {
            if !eq.rhs.is_finite() || eq.terms.iter().any(|(_, c)| !c.is_finite()) {
                return Err(SolverError::NonFinite("equality"));
            }
            for &(v, _) in &eq.terms {
                self.check_index(v)?;
            }
        }
        for b in &self.budgets {
            if !b.budget.is_finite() || b.budget_terms.iter().any(|(_, c)| !c.is_finite()) {
                return Err(SolverError::NonFinite("entropy budget"));
            }
        }
        Ok(())
    }

    /// Objective value of `x` in the program's own sense.
    pub fn evaluate_objective(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Max absolute equality residual of `x`.
    pub fn equality_residual(&self, x: &[f64]) -> f64 {
        self.equalities
            .iter()
            .map(|eq| {
                let lhs: f64 = eq.terms.iter().map(|&(v, c)| c * x[v]).sum();
                (lhs - eq.rhs).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Max amount by which `x` exceeds an entropy budget (0 if none).
    pub fn budget_violation(&self, x: &[f64]) -> f64 {
        self.budget_violations(x).into_iter().fold(0.0, f64::max)
    }

    /// Excess of `x` over each entropy budget, 0 where satisfied.
    pub fn budget_violations(&self, x: &[f64]) -> Vec<f64> {
        self.budgets
            .iter()
            .map(|b| {
                let lhs: f64 = b
                    .terms
                    .iter()
                    .map(|&(v, q)| entropy_term(x[v], q))
                    .sum();
                let rhs = b.budget + b.budget_terms.iter().map(|&(v, g)| g * x[v]).sum::<f64>();
                (lhs - rhs).max(0.0)
            })
            .collect()
    }

    /// Most negative value among nonnegative variables, as a positive number.
    pub fn nonneg_violation(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.nonneg)
            .filter(|(_, nn)| **nn)
            .map(|(v, _)| (-v).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// `x log(x / q)`, extended by continuity to 0 at `x = 0`.
pub fn entropy_term(x: f64, q: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * (x / q).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    /// Equalities are satisfiable but no point meets the entropy budgets.
    BudgetInfeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveTolerances {
    pub equality: f64,
    pub budget: f64,
    pub relative_gap: f64,
    pub max_iter: u32,
}

impl Default for SolveTolerances {
    fn default() -> Self {
        Self {
            equality: 1e-8,
            budget: 1e-8,
            relative_gap: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificates {
    pub equality_residual: f64,
    pub budget_violation: f64,
    pub nonneg_violation: f64,
    pub relative_gap: f64,
}

impl Certificates {
    fn within(&self, tol: &SolveTolerances) -> bool {
        self.equality_residual <= tol.equality
            && self.budget_violation <= tol.budget
            && self.nonneg_violation <= tol.equality
            && self.relative_gap <= tol.relative_gap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    pub objective_value: f64,
    pub certificates: Certificates,
    pub iterations: u32,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    fn failed(status: SolveStatus, num_vars: usize) -> Self {
        Self {
            status,
            primal: vec![f64::NAN; num_vars],
            objective_value: f64::NAN,
            certificates: Certificates {
                equality_residual: f64::NAN,
                budget_violation: f64::NAN,
                nonneg_violation: f64::NAN,
                relative_gap: f64::NAN,
            },
            iterations: 0,
        }
    }
}

struct Assembled {
    a: CscMatrix<f64>,
    b: Vec<f64>,
    q: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    total_vars: usize,
}

/// Lays out `A x + s = b, s ∈ K` with variables `[x, t, τ]`, where `t`
/// holds one epigraph variable per entropy term and `τ` is an optional
/// phase-one slack added to every budget right-hand side.
fn assemble(program: &ConicProgram, phase_one: bool) -> Assembled {
    let n = program.num_vars();
    let term_count: usize = program.budgets.iter().map(|b| b.terms.len()).sum();
    let total_vars = n + term_count + usize::from(phase_one);
    let tau = n + term_count;

    let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::new();
    let mut push = |r: usize, c: usize, v: f64| {
        rows.push(r);
        cols.push(c);
        vals.push(v);
    };
    let mut cones = Vec::new();

    let mut row = 0;
    for eq in &program.equalities {
        for &(v, c) in &eq.terms {
            push(row, v, c);
        }
        b.push(eq.rhs);
        row += 1;
    }
    if !program.equalities.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(program.equalities.len()));
    }

    let nonneg_start = row;
    for (v, _) in program.nonneg.iter().enumerate().filter(|(_, nn)| **nn) {
        push(row, v, -1.0);
        b.push(0.0);
        row += 1;
    }
    let mut t = n;
    for budget in &program.budgets {
        // ρ + Σ g y (+ τ) − Σ t ≥ 0
        for _ in &budget.terms {
            push(row, t, 1.0);
            t += 1;
        }
        for &(v, g) in &budget.budget_terms {
            push(row, v, -g);
        }
        if phase_one {
            push(row, tau, -1.0);
        }
        b.push(budget.budget);
        row += 1;
    }
    if phase_one {
        push(row, tau, -1.0);
        b.push(0.0);
        row += 1;
    }
    if row > nonneg_start {
        cones.push(SupportedConeT::NonnegativeConeT(row - nonneg_start));
    }

    let mut t = n;
    for budget in &program.budgets {
        for &(v, weight) in &budget.terms {
            // (−t, x, q) in clarabel's (x, y, z) ordering: y·exp(x/y) ≤ z;
            // the mass-preserving form uses (q − t − x, x, q)
            push(row, t, 1.0);
            if budget.mass_preserving {
                push(row, v, 1.0);
                b.push(weight);
            } else {
                b.push(0.0);
            }
            push(row + 1, v, -1.0);
            b.push(0.0);
            b.push(weight);
            row += 3;
            t += 1;
            cones.push(SupportedConeT::ExponentialConeT());
        }
    }

    let mut q = vec![0.0; total_vars];
    if phase_one {
        q[tau] = 1.0;
    } else {
        let sign = match program.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        for (qi, c) in q.iter_mut().zip(&program.objective) {
            *qi = sign * c;
        }
    }

    let a = CscMatrix::new_from_triplets(row, total_vars, rows, cols, vals);
    Assembled {
        a,
        b,
        q,
        cones,
        total_vars,
    }
}

struct RawSolve {
    status: SolverStatus,
    x: Vec<f64>,
    z: Vec<f64>,
    primal_obj: f64,
    dual_obj: f64,
    iterations: u32,
}

/// Linear-algebra settings of one interior-point attempt.
#[derive(Debug, Clone, Copy)]
struct Profile {
    static_regularization: f64,
    refinement_reltol: f64,
    refinement_max_iter: u32,
}

/// Tried in order after a numerical failure. Tiny entropy budgets need
/// either less regularization or more refinement than the defaults, and
/// neither change alone fixes every instance.
const PROFILES: [Profile; 3] = [
    Profile {
        static_regularization: 1e-8,
        refinement_reltol: 1e-13,
        refinement_max_iter: 10,
    },
    Profile {
        static_regularization: 1e-10,
        refinement_reltol: 1e-13,
        refinement_max_iter: 10,
    },
    Profile {
        static_regularization: 1e-8,
        refinement_reltol: 1e-15,
        refinement_max_iter: 50,
    },
];

fn run_interior_point(assembled: Assembled, tol: &SolveTolerances, profile: &Profile) -> RawSolve {
    let settings = DefaultSettings {
        verbose: false,
        max_iter: tol.max_iter,
        tol_gap_abs: 1e-10,
        tol_gap_rel: 1e-10,
        tol_feas: 1e-10,
        tol_ktratio: 1e-8,
        presolve_enable: false,
        static_regularization_constant: profile.static_regularization,
        iterative_refinement_reltol: profile.refinement_reltol,
        iterative_refinement_max_iter: profile.refinement_max_iter,
        ..DefaultSettings::default()
    };
    let p = CscMatrix::zeros((assembled.total_vars, assembled.total_vars));
    let mut solver = match DefaultSolver::new(
        &p,
        &assembled.q,
        &assembled.a,
        &assembled.b,
        &assembled.cones,
        settings,
    ) {
        Ok(s) => s,
        Err(_) => {
            return RawSolve {
                status: SolverStatus::NumericalError,
                x: vec![f64::NAN; assembled.total_vars],
                z: Vec::new(),
                primal_obj: f64::NAN,
                dual_obj: f64::NAN,
                iterations: 0,
            }
        }
    };
    solver.solve();
    let sol = &solver.solution;
    RawSolve {
        status: sol.status,
        x: sol.x.clone(),
        z: sol.z.clone(),
        primal_obj: sol.obj_val,
        dual_obj: sol.obj_val_dual,
        iterations: sol.iterations,
    }
}

fn certify(program: &ConicProgram, mut x: Vec<f64>, relative_gap: f64) -> (Vec<f64>, Certificates) {
    let nonneg_violation = program.nonneg_violation(&x);
    for (v, nn) in x.iter_mut().zip(&program.nonneg) {
        if *nn && *v < 0.0 {
            *v = 0.0;
        }
    }
    let certificates = Certificates {
        equality_residual: program.equality_residual(&x),
        budget_violation: program.budget_violation(&x),
        nonneg_violation,
        relative_gap,
    };
    (x, certificates)
}

/// Budget tightening rounds attempted when the interior-point method stops
/// with a small budget excess.
const TIGHTENING_ROUNDS: usize = 3;
/// Excesses above this are not treated as round-off.
const TIGHTENING_LIMIT: f64 = 1e-5;

/// One interior-point solve with budget tightening. Returns the last raw
/// status and the iteration count when no certified point was found.
fn attempt(
    program: &ConicProgram,
    tol: &SolveTolerances,
    profile: &Profile,
) -> Result<Solution, (SolverStatus, u32)> {
    let n = program.num_vars();
    let budget_row = program.equalities.len() + program.nonneg.iter().filter(|v| **v).count();
    let mut work = program.clone();
    let mut tightening_gap = 0.0;
    let mut last_status = SolverStatus::Unsolved;
    let mut iterations = 0;
    for round in 0..=TIGHTENING_ROUNDS {
        let raw = run_interior_point(assemble(&work, false), tol, profile);
        log::debug!("interior point: {:?} after {} iterations", raw.status, raw.iterations);
        last_status = raw.status;
        iterations += raw.iterations;
        let converged = matches!(
            raw.status,
            SolverStatus::Solved
                | SolverStatus::AlmostSolved
                | SolverStatus::MaxIterations
                | SolverStatus::InsufficientProgress
        );
        if !converged || raw.x.iter().any(|v| !v.is_finite()) {
            break;
        }
        let scale = raw.primal_obj.abs().max(1.0);
        let gap = (raw.primal_obj - raw.dual_obj).abs() / scale + tightening_gap;
        let mut x = raw.x;
        x.truncate(n);
        let (x, certificates) = certify(program, x, gap);
        log::debug!("certificates: {certificates:?}");
        if certificates.within(tol) {
            return Ok(Solution {
                status: SolveStatus::Optimal,
                objective_value: program.evaluate_objective(&x),
                primal: x,
                certificates,
                iterations,
            });
        }
        let only_budget = certificates.equality_residual <= tol.equality
            && certificates.nonneg_violation <= tol.equality
            && certificates.budget_violation <= TIGHTENING_LIMIT;
        if !only_budget || round == TIGHTENING_ROUNDS {
            if raw.status == SolverStatus::Solved && program.budgets.is_empty() {
                return Ok(Solution {
                    status: SolveStatus::NumericalFailure,
                    objective_value: program.evaluate_objective(&x),
                    primal: x,
                    certificates,
                    iterations,
                });
            }
            break;
        }
        let violations = program.budget_violations(&x);
        if violations.iter().all(|&v| v <= 0.0) {
            // tightening would re-solve the same program
            break;
        }
        for (b, excess) in violations.into_iter().enumerate() {
            if excess > 0.0 {
                let shift = 2.0 * excess;
                work.budgets[b].budget -= shift;
                let dual = raw.z.get(budget_row + b).copied().unwrap_or(0.0).abs();
                tightening_gap += dual * shift / scale;
            }
        }
    }
    Err((last_status, iterations))
}

/// Solves a program with the exponential-cone interior-point backend.
///
/// Interior-point iterates on programs with hundreds of exponential cones
/// tend to stall with each cone satisfied to ~1e-10, which adds up to a
/// budget excess above the certificate tolerance. When that is the only
/// failing certificate, the violated budgets are tightened by twice their
/// excess and the program is solved again. The returned point is always
/// certified against the original program, and the gap estimate absorbs
/// the objective change implied by the budget duals. After a numerical
/// failure the whole procedure is repeated under the next [`Profile`].
pub fn solve(program: &ConicProgram, tol: &SolveTolerances) -> Result<Solution, SolverError> {
    program.validate()?;
    let n = program.num_vars();
    let mut last_status = SolverStatus::Unsolved;
    let mut iterations = 0;
    for profile in &PROFILES {
        match attempt(program, tol, profile) {
            Ok(solution) => {
                return Ok(Solution {
                    iterations: iterations + solution.iterations,
                    ..solution
                })
            }
            Err((status, iters)) => {
                last_status = status;
                iterations += iters;
            }
        }
        if matches!(
            last_status,
            SolverStatus::PrimalInfeasible
                | SolverStatus::AlmostPrimalInfeasible
                | SolverStatus::DualInfeasible
                | SolverStatus::AlmostDualInfeasible
        ) {
            break;
        }
    }
    if matches!(
        last_status,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible
    ) {
        return Ok(Solution::failed(SolveStatus::Unbounded, n));
    }
    let status = if program.budgets.is_empty() {
        if matches!(
            last_status,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible
        ) {
            SolveStatus::Infeasible
        } else {
            SolveStatus::NumericalFailure
        }
    } else {
        classify_with_phase_one(program, tol)
    };
    let mut out = Solution::failed(status, n);
    out.iterations = iterations;
    Ok(out)
}

/// Minimizes the common budget excess `τ ≥ 0` subject to the equalities.
/// Returns the minimal excess, or `None` when the equalities themselves are
/// infeasible.
pub fn minimal_budget_excess(program: &ConicProgram, tol: &SolveTolerances) -> Option<f64> {
    let raw = run_interior_point(assemble(program, true), tol, &PROFILES[0]);
    match raw.status {
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => None,
        _ if raw.x.iter().all(|v| v.is_finite()) => raw.x.last().copied(),
        _ => Some(f64::NAN),
    }
}

fn classify_with_phase_one(program: &ConicProgram, tol: &SolveTolerances) -> SolveStatus {
    match minimal_budget_excess(program, tol) {
        None => SolveStatus::Infeasible,
        Some(excess) if excess > tol.budget => SolveStatus::BudgetInfeasible,
        Some(_) => SolveStatus::NumericalFailure,
    }
}

/// Solves a budget-free program with the simplex backend.
pub fn solve_lp(program: &ConicProgram, tol: &SolveTolerances) -> Result<Solution, SolverError> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};

    program.validate()?;
    if !program.budgets.is_empty() {
        return Err(SolverError::NotLinear);
    }
    let n = program.num_vars();
    let direction = match program.sense {
        Sense::Minimize => OptimizationDirection::Minimize,
        Sense::Maximize => OptimizationDirection::Maximize,
    };
    let mut lp = Problem::new(direction);
    let vars: Vec<_> = (0..n)
        .map(|v| {
            let bounds = if program.nonneg[v] {
                (0.0, f64::INFINITY)
            } else {
                (f64::NEG_INFINITY, f64::INFINITY)
            };
            lp.add_var(program.objective[v], bounds)
        })
        .collect();
    for eq in &program.equalities {
        let terms: Vec<_> = eq.terms.iter().map(|&(v, c)| (vars[v], c)).collect();
        lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, eq.rhs);
    }
    match lp.solve() {
        Ok(sol) => {
            let x: Vec<f64> = vars.iter().map(|v| *sol.var_value(*v)).collect();
            let (x, certificates) = certify(program, x, 0.0);
            let status = if certificates.within(tol) {
                SolveStatus::Optimal
            } else {
                SolveStatus::NumericalFailure
            };
            Ok(Solution {
                status,
                objective_value: program.evaluate_objective(&x),
                primal: x,
                certificates,
                iterations: 0,
            })
        }
        Err(minilp::Error::Infeasible) => Ok(Solution::failed(SolveStatus::Infeasible, n)),
        Err(minilp::Error::Unbounded) => Ok(Solution::failed(SolveStatus::Unbounded, n)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simplex_program(m: usize, sense: Sense) -> (ConicProgram, usize) {
        let mut p = ConicProgram::new(sense);
        let x = p.add_vars(m, true);
        p.add_equality((x..x + m).map(|v| (v, 1.0)).collect(), 1.0);
        (p, x)
    }

    #[test]
    fn fully_determined_lp() {
        let mut p = ConicProgram::new(Sense::Maximize);
        let x = p.add_vars(3, true);
        for (k, val) in [0.2, 0.5, 0.3].into_iter().enumerate() {
            p.add_objective(x + k, 1.0);
            p.add_equality(vec![(x + k, 1.0)], val);
        }
        let tol = SolveTolerances::default();
        for sol in [solve(&p, &tol).unwrap(), solve_lp(&p, &tol).unwrap()] {
            assert!(sol.is_optimal());
            assert!((sol.objective_value - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_maximum_is_uniform() {
        // maximize −Σ x log x  ⇔  minimize t with Σ x log x ≤ t
        for m in [2usize, 5, 9] {
            let (mut p, x) = simplex_program(m, Sense::Minimize);
            let t = p.add_var(false);
            p.add_objective(t, 1.0);
            p.add_entropy_budget(EntropyBudget {
                terms: (x..x + m).map(|v| (v, 1.0)).collect(),
                budget: 0.0,
                budget_terms: vec![(t, 1.0)],
                mass_preserving: false,
            })
            .unwrap();
            let sol = solve(&p, &SolveTolerances::default()).unwrap();
            assert!(sol.is_optimal(), "{:?}", sol.status);
            assert!((-sol.objective_value - (m as f64).ln()).abs() < 1e-7);
            for v in x..x + m {
                assert!((sol.primal[v] - 1.0 / m as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn two_by_two_transport_corner() {
        // maximize the diagonal mass of a coupling of (0.3, 0.7) and (0.6, 0.4)
        let mut p = ConicProgram::new(Sense::Maximize);
        let x = p.add_vars(4, true);
        p.add_objective(x, 1.0);
        p.add_objective(x + 3, 1.0);
        p.add_equality(vec![(x, 1.0), (x + 1, 1.0)], 0.3);
        p.add_equality(vec![(x + 2, 1.0), (x + 3, 1.0)], 0.7);
        p.add_equality(vec![(x, 1.0), (x + 2, 1.0)], 0.6);
        p.add_equality(vec![(x + 1, 1.0), (x + 3, 1.0)], 0.4);
        let sol = solve_lp(&p, &SolveTolerances::default()).unwrap();
        assert!(sol.is_optimal());
        // Fréchet–Hoeffding upper corner: min(0.3, 0.6) + min(0.7, 0.4)
        assert!((sol.objective_value - 0.7).abs() < 1e-9);
    }

    #[test]
    fn contradictory_equalities_are_infeasible() {
        let mut p = ConicProgram::new(Sense::Minimize);
        let x = p.add_var(true);
        p.add_equality(vec![(x, 1.0)], 1.0);
        p.add_equality(vec![(x, 1.0)], 2.0);
        let tol = SolveTolerances::default();
        assert_eq!(solve_lp(&p, &tol).unwrap().status, SolveStatus::Infeasible);
        assert_eq!(solve(&p, &tol).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_is_reported() {
        let mut p = ConicProgram::new(Sense::Maximize);
        let x = p.add_var(true);
        p.add_objective(x, 1.0);
        let tol = SolveTolerances::default();
        assert_eq!(solve_lp(&p, &tol).unwrap().status, SolveStatus::Unbounded);
        assert_eq!(solve(&p, &tol).unwrap().status, SolveStatus::Unbounded);
    }

    #[test]
    fn budget_infeasibility_is_distinguished() {
        // x must equal (0.9, 0.1) but KL(x, uniform) ≈ 0.368 > 0.1
        let (mut p, x) = simplex_program(2, Sense::Minimize);
        p.add_equality(vec![(x, 1.0)], 0.9);
        p.add_entropy_budget(EntropyBudget::fixed(vec![(x, 0.5), (x + 1, 0.5)], 0.1))
            .unwrap();
        let tol = SolveTolerances::default();
        assert_eq!(solve(&p, &tol).unwrap().status, SolveStatus::BudgetInfeasible);
        let excess = minimal_budget_excess(&p, &tol).unwrap();
        let kl = 0.9 * (1.8f64).ln() + 0.1 * (0.2f64).ln();
        assert!((excess - (kl - 0.1)).abs() < 1e-6);
    }

    #[test]
    fn zero_reference_weight_pins_variable() {
        let (mut p, x) = simplex_program(3, Sense::Maximize);
        p.add_objective(x + 2, 1.0);
        p.add_entropy_budget(EntropyBudget::fixed(
            vec![(x, 0.5), (x + 1, 0.5), (x + 2, 0.0)],
            10.0,
        ))
        .unwrap();
        assert_eq!(p.entropy_budgets()[0].terms.len(), 2);
        let sol = solve(&p, &SolveTolerances::default()).unwrap();
        assert!(sol.is_optimal());
        assert!(sol.primal[x + 2].abs() < 1e-9);
    }

    #[test]
    fn malformed_programs_rejected() {
        let mut p = ConicProgram::new(Sense::Minimize);
        let free = p.add_var(false);
        assert_eq!(
            p.add_entropy_budget(EntropyBudget::fixed(vec![(free, 1.0)], 1.0)),
            Err(SolverError::BudgetVariableNotNonnegative(free))
        );
        let x = p.add_var(true);
        assert!(matches!(
            p.add_entropy_budget(EntropyBudget::fixed(vec![(x, -1.0)], 1.0)),
            Err(SolverError::InvalidReferenceWeight { .. })
        ));
        p.add_equality(vec![(7, 1.0)], 0.0);
        assert!(matches!(
            solve(&p, &SolveTolerances::default()),
            Err(SolverError::VariableOutOfRange { index: 7, .. })
        ));
    }

    #[test]
    fn kl_ball_linear_minimum_matches_grid() {
        // min c·x over the 2-simplex ∩ {KL(x, q) ≤ 0.05}
        let c = [0.7, -0.4, 0.2];
        let q = [0.5, 0.2, 0.3];
        let rho = 0.05;
        let (mut p, x) = simplex_program(3, Sense::Minimize);
        for k in 0..3 {
            p.add_objective(x + k, c[k]);
        }
        p.add_entropy_budget(EntropyBudget::fixed(
            (0..3).map(|k| (x + k, q[k])).collect(),
            rho,
        ))
        .unwrap();
        let sol = solve(&p, &SolveTolerances::default()).unwrap();
        assert!(sol.is_optimal());

        // The minimizer is the exponential tilt x ∝ q·exp(−λc) whose KL
        // to q equals ρ; find λ by bisection.
        let tilt = |lambda: f64| {
            let w: Vec<f64> = (0..3).map(|k| q[k] * (-lambda * c[k]).exp()).collect();
            let z: f64 = w.iter().sum();
            let x: Vec<f64> = w.iter().map(|v| v / z).collect();
            let kl: f64 = (0..3).map(|k| x[k] * (x[k] / q[k]).ln()).sum();
            (kl, (0..3).map(|k| c[k] * x[k]).sum::<f64>())
        };
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if tilt(mid).0 < rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let best = tilt(lo).1;
        assert!((sol.objective_value - best).abs() < 1e-7, "{} vs {best}", sol.objective_value);
    }

    #[test]
    fn budget_monotonicity_and_scaling() {
        let q = [0.1, 0.2, 0.3, 0.4];
        let build = |rho: f64, scale: f64| {
            let (mut p, x) = simplex_program(4, Sense::Maximize);
            for k in 0..4 {
                p.add_objective(x + k, scale * (k as f64 + 1.0));
            }
            p.add_entropy_budget(EntropyBudget::fixed(
                (0..4).map(|k| (x + k, q[k])).collect(),
                rho,
            ))
            .unwrap();
            solve(&p, &SolveTolerances::default()).unwrap().objective_value
        };
        let mut prev = f64::NEG_INFINITY;
        for rho in [0.0, 1e-4, 0.01, 0.1, 1.0, 5.0] {
            let v = build(rho, 1.0);
            assert!(prev <= v + 1e-7);
            prev = v;
        }
        let (a, b) = (build(0.2, 1.0), build(0.2, 3.5));
        assert!((b - 3.5 * a).abs() <= 1e-7 * b.abs());
    }

    #[test]
    fn random_lp_backends_agree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            // transportation-style LP over 10 variables (2×5 coupling)
            let mut p = ConicProgram::new(Sense::Maximize);
            let x = p.add_vars(10, true);
            for v in x..x + 10 {
                p.add_objective(v, rng.gen_range(-1.0..1.0));
            }
            let mut row: Vec<f64> = (0..2).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|r| *r /= s);
            let mut col: Vec<f64> = (0..5).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = col.iter().sum();
            col.iter_mut().for_each(|r| *r /= s);
            for (a, &r) in row.iter().enumerate() {
                p.add_equality((0..5).map(|b| (x + a * 5 + b, 1.0)).collect(), r);
            }
            for (b, &c) in col.iter().enumerate().take(4) {
                p.add_equality((0..2).map(|a| (x + a * 5 + b, 1.0)).collect(), c);
            }
            let tol = SolveTolerances::default();
            let lp = solve_lp(&p, &tol).unwrap();
            let ip = solve(&p, &tol).unwrap();
            assert!(lp.is_optimal() && ip.is_optimal());
            assert!((lp.objective_value - ip.objective_value).abs() < 1e-7);
        }
    }
}
