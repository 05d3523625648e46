//! Command-line front end for `frechet-core`.
//!
//! Exit codes: 0 success, 1 I/O, schema or usage error, 2 inconsistent
//! inputs, 3 edge set is not a tree, 4 solver failure, 5 radius below the
//! minimal consistent radius, 6 a `verify` check failed.

pub mod io;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use frechet_core::bounds::{
    comonotonic_bound, exact_bivariate_bound, frechet_bound_full, frechet_bound_tree,
    frozen_bivariate_bound, sweep, worst_case_expected_shortfall, BoundError, BoundOptions,
    BoundResult, PiecewiseObjective, Piece,
};
use frechet_core::consistency::{
    chow_liu_joint, closest_consistent, closest_consistent_perturbed_univariates,
    closest_covariance, max_entropy_fit, ConsistencyError, CovarianceTarget, JointOptions,
};
use frechet_core::copula::{vorobev_cycle, Recipe};
use frechet_core::model::{check_consistency, validate_tree, MarginalSystem, NodeId};
use frechet_core::oracle::{enumerate_expectation, grid_search_coupling, OracleError};
use frechet_core::random::random_consistent_path;
use frechet_core::solver::SolveTolerances;
use rand::SeedableRng;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::io::{
    bivariate_to_value, heatmap_csv, load_system, system_to_value, to_canonical_json,
    write_atomic,
};

/// Environment variable overriding the equality and budget tolerances.
pub const TOL_ENV: &str = "FRECHET_TOL";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
    #[error("edge set is not a tree (cycle closed by edge {cycle_edge:?})")]
    NotATree { cycle_edge: Option<(NodeId, NodeId)> },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("radius {rho} is below the minimal consistent radius rho* = {rho_star}; rerun with --rho >= {rho_star}")]
    BudgetInfeasible { rho: f64, rho_star: f64 },
    #[error("verification failed: {}", .0.join("; "))]
    VerifyFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Schema { .. } | CliError::Usage(_) => 1,
            CliError::Inconsistent(_) => 2,
            CliError::NotATree { .. } => 3,
            CliError::Solver(_) => 4,
            CliError::BudgetInfeasible { .. } => 5,
            CliError::VerifyFailed(_) => 6,
        }
    }

    fn to_value(&self) -> Value {
        let mut v = json!({ "error": self.to_string(), "exit_code": self.exit_code() });
        match self {
            CliError::BudgetInfeasible { rho, rho_star } => {
                v["rho"] = json!(rho);
                v["rho_star"] = json!(rho_star);
            }
            CliError::Schema { path, .. } => v["path"] = json!(path),
            _ => {}
        }
        v
    }
}

impl From<ConsistencyError> for CliError {
    fn from(e: ConsistencyError) -> Self {
        match e {
            ConsistencyError::NotATree(r) => CliError::NotATree {
                cycle_edge: r.cycle_edge,
            },
            ConsistencyError::InconsistentInputs { .. }
            | ConsistencyError::AbsoluteContinuityInfeasible { .. }
            | ConsistencyError::SupportPatternInfeasible(_) => CliError::Inconsistent(e.to_string()),
            ConsistencyError::Model(_)
            | ConsistencyError::MissingTarget { .. }
            | ConsistencyError::NonFiniteTarget { .. }
            | ConsistencyError::ProductSpaceTooLarge { .. } => CliError::Usage(e.to_string()),
            ConsistencyError::NonConvergence { .. }
            | ConsistencyError::SolverStatus(_)
            | ConsistencyError::Solver(_) => CliError::Solver(e.to_string()),
        }
    }
}

impl From<BoundError> for CliError {
    fn from(e: BoundError) -> Self {
        match e {
            BoundError::BudgetInfeasible { rho, rho_star } => {
                CliError::BudgetInfeasible { rho, rho_star }
            }
            BoundError::Inconsistent { .. } | BoundError::Infeasible => {
                CliError::Inconsistent(e.to_string())
            }
            BoundError::Consistency(c) => c.into(),
            BoundError::ObjectiveShape { .. }
            | BoundError::NoPieces
            | BoundError::InvalidRho(_)
            | BoundError::InvalidAlpha(_)
            | BoundError::ProductSpaceTooLarge { .. }
            | BoundError::Model(_) => CliError::Usage(e.to_string()),
            BoundError::SolverStatus(_) | BoundError::Solver(_) => CliError::Solver(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "frechet", version, about = "Worst-case expected shortfall over Fréchet classes with KL-neighbourhood bivariates")]
pub struct Cli {
    /// Print only machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Equality and budget tolerance (overrides FRECHET_TOL).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Relative duality gap tolerance.
    #[arg(long, global = true)]
    pub gap_tol: Option<f64>,
    /// Interior-point iteration cap.
    #[arg(long, global = true)]
    pub max_iter: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate the graph and check projection consistency.
    Check(CheckArgs),
    /// Closest consistent bivariates (minimal KL radius).
    Closest(ClosestArgs),
    /// Worst-case expectation of a piecewise-linear objective.
    Bound(BoundArgs),
    /// Worst-case expected shortfall of a weighted sum.
    Es(EsArgs),
    /// Tree bounds of the ES objective on a beta x rho grid.
    Sweep(SweepArgs),
    /// Write an experiment instance.
    Gen(GenArgs),
    /// Cross-check the bound against the brute-force oracles.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = frechet_core::model::DEFAULT_CONSISTENCY_TOL)]
    pub consistency_tol: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClosestVariant {
    /// Perturb the bivariates only.
    Over1,
    /// Perturb univariates and bivariates with one shared radius.
    Over1n,
    /// Match covariance targets in max norm.
    Covariance,
    /// Per-edge maximum-entropy (IPF) fit.
    Maxent,
}

#[derive(Debug, Args)]
pub struct ClosestArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "over1")]
    pub variant: ClosestVariant,
    /// Covariance target `I-J=VALUE` (repeatable); defaults to the
    /// covariances of the input tables.
    #[arg(long = "target", allow_hyphen_values = true)]
    pub targets: Vec<String>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ObjectiveArgs {
    /// Portfolio weights, comma separated, in node id order (default all ones).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub weights: Option<Vec<f64>>,
    /// Threshold of the shortfall objective `(x·c − beta)^+`.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    /// JSON file `{"pieces": [{"a": [...], "b": ...}, ...]}` instead of the
    /// shortfall objective.
    #[arg(long, conflicts_with_all = ["weights", "beta"])]
    pub objective: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BoundMode {
    Tree,
    Full,
    Comonotonic,
    ExactBivariate,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, value_enum, default_value = "tree")]
    pub mode: BoundMode,
    /// Edge `I-J` whose worst-case table is written as CSV.
    #[arg(long)]
    pub heatmap: Option<String>,
    /// Heat-map path (default `theta_<i>_<j>.csv`).
    #[arg(long)]
    pub heatmap_out: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EsArgs {
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub weights: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub betas: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub rhos: Vec<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GenRecipe {
    Uniform5path,
    Table1path,
    /// Pairwise-consistent binary triangle with no joint distribution.
    Vorobev,
    /// Random consistent path (uses --seed, --nodes, --support-size).
    RandomPath,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub recipe: GenRecipe,
    /// Gaussian copula parameter.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub param: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub nodes: usize,
    #[arg(long, default_value_t = 3)]
    pub support_size: usize,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Absolute tolerance of the comparisons.
    #[arg(long, default_value_t = 1e-5)]
    pub check_tol: f64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Result of a command: the JSON document, a one-line human summary, and
/// the exit code (nonzero for reports such as `check` on a bad input).
#[derive(Debug)]
pub struct Outcome {
    pub value: Value,
    pub summary: String,
    pub exit_code: i32,
}

impl Outcome {
    fn ok(value: Value, summary: String) -> Self {
        Self {
            value,
            summary,
            exit_code: 0,
        }
    }
}

/// Tolerances from defaults, then `FRECHET_TOL`, then flags.
pub fn resolve_tolerances(cli: &Cli, env: Option<&str>) -> Result<SolveTolerances, CliError> {
    let mut tol = SolveTolerances::default();
    if let Some(raw) = env {
        let t: f64 = raw
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{TOL_ENV}={raw} is not a number")))?;
        tol.equality = t;
        tol.budget = t;
    }
    if let Some(t) = cli.tol {
        tol.equality = t;
        tol.budget = t;
    }
    if let Some(g) = cli.gap_tol {
        tol.relative_gap = g;
    }
    if let Some(m) = cli.max_iter {
        tol.max_iter = m;
    }
    for (name, v) in [
        ("tolerance", tol.equality),
        ("gap tolerance", tol.relative_gap),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Usage(format!("{name} must be positive, got {v}")));
        }
    }
    if tol.max_iter == 0 {
        return Err(CliError::Usage("iteration cap must be positive".into()));
    }
    Ok(tol)
}

/// Runs a parsed command line, printing results, and returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let env = std::env::var(TOL_ENV).ok();
    let result = resolve_tolerances(cli, env.as_deref()).and_then(|tol| execute(cli, &tol));
    match result {
        Ok(outcome) => {
            if cli.json {
                print!("{}", to_canonical_json(&outcome.value));
            } else {
                println!("{}", outcome.summary);
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            if cli.json {
                print!("{}", to_canonical_json(&e.to_value()));
            }
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, tol: &SolveTolerances) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Check(a) => cmd_check(a),
        Command::Closest(a) => cmd_closest(a, tol),
        Command::Bound(a) => cmd_bound(a, tol),
        Command::Es(a) => cmd_es(a, tol),
        Command::Sweep(a) => cmd_sweep(a, tol),
        Command::Gen(a) => cmd_gen(a),
        Command::Verify(a) => cmd_verify(a, tol),
    }
}

fn write_output(path: &Option<PathBuf>, value: &Value) -> Result<(), CliError> {
    if let Some(p) = path {
        write_atomic(p, to_canonical_json(value).as_bytes())?;
    }
    Ok(())
}

pub fn cmd_check(args: &CheckArgs) -> Result<Outcome, CliError> {
    let system = load_system(&args.input)?;
    let tree = validate_tree(&system);
    let report = check_consistency(&system, args.consistency_tol);
    let edges: Vec<Value> = report
        .edges
        .iter()
        .map(|r| json!({ "i": r.edge.0, "j": r.edge.1, "left": r.left, "right": r.right }))
        .collect();
    let value = json!({
        "is_forest": tree.is_forest,
        "components": tree.components,
        "cycle_edge": tree.cycle_edge,
        "consistent": report.consistent,
        "tolerance": report.tolerance,
        "max_residual": report.max_residual,
        "edges": edges,
    });
    let (exit_code, summary) = if !tree.is_forest {
        (3, format!("not a tree: edge {:?} closes a cycle", tree.cycle_edge.unwrap_or_default()))
    } else if !report.consistent {
        (2, format!("inconsistent: max projection residual {:e}", report.max_residual))
    } else {
        (0, format!("consistent tree: max projection residual {:e}", report.max_residual))
    };
    Ok(Outcome {
        value,
        summary,
        exit_code,
    })
}

fn parse_edge(raw: &str) -> Result<(NodeId, NodeId), CliError> {
    let bad = || CliError::Usage(format!("edge must look like I-J, got {raw:?}"));
    let (i, j) = raw.split_once(['-', ',']).ok_or_else(bad)?;
    Ok((
        i.trim().parse().map_err(|_| bad())?,
        j.trim().parse().map_err(|_| bad())?,
    ))
}

fn parse_targets(system: &MarginalSystem, raw: &[String]) -> Result<CovarianceTarget, CliError> {
    if raw.is_empty() {
        return Ok(CovarianceTarget::from_bivariates(system));
    }
    let mut target = CovarianceTarget::new();
    for t in raw {
        let (edge, value) = t
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("target must look like I-J=VALUE, got {t:?}")))?;
        let (i, j) = parse_edge(edge)?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("bad covariance value in {t:?}")))?;
        target.insert(i, j, v);
    }
    Ok(target)
}

pub fn cmd_closest(args: &ClosestArgs, tol: &SolveTolerances) -> Result<Outcome, CliError> {
    let system = load_system(&args.input)?;
    let tables = |t: &[frechet_core::model::BivariateMarginal]| -> Vec<Value> {
        t.iter().map(bivariate_to_value).collect()
    };
    let value = match args.variant {
        ClosestVariant::Over1 | ClosestVariant::Over1n => {
            let r = match args.variant {
                ClosestVariant::Over1 => closest_consistent(&system, tol)?,
                _ => closest_consistent_perturbed_univariates(&system, tol)?,
            };
            let univariates = r.fitted_univariates.as_ref().map(|nodes| {
                nodes
                    .iter()
                    .map(|n| json!({ "id": n.node(), "support": n.support().values(), "probs": n.probs() }))
                    .collect::<Vec<_>>()
            });
            json!({
                "rho_star": r.rho_star,
                "fitted_bivariates": tables(&r.fitted_bivariates),
                "fitted_univariates": univariates,
                "per_edge_kl": r.per_edge_kl,
                "per_node_kl": r.per_node_kl,
            })
        }
        ClosestVariant::Covariance => {
            let target = parse_targets(&system, &args.targets)?;
            let r = closest_covariance(&system, &target, tol)?;
            json!({
                "rho_star": r.rho_star,
                "fitted_bivariates": tables(&r.fitted_bivariates),
                "covariances": r.covariances,
            })
        }
        ClosestVariant::Maxent => {
            let r = max_entropy_fit(&system)?;
            json!({
                "rho_star": r.max_kl(),
                "total_kl": r.total_kl(),
                "fitted_bivariates": tables(&r.fitted_bivariates),
                "per_edge_kl": r.per_edge_kl,
                "iterations": r.iterations,
            })
        }
    };
    let mut value = value;
    value["variant"] = json!(format!("{:?}", args.variant).to_lowercase());
    write_output(&args.output, &value)?;
    let summary = format!("rho_star = {}", value["rho_star"]);
    Ok(Outcome::ok(value, summary))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectiveFile {
    pieces: Vec<PieceFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PieceFile {
    a: Vec<f64>,
    b: f64,
}

fn weights_or_ones(system: &MarginalSystem, w: &Option<Vec<f64>>) -> Result<Vec<f64>, CliError> {
    let x = w.clone().unwrap_or_else(|| vec![1.0; system.node_count()]);
    if x.len() != system.node_count() {
        return Err(CliError::Usage(format!(
            "{} weights given for {} nodes",
            x.len(),
            system.node_count()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage("weights must be finite".into()));
    }
    Ok(x)
}

fn build_objective(system: &MarginalSystem, args: &ObjectiveArgs) -> Result<PiecewiseObjective, CliError> {
    if let Some(path) = &args.objective {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let file: ObjectiveFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            CliError::Schema {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            }
        })?;
        let pieces = file.pieces.into_iter().map(|p| Piece { a: p.a, b: p.b }).collect();
        return Ok(PiecewiseObjective::new(pieces)?);
    }
    let beta = args
        .beta
        .ok_or_else(|| CliError::Usage("either --beta or --objective is required".into()))?;
    let x = weights_or_ones(system, &args.weights)?;
    Ok(PiecewiseObjective::expected_shortfall(&x, beta))
}

fn bound_to_value(r: &BoundResult) -> Value {
    let pieces: Vec<Value> = r
        .pieces
        .iter()
        .map(|p| {
            json!({
                "piece": p.piece,
                "weight": p.weight,
                "univariates": p.univariates,
                "bivariates": p.bivariates,
            })
        })
        .collect();
    json!({
        "value": r.value,
        "worst_bivariates": r.worst_bivariates.iter().map(bivariate_to_value).collect::<Vec<_>>(),
        "piece_weights": r.piece_weights,
        "pieces": pieces,
        "realized_kl": r.realized_kl,
        "certificates": {
            "equality_residual": r.certificates.equality_residual,
            "budget_violation": r.certificates.budget_violation,
            "nonneg_violation": r.certificates.nonneg_violation,
            "relative_gap": r.certificates.relative_gap,
        },
    })
}

fn write_heatmap(
    system: &MarginalSystem,
    tables: &[frechet_core::model::BivariateMarginal],
    edge: (NodeId, NodeId),
    path: &Path,
) -> Result<(), CliError> {
    let (i, j) = if edge.0 < edge.1 { edge } else { (edge.1, edge.0) };
    let t = tables
        .iter()
        .find(|t| t.edge() == (i, j))
        .ok_or_else(|| CliError::Usage(format!("no edge ({i}, {j}) in the input")))?;
    let rows = system.nodes()[system.position(i).expect("edge endpoint")].support();
    let cols = system.nodes()[system.position(j).expect("edge endpoint")].support();
    write_atomic(path, &heatmap_csv(t, rows, cols)?)
}

fn bound_options(tol: &SolveTolerances) -> BoundOptions {
    BoundOptions {
        tolerances: *tol,
        ..BoundOptions::default()
    }
}

pub fn cmd_bound(args: &BoundArgs, tol: &SolveTolerances) -> Result<Outcome, CliError> {
    let system = load_system(&args.input)?;
    let objective = build_objective(&system, &args.objective)?;
    let opts = bound_options(tol);
    let result = match args.mode {
        BoundMode::Tree => Some(frechet_bound_tree(&system, &objective, args.rho, &opts)?),
        BoundMode::Full => Some(frechet_bound_full(&system, &objective, args.rho, &opts)?),
        BoundMode::ExactBivariate => Some(exact_bivariate_bound(&system, &objective, &opts)?),
        BoundMode::Comonotonic => None,
    };
    let mut value = match &result {
        Some(r) => bound_to_value(r),
        None => json!({ "value": comonotonic_bound(system.nodes(), &objective) }),
    };
    value["mode"] = json!(format!("{:?}", args.mode).to_lowercase());
    value["rho"] = json!(args.rho);
    if let Some(raw) = &args.heatmap {
        let edge = parse_edge(raw)?;
        let r = result
            .as_ref()
            .ok_or_else(|| CliError::Usage("--heatmap needs a mode with worst-case tables".into()))?;
        let path = args
            .heatmap_out
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("theta_{}_{}.csv", edge.0, edge.1)));
        write_heatmap(&system, &r.worst_bivariates, edge, &path)?;
    }
    write_output(&args.output, &value)?;
    let summary = format!("bound = {}", value["value"]);
    Ok(Outcome::ok(value, summary))
}

pub fn cmd_es(args: &EsArgs, tol: &SolveTolerances) -> Result<Outcome, CliError> {
    let system = load_system(&args.input)?;
    let x = weights_or_ones(&system, &args.weights)?;
    let r = worst_case_expected_shortfall(&system, &x, args.alpha, args.rho, &bound_options(tol))?;
    let value = json!({
        "value": r.value,
        "beta_star": r.beta_star,
        "alpha": args.alpha,
        "rho": args.rho,
        "weights": x,
        "evaluations": r.evaluations,
    });
    write_output(&args.output, &value)?;
    let summary = format!("ES = {} (beta* = {})", r.value, r.beta_star);
    Ok(Outcome::ok(value, summary))
}

pub fn cmd_sweep(args: &SweepArgs, tol: &SolveTolerances) -> Result<Outcome, CliError> {
    let system = load_system(&args.input)?;
    let x = weights_or_ones(&system, &args.weights)?;
    if args.rhos.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(CliError::Usage("radii must be finite and nonnegative".into()));
    }
    std::fs::create_dir_all(&args.out_dir).map_err(|source| CliError::Io {
        path: args.out_dir.display().to_string(),
        source,
    })?;
    let table = sweep(&system, &x, &args.betas, &args.rhos, &bound_options(tol))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Usage(format!("csv: {e}"));
    let mut header = vec!["beta\\rho".to_string()];
    header.extend(args.rhos.iter().map(|r| r.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    let mut failures = Vec::new();
    for (b, beta) in args.betas.iter().enumerate() {
        let mut record = vec![beta.to_string()];
        for (r, rho) in args.rhos.iter().enumerate() {
            match &table.cell(b, r).outcome {
                Ok(res) => {
                    record.push(format!("{:.16e}", res.value));
                    for t in &res.worst_bivariates {
                        let (i, j) = t.edge();
                        let name = format!("theta_{i}_{j}_b{beta}_r{rho}.csv");
                        write_heatmap(&system, &res.worst_bivariates, (i, j), &args.out_dir.join(name))?;
                    }
                }
                Err(e) => {
                    log::warn!("cell beta={beta} rho={rho}: {e}");
                    failures.push(json!({ "beta": beta, "rho": rho, "error": e.to_string() }));
                    record.push(String::new());
                }
            }
        }
        w.write_record(&record).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(format!("csv: {e}")))?;
    write_atomic(&args.out_dir.join("bounds.csv"), &bytes)?;

    let values: Vec<Vec<Value>> = (0..args.betas.len())
        .map(|b| {
            (0..args.rhos.len())
                .map(|r| match &table.cell(b, r).outcome {
                    Ok(res) => json!(res.value),
                    Err(_) => Value::Null,
                })
                .collect()
        })
        .collect();
    let value = json!({
        "betas": args.betas,
        "rhos": args.rhos,
        "values": values,
        "failures": failures,
        "out_dir": args.out_dir.display().to_string(),
    });
    let summary = format!(
        "{} cells written to {} ({} failed)",
        table.cells.len(),
        args.out_dir.display(),
        failures.len()
    );
    Ok(Outcome::ok(value, summary))
}

pub fn cmd_gen(args: &GenArgs) -> Result<Outcome, CliError> {
    let copula = |r: Recipe| r.build(args.param).map_err(|e| CliError::Usage(e.to_string()));
    let system = match args.recipe {
        GenRecipe::Uniform5path => copula(Recipe::Uniform5Path)?,
        GenRecipe::Table1path => copula(Recipe::Table1Path)?,
        GenRecipe::Vorobev => vorobev_cycle(),
        GenRecipe::RandomPath => {
            if args.nodes == 0 || args.support_size == 0 {
                return Err(CliError::Usage("--nodes and --support-size must be positive".into()));
            }
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
            random_consistent_path(&mut rng, args.nodes, args.support_size)
        }
    };
    let value = system_to_value(&system);
    write_output(&args.output, &value)?;
    // without an output file the instance itself is the result
    let summary = match &args.output {
        Some(p) => format!("wrote {}", p.display()),
        None => to_canonical_json(&value).trim_end().to_string(),
    };
    Ok(Outcome::ok(value, summary))
}

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

pub fn cmd_verify(args: &VerifyArgs, tol: &SolveTolerances) -> Result<Outcome, CliError> {
    let system = load_system(&args.input)?;
    let objective = build_objective(&system, &args.objective)?;
    let opts = bound_options(tol);
    let eps = args.check_tol;
    let tree = frechet_bound_tree(&system, &objective, args.rho, &opts)?;
    let mut checks = Vec::new();

    match frechet_bound_full(&system, &objective, args.rho, &opts) {
        Ok(full) => checks.push(Check {
            name: "tree_vs_full",
            passed: (tree.value - full.value).abs() <= eps,
            detail: format!("tree {} full {}", tree.value, full.value),
        }),
        Err(BoundError::ProductSpaceTooLarge { size, .. }) => {
            log::info!("skipping the full program: {size} cells")
        }
        Err(e) => return Err(e.into()),
    }

    // mixture over pieces of the Chow-Liu joints of the certificates
    let joint_opts = JointOptions {
        consistency_tol: 1e-6,
        ..JointOptions::default()
    };
    let mut mixture = 0.0;
    let mut reconstructed = true;
    for piece in tree.pieces.iter().filter(|p| p.weight >= 1e-6) {
        let sys = tree
            .piece_system(&system, piece)
            .map_err(|e| CliError::Solver(e.to_string()))?;
        match chow_liu_joint(&sys, &joint_opts) {
            Ok(joint) => mixture += piece.weight * enumerate_expectation(&joint, &objective)?,
            Err(ConsistencyError::ProductSpaceTooLarge { .. }) => reconstructed = false,
            Err(e) => return Err(CliError::Solver(format!("certificate of piece {}: {e}", piece.piece))),
        }
    }
    if reconstructed {
        checks.push(Check {
            name: "certificate_reconstruction",
            passed: mixture >= tree.value - eps,
            detail: format!("mixture {mixture} bound {}", tree.value),
        });
    }

    let nonneg = objective.pieces().iter().all(|p| p.a.iter().all(|&a| a >= 0.0));
    let como = comonotonic_bound(system.nodes(), &objective);
    if nonneg {
        checks.push(Check {
            name: "below_comonotonic",
            passed: tree.value <= como + eps,
            detail: format!("bound {} comonotonic {como}", tree.value),
        });
    }
    if check_consistency(&system, frechet_core::model::DEFAULT_CONSISTENCY_TOL).consistent {
        let exact = exact_bivariate_bound(&system, &objective, &opts)?;
        checks.push(Check {
            name: "above_exact_bivariate",
            passed: tree.value >= exact.value - eps,
            detail: format!("bound {} exact {}", tree.value, exact.value),
        });
    } else {
        let fit = max_entropy_fit(&system)?;
        let frozen = frozen_bivariate_bound(&system, fit.fitted_bivariates, &objective, &opts)?;
        checks.push(Check {
            name: "above_maxent_frozen",
            passed: tree.value >= frozen.value - eps,
            detail: format!("bound {} maxent-frozen {}", tree.value, frozen.value),
        });
    }
    if system.node_count() == 2 && system.edges().len() == 1 {
        let (u, v) = (&system.nodes()[0], &system.nodes()[1]);
        match grid_search_coupling(u, v, &objective, &system.edges()[0], args.rho, 1e-2) {
            Ok(grid) => checks.push(Check {
                name: "grid_search_below_bound",
                passed: grid <= tree.value + eps,
                detail: format!("grid {grid} bound {}", tree.value),
            }),
            Err(e) => log::info!("skipping grid search: {e}"),
        }
    }

    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    let value = json!({
        "bound": tree.value,
        "rho": args.rho,
        "checks": checks
            .iter()
            .map(|c| json!({ "name": c.name, "passed": c.passed, "detail": c.detail }))
            .collect::<Vec<_>>(),
    });
    write_output(&args.output, &value)?;
    if !failed.is_empty() {
        return Err(CliError::VerifyFailed(failed));
    }
    let summary = format!("{} checks passed (bound {})", checks.len(), tree.value);
    Ok(Outcome::ok(value, summary))
}
