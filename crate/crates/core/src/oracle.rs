//! Brute-force reference computations.
//!
//! Nothing here goes through the solver layer: values are obtained by
//! enumeration, grid search, or sorting, so they can check the optimizers.

use thiserror::Error;

use crate::bounds::PiecewiseObjective;
use crate::model::{BivariateMarginal, JointDistribution, UnivariateMarginal};

pub const DEFAULT_ENUMERATION_CAP: usize = 10_000_000;
/// Max free coordinates of a coupling grid, `(m_u − 1)(m_v − 1)`.
pub const MAX_GRID_DIMENSION: usize = 4;
pub const MAX_GRID_POINTS: f64 = 2e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("product space has {size} points, cap is {cap}")]
    ProductSpaceTooLarge { size: usize, cap: usize },
    #[error("objective covers {actual} variables, distribution has {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("coupling has {dims} free coordinates, grid search supports at most {max}")]
    DimensionTooLarge { dims: usize, max: usize },
    #[error("grid of about {0:e} points is too fine")]
    GridTooLarge(f64),
    #[error("no grid point satisfies the constraints")]
    NoFeasiblePoint,
}

/// `Σ_c θ(c) ψ(c)` by full enumeration of the joint table.
pub fn enumerate_expectation(
    joint: &JointDistribution,
    objective: &PiecewiseObjective,
) -> Result<f64, OracleError> {
    let size = joint.probs().len();
    if size > DEFAULT_ENUMERATION_CAP {
        return Err(OracleError::ProductSpaceTooLarge {
            size,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    if objective.num_nodes() != joint.supports().len() {
        return Err(OracleError::DimensionMismatch {
            expected: joint.supports().len(),
            actual: objective.num_nodes(),
        });
    }
    let mut c = vec![0.0; joint.supports().len()];
    let mut total = 0.0;
    for (idx, p) in joint.cells() {
        if p == 0.0 {
            continue;
        }
        for (a, &s) in idx.iter().enumerate() {
            c[a] = joint.supports()[a].values()[s];
        }
        total += p * objective.evaluate(&c);
    }
    Ok(total)
}

/// Maximizes `E[ψ(c_u, c_v)]` over couplings of `u` and `v` within KL
/// distance `rho` of `reference`, by a grid over the top-left
/// `(m_u − 1) × (m_v − 1)` block (the rest of the table follows from the
/// marginals). Each coordinate ranges over multiples of `step` together
/// with the reference value and the upper limit `min(u_r, v_c)`.
pub fn grid_search_coupling(
    u: &UnivariateMarginal,
    v: &UnivariateMarginal,
    objective: &PiecewiseObjective,
    reference: &BivariateMarginal,
    rho: f64,
    step: f64,
) -> Result<f64, OracleError> {
    let (mu, mv) = (u.len(), v.len());
    if objective.num_nodes() != 2 {
        return Err(OracleError::DimensionMismatch {
            expected: 2,
            actual: objective.num_nodes(),
        });
    }
    let dims = (mu - 1) * (mv - 1);
    if dims > MAX_GRID_DIMENSION {
        return Err(OracleError::DimensionTooLarge {
            dims,
            max: MAX_GRID_DIMENSION,
        });
    }
    let axes: Vec<Vec<f64>> = (0..dims)
        .map(|d| {
            let (r, c) = (d / (mv - 1), d % (mv - 1));
            let top = u.probs()[r].min(v.probs()[c]);
            let mut axis: Vec<f64> = (0..)
                .map(|n| n as f64 * step)
                .take_while(|&t| t < top)
                .collect();
            axis.push(top);
            axis.push(reference.get(r, c));
            axis.sort_by(f64::total_cmp);
            axis.dedup();
            axis
        })
        .collect();
    let points: f64 = axes.iter().map(|a| a.len() as f64).product();
    if points > MAX_GRID_POINTS {
        return Err(OracleError::GridTooLarge(points));
    }

    let payoff: Vec<f64> = (0..mu * mv)
        .map(|s| {
            objective.evaluate(&[
                u.support().values()[s / mv],
                v.support().values()[s % mv],
            ])
        })
        .collect();
    let mut best: Option<f64> = None;
    let mut pick = vec![0usize; dims];
    let mut table = vec![0.0; mu * mv];
    'outer: loop {
        // fill the free block, then the last column and the last row
        for d in 0..dims {
            let (r, c) = (d / (mv - 1), d % (mv - 1));
            table[r * mv + c] = axes[d][pick[d]];
        }
        let mut feasible = true;
        for r in 0..mu - 1 {
            let s: f64 = (0..mv - 1).map(|c| table[r * mv + c]).sum();
            table[r * mv + mv - 1] = u.probs()[r] - s;
        }
        for c in 0..mv {
            let s: f64 = (0..mu - 1).map(|r| table[r * mv + c]).sum();
            table[(mu - 1) * mv + c] = v.probs()[c] - s;
        }
        let mut kl = 0.0;
        for (s, &t) in table.iter().enumerate() {
            if t < -1e-14 {
                feasible = false;
                break;
            }
            if t > 1e-300 {
                let q = reference.probs()[s];
                if q == 0.0 {
                    feasible = false;
                    break;
                }
                kl += t * (t / q).ln();
            }
        }
        if feasible && kl <= rho + 1e-12 {
            let value: f64 = table.iter().zip(&payoff).map(|(t, p)| t.max(0.0) * p).sum();
            best = Some(best.map_or(value, |b: f64| b.max(value)));
        }
        for d in (0..dims).rev() {
            pick[d] += 1;
            if pick[d] < axes[d].len() {
                continue 'outer;
            }
            pick[d] = 0;
        }
        break;
    }
    best.ok_or(OracleError::NoFeasiblePoint)
}

/// Expected shortfall of a discrete distribution at level `alpha`: the
/// mean of the upper `1 − alpha` tail, splitting the atom at the quantile.
pub fn discrete_es(marginal: &UnivariateMarginal, alpha: f64) -> f64 {
    let tail = 1.0 - alpha;
    let mut remaining = tail;
    let mut total = 0.0;
    for (&c, &p) in marginal
        .support()
        .values()
        .iter()
        .zip(marginal.probs())
        .rev()
    {
        let take = p.min(remaining);
        total += take * c;
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }
    total / tail
}
