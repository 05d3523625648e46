//! Seeded random instances for tests and the CLI.

use rand::Rng;

use crate::model::{BivariateMarginal, JointDistribution, MarginalSystem, Support, UnivariateMarginal};

/// Random support of `m` distinct values, rounded to 1e-3 so that files
/// stay readable.
pub fn random_support<R: Rng>(rng: &mut R, m: usize) -> Support {
    let mut values = Vec::with_capacity(m);
    let mut x = rng.gen_range(-2.0..2.0f64);
    for _ in 0..m {
        values.push((x * 1000.0).round() / 1000.0);
        x += rng.gen_range(0.1..1.5);
    }
    Support::new(values).expect("increasing by construction")
}

/// A random joint distribution with strictly positive cells.
pub fn random_joint<R: Rng>(rng: &mut R, supports: Vec<Support>) -> JointDistribution {
    let size: usize = supports.iter().map(Support::len).product();
    let mut probs: Vec<f64> = (0..size).map(|_| rng.gen_range(0.05..1.0)).collect();
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    JointDistribution::new(supports, probs).expect("normalized by construction")
}

/// A consistent system on the path `1 - 2 - ... - n`, obtained by
/// projecting a random joint over `n` variables with `m` outcomes each.
pub fn random_consistent_path<R: Rng>(rng: &mut R, n: usize, m: usize) -> MarginalSystem {
    let supports: Vec<Support> = (0..n).map(|_| random_support(rng, m)).collect();
    let joint = random_joint(rng, supports.clone());
    let nodes = supports
        .iter()
        .enumerate()
        .map(|(a, s)| {
            UnivariateMarginal::from_unnormalized(a as u32 + 1, s.clone(), joint.project_univariate(a))
                .expect("projection of a joint")
        })
        .collect();
    let edges = (0..n.saturating_sub(1))
        .map(|a| {
            BivariateMarginal::from_unnormalized(
                a as u32 + 1,
                a as u32 + 2,
                m,
                m,
                joint.project_bivariate(a, a + 1),
            )
            .expect("projection of a joint")
        })
        .collect();
    MarginalSystem::new(nodes, edges).expect("shapes agree by construction")
}
