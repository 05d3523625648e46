//! Discretized bivariate Gaussian copulas and the stock test marginals.
//!
//! A cell `(a, b)` of the discretized table receives the copula mass of the
//! rectangle `(F_i(a-), F_i(a)] × (F_j(b-), F_j(b)]`, where `F` is the
//! discrete CDF of the corresponding marginal.

use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;
use thiserror::Error;

use crate::model::{
    BivariateMarginal, MarginalSystem, ModelError, NodeId, Support, UnivariateMarginal,
};

/// Cells below this mass are zeroed before renormalization.
pub const CELL_CLAMP: f64 = 1e-15;

/// Probabilities of the symmetric ten-point marginal used in the
/// non-uniform experiments.
pub const TABLE1_PROBS: [f64; 10] = [
    0.025, 0.050, 0.075, 0.15, 0.20, 0.20, 0.15, 0.075, 0.050, 0.025,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CopulaError {
    #[error("copula parameter must lie in (-1, 1), got {0}")]
    InvalidParameter(f64),
    #[error("expected a support of size {expected}, got {actual}")]
    WrongSupportSize { expected: usize, actual: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub family: CopulaFamily,
    pub parameter: f64,
}

impl CopulaSpec {
    pub fn gaussian(parameter: f64) -> Result<Self, CopulaError> {
        if !(parameter.abs() < 1.0) {
            return Err(CopulaError::InvalidParameter(parameter));
        }
        Ok(Self {
            family: CopulaFamily::Gaussian,
            parameter,
        })
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile; returns ±∞ at the endpoints.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else if p > 0.5 {
        -normal_quantile(1.0 - p)
    } else {
        // erfc_inv alone is good to about 1e-11; one Newton step on the
        // cdf brings it to rounding level.
        let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
        let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if density > 0.0 {
            x - (normal_cdf(x) - p) / density
        } else {
            x
        }
    }
}

// Gauss-Legendre (weight, abscissa) pairs on [-1, 1], positive half only.
const GL6: [(f64, f64); 3] = [
    (0.171_324_492_379_170_5, 0.932_469_514_203_152_2),
    (0.360_761_573_048_138_4, 0.661_209_386_466_264_7),
    (0.467_913_934_572_690_4, 0.238_619_186_083_197_0),
];
const GL12: [(f64, f64); 6] = [
    (0.047_175_336_386_511_77, 0.981_560_634_246_719_1),
    (0.106_939_325_995_318_3, 0.904_117_256_370_475_0),
    (0.160_078_328_543_346_4, 0.769_902_674_194_305_0),
    (0.203_167_426_723_065_9, 0.587_317_954_286_617_1),
    (0.233_492_536_538_354_7, 0.367_831_498_998_180_2),
    (0.249_147_045_813_402_9, 0.125_233_408_511_469_2),
];
const GL20: [(f64, f64); 10] = [
    (0.017_614_007_139_152_12, 0.993_128_599_185_094_9),
    (0.040_601_429_800_386_94, 0.963_971_927_277_913_8),
    (0.062_672_048_334_109_06, 0.912_234_428_251_325_9),
    (0.083_276_741_576_704_75, 0.839_116_971_822_218_8),
    (0.101_930_119_817_240_4, 0.746_331_906_460_150_8),
    (0.118_194_531_961_518_4, 0.636_053_680_726_515_0),
    (0.131_688_638_449_176_6, 0.510_867_001_950_827_1),
    (0.142_096_109_318_382_1, 0.373_706_088_715_419_6),
    (0.149_172_986_472_603_7, 0.227_785_851_141_645_1),
    (0.152_753_387_130_725_9, 0.076_526_521_133_497_33),
];

/// Upper orthant probability `P(X > h, Y > k)` for a standard bivariate
/// normal with correlation `r`.
///
/// Drezner–Wesolowsky method with Genz's double-precision modifications,
/// accurate to about 1e-15 absolute.
pub fn bivariate_normal_upper(h: f64, k: f64, r: f64) -> f64 {
    use std::f64::consts::PI;
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY {
            1.0
        } else {
            normal_cdf(-k)
        };
    }
    if k == f64::NEG_INFINITY {
        return normal_cdf(-h);
    }
    if r == 0.0 {
        return normal_cdf(-h) * normal_cdf(-k);
    }
    let two_pi = 2.0 * PI;
    let quad: &[(f64, f64)] = if r.abs() < 0.3 {
        &GL6
    } else if r.abs() < 0.75 {
        &GL12
    } else {
        &GL20
    };
    let nodes = || {
        quad.iter()
            .flat_map(|&(w, x)| [(w, 1.0 - x), (w, 1.0 + x)])
    };
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin() / 2.0;
        for (w, x) in nodes() {
            let sn = (asr * x).sin();
            bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        return (bvn * asr / two_pi + normal_cdf(-h) * normal_cdf(-k)).clamp(0.0, 1.0);
    }
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let a_sq = (1.0 - r) * (1.0 + r);
        let mut a = a_sq.sqrt();
        let b_sq = (h - k) * (h - k);
        let asr = -(b_sq / a_sq + hk) / 2.0;
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 80.0;
        if asr > -100.0 {
            bvn = a
                * asr.exp()
                * (1.0 - c * (b_sq - a_sq) * (1.0 - d * b_sq) / 3.0 + c * d * a_sq * a_sq);
        }
        if hk > -100.0 {
            let b = b_sq.sqrt();
            let sp = two_pi.sqrt() * normal_cdf(-b / a);
            bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * b_sq * (1.0 - d * b_sq) / 3.0);
        }
        a /= 2.0;
        let mut acc = 0.0;
        for (w, x) in nodes() {
            let xs = (a * x).powi(2);
            let asr = -(b_sq / xs + hk) / 2.0;
            if asr > -100.0 {
                let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                let rs = (1.0 - xs).sqrt();
                let ep = (-(hk / 2.0) * xs / (1.0 + rs).powi(2)).exp() / rs;
                acc += w * asr.exp() * (sp - ep);
            }
        }
        bvn = (a * acc - bvn) / two_pi;
    }
    let out = if r > 0.0 {
        bvn + normal_cdf(-h.max(k))
    } else if h >= k {
        -bvn
    } else {
        let l = if h < 0.0 {
            normal_cdf(k) - normal_cdf(h)
        } else {
            normal_cdf(-h) - normal_cdf(-k)
        };
        l - bvn
    };
    out.clamp(0.0, 1.0)
}

/// `P(X ≤ h, Y ≤ k)` for a standard bivariate normal with correlation `r`.
pub fn bivariate_normal_cdf(h: f64, k: f64, r: f64) -> f64 {
    bivariate_normal_upper(-h, -k, r)
}

/// Gaussian copula `C_r(u, v)`.
pub fn gaussian_copula(u: f64, v: f64, r: f64) -> f64 {
    if u <= 0.0 || v <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return v.min(1.0);
    }
    if v >= 1.0 {
        return u;
    }
    bivariate_normal_cdf(normal_quantile(u), normal_quantile(v), r)
}

/// Discretizes a copula against two discrete marginals.
///
/// The edge of the returned table is `(left.node(), right.node())`,
/// normalized to ascending order (transposing when needed).
pub fn discretize_gaussian_copula(
    spec: &CopulaSpec,
    left: &UnivariateMarginal,
    right: &UnivariateMarginal,
) -> Result<BivariateMarginal, CopulaError> {
    let r = spec.parameter;
    if !(r.abs() < 1.0) {
        return Err(CopulaError::InvalidParameter(r));
    }
    let (rows, cols) = (left.len(), right.len());
    if r == 0.0 {
        return Ok(BivariateMarginal::product(left, right));
    }
    let with_origin = |m: &UnivariateMarginal| {
        let mut f = vec![0.0];
        f.extend(m.cdf());
        f
    };
    let (f, g) = (with_origin(left), with_origin(right));
    let grid: Vec<Vec<f64>> = f
        .iter()
        .map(|&u| g.iter().map(|&v| gaussian_copula(u, v, r)).collect())
        .collect();
    let mut probs = Vec::with_capacity(rows * cols);
    for a in 0..rows {
        for b in 0..cols {
            let cell = grid[a + 1][b + 1] - grid[a][b + 1] - grid[a + 1][b] + grid[a][b];
            probs.push(if cell < CELL_CLAMP { 0.0 } else { cell });
        }
    }
    Ok(BivariateMarginal::from_unnormalized(
        left.node(),
        right.node(),
        rows,
        cols,
        probs,
    )?)
}

/// The ten-point symmetric marginal on a given support.
pub fn table1_marginal(
    node: NodeId,
    support: Support,
) -> Result<UnivariateMarginal, CopulaError> {
    if support.len() != TABLE1_PROBS.len() {
        return Err(CopulaError::WrongSupportSize {
            expected: TABLE1_PROBS.len(),
            actual: support.len(),
        });
    }
    Ok(UnivariateMarginal::new(node, support, TABLE1_PROBS.to_vec())?)
}

/// Pearson correlation of a bivariate table using the support values.
pub fn table_correlation(table: &BivariateMarginal, left: &Support, right: &Support) -> f64 {
    let (x, y) = (left.values(), right.values());
    let mut m = [0.0; 5];
    for a in 0..table.rows() {
        for b in 0..table.cols() {
            let p = table.get(a, b);
            m[0] += p * x[a];
            m[1] += p * y[b];
            m[2] += p * x[a] * x[a];
            m[3] += p * y[b] * y[b];
            m[4] += p * x[a] * y[b];
        }
    }
    let cov = m[4] - m[0] * m[1];
    cov / ((m[2] - m[0] * m[0]) * (m[3] - m[1] * m[1])).sqrt()
}

/// Named experiment instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recipe {
    /// Five uniform marginals on `{1..10}`, path edges, copula tables
    /// discretized against the same uniforms (consistent).
    Uniform5Path,
    /// Five ten-point symmetric marginals on `{1..10}`, path edges, copula
    /// tables discretized against uniforms (inconsistent).
    Table1Path,
}

impl Recipe {
    pub fn build(self, parameter: f64) -> Result<MarginalSystem, CopulaError> {
        match self {
            Recipe::Uniform5Path => uniform5_path(parameter),
            Recipe::Table1Path => table1_path(parameter),
        }
    }
}

fn path_edges(spec: &CopulaSpec, n: usize) -> Result<Vec<BivariateMarginal>, CopulaError> {
    (1..n as NodeId)
        .map(|i| {
            let u = UnivariateMarginal::uniform(i, Support::range(10));
            let v = UnivariateMarginal::uniform(i + 1, Support::range(10));
            discretize_gaussian_copula(spec, &u, &v)
        })
        .collect()
}

pub fn uniform5_path(parameter: f64) -> Result<MarginalSystem, CopulaError> {
    let spec = CopulaSpec::gaussian(parameter)?;
    let nodes = (1..=5)
        .map(|i| UnivariateMarginal::uniform(i, Support::range(10)))
        .collect();
    Ok(MarginalSystem::new(nodes, path_edges(&spec, 5)?)?)
}

pub fn table1_path(parameter: f64) -> Result<MarginalSystem, CopulaError> {
    let spec = CopulaSpec::gaussian(parameter)?;
    let nodes = (1..=5)
        .map(|i| table1_marginal(i, Support::range(10)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MarginalSystem::new(nodes, path_edges(&spec, 5)?)?)
}

/// Three fair binary variables on a triangle, each pair forced to differ.
/// Pairwise consistent, yet no joint distribution exists.
pub fn vorobev_cycle() -> MarginalSystem {
    let support = || Support::new(vec![0.0, 1.0]).expect("valid support");
    let nodes = (1..=3)
        .map(|i| UnivariateMarginal::uniform(i, support()))
        .collect();
    let anti = |i, j| BivariateMarginal::new(i, j, 2, 2, vec![0.0, 0.5, 0.5, 0.0]).expect("valid table");
    MarginalSystem::new(nodes, vec![anti(1, 2), anti(2, 3), anti(1, 3)]).expect("valid system")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{project_bivariate_to_univariate, Side};

    fn uniform(node: u32, m: usize) -> UnivariateMarginal {
        UnivariateMarginal::uniform(node, Support::range(m))
    }

    /// Adaptive Simpson on [a, b].
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64>(
            f: &F,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                return left + right + delta / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 40)
    }

    /// Rectangle probability by nested quadrature of the bivariate density.
    fn rectangle_quadrature(x0: f64, x1: f64, y0: f64, y1: f64, r: f64) -> f64 {
        // P(x0<X<x1, y0<Y<y1) = ∫ φ(x) [Φ((y1 - r x)/s) - Φ((y0 - r x)/s)] dx
        let s = (1.0 - r * r).sqrt();
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let cdf = |y: f64| 0.5 * libm::erfc(-y / std::f64::consts::SQRT_2);
        let f = |x: f64| phi(x) * (cdf((y1 - r * x) / s) - cdf((y0 - r * x) / s));
        simpson(&f, x0.max(-12.0), x1.min(12.0), 1e-14)
    }

    #[test]
    fn quantile_reference_values() {
        for (p, x) in [
            (0.1, -1.2815515655446004),
            (0.3, -0.5244005127080409),
            (0.7, 0.5244005127080407),
            (0.05, -1.6448536269514729),
        ] {
            assert!((normal_quantile(p) - x).abs() < 2e-15, "p = {p}");
        }
        assert_eq!(normal_quantile(0.5), 0.0);
    }

    #[test]
    fn bvn_reference_values() {
        // P(X<0, Y<0) = 1/4 + asin(r) / (2π)
        for r in [-0.95, -0.69, -0.2, 0.1, 0.5, 0.69, 0.93, 0.999] {
            let exact = 0.25 + (r as f64).asin() / (2.0 * std::f64::consts::PI);
            assert!((bivariate_normal_cdf(0.0, 0.0, r) - exact).abs() < 1e-14, "r = {r}");
        }
        // symmetry and reduction to univariate
        assert!((bivariate_normal_cdf(1.3, f64::INFINITY, 0.4) - normal_cdf(1.3)).abs() < 1e-15);
        let a = bivariate_normal_cdf(0.3, -1.1, 0.69);
        let b = bivariate_normal_cdf(-1.1, 0.3, 0.69);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn bvn_matches_quadrature() {
        for &r in &[0.69, -0.69, 0.2, 0.95, -0.95] {
            for &(h, k) in &[(-1.2816, -1.2816), (0.5, -0.3), (1.5, 2.0), (-2.0, 0.7)] {
                let quad = rectangle_quadrature(-12.0, h, -12.0, k, r);
                let v = bivariate_normal_cdf(h, k, r);
                assert!((v - quad).abs() < 1e-10, "r={r} h={h} k={k}: {v} vs {quad}");
            }
        }
    }

    #[test]
    fn independence_gives_product() {
        let left = UnivariateMarginal::new(1, Support::range(3), vec![0.2, 0.3, 0.5]).unwrap();
        let right = uniform(2, 4);
        let t = discretize_gaussian_copula(&CopulaSpec::gaussian(0.0).unwrap(), &left, &right)
            .unwrap();
        assert_eq!(t, BivariateMarginal::product(&left, &right));
    }

    #[test]
    fn near_perfect_dependence_concentrates_on_diagonal() {
        let u = uniform(1, 10);
        let v = uniform(2, 10);
        let t = discretize_gaussian_copula(&CopulaSpec::gaussian(0.9999).unwrap(), &u, &v)
            .unwrap();
        let diag: f64 = (0..10).map(|a| t.get(a, a)).sum();
        // leakage across each of the 9 cut points is about φ(z)·√(1−r)·√(2/π)
        assert!(diag >= 0.96, "diagonal mass {diag}");
        let looser = discretize_gaussian_copula(&CopulaSpec::gaussian(0.99).unwrap(), &u, &v)
            .unwrap();
        assert!(diag > (0..10).map(|a| looser.get(a, a)).sum::<f64>());
    }

    #[test]
    fn corner_cell_matches_quadrature() {
        let u = uniform(1, 10);
        let v = uniform(2, 10);
        let t = discretize_gaussian_copula(&CopulaSpec::gaussian(0.69).unwrap(), &u, &v)
            .unwrap();
        let q = normal_quantile(0.1);
        let oracle = rectangle_quadrature(f64::NEG_INFINITY, q, f64::NEG_INFINITY, q, 0.69);
        assert!((t.get(0, 0) - oracle).abs() < 1e-7, "{} vs {oracle}", t.get(0, 0));
        // an interior cell too
        let (a0, a1) = (normal_quantile(0.4), normal_quantile(0.5));
        let (b0, b1) = (normal_quantile(0.6), normal_quantile(0.7));
        let oracle = rectangle_quadrature(a0, a1, b0, b1, 0.69);
        assert!((t.get(4, 6) - oracle).abs() < 1e-7);
    }

    #[test]
    fn projections_reproduce_marginals() {
        let left = table1_marginal(1, Support::range(10)).unwrap();
        let right = uniform(2, 10);
        for r in [-0.69, 0.3, 0.69] {
            let t = discretize_gaussian_copula(&CopulaSpec::gaussian(r).unwrap(), &left, &right)
                .unwrap();
            let rows = project_bivariate_to_univariate(&t, Side::Left);
            let cols = project_bivariate_to_univariate(&t, Side::Right);
            for (x, y) in rows.iter().zip(left.probs()) {
                assert!((x - y).abs() < 1e-8);
            }
            for (x, y) in cols.iter().zip(right.probs()) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn reversed_argument_order_transposes() {
        let a = table1_marginal(1, Support::range(10)).unwrap();
        let b = uniform(2, 10);
        let spec = CopulaSpec::gaussian(0.5).unwrap();
        let ab = discretize_gaussian_copula(&spec, &a, &b).unwrap();
        let ba = discretize_gaussian_copula(&spec, &b, &a).unwrap();
        assert_eq!(ba.edge(), (1, 2));
        for (x, y) in ab.probs().iter().zip(ba.probs()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn invalid_parameter() {
        assert_eq!(CopulaSpec::gaussian(1.0), Err(CopulaError::InvalidParameter(1.0)));
        assert!(CopulaSpec::gaussian(f64::NAN).is_err());
    }

    #[test]
    fn table1() {
        let m = table1_marginal(1, Support::range(10)).unwrap();
        assert_eq!(m.probs(), &TABLE1_PROBS);
        assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let mut rev = m.probs().to_vec();
        rev.reverse();
        assert_eq!(rev, m.probs());
        assert!(matches!(
            table1_marginal(1, Support::range(9)),
            Err(CopulaError::WrongSupportSize { expected: 10, actual: 9 })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn valid_table_and_sign_of_correlation(r in -0.98f64..0.98, m in 2usize..8) {
                let u = uniform(1, m);
                let v = UnivariateMarginal::from_unnormalized(
                    2, Support::range(m), (1..=m).map(|x| x as f64).collect()).unwrap();
                let t = discretize_gaussian_copula(&CopulaSpec::gaussian(r).unwrap(), &u, &v).unwrap();
                prop_assert!(t.probs().iter().all(|p| *p >= 0.0));
                prop_assert!((t.probs().iter().sum::<f64>() - 1.0).abs() < 1e-10);
                let rho = table_correlation(&t, u.support(), v.support());
                if r > 0.01 { prop_assert!(rho > 0.0); }
                if r < -0.01 { prop_assert!(rho < 0.0); }
            }

            #[test]
            fn sign_flip_reverses_an_axis(r in 0.01f64..0.98) {
                let u = table1_marginal(1, Support::range(10)).unwrap();
                let v = uniform(2, 10);
                let pos = discretize_gaussian_copula(&CopulaSpec::gaussian(r).unwrap(), &u, &v).unwrap();
                let neg = discretize_gaussian_copula(&CopulaSpec::gaussian(-r).unwrap(), &u, &v).unwrap();
                for a in 0..10 {
                    for b in 0..10 {
                        prop_assert!((pos.get(a, b) - neg.get(a, 9 - b)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn instances() {
        let u = uniform5_path(0.0).unwrap();
        assert!(crate::model::check_consistency(&u, 1e-12).consistent);
        assert!(crate::model::check_consistency(&uniform5_path(-0.69).unwrap(), 1e-9).consistent);
        assert!(!crate::model::check_consistency(&table1_path(0.69).unwrap(), 1e-6).consistent);
        let v = vorobev_cycle();
        assert!(crate::model::check_consistency(&v, 1e-12).consistent);
        assert!(!crate::model::validate_tree(&v).is_forest);
    }
}
