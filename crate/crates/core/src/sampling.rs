//! Latin hypercube designs and tensor Gauss quadrature rules.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{check_dim, Error, Result};
use crate::seed;

/// Polynomial family / probability density of one germ dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Probabilists' Hermite polynomials, standard normal density.
    HermiteProb,
    /// Legendre polynomials, uniform density on [-1, 1].
    LegendreUniform,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::HermiteProb => "hermite_prob",
            Family::LegendreUniform => "legendre_uniform",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hermite_prob" | "hermite" => Ok(Family::HermiteProb),
            "legendre_uniform" | "legendre" => Ok(Family::LegendreUniform),
            other => Err(Error::InvalidArgument(format!("unsupported quadrature family '{other}'"))),
        }
    }

    /// Three-term recurrence `p_{n+1} = (x - a_n) p_n - b_n p_{n-1}` coefficients
    /// of the monic family (`a_n = 0` for both).
    fn monic_b(&self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            Family::HermiteProb => n,
            Family::LegendreUniform => n * n / (4.0 * n * n - 1.0),
        }
    }

    /// Moment E[x^d] of the associated density.
    pub fn moment(&self, d: u32) -> f64 {
        if d % 2 == 1 {
            return 0.0;
        }
        match self {
            // (d-1)!!
            Family::HermiteProb => (1..d).step_by(2).map(f64::from).product(),
            Family::LegendreUniform => 1.0 / f64::from(d + 1),
        }
    }
}

/// A (tensor) quadrature rule against a product probability density.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    /// Row-major `[point × dimension]`.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub families: Vec<Family>,
    pub levels: Vec<usize>,
}

impl QuadratureRule {
    pub fn dim(&self) -> usize {
        self.families.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.nodes[k * d..(k + 1) * d]
    }

    /// Weighted sum `Σ w_k f(θ_k)`.
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        (0..self.len()).map(|k| self.weights[k] * f(self.node(k))).sum()
    }
}

/// One-dimensional Gauss rule with `level` points for `family`.
///
/// Nodes come from the eigenvalues of the Jacobi matrix and are polished by
/// Newton iteration on the three-term recurrence; weights use the closed-form
/// Christoffel expressions, so they are accurate well below 1e-14.
pub fn gauss_rule_1d(family: Family, level: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if level == 0 {
        return Err(Error::InvalidArgument("quadrature level must be >= 1".into()));
    }
    let n = level;
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            family.monic_b(i.max(j)).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp, _) = monic_eval(family, n, *x);
            if dp == 0.0 {
                break;
            }
            *x -= p / dp;
        }
        let (_, dp, pm1) = monic_eval(family, n, *x);
        // Christoffel weight for a probability measure: w = ||p_{n-1}||^2 / (p'_n p_{n-1}).
        let norm_nm1: f64 = (1..n).map(|k| family.monic_b(k)).product();
        weights.push(norm_nm1 / (dp * pm1));
    }
    // Symmetrise to remove round-off asymmetry.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -x;
        nodes[j] = x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

/// Monic orthogonal polynomial `p_n(x)`, its derivative, and `p_{n-1}(x)`.
fn monic_eval(family: Family, n: usize, x: f64) -> (f64, f64, f64) {
    let (mut p_prev, mut p) = (0.0, 1.0);
    let (mut d_prev, mut d) = (0.0, 0.0);
    for k in 0..n {
        let b = if k == 0 { 0.0 } else { family.monic_b(k) };
        let p_next = x * p - b * p_prev;
        let d_next = p + x * d - b * d_prev;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (p, d, p_prev)
}

/// Tensor-product Gauss rule; the last dimension varies fastest.
pub fn quadrature_rule(families: &[Family], levels: &[usize]) -> Result<QuadratureRule> {
    check_dim("quadrature levels", families.len(), levels.len())?;
    if families.is_empty() {
        return Err(Error::InvalidArgument("quadrature needs at least one dimension".into()));
    }
    let rules: Vec<(Vec<f64>, Vec<f64>)> = families
        .iter()
        .zip(levels)
        .map(|(&f, &l)| gauss_rule_1d(f, l))
        .collect::<Result<_>>()?;
    let total: usize = levels.iter().product();
    let d = families.len();
    let mut nodes = Vec::with_capacity(total * d);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        let mut w = 1.0;
        for (j, &i) in idx.iter().enumerate() {
            nodes.push(rules[j].0[i]);
            w *= rules[j].1[i];
        }
        weights.push(w);
        for j in (0..d).rev() {
            idx[j] += 1;
            if idx[j] < levels[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        families: families.to_vec(),
        levels: levels.to_vec(),
    })
}

/// Latin hypercube design.
#[derive(Debug, Clone, PartialEq)]
pub struct LhcDesign {
    /// Row-major `[sample × dimension]`.
    pub samples: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub count: usize,
}

impl LhcDesign {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.samples[i * d..(i + 1) * d]
    }
}

/// Random (jittered) Latin hypercube with `count` strata per dimension.
///
/// Each column is driven by its own stream keyed on the seed and the column's
/// interval, so reordering the bounds reorders the columns and nothing else.
pub fn lhc_sample(bounds: &[(f64, f64)], count: usize, seed: u64) -> Result<LhcDesign> {
    if count == 0 {
        return Err(Error::InvalidArgument("LHC sample count must be >= 1".into()));
    }
    if bounds.is_empty() {
        return Err(Error::InvalidArgument("LHC needs at least one dimension".into()));
    }
    for &(lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite()) || !(hi > lo) {
            return Err(Error::InvalidArgument(format!("empty or non-finite LHC interval [{lo}, {hi}]")));
        }
    }
    let d = bounds.len();
    let mut samples = vec![0.0; count * d];
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        let repeat = bounds[..j].iter().filter(|&&b| b == (lo, hi)).count() as u64;
        let mut rng = seed::rng(seed::derive(seed, &[lo.to_bits(), hi.to_bits(), repeat]));
        let mut strata: Vec<usize> = (0..count).collect();
        strata.shuffle(&mut rng);
        let width = (hi - lo) / count as f64;
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            samples[i * d + j] = (lo + (s as f64 + u) * width).min(hi);
        }
    }
    Ok(LhcDesign {
        samples,
        bounds: bounds.to_vec(),
        count,
    })
}
