//! Non-intrusive polynomial chaos expansions fitted by quadrature projection.

use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::field::{FieldArray, FieldShape};
use crate::sampling::{Family, QuadratureRule};
use crate::seed;

/// Total-degree multi-index set `{ b : |b|₁ ≤ L }` in graded lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    pub indices: Vec<Vec<u32>>,
    pub max_degree: u32,
}

impl MultiIndexSet {
    pub fn total_degree(dim: usize, max_degree: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("multi-index dimension must be >= 1".into()));
        }
        let mut indices = Vec::new();
        for deg in 0..=max_degree {
            let mut cur = vec![0u32; dim];
            push_compositions(&mut indices, &mut cur, 0, deg);
        }
        Ok(MultiIndexSet { indices, max_degree })
    }

    pub fn dim(&self) -> usize {
        self.indices[0].len()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position(&self, b: &[u32]) -> Option<usize> {
        self.indices.iter().position(|x| x == b)
    }
}

fn push_compositions(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining;
        out.push(cur.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        cur[pos] = v;
        push_compositions(out, cur, pos + 1, remaining - v);
    }
    cur[pos] = 0;
}

pub fn format_multi_index(b: &[u32]) -> String {
    b.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("_")
}

pub fn parse_multi_index(s: &str) -> Result<Vec<u32>> {
    s.split('_')
        .map(|p| p.trim().parse::<u32>().map_err(|_| Error::Parse(format!("bad multi-index '{s}'"))))
        .collect()
}

/// Univariate orthogonal polynomials `p_0..=p_deg` at `x`.
pub fn univariate(family: Family, deg: u32, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(deg as usize + 1);
    p.push(1.0);
    if deg >= 1 {
        p.push(x);
    }
    for n in 1..deg as usize {
        let nf = n as f64;
        let next = match family {
            Family::HermiteProb => x * p[n] - nf * p[n - 1],
            Family::LegendreUniform => ((2.0 * nf + 1.0) * x * p[n] - nf * p[n - 1]) / (nf + 1.0),
        };
        p.push(next);
    }
    p
}

/// `E[p_n²]` under the family's probability density.
pub fn univariate_norm(family: Family, n: u32) -> f64 {
    match family {
        Family::HermiteProb => (1..=n).map(f64::from).product(),
        Family::LegendreUniform => 1.0 / (2.0 * f64::from(n) + 1.0),
    }
}

/// Multi-index set paired with a polynomial family per germ dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PceBasis {
    pub set: MultiIndexSet,
    pub families: Vec<Family>,
    pub norms: Vec<f64>,
}

impl PceBasis {
    pub fn new(set: MultiIndexSet, families: Vec<Family>) -> Result<Self> {
        check_dim("basis families", set.dim(), families.len())?;
        let norms = set
            .indices
            .iter()
            .map(|b| b.iter().zip(&families).map(|(&bi, &f)| univariate_norm(f, bi)).product())
            .collect();
        Ok(PceBasis { set, families, norms })
    }

    pub fn total_degree(families: &[Family], max_degree: u32) -> Result<Self> {
        PceBasis::new(MultiIndexSet::total_degree(families.len(), max_degree)?, families.to_vec())
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.families.len()
    }

    /// `Θ_b(θ)` for every multi-index.
    pub fn eval(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim("germ dimension", self.dim(), theta.len())?;
        let tables: Vec<Vec<f64>> = self
            .families
            .iter()
            .zip(theta)
            .map(|(&f, &x)| univariate(f, self.set.max_degree, x))
            .collect();
        Ok(self
            .set
            .indices
            .iter()
            .map(|b| b.iter().enumerate().map(|(i, &bi)| tables[i][bi as usize]).product())
            .collect())
    }

    /// Draw a germ realisation from the product density.
    pub fn sample_germ(&self, rng: &mut seed::Rng) -> Vec<f64> {
        self.families
            .iter()
            .map(|f| match f {
                Family::HermiteProb => rng.sample(StandardNormal),
                Family::LegendreUniform => rng.random_range(-1.0..=1.0),
            })
            .collect()
    }
}

/// Convenience wrapper for [`PceBasis::eval`].
pub fn eval_basis(basis: &PceBasis, theta: &[f64]) -> Result<Vec<f64>> {
    basis.eval(theta)
}

/// One expansion per space-time point, all sharing a basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PceSurrogate {
    /// Row-major `[point × basis term]`.
    pub coeffs: Vec<f64>,
    pub basis: PceBasis,
    pub shape: FieldShape,
}

impl PceSurrogate {
    pub fn points(&self) -> usize {
        self.coeffs.len() / self.basis.len()
    }

    pub fn point_coeffs(&self, p: usize) -> &[f64] {
        let nb = self.basis.len();
        &self.coeffs[p * nb..(p + 1) * nb]
    }

    pub fn evaluate_point(&self, p: usize, theta: &[f64]) -> Result<f64> {
        let psi = self.basis.eval(theta)?;
        Ok(dot(self.point_coeffs(p), &psi))
    }

    /// Evaluate every point at `theta`.
    pub fn evaluate(&self, theta: &[f64]) -> Result<FieldArray> {
        let psi = self.basis.eval(theta)?;
        let data = (0..self.points()).map(|p| dot(self.point_coeffs(p), &psi)).collect();
        FieldArray::from_vec(self.shape, data)
    }

    pub fn mean(&self) -> FieldArray {
        let data = (0..self.points()).map(|p| self.point_coeffs(p)[0]).collect();
        FieldArray { shape: self.shape, data }
    }

    pub fn variance(&self) -> FieldArray {
        let data = (0..self.points())
            .map(|p| {
                self.point_coeffs(p)
                    .iter()
                    .zip(&self.basis.norms)
                    .skip(1)
                    .map(|(a, n)| a * a * n)
                    .sum()
            })
            .collect();
        FieldArray { shape: self.shape, data }
    }

    /// CSV table with header `point_id,multi_index,coeff`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("point_id,multi_index,coeff\n");
        let labels: Vec<String> = self.basis.set.indices.iter().map(|b| format_multi_index(b)).collect();
        for p in 0..self.points() {
            for (label, c) in labels.iter().zip(self.point_coeffs(p)) {
                let _ = writeln!(s, "{p},{label},{c}");
            }
        }
        s
    }

    pub fn from_csv(text: &str, basis: PceBasis, shape: FieldShape) -> Result<Self> {
        let nb = basis.len();
        let mut coeffs = vec![f64::NAN; shape.len() * nb];
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() != 3 {
                return Err(Error::Parse(format!("expected 3 columns, got {}", rec.len())));
            }
            let p: usize = rec[0].parse().map_err(|_| Error::Parse(format!("bad point id '{}'", &rec[0])))?;
            let b = parse_multi_index(&rec[1])?;
            let j = basis
                .set
                .position(&b)
                .ok_or_else(|| Error::Parse(format!("multi-index '{}' not in basis", &rec[1])))?;
            let c: f64 = rec[2].parse().map_err(|_| Error::Parse(format!("bad coefficient '{}'", &rec[2])))?;
            if p >= shape.len() {
                return Err(Error::Parse(format!("point id {p} out of range")));
            }
            coeffs[p * nb + j] = c;
        }
        if coeffs.iter().any(|c| c.is_nan()) {
            return Err(Error::Parse("surrogate table is incomplete".into()));
        }
        Ok(PceSurrogate { coeffs, basis, shape })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projection `a_b = Σ_k w_k Θ_b(θ_k) g(θ_k) / ⟨Θ_b²⟩` for every point.
///
/// `evaluations[k]` holds all space-time points for quadrature node `k`.
pub fn fit_pce(evaluations: &[FieldArray], rule: &QuadratureRule, basis: &PceBasis) -> Result<PceSurrogate> {
    check_dim("evaluations per quadrature node", rule.len(), evaluations.len())?;
    check_dim("quadrature dimension", basis.dim(), rule.dim())?;
    let shape = evaluations[0].shape;
    let nb = basis.len();
    let mut proj = Vec::with_capacity(rule.len());
    for (k, ev) in evaluations.iter().enumerate() {
        if ev.shape != shape {
            return Err(Error::DimensionMismatch {
                context: "evaluation field shape",
                expected: shape.len(),
                got: ev.shape.len(),
            });
        }
        if let Some(p) = ev.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEvaluation { node: k, point: p });
        }
        let psi = basis.eval(rule.node(k))?;
        proj.push(
            psi.iter()
                .zip(&basis.norms)
                .map(|(ps, n)| rule.weights[k] * ps / n)
                .collect::<Vec<f64>>(),
        );
    }
    let points = shape.len();
    let mut coeffs = vec![0.0; points * nb];
    for (k, ev) in evaluations.iter().enumerate() {
        let m = &proj[k];
        for (p, &g) in ev.data.iter().enumerate() {
            let row = &mut coeffs[p * nb..(p + 1) * nb];
            for (c, mk) in row.iter_mut().zip(m) {
                *c += mk * g;
            }
        }
    }
    Ok(PceSurrogate {
        coeffs,
        basis: basis.clone(),
        shape,
    })
}

/// Mean and two-sided percentile bounds of every point.
#[derive(Debug, Clone, PartialEq)]
pub struct StatFields {
    pub mean: FieldArray,
    pub lower: FieldArray,
    pub upper: FieldArray,
    pub beta: f64,
}

/// Empirical quantile as the order statistic at `ceil(q·n)` (1-based).
pub fn order_statistic_index(q: f64, n: usize) -> usize {
    ((q * n as f64).ceil() as usize).clamp(1, n) - 1
}

/// Mean from the zeroth coefficient, bounds from `n2` fresh surrogate samples.
///
/// The same germ draws are shared by all points. Bounds are widened to include
/// the mean when sampling noise would otherwise invert the ordering.
pub fn surrogate_stats(surrogate: &PceSurrogate, n2: usize, beta: f64, seed: u64) -> Result<StatFields> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!("beta must lie in (0, 1), got {beta}")));
    }
    if n2 < 100 {
        return Err(Error::InvalidArgument(format!("N2 must be >= 100, got {n2}")));
    }
    let basis = &surrogate.basis;
    let nb = basis.len();
    let mut rng = seed::rng(seed);
    let mut psi = Vec::with_capacity(n2 * nb);
    for _ in 0..n2 {
        let theta = basis.sample_germ(&mut rng);
        psi.extend(basis.eval(&theta)?);
    }
    let lo_idx = order_statistic_index(beta / 2.0, n2);
    let up_idx = order_statistic_index(1.0 - beta / 2.0, n2);
    let points = surrogate.points();
    let mut mean = Vec::with_capacity(points);
    let mut lower = Vec::with_capacity(points);
    let mut upper = Vec::with_capacity(points);
    let mut vals = vec![0.0; n2];
    for p in 0..points {
        let a = surrogate.point_coeffs(p);
        let m = a[0];
        mean.push(m);
        if a[1..].iter().all(|&c| c == 0.0) {
            lower.push(m);
            upper.push(m);
            continue;
        }
        for (s, v) in vals.iter_mut().enumerate() {
            *v = dot(a, &psi[s * nb..(s + 1) * nb]);
        }
        let lo = *vals.select_nth_unstable_by(lo_idx, f64::total_cmp).1;
        let up = *vals.select_nth_unstable_by(up_idx, f64::total_cmp).1;
        lower.push(lo.min(m));
        upper.push(up.max(m));
    }
    let shape = surrogate.shape;
    Ok(StatFields {
        mean: FieldArray { shape, data: mean },
        lower: FieldArray { shape, data: lower },
        upper: FieldArray { shape, data: upper },
        beta,
    })
}
