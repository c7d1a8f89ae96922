//! Dense bounded-variable simplex on a compact tableau.
//!
//! Every row `i` gets a slack `s_i = a_i·x` bounded by the row limits, so the
//! system is homogeneous and each basic variable is a linear combination of
//! the nonbasic ones: `x_B = D x_N`. Row `m` of `D` holds the reduced costs of
//! the (internally maximised) objective.

use nalgebra::DMatrix;

use super::{MilpProblem, Sense};
use crate::error::{Error, Result};

const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PIV_TOL: f64 = 1e-7;
const BLAND_AFTER: usize = 50;
const REFRESH_EVERY: usize = 100;
const DRIFT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Structural variable values (meaningless when infeasible).
    pub x: Vec<f64>,
    /// Objective in the problem's own sense, including the constant.
    pub objective: f64,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pos {
    Basic(usize),
    Nonbasic(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct Tableau {
    m: usize,
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    /// Maximisation costs for all `n + m` variables.
    cost: Vec<f64>,
    d: Vec<f64>,
    basic: Vec<usize>,
    nonbasic: Vec<usize>,
    pos: Vec<Pos>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    at_hi: Vec<bool>,
    xb: Vec<f64>,
    pub pivots: usize,
    degenerate_run: usize,
    since_refresh: usize,
    /// Original costs while the dual simplex runs on perturbed ones.
    saved_cost: Option<Vec<f64>>,
}

enum Outcome {
    Optimal,
    Infeasible,
}

impl Tableau {
    pub fn new(p: &MilpProblem) -> Self {
        let m = p.constraints.len();
        let n = p.vars.len();
        let sign = if p.sense == Sense::Maximize { 1.0 } else { -1.0 };
        let mut cost = vec![0.0; n + m];
        for &(j, c) in &p.objective {
            cost[j] += sign * c;
        }
        let mut d = vec![0.0; (m + 1) * n];
        let mut rows = Vec::with_capacity(m);
        for (i, c) in p.constraints.iter().enumerate() {
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(c.coeffs.len());
            for &(j, a) in &c.coeffs {
                d[i * n + j] += a;
            }
            for j in 0..n {
                if d[i * n + j] != 0.0 {
                    merged.push((j, d[i * n + j]));
                }
            }
            rows.push(merged);
        }
        d[m * n..].copy_from_slice(&cost[..n]);
        let mut lo = Vec::with_capacity(n + m);
        let mut hi = Vec::with_capacity(n + m);
        for v in &p.vars {
            lo.push(v.lo);
            hi.push(v.hi);
        }
        for c in &p.constraints {
            lo.push(c.lo);
            hi.push(c.hi);
        }
        let mut pos = Vec::with_capacity(n + m);
        pos.extend((0..n).map(Pos::Nonbasic));
        pos.extend((0..m).map(Pos::Basic));
        let mut t = Tableau {
            m,
            n,
            rows,
            cost,
            d,
            basic: (n..n + m).collect(),
            nonbasic: (0..n).collect(),
            pos,
            lo,
            hi,
            at_hi: vec![false; n + m],
            xb: vec![0.0; m],
            pivots: 0,
            degenerate_run: 0,
            since_refresh: 0,
            saved_cost: None,
        };
        t.place_nonbasics();
        t.refresh_values();
        t
    }


    #[inline]
    fn nb_value(&self, v: usize) -> f64 {
        if self.at_hi[v] {
            self.hi[v]
        } else {
            self.lo[v]
        }
    }

    fn value(&self, v: usize) -> f64 {
        match self.pos[v] {
            Pos::Basic(r) => self.xb[r],
            Pos::Nonbasic(_) => self.nb_value(v),
        }
    }

    fn refresh_values(&mut self) {
        let n = self.n;
        let vals: Vec<f64> = self.nonbasic.iter().map(|&v| self.nb_value(v)).collect();
        for i in 0..self.m {
            let row = &self.d[i * n..(i + 1) * n];
            self.xb[i] = row.iter().zip(&vals).map(|(a, b)| a * b).sum();
        }
        self.since_refresh = 0;
    }

    /// Put every nonbasic variable at the bound its reduced cost prefers.
    fn place_nonbasics(&mut self) {
        let base = self.m * self.n;
        for j in 0..self.n {
            let v = self.nonbasic[j];
            let dz = self.d[base + j];
            self.at_hi[v] = if !self.lo[v].is_finite() {
                true
            } else if !self.hi[v].is_finite() {
                false
            } else if dz > OPT_TOL {
                true
            } else if dz < -OPT_TOL {
                false
            } else {
                self.at_hi[v] && self.hi[v] > self.lo[v]
            };
        }
    }

    fn dual_feasible(&self) -> bool {
        let base = self.m * self.n;
        (0..self.n).all(|j| {
            let v = self.nonbasic[j];
            let dz = self.d[base + j];
            self.lo[v] == self.hi[v] || if self.at_hi[v] { dz >= -OPT_TOL } else { dz <= OPT_TOL }
        })
    }

    pub fn set_bounds(&mut self, v: usize, lo: f64, hi: f64) {
        self.lo[v] = lo;
        self.hi[v] = hi;
    }


    fn infeasibility(&self, i: usize) -> f64 {
        let v = self.basic[i];
        let x = self.xb[i];
        (self.lo[v] - x).max(x - self.hi[v]).max(0.0)
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let n = self.n;
        let p = self.d[r * n + q];
        let inv = 1.0 / p;
        let mut new_r: Vec<f64> = self.d[r * n..(r + 1) * n].iter().map(|a| -a * inv).collect();
        new_r[q] = inv;
        for i in 0..=self.m {
            if i == r {
                continue;
            }
            let f = self.d[i * n + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.d[i * n..(i + 1) * n];
            for (a, b) in row.iter_mut().zip(&new_r) {
                *a += f * b;
            }
            row[q] = f * inv;
        }
        self.d[r * n..(r + 1) * n].copy_from_slice(&new_r);
        let entering = self.nonbasic[q];
        let leaving = self.basic[r];
        self.basic[r] = entering;
        self.nonbasic[q] = leaving;
        self.pos[entering] = Pos::Basic(r);
        self.pos[leaving] = Pos::Nonbasic(q);
        self.pivots += 1;
        self.since_refresh += 1;
    }

    fn iteration_cap(&self) -> usize {
        50 * (self.m + self.n) + 10_000
    }

    /// Two-phase primal simplex (composite phase one) from the current basis.
    fn primal(&mut self) -> Result<Outcome> {
        let n = self.n;
        let mut g = vec![0.0; n];
        let mut iterations = 0;
        loop {
            iterations += 1;
            if iterations > self.iteration_cap() {
                return Err(Error::Numerical("primal simplex iteration limit".into()));
            }
            if self.since_refresh >= REFRESH_EVERY {
                self.refresh_or_refactor()?;
            }
            let below: Vec<bool> = (0..self.m).map(|i| self.xb[i] < self.lo[self.basic[i]] - FEAS_TOL).collect();
            let above: Vec<bool> = (0..self.m).map(|i| self.xb[i] > self.hi[self.basic[i]] + FEAS_TOL).collect();
            let phase_one = below.iter().chain(&above).any(|&b| b);
            if phase_one {
                g.fill(0.0);
                for i in 0..self.m {
                    let s = if below[i] {
                        1.0
                    } else if above[i] {
                        -1.0
                    } else {
                        continue;
                    };
                    for (gj, a) in g.iter_mut().zip(&self.d[i * n..(i + 1) * n]) {
                        *gj += s * a;
                    }
                }
            } else {
                g.copy_from_slice(&self.d[self.m * n..]);
            }
            let bland = self.degenerate_run > BLAND_AFTER;
            let mut best: Option<(usize, f64)> = None;
            for (j, &gj) in g.iter().enumerate() {
                let v = self.nonbasic[j];
                if self.lo[v] == self.hi[v] {
                    continue;
                }
                let improving = if self.at_hi[v] { gj < -OPT_TOL } else { gj > OPT_TOL };
                if !improving {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((b, bg)) => {
                        if bland {
                            v < self.nonbasic[b]
                        } else {
                            gj.abs() > bg.abs()
                        }
                    }
                };
                if better {
                    best = Some((j, gj));
                }
            }
            let Some((q, _)) = best else {
                return Ok(if phase_one { Outcome::Infeasible } else { Outcome::Optimal });
            };
            let ev = self.nonbasic[q];
            let sigma = if self.at_hi[ev] { -1.0 } else { 1.0 };
            let mut theta = self.hi[ev] - self.lo[ev];
            let mut leave: Option<(usize, bool)> = None;
            let mut leave_alpha = 0.0f64;
            for i in 0..self.m {
                let alpha = sigma * self.d[i * n + q];
                if alpha.abs() < PIV_TOL {
                    continue;
                }
                let v = self.basic[i];
                let x = self.xb[i];
                let (elo, ehi) = if below[i] {
                    (f64::NEG_INFINITY, self.hi[v])
                } else if above[i] {
                    (self.lo[v], f64::INFINITY)
                } else {
                    (self.lo[v], self.hi[v])
                };
                let (t, to_hi) = if alpha > 0.0 {
                    if !ehi.is_finite() {
                        continue;
                    }
                    (((ehi - x) / alpha).max(0.0), true)
                } else {
                    if !elo.is_finite() {
                        continue;
                    }
                    (((elo - x) / alpha).max(0.0), false)
                };
                let replace = if t < theta - 1e-12 {
                    true
                } else if t <= theta + 1e-12 {
                    match leave {
                        None => t <= theta,
                        Some((li, _)) => {
                            if bland {
                                v < self.basic[li]
                            } else {
                                alpha.abs() > leave_alpha
                            }
                        }
                    }
                } else {
                    false
                };
                if replace {
                    theta = t;
                    leave = Some((i, to_hi));
                    leave_alpha = alpha.abs();
                }
            }
            if !theta.is_finite() {
                return Err(Error::Unbounded);
            }
            self.degenerate_run = if theta < 1e-12 { self.degenerate_run + 1 } else { 0 };
            let step = sigma * theta;
            for i in 0..self.m {
                self.xb[i] += step * self.d[i * n + q];
            }
            match leave {
                None => self.at_hi[ev] = !self.at_hi[ev],
                Some((r, to_hi)) => {
                    let entering_value = self.nb_value(ev) + step;
                    let lv = self.basic[r];
                    self.pivot(r, q);
                    self.xb[r] = entering_value;
                    self.at_hi[lv] = to_hi;
                }
            }
        }
    }

    /// Dual simplex from a dual-feasible basis. Long degenerate runs switch
    /// to slightly perturbed costs; the true costs are restored on exit.
    fn dual(&mut self) -> Result<Outcome> {
        let out = self.dual_inner();
        self.restore_costs();
        out
    }

    fn perturb_costs(&mut self) {
        let base = self.m * self.n;
        let mut cost = self.cost.clone();
        for j in 0..self.n {
            let v = self.nonbasic[j];
            if self.lo[v] == self.hi[v] {
                continue;
            }
            let delta = 1e-7 * (1.0 + cost[v].abs()) * (1.0 + (v.wrapping_mul(2_654_435_761) % 1000) as f64 / 1000.0);
            let delta = if self.at_hi[v] { delta } else { -delta };
            cost[v] += delta;
            self.d[base + j] += delta;
        }
        self.saved_cost = Some(std::mem::replace(&mut self.cost, cost));
    }

    fn restore_costs(&mut self) {
        let Some(cost) = self.saved_cost.take() else { return };
        self.cost = cost;
        let (m, n) = (self.m, self.n);
        for j in 0..n {
            let mut dz = self.cost[self.nonbasic[j]];
            for i in 0..m {
                dz += self.cost[self.basic[i]] * self.d[i * n + j];
            }
            self.d[m * n + j] = dz;
        }
    }

    fn dual_inner(&mut self) -> Result<Outcome> {
        let n = self.n;
        let base = self.m * n;
        let mut iterations = 0;
        loop {
            iterations += 1;
            if iterations > self.iteration_cap() {
                return Err(Error::Numerical("dual simplex iteration limit".into()));
            }
            if self.since_refresh >= REFRESH_EVERY {
                self.refresh_or_refactor()?;
                if !self.dual_feasible() {
                    self.place_nonbasics();
                    self.refresh_values();
                    if !self.dual_feasible() {
                        self.restore_costs();
                        return self.primal();
                    }
                }
            }
            if self.degenerate_run > BLAND_AFTER && self.saved_cost.is_none() {
                self.perturb_costs();
                self.degenerate_run = 0;
            }
            let bland = self.degenerate_run > BLAND_AFTER;
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let inf = self.infeasibility(i);
                if inf <= FEAS_TOL {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some((l, li)) => {
                        if bland {
                            self.basic[i] < self.basic[l]
                        } else {
                            inf > li
                        }
                    }
                };
                if better {
                    leave = Some((i, inf));
                }
            }
            let Some((r, _)) = leave else {
                return Ok(Outcome::Optimal);
            };
            let lv = self.basic[r];
            let x = self.xb[r];
            let (dir, target) = if x < self.lo[lv] { (1.0, self.lo[lv]) } else { (-1.0, self.hi[lv]) };
            let mut enter: Option<(usize, f64, f64)> = None;
            for j in 0..n {
                let v = self.nonbasic[j];
                if self.lo[v] == self.hi[v] {
                    continue;
                }
                let a = self.d[r * n + j];
                if a.abs() < PIV_TOL {
                    continue;
                }
                let sigma = if self.at_hi[v] { -1.0 } else { 1.0 };
                if sigma * a * dir <= 0.0 {
                    continue;
                }
                let ratio = self.d[base + j].abs() / a.abs();
                let better = match enter {
                    None => true,
                    Some((b, br, ba)) => {
                        if ratio < br - 1e-12 {
                            true
                        } else if ratio <= br + 1e-12 {
                            if bland {
                                v < self.nonbasic[b]
                            } else {
                                a.abs() > ba
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    enter = Some((j, ratio, a.abs()));
                }
            }
            let Some((q, ratio, _)) = enter else {
                return Ok(Outcome::Infeasible);
            };
            self.degenerate_run = if ratio < 1e-12 { self.degenerate_run + 1 } else { 0 };
            let ev = self.nonbasic[q];
            let a = self.d[r * n + q];
            let sigma = if self.at_hi[ev] { -1.0 } else { 1.0 };
            let theta = (target - x).abs() / a.abs();
            let step = sigma * theta;
            for i in 0..self.m {
                self.xb[i] += step * self.d[i * n + q];
            }
            let entering_value = self.nb_value(ev) + step;
            self.pivot(r, q);
            self.xb[r] = entering_value;
            self.at_hi[lv] = dir < 0.0;
        }
    }

    /// Recompute basic values; rebuild the tableau when they no longer
    /// satisfy the original rows.
    fn refresh_or_refactor(&mut self) -> Result<()> {
        self.refresh_values();
        if self.residual() > DRIFT_TOL {
            self.refactor()?;
        }
        Ok(())
    }

    /// Rebuild `D` and the objective row from the original rows.
    fn refactor(&mut self) -> Result<()> {
        let (m, n) = (self.m, self.n);
        let column = |v: usize| -> Vec<(usize, f64)> {
            if v >= n {
                vec![(v - n, -1.0)]
            } else {
                Vec::new()
            }
        };
        let mut mb: DMatrix<f64> = DMatrix::zeros(m, m);
        let mut mn: DMatrix<f64> = DMatrix::zeros(m, n);
        let mut col_of = vec![usize::MAX; n + m];
        for (k, &v) in self.basic.iter().enumerate() {
            col_of[v] = k;
        }
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                match self.pos[j] {
                    Pos::Basic(_) => mb[(i, col_of[j])] += a,
                    Pos::Nonbasic(c) => mn[(i, c)] += a,
                }
            }
        }
        for v in n..n + m {
            for (i, a) in column(v) {
                match self.pos[v] {
                    Pos::Basic(_) => mb[(i, col_of[v])] += a,
                    Pos::Nonbasic(c) => mn[(i, c)] += a,
                }
            }
        }
        let Some(sol) = mb.lu().solve(&mn) else {
            self.reset_to_slack_basis();
            return Ok(());
        };
        for i in 0..m {
            for j in 0..n {
                self.d[i * n + j] = -sol[(i, j)];
            }
        }
        for j in 0..n {
            let mut dz = self.cost[self.nonbasic[j]];
            for i in 0..m {
                dz += self.cost[self.basic[i]] * self.d[i * n + j];
            }
            self.d[m * n + j] = dz;
        }
        self.refresh_values();
        Ok(())
    }

    /// Fall back to the all-slack basis, which is never singular; nonbasic
    /// structurals keep their current bound.
    fn reset_to_slack_basis(&mut self) {
        let (m, n) = (self.m, self.n);
        self.basic = (n..n + m).collect();
        self.nonbasic = (0..n).collect();
        for v in 0..n {
            self.pos[v] = Pos::Nonbasic(v);
        }
        for i in 0..m {
            self.pos[n + i] = Pos::Basic(i);
        }
        self.d.fill(0.0);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                self.d[i * n + j] = a;
            }
        }
        self.d[m * n..].copy_from_slice(&self.cost[..n]);
        self.degenerate_run = 0;
        self.refresh_values();
    }

    /// Largest residual of the original rows at the current point.
    fn residual(&self) -> f64 {
        let x: Vec<f64> = (0..self.n).map(|j| self.value(j)).collect();
        let mut worst = 0.0f64;
        for (i, row) in self.rows.iter().enumerate() {
            let act: f64 = row.iter().map(|&(j, a)| a * x[j]).sum();
            let s = self.value(self.n + i);
            worst = worst.max((act - s).abs() / (1.0 + s.abs()));
        }
        worst
    }

    fn finish(&mut self, mut outcome: Outcome, use_dual: bool) -> Result<LpStatus> {
        for _ in 0..3 {
            self.refresh_values();
            if matches!(outcome, Outcome::Infeasible) {
                // Confirm with exact values before declaring infeasibility.
                if (0..self.m).any(|i| self.infeasibility(i) > FEAS_TOL) && self.residual() < 1e-7 {
                    return Ok(LpStatus::Infeasible);
                }
            } else if (0..self.m).all(|i| self.infeasibility(i) <= 1e-7) && self.dual_feasible() && self.residual() < 1e-7 {
                return Ok(LpStatus::Optimal);
            }
            if self.residual() >= 1e-7 {
                self.refactor()?;
            }
            outcome = if use_dual && self.dual_feasible() { self.dual()? } else { self.primal()? };
        }
        Ok(match outcome {
            Outcome::Optimal => LpStatus::Optimal,
            Outcome::Infeasible => LpStatus::Infeasible,
        })
    }

    /// Solve from the current basis with the primal method.
    pub fn solve_primal(&mut self) -> Result<LpStatus> {
        let out = self.primal()?;
        self.finish(out, false)
    }

    /// Re-solve after bound changes: restore dual feasibility by placement,
    /// then run the dual simplex (primal if placement is impossible).
    pub fn resolve_dual(&mut self) -> Result<LpStatus> {
        self.place_nonbasics();
        self.refresh_values();
        if self.dual_feasible() {
            let out = self.dual()?;
            self.finish(out, true)
        } else {
            self.solve_primal()
        }
    }

    pub fn solution(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.value(j).clamp(self.lo[j], self.hi[j])).collect()
    }

}

/// Solve the continuous relaxation of `problem` (integrality ignored).
pub fn solve_lp(problem: &MilpProblem) -> Result<LpSolution> {
    problem.validate()?;
    let mut t = Tableau::new(problem);
    let status = t.solve_primal()?;
    let x = t.solution();
    let objective = problem.objective_value(&x);
    Ok(LpSolution { status, x, objective, pivots: t.pivots })
}
