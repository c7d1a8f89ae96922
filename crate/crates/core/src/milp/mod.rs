//! Mixed-integer linear programming: problem model, a bounded-variable
//! simplex, branch-and-bound, and the big-M encoding of ReLU RNN rollouts.

mod bnb;
mod encode;
mod simplex;

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub use bnb::{solve_milp, solve_milp_with, MilpOptions, MilpSolution, MilpStatus};
pub use encode::{
    encode_rnn_rollout, prune_redundant_rows, propagate_activation_bounds, ActivationBounds, RolloutEncoding,
    UnitEncoding,
};
pub use simplex::{solve_lp, LpSolution, LpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

/// What a variable stands for in an RNN rollout encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VarRole {
    Free,
    Control { step: usize },
    Hidden { model: usize, step: usize, layer: usize, unit: usize },
    Activation { model: usize, step: usize, layer: usize, unit: usize },
    Output { model: usize, step: usize, index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub binary: bool,
    pub role: VarRole,
}

/// `lo ≤ Σ coeffs·x ≤ hi`; equalities have `lo == hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub lo: f64,
    pub hi: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.activity(x);
        (self.lo - v).max(v - self.hi).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpProblem {
    pub vars: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<(usize, f64)>,
    pub objective_constant: f64,
    pub sense: Sense,
}

impl MilpProblem {
    pub fn new(sense: Sense) -> Self {
        MilpProblem { vars: Vec::new(), constraints: Vec::new(), objective: Vec::new(), objective_constant: 0.0, sense }
    }

    pub fn add_var(&mut self, name: impl Into<String>, lo: f64, hi: f64, role: VarRole) -> usize {
        self.vars.push(Variable { name: name.into(), lo, hi, binary: false, role });
        self.vars.len() - 1
    }

    pub fn add_binary(&mut self, name: impl Into<String>, role: VarRole) -> usize {
        self.vars.push(Variable { name: name.into(), lo: 0.0, hi: 1.0, binary: true, role });
        self.vars.len() - 1
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, lo: f64, hi: f64) -> usize {
        self.constraints.push(Constraint { name: name.into(), coeffs, lo, hi });
        self.constraints.len() - 1
    }

    pub fn add_le(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.add_constraint(name, coeffs, f64::NEG_INFINITY, rhs)
    }

    pub fn add_ge(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.add_constraint(name, coeffs, rhs, f64::INFINITY)
    }

    pub fn add_eq(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.add_constraint(name, coeffs, rhs, rhs)
    }

    pub fn binary_count(&self) -> usize {
        self.vars.iter().filter(|v| v.binary).count()
    }

    pub fn binaries(&self) -> Vec<usize> {
        (0..self.vars.len()).filter(|&j| self.vars[j].binary).collect()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().map(|&(j, c)| c * x[j]).sum::<f64>()
    }

    /// Largest bound, row or integrality violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (v, &xj) in self.vars.iter().zip(x) {
            worst = worst.max(v.lo - xj).max(xj - v.hi);
            if v.binary {
                worst = worst.max((xj - xj.round()).abs());
            }
        }
        for c in &self.constraints {
            worst = worst.max(c.violation(x));
        }
        worst
    }

    /// Structural checks: finite variable bounds, valid indices, nonempty rows.
    pub fn validate(&self) -> Result<()> {
        let n = self.vars.len();
        for v in &self.vars {
            if !(v.lo.is_finite() && v.hi.is_finite()) || v.lo > v.hi {
                return Err(Error::InvalidArgument(format!("variable {} needs finite bounds lo <= hi", v.name)));
            }
        }
        for c in &self.constraints {
            if c.coeffs.iter().any(|&(j, a)| j >= n || !a.is_finite()) || c.lo > c.hi || c.lo.is_nan() || c.hi.is_nan() {
                return Err(Error::InvalidArgument(format!("constraint {} is malformed", c.name)));
            }
        }
        if self.objective.iter().any(|&(j, c)| j >= n || !c.is_finite()) {
            return Err(Error::InvalidArgument("objective references an undeclared variable".into()));
        }
        for (j, v) in self.vars.iter().enumerate() {
            if v.binary && !self.constraints.iter().any(|c| c.coeffs.iter().any(|&(k, a)| k == j && a != 0.0)) {
                return Err(Error::InvalidArgument(format!("binary {} appears in no constraint", v.name)));
            }
        }
        Ok(())
    }

    /// Dump in CPLEX-style LP text (ranged rows are split in two).
    pub fn to_lp_text(&self) -> String {
        fn term_list(coeffs: &[(usize, f64)], vars: &[Variable]) -> String {
            if coeffs.is_empty() {
                return "0".into();
            }
            let mut s = String::new();
            for (k, &(j, a)) in coeffs.iter().enumerate() {
                if k > 0 || a < 0.0 {
                    s.push_str(if a < 0.0 { " - " } else { " + " });
                }
                let _ = write!(s, "{} {}", a.abs(), vars[j].name);
            }
            s.trim_start().to_string()
        }
        let mut s = String::new();
        s.push_str(match self.sense {
            Sense::Maximize => "Maximize\n",
            Sense::Minimize => "Minimize\n",
        });
        let _ = writeln!(s, " obj: {}", term_list(&self.objective, &self.vars));
        s.push_str("Subject To\n");
        for c in &self.constraints {
            let body = term_list(&c.coeffs, &self.vars);
            if c.lo == c.hi {
                let _ = writeln!(s, " {}: {} = {}", c.name, body, c.hi);
                continue;
            }
            let ranged = c.lo.is_finite() && c.hi.is_finite();
            if c.hi.is_finite() {
                let name = if ranged { format!("{}_hi", c.name) } else { c.name.clone() };
                let _ = writeln!(s, " {}: {} <= {}", name, body, c.hi);
            }
            if c.lo.is_finite() {
                let name = if ranged { format!("{}_lo", c.name) } else { c.name.clone() };
                let _ = writeln!(s, " {}: {} >= {}", name, body, c.lo);
            }
        }
        s.push_str("Bounds\n");
        for v in self.vars.iter().filter(|v| !v.binary) {
            let _ = writeln!(s, " {} <= {} <= {}", v.lo, v.name, v.hi);
        }
        let bins: Vec<&str> = self.vars.iter().filter(|v| v.binary).map(|v| v.name.as_str()).collect();
        if !bins.is_empty() {
            s.push_str("Binary\n");
            for b in bins {
                let _ = writeln!(s, " {b}");
            }
        }
        s.push_str("End\n");
        s
    }
}
