//! Best-bound branch-and-bound with a depth-first dive for the first
//! incumbent. All nodes share one tableau and are re-solved by the dual
//! simplex after their binary fixings are applied.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::simplex::{LpStatus, Tableau};
use super::{MilpProblem, Sense};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilpOptions {
    /// Relative gap `(bound − incumbent) / max(1, |incumbent|)`.
    pub gap_tol: f64,
    pub node_limit: usize,
    pub int_tol: f64,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions { gap_tol: 1e-6, node_limit: 1_000_000, int_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    NodeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub status: MilpStatus,
    /// Objective of the incumbent, in the problem's sense.
    pub objective: Option<f64>,
    /// Incumbent assignment (empty when none was found).
    pub x: Vec<f64>,
    pub best_bound: f64,
    pub nodes: usize,
    pub gap: f64,
    pub lp_pivots: usize,
    /// Global bound after each processed node, in the problem's sense.
    pub bound_history: Vec<f64>,
}

impl MilpSolution {
    pub fn has_incumbent(&self) -> bool {
        !self.x.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Node {
    /// Internal (maximised) bound inherited from the parent.
    bound: f64,
    depth: usize,
    id: usize,
    fixings: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

fn relative_gap(bound: f64, incumbent: f64) -> f64 {
    ((bound - incumbent) / incumbent.abs().max(1.0)).max(0.0)
}

/// Solve with default heuristics (none).
pub fn solve_milp(problem: &MilpProblem, opts: &MilpOptions) -> Result<MilpSolution> {
    solve_milp_with(problem, opts, &[], &mut |_: &[f64]| None)
}

/// Branch-and-bound with optional starting candidates and a primal
/// heuristic that maps a node's LP point to a candidate assignment.
/// Candidates are accepted only if they satisfy every constraint within 1e-6.
pub fn solve_milp_with(
    problem: &MilpProblem,
    opts: &MilpOptions,
    starts: &[Vec<f64>],
    heuristic: &mut dyn FnMut(&[f64]) -> Option<Vec<f64>>,
) -> Result<MilpSolution> {
    problem.validate()?;
    let sign = if problem.sense == Sense::Maximize { 1.0 } else { -1.0 };
    let internal = |x: &[f64]| sign * problem.objective_value(x);
    let binaries = problem.binaries();
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let offer = |x: Vec<f64>, incumbent: &mut Option<(f64, Vec<f64>)>| {
        if x.len() != problem.vars.len() || problem.max_violation(&x) > 1e-6 {
            return;
        }
        let v = internal(&x);
        if incumbent.as_ref().is_none_or(|(b, _)| v > *b + 1e-12) {
            *incumbent = Some((v, x));
        }
    };
    for s in starts {
        offer(s.clone(), &mut incumbent);
    }

    let mut tab = Tableau::new(problem);
    let mut heap = BinaryHeap::new();
    let mut next: Option<Node> = Some(Node { bound: f64::INFINITY, depth: 0, id: 0, fixings: Vec::new() });
    let mut next_id = 1;
    let mut nodes = 0;
    let mut history = Vec::new();
    let mut hit_limit = false;
    let mut first = true;

    let apply = |tab: &mut Tableau, fixings: &[(usize, f64)]| {
        for &j in &binaries {
            tab.set_bounds(j, problem.vars[j].lo, problem.vars[j].hi);
        }
        for &(j, v) in fixings {
            tab.set_bounds(j, v, v);
        }
    };

    loop {
        let node = match next.take() {
            Some(nd) => nd,
            None => match heap.pop() {
                Some(nd) => nd,
                None => break,
            },
        };
        if let Some((inc, _)) = &incumbent {
            if relative_gap(node.bound, *inc) <= opts.gap_tol {
                continue;
            }
        }
        if nodes >= opts.node_limit {
            heap.push(node);
            hit_limit = true;
            break;
        }
        nodes += 1;
        apply(&mut tab, &node.fixings);
        let warm = if first {
            first = false;
            tab.solve_primal()
        } else {
            tab.resolve_dual()
        };
        let status = match warm {
            Ok(s) => s,
            Err(_) => {
                // Numerical trouble on the reused basis: cold start this node.
                let pivots = tab.pivots;
                tab = Tableau::new(problem);
                tab.pivots = pivots;
                apply(&mut tab, &node.fixings);
                tab.solve_primal()?
            }
        };
        let mut lp_x = Vec::new();
        let mut lp_val = f64::NEG_INFINITY;
        if status == LpStatus::Optimal {
            lp_x = tab.solution();
            lp_val = internal(&lp_x).min(node.bound);
            if let Some(cand) = heuristic(&lp_x) {
                offer(cand, &mut incumbent);
            }
        }
        let prunable = status == LpStatus::Infeasible
            || incumbent.as_ref().is_some_and(|(inc, _)| relative_gap(lp_val, *inc) <= opts.gap_tol);
        if !prunable {
            let frac = binaries
                .iter()
                .copied()
                .filter(|&j| (lp_x[j] - lp_x[j].round()).abs() > opts.int_tol)
                .min_by(|&a, &b| {
                    let fa = (lp_x[a] - 0.5).abs();
                    let fb = (lp_x[b] - 0.5).abs();
                    fa.total_cmp(&fb).then(a.cmp(&b))
                });
            match frac {
                None => {
                    // Integral: polish with all binaries fixed at their rounded values.
                    let mut fix = node.fixings.clone();
                    for &j in &binaries {
                        if !fix.iter().any(|&(k, _)| k == j) {
                            fix.push((j, lp_x[j].round()));
                        }
                    }
                    apply(&mut tab, &fix);
                    if matches!(tab.resolve_dual(), Ok(LpStatus::Optimal)) {
                        let mut x = tab.solution();
                        for &j in &binaries {
                            x[j] = x[j].round();
                        }
                        offer(x, &mut incumbent);
                    }
                }
                Some(j) => {
                    let near = lp_x[j].round();
                    let mk = |value: f64, id: usize| {
                        let mut fixings = node.fixings.clone();
                        fixings.push((j, value));
                        Node { bound: lp_val, depth: node.depth + 1, id, fixings }
                    };
                    let near_node = mk(near, next_id);
                    let far_node = mk(1.0 - near, next_id + 1);
                    next_id += 2;
                    heap.push(far_node);
                    if incumbent.is_none() {
                        next = Some(near_node);
                    } else {
                        heap.push(near_node);
                    }
                }
            }
        }
        let open_bound = heap
            .peek()
            .map(|nd| nd.bound)
            .into_iter()
            .chain(next.as_ref().map(|nd| nd.bound))
            .fold(f64::NEG_INFINITY, f64::max);
        let global = match &incumbent {
            Some((inc, _)) => open_bound.max(*inc),
            None => open_bound,
        };
        history.push(sign * global);
        if let Some((inc, _)) = &incumbent {
            if relative_gap(open_bound, *inc) <= opts.gap_tol {
                break;
            }
        }
    }

    let open_bound = heap
        .iter()
        .map(|nd| nd.bound)
        .chain(next.as_ref().map(|nd| nd.bound))
        .fold(f64::NEG_INFINITY, f64::max);
    let (status, objective, x, bound, gap) = match incumbent {
        Some((inc, x)) => {
            let bound = open_bound.max(inc);
            let gap = relative_gap(bound, inc);
            let status = if hit_limit && gap > opts.gap_tol { MilpStatus::NodeLimit } else { MilpStatus::Optimal };
            (status, Some(sign * inc), x, bound, gap)
        }
        None if hit_limit => (MilpStatus::NodeLimit, None, Vec::new(), open_bound, f64::INFINITY),
        None => (MilpStatus::Infeasible, None, Vec::new(), f64::NEG_INFINITY, f64::INFINITY),
    };
    Ok(MilpSolution {
        status,
        objective: objective.map(|o| o + 0.0),
        x,
        best_bound: sign * bound,
        nodes,
        gap,
        lp_pivots: tab.pivots,
        bound_history: history,
    })
}
