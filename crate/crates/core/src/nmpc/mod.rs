//! Shrinking-horizon NMPC over RNN surrogates: open-loop MILP solves, the
//! closed loop with an open-loop RNN observer, and Monte-Carlo validation.

mod ocp;

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::field::FieldArray;
use crate::milp::{encode_rnn_rollout, propagate_activation_bounds, solve_milp_with, MilpOptions, MilpSolution, MilpStatus};
use crate::plant::{PlantConfig, PlantSession};
use crate::rnn::{HiddenState, RnnModel};
use crate::seed;
use crate::uq::UncertaintySpec;

pub use ocp::{build_ocp, ObjectiveKind, OcpObjective, OcpSettings, OcpSpec, OutputConstraint, SurrogateRefs};

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerOptions {
    pub milp: MilpOptions,
    /// Number of ramp-and-hold levels tried as starting incumbents.
    pub candidate_levels: usize,
    /// Retry an infeasible step once with every ε₁ halved.
    pub relax_on_infeasible: bool,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        ControllerOptions { milp: MilpOptions::default(), candidate_levels: 21, relax_on_infeasible: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopSolution {
    pub schedule: Vec<f64>,
    pub solution: MilpSolution,
    /// Objective of `schedule` replayed through the networks.
    pub predicted_objective: f64,
    pub binaries: usize,
    pub rows_kept: usize,
    pub rows_pruned: usize,
}

/// Move from `start` toward `level` as fast as the rate limit allows, then hold.
fn ramp_to(start: f64, level: f64, rate: f64, lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    let mut u = start;
    (0..steps)
        .map(|_| {
            u = (u + (level - u).clamp(-rate, rate)).clamp(lo, hi);
            u
        })
        .collect()
}

/// Clamp a schedule onto the box and rate limits exactly.
fn project_schedule(spec: &OcpSpec, previous: f64, schedule: &[f64]) -> Vec<f64> {
    let mut prev = previous;
    schedule
        .iter()
        .map(|&u| {
            let v = u.clamp(prev - spec.rate_limit, prev + spec.rate_limit).clamp(spec.control_lo, spec.control_hi);
            prev = v;
            v
        })
        .collect()
}

/// Solve the open-loop OCP for the next `remaining` steps (capped by
/// `spec.prediction_cap`) from the observer's hidden states.
pub fn solve_open_loop(
    spec: &OcpSpec,
    models: &[RnnModel],
    observer: &[HiddenState],
    remaining: usize,
    opts: &ControllerOptions,
    warm: Option<&[f64]>,
) -> Result<OpenLoopSolution> {
    spec.validate()?;
    if remaining == 0 || remaining > spec.horizon {
        return Err(Error::InvalidArgument(format!("remaining horizon {remaining} outside 1..={}", spec.horizon)));
    }
    if observer.len() != models.len() {
        return Err(Error::DimensionMismatch { context: "observer states per model", expected: models.len(), got: observer.len() });
    }
    let steps = spec.prediction_steps(remaining);
    let cbox = spec.control_box(spec.previous_control, steps);
    let bounds = models
        .iter()
        .zip(observer)
        .map(|(m, s)| propagate_activation_bounds(m, &cbox, s))
        .collect::<Result<Vec<_>>>()?;
    let enc = encode_rnn_rollout(models, &bounds, spec)?;

    let mut candidates: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm {
        let mut c: Vec<f64> = w.iter().copied().take(steps).collect();
        while c.len() < steps {
            c.push(*c.last().unwrap_or(&spec.previous_control));
        }
        candidates.push(project_schedule(spec, spec.previous_control, &c));
    }
    let levels = opts.candidate_levels.max(1);
    for i in 0..levels {
        let frac = if levels == 1 { 0.0 } else { i as f64 / (levels - 1) as f64 };
        let level = spec.control_lo + frac * (spec.control_hi - spec.control_lo);
        candidates.push(ramp_to(spec.previous_control, level, spec.rate_limit, spec.control_lo, spec.control_hi, steps));
    }
    candidates.push(vec![spec.previous_control.clamp(spec.control_lo, spec.control_hi); steps]);
    let starts: Vec<Vec<f64>> = candidates.iter().filter_map(|c| enc.assignment(models, c).ok()).collect();
    let mut heuristic = |x: &[f64]| {
        let u = project_schedule(spec, spec.previous_control, &enc.control_values(x));
        enc.assignment(models, &u).ok()
    };
    let sol = solve_milp_with(&enc.problem, &opts.milp, &starts, &mut heuristic)?;
    if !sol.has_incumbent() {
        let mut detail = format!("MILP status {:?} after {} nodes; constraints:", sol.status, sol.nodes);
        for c in &spec.constraints {
            let _ = write!(detail, " {} <= {}", c.name, c.limit());
        }
        let _ = write!(detail, "; {} rows kept", enc.rows_kept);
        return Err(Error::ControllerInfeasible { step: spec.horizon - remaining, detail });
    }
    let schedule = project_schedule(spec, spec.previous_control, &enc.control_values(&sol.x));
    let om = spec.objective.model;
    let roll = models[om].forward_controls(&schedule, Some(&observer[om]))?;
    let predicted_objective = spec.objective_value(&roll.outputs);
    Ok(OpenLoopSolution {
        schedule,
        binaries: enc.problem.binary_count(),
        rows_kept: enc.rows_kept,
        rows_pruned: enc.rows_pruned,
        solution: sol,
        predicted_objective,
    })
}

/// Plant interface for the closed loop; profiles are `[field × node]`.
pub trait ControlledPlant {
    fn initial(&mut self) -> Result<PlantSnapshot>;
    fn apply(&mut self, control: f64) -> Result<PlantSnapshot>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantSnapshot {
    pub state: Vec<f64>,
    pub output: Vec<f64>,
}

impl ControlledPlant for PlantSession {
    fn initial(&mut self) -> Result<PlantSnapshot> {
        let s = PlantSession::initial(self);
        Ok(PlantSnapshot { state: s.state, output: s.output })
    }

    fn apply(&mut self, control: f64) -> Result<PlantSnapshot> {
        let s = self.advance(control)?;
        Ok(PlantSnapshot { state: s.state, output: s.output })
    }
}

/// Noise-free plant made of the surrogate networks themselves; the
/// snapshot concatenates every model's outputs.
pub struct SurrogatePlant<'a> {
    models: &'a [RnnModel],
    states: Vec<HiddenState>,
}

impl<'a> SurrogatePlant<'a> {
    pub fn new(models: &'a [RnnModel]) -> Self {
        SurrogatePlant { models, states: models.iter().map(|m| m.zero_state()).collect() }
    }
}

impl ControlledPlant for SurrogatePlant<'_> {
    fn initial(&mut self) -> Result<PlantSnapshot> {
        let n: usize = self.models.iter().map(|m| m.output_dim()).sum();
        Ok(PlantSnapshot { state: vec![0.0; n], output: vec![0.0; n] })
    }

    fn apply(&mut self, control: f64) -> Result<PlantSnapshot> {
        let mut out = Vec::new();
        for (m, s) in self.models.iter().zip(self.states.iter_mut()) {
            out.extend(m.step(s, &[control])?.1);
        }
        Ok(PlantSnapshot { state: out.clone(), output: out })
    }
}

/// Hard limit on a plant field checked at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantLimit {
    pub name: String,
    pub field: usize,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub step: usize,
    pub limit: String,
    pub node: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub applied: f64,
    pub milp_objective: f64,
    pub predicted_objective: f64,
    pub best_bound: f64,
    pub gap: f64,
    pub nodes: usize,
    pub status: MilpStatus,
    pub binaries: usize,
    pub rows_kept: usize,
    /// Factor applied to every ε₁ (1 normally, 0.5 after a relaxed retry).
    pub epsilon_scale: f64,
    pub plan: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopLog {
    pub controls: Vec<f64>,
    pub steps: Vec<StepRecord>,
    /// `observer[model][t]`: observer outputs after applying control `t`.
    pub observer: Vec<Vec<Vec<f64>>>,
    /// `predicted_fields[constraint][t]`: reconstructed constrained values.
    pub predicted_fields: Vec<Vec<Vec<f64>>>,
    /// Objective of the applied sequence under the observer.
    pub realized_objective: f64,
    /// Plant snapshots; index 0 is the initial condition.
    pub plant: Vec<PlantSnapshot>,
    pub violations: Vec<Violation>,
    /// Wall-clock seconds per step (not part of the deterministic record).
    pub solve_seconds: Vec<f64>,
}

impl ClosedLoopLog {
    /// `step,control,milp_objective,predicted_objective,best_bound,gap,nodes,status,binaries,rows_kept,epsilon_scale`.
    pub fn controls_csv(&self) -> String {
        let mut s = String::from("step,control,milp_objective,predicted_objective,best_bound,gap,nodes,status,binaries,rows_kept,epsilon_scale\n");
        for r in &self.steps {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:?},{},{},{}",
                r.step,
                r.applied,
                r.milp_objective,
                r.predicted_objective,
                r.best_bound,
                r.gap,
                r.nodes,
                r.status,
                r.binaries,
                r.rows_kept,
                r.epsilon_scale
            );
        }
        s
    }

    /// `step,constraint,node,value` from the observer's reconstruction.
    pub fn predicted_fields_csv(&self, spec: &OcpSpec) -> String {
        let mut s = String::from("step,constraint,node,value\n");
        for (c, per_t) in spec.constraints.iter().zip(&self.predicted_fields) {
            for (t, vals) in per_t.iter().enumerate() {
                for (n, v) in vals.iter().enumerate() {
                    let _ = writeln!(s, "{},{},{},{}", t + 1, c.name, n, v);
                }
            }
        }
        s
    }

    /// `step,limit,node,value`.
    pub fn violations_csv(&self) -> String {
        let mut s = String::from("step,limit,node,value\n");
        for v in &self.violations {
            let _ = writeln!(s, "{},{},{},{}", v.step, v.limit, v.node, v.value);
        }
        s
    }
}

fn check_limits(snapshot: &PlantSnapshot, nodes: usize, limits: &[PlantLimit], step: usize, out: &mut Vec<Violation>) {
    for lim in limits {
        let prof = &snapshot.state[lim.field * nodes..(lim.field + 1) * nodes];
        for (n, &v) in prof.iter().enumerate() {
            if v > lim.limit {
                out.push(Violation { step, limit: lim.name.clone(), node: n, value: v });
            }
        }
    }
}

/// Fig. 2 loop: solve, apply the first move, advance the observer, repeat
/// until the mission horizon is exhausted. `nodes` is the plant's spatial
/// node count used to slice snapshots for limit checks.
pub fn run_closed_loop(
    spec: &OcpSpec,
    models: &[RnnModel],
    plant: &mut dyn ControlledPlant,
    nodes: usize,
    limits: &[PlantLimit],
    opts: &ControllerOptions,
) -> Result<ClosedLoopLog> {
    spec.validate()?;
    let k = spec.horizon;
    let mut observer: Vec<HiddenState> = models.iter().map(|m| m.zero_state()).collect();
    let mut log = ClosedLoopLog {
        controls: Vec::with_capacity(k),
        steps: Vec::with_capacity(k),
        observer: vec![Vec::with_capacity(k); models.len()],
        predicted_fields: vec![Vec::with_capacity(k); spec.constraints.len()],
        realized_objective: 0.0,
        plant: Vec::with_capacity(k + 1),
        violations: Vec::new(),
        solve_seconds: Vec::with_capacity(k),
    };
    let first = plant.initial()?;
    check_limits(&first, nodes, limits, 0, &mut log.violations);
    log.plant.push(first);
    let mut previous = spec.previous_control;
    let mut warm: Option<Vec<f64>> = None;
    for t in 0..k {
        let started = Instant::now();
        let mut local = spec.clone();
        local.previous_control = previous;
        let mut scale = 1.0;
        let solved = match solve_open_loop(&local, models, &observer, k - t, opts, warm.as_deref()) {
            Ok(s) => s,
            Err(Error::ControllerInfeasible { .. }) if opts.relax_on_infeasible => {
                scale = 0.5;
                for c in local.constraints.iter_mut() {
                    c.epsilon *= 0.5;
                }
                solve_open_loop(&local, models, &observer, k - t, opts, warm.as_deref())?
            }
            Err(e) => return Err(e),
        };
        let u = solved.schedule[0];
        log.steps.push(StepRecord {
            step: t,
            applied: u,
            milp_objective: solved.solution.objective.unwrap_or(f64::NAN),
            predicted_objective: solved.predicted_objective,
            best_bound: solved.solution.best_bound,
            gap: solved.solution.gap,
            nodes: solved.solution.nodes,
            status: solved.solution.status,
            binaries: solved.binaries,
            rows_kept: solved.rows_kept,
            epsilon_scale: scale,
            plan: solved.schedule.clone(),
        });
        for (mi, m) in models.iter().enumerate() {
            let (_, o) = m.step(&mut observer[mi], &[u])?;
            log.observer[mi].push(o);
        }
        for (ci, c) in spec.constraints.iter().enumerate() {
            let o = log.observer[c.model].last().expect("just pushed");
            log.predicted_fields[ci].push(c.values(o));
        }
        let snap = plant.apply(u).map_err(|e| match e {
            Error::Integration { time, reason } => Error::Integration { time, reason: format!("closed-loop step {t}: {reason}") },
            other => other,
        })?;
        check_limits(&snap, nodes, limits, t + 1, &mut log.violations);
        log.plant.push(snap);
        log.controls.push(u);
        log.solve_seconds.push(started.elapsed().as_secs_f64());
        warm = Some(solved.schedule[1..].to_vec());
        previous = u;
    }
    log.realized_objective = spec.objective_value(&log.observer[spec.objective.model]);
    Ok(log)
}

/// Closed loop against a fresh plant session.
pub fn run_closed_loop_plant(
    spec: &OcpSpec,
    models: &[RnnModel],
    config: &PlantConfig,
    draw: &crate::uq::ParameterDraw,
    plant_seed: u64,
    limits: &[PlantLimit],
    opts: &ControllerOptions,
) -> Result<ClosedLoopLog> {
    let mut session = PlantSession::new(config, draw, plant_seed)?;
    run_closed_loop(spec, models, &mut session, config.spatial_nodes, limits, opts)
}

/// Predicted upper-bound field `[time × node]` of one plant field, with
/// `values` indexed like the trajectory (time 0 = initial condition).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedBound {
    pub field: usize,
    pub values: FieldArray,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub n_draws: usize,
    pub limit_names: Vec<String>,
    /// Per limit: fraction of draws within the limit at every node at the last step.
    pub steady_within: Vec<f64>,
    /// Per limit: fraction of draws within the limit over all time and space.
    pub always_within: Vec<f64>,
    /// `[draw][limit]` maximum over time and space.
    pub max_values: Vec<Vec<f64>>,
    /// `[draw][limit]` maximum over space at the last step.
    pub steady_max: Vec<Vec<f64>>,
    /// Per predicted bound: fraction of draws below it at the last step and over time.
    pub bound_steady_within: Vec<f64>,
    pub bound_always_within: Vec<f64>,
    /// `[draw][field][t]` exit-node states.
    pub exit_series: Vec<Vec<Vec<f64>>>,
    /// `[draw][field][node]` states at the last step.
    pub final_profiles: Vec<Vec<Vec<f64>>>,
    pub time_grid: Vec<f64>,
}

/// Simulate `policy` under `n_draws` fresh parameter draws and noise
/// realisations (draw `d` uses seeds derived from `(seed, d)`).
pub fn monte_carlo_validate(
    policy: &[f64],
    config: &PlantConfig,
    uncertainty: &UncertaintySpec,
    limits: &[PlantLimit],
    bounds: &[PredictedBound],
    n_draws: usize,
    seed_value: u64,
) -> Result<MonteCarloReport> {
    if policy.is_empty() {
        return Err(Error::InvalidArgument("policy is empty".into()));
    }
    let draws = uncertainty.draw(n_draws, seed::derive(seed_value, &[0]))?;
    let schedule = crate::plant::ControlSchedule::new(policy.to_vec());
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(n_draws).max(1);
    let mut results: Vec<Option<Result<crate::plant::TrajectorySet>>> = (0..n_draws).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results.chunks_mut(n_draws.div_ceil(workers)).enumerate().collect();
        for (ci, chunk) in chunks {
            let draws = &draws;
            let schedule = &schedule;
            scope.spawn(move || {
                let start = ci * n_draws.div_ceil(workers);
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let d = start + k;
                    *slot = Some(crate::plant::simulate(config, &draws[d], schedule, seed::derive(seed_value, &[1, d as u64])));
                }
            });
        }
    });
    let nodes = config.spatial_nodes;
    let fields = config.field_count();
    let mut report = MonteCarloReport {
        n_draws,
        limit_names: limits.iter().map(|l| l.name.clone()).collect(),
        steady_within: vec![0.0; limits.len()],
        always_within: vec![0.0; limits.len()],
        max_values: Vec::with_capacity(n_draws),
        steady_max: Vec::with_capacity(n_draws),
        bound_steady_within: vec![0.0; bounds.len()],
        bound_always_within: vec![0.0; bounds.len()],
        exit_series: Vec::with_capacity(n_draws),
        final_profiles: Vec::with_capacity(n_draws),
        time_grid: Vec::new(),
    };
    for r in results {
        let traj = r.expect("every slot filled")?;
        let times = traj.time_grid.len();
        let last = times - 1;
        let mut maxes = Vec::with_capacity(limits.len());
        let mut steady = Vec::with_capacity(limits.len());
        for (li, lim) in limits.iter().enumerate() {
            let mut mx = f64::NEG_INFINITY;
            for t in 0..times {
                for &v in traj.states.profile(t, lim.field) {
                    mx = mx.max(v);
                }
            }
            let sm = traj.states.profile(last, lim.field).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if sm <= lim.limit {
                report.steady_within[li] += 1.0;
            }
            if mx <= lim.limit {
                report.always_within[li] += 1.0;
            }
            maxes.push(mx);
            steady.push(sm);
        }
        for (bi, b) in bounds.iter().enumerate() {
            let below = |t: usize| {
                let bt = b.values.shape.times.min(times) - 1;
                traj.states.profile(t, b.field).iter().zip(b.values.profile(t.min(bt), 0)).all(|(v, u)| v <= u)
            };
            if below(last) {
                report.bound_steady_within[bi] += 1.0;
            }
            if (0..times).all(below) {
                report.bound_always_within[bi] += 1.0;
            }
        }
        report.max_values.push(maxes);
        report.steady_max.push(steady);
        report.exit_series.push((0..fields).map(|f| traj.states.series(f, nodes - 1)).collect());
        report.final_profiles.push((0..fields).map(|f| traj.states.profile(last, f).to_vec()).collect());
        if report.time_grid.is_empty() {
            report.time_grid = traj.time_grid.clone();
        }
    }
    let n = n_draws as f64;
    for v in report
        .steady_within
        .iter_mut()
        .chain(report.always_within.iter_mut())
        .chain(report.bound_steady_within.iter_mut())
        .chain(report.bound_always_within.iter_mut())
    {
        *v /= n;
    }
    Ok(report)
}
