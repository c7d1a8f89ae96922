//! Closed-loop control and Monte-Carlo validation on top of a bundle.

use std::fmt::Write as _;
use std::path::Path;

use stochmpc_core::milp::MilpOptions;
use stochmpc_core::nmpc::{
    build_ocp, monte_carlo_validate, run_closed_loop_plant, ClosedLoopLog, ControllerOptions, MonteCarloReport,
    OcpSpec, PlantLimit, PredictedBound, SurrogateRefs,
};
use stochmpc_core::{rnn_forward, FieldArray, FieldShape, ParameterDraw};

use crate::artefact::{csv_records, parse_field, read_artefact, ArtefactWriter};
use crate::config::{stage, PipelineConfig, Reduction, Statistic};
use crate::error::{CliError, CliResult};
use crate::pipeline::Bundle;

/// OCP of the case wired to the bundle's surrogates (model order = target order).
pub fn ocp_for(cfg: &PipelineConfig, bundle: &Bundle) -> CliResult<OcpSpec> {
    let obj = &bundle.targets[cfg.objective_target()];
    let constrained = bundle
        .targets
        .iter()
        .enumerate()
        .filter(|(_, t)| t.target.stat == Statistic::Upper)
        .map(|(i, t)| (t.target.field.clone(), i, t.node_rows()))
        .collect();
    let refs = SurrogateRefs { objective: (cfg.objective_target(), obj.exit_weights()), constrained };
    Ok(build_ocp(&cfg.ocp_settings()?, &refs)?)
}

pub fn controller_options(cfg: &PipelineConfig) -> ControllerOptions {
    ControllerOptions {
        milp: MilpOptions { gap_tol: cfg.milp.gap_tol, node_limit: cfg.milp.node_limit, ..MilpOptions::default() },
        candidate_levels: cfg.milp.candidate_levels,
        relax_on_infeasible: true,
    }
}

/// Hard plant limits at the configured setpoints.
pub fn plant_limits(cfg: &PipelineConfig, bundle: &Bundle) -> Vec<PlantLimit> {
    cfg.ocp
        .limits
        .iter()
        .filter_map(|(f, [setpoint, _])| {
            bundle.field_names.iter().position(|n| n == f).map(|field| PlantLimit { name: f.clone(), field, limit: *setpoint })
        })
        .collect()
}

/// Parameter draw of the closed-loop plant.
pub fn control_draw(cfg: &PipelineConfig) -> CliResult<ParameterDraw> {
    let unc = cfg.uncertainty_spec()?;
    Ok(match cfg.validate.control_draw.as_str() {
        "nominal" => unc.nominal(),
        _ => unc.draw(1, cfg.stage_seed(stage::CONTROL_DRAW))?.remove(0),
    })
}

pub struct ControlRun {
    pub spec: OcpSpec,
    pub draw: ParameterDraw,
    pub log: ClosedLoopLog,
}

/// Closed loop against the plant.
pub fn run_control(cfg: &PipelineConfig, bundle: &Bundle) -> CliResult<ControlRun> {
    let spec = ocp_for(cfg, bundle)?;
    let draw = control_draw(cfg)?;
    let log = run_closed_loop_plant(
        &spec,
        &bundle.models(),
        &cfg.plant_config()?,
        &draw,
        cfg.stage_seed(stage::CONTROL_PLANT),
        &plant_limits(cfg, bundle),
        &controller_options(cfg),
    )?;
    Ok(ControlRun { spec, draw, log })
}

impl ControlRun {
    /// Write the run's CSV files; wall-clock times are left out so reruns match bytewise.
    pub fn save(&self, bundle: &Bundle, dir: &Path) -> CliResult<()> {
        let mut w = ArtefactWriter::new(dir, &bundle.config_hash)?;
        w.write("policy.csv", &policy_csv(&self.log.controls))?;
        w.write("control_log.csv", &self.log.controls_csv())?;
        w.write("predicted_fields.csv", &self.log.predicted_fields_csv(&self.spec))?;
        w.write("violations.csv", &self.log.violations_csv())?;
        let nodes = bundle.grid.len();
        let mut exit = String::from("step,field,value\n");
        for (t, snap) in self.log.plant.iter().enumerate() {
            for (f, name) in bundle.field_names.iter().enumerate() {
                let _ = writeln!(exit, "{t},{name},{}", snap.state[f * nodes + nodes - 1]);
            }
        }
        w.write("plant_exit.csv", &exit)?;
        let mut draw = String::from("parameter,value\n");
        for (k, v) in &self.draw.values {
            let _ = writeln!(draw, "{k},{v}");
        }
        w.write("plant_draw.csv", &draw)?;
        w.finish()
    }
}

pub fn policy_csv(controls: &[f64]) -> String {
    let mut s = String::from("step,control\n");
    for (t, u) in controls.iter().enumerate() {
        let _ = writeln!(s, "{t},{u}");
    }
    s
}

pub fn load_policy(path: &Path, hash: &str) -> CliResult<Vec<f64>> {
    let body = read_artefact(path, hash)?;
    csv_records(path, &body)?.iter().map(|r| parse_field(path, r, 1)).collect()
}

/// Reduced-model prediction of every target along `policy`:
/// `[target][time][node]`, time 0 taken from the bundle's initial statistics.
pub fn predicted_profiles(bundle: &Bundle, policy: &[f64]) -> CliResult<Vec<Vec<Vec<f64>>>> {
    bundle
        .targets
        .iter()
        .map(|t| {
            let roll = rnn_forward(&t.model, policy, None)?;
            let mut out = vec![match t.target.reduction {
                Reduction::Pod => t.stats[0][0].clone(),
                Reduction::Exit => vec![*t.stats[0][0].last().expect("nonempty")],
            }];
            for o in &roll.outputs {
                out.push(t.reconstruct(o)?);
            }
            Ok(out)
        })
        .collect()
}

pub struct ValidationRun {
    pub report: MonteCarloReport,
    /// `[target][time][node]` reduced-model prediction along the policy.
    pub predicted: Vec<Vec<Vec<f64>>>,
}

/// Monte-Carlo validation of `policy` against the predicted upper bounds.
pub fn run_validation(cfg: &PipelineConfig, bundle: &Bundle, policy: &[f64]) -> CliResult<ValidationRun> {
    let predicted = predicted_profiles(bundle, policy)?;
    let nodes = bundle.grid.len();
    let bounds: Vec<PredictedBound> = bundle
        .targets
        .iter()
        .zip(&predicted)
        .filter(|(t, _)| t.target.stat == Statistic::Upper && t.target.reduction == Reduction::Pod)
        .map(|(t, p)| {
            let shape = FieldShape::new(p.len(), 1, nodes);
            FieldArray::from_vec(shape, p.concat()).map(|values| PredictedBound { field: t.field, values })
        })
        .collect::<stochmpc_core::Result<_>>()?;
    let report = monte_carlo_validate(
        policy,
        &cfg.plant_config()?,
        &cfg.uncertainty_spec()?,
        &plant_limits(cfg, bundle),
        &bounds,
        cfg.validate.n_draws,
        cfg.stage_seed(stage::MONTE_CARLO),
    )?;
    Ok(ValidationRun { report, predicted })
}

impl ValidationRun {
    pub fn save(&self, bundle: &Bundle, dir: &Path) -> CliResult<()> {
        let r = &self.report;
        let mut w = ArtefactWriter::new(dir, &bundle.config_hash)?;
        let mut summary = String::from("limit,steady_within,always_within,worst_steady_max,worst_max\n");
        for (li, name) in r.limit_names.iter().enumerate() {
            let ws = r.steady_max.iter().map(|m| m[li]).fold(f64::NEG_INFINITY, f64::max);
            let wm = r.max_values.iter().map(|m| m[li]).fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(summary, "{name},{},{},{ws},{wm}", r.steady_within[li], r.always_within[li]);
        }
        w.write("mc_summary.csv", &summary)?;
        let mut bounds = String::from("bound,steady_within,always_within\n");
        let uppers = bundle.targets.iter().filter(|t| t.target.stat == Statistic::Upper && t.target.reduction == Reduction::Pod);
        for (bi, t) in uppers.enumerate() {
            let _ = writeln!(bounds, "{},{},{}", t.target.name, r.bound_steady_within[bi], r.bound_always_within[bi]);
        }
        w.write("mc_bounds.csv", &bounds)?;
        let mut exit = String::from("draw,field,time,value\n");
        for (d, per_f) in r.exit_series.iter().enumerate() {
            for (f, series) in per_f.iter().enumerate() {
                for (t, v) in series.iter().enumerate() {
                    let _ = writeln!(exit, "{d},{},{},{v}", bundle.field_names[f], r.time_grid[t]);
                }
            }
        }
        w.write("mc_exit.csv", &exit)?;
        let mut fin = String::from("draw,field,x,value\n");
        for (d, per_f) in r.final_profiles.iter().enumerate() {
            for (f, prof) in per_f.iter().enumerate() {
                for (n, v) in prof.iter().enumerate() {
                    let _ = writeln!(fin, "{d},{},{},{v}", bundle.field_names[f], bundle.grid[n]);
                }
            }
        }
        w.write("mc_final.csv", &fin)?;
        let mut pred = String::from("target,field,time,node,value\n");
        for (t, p) in bundle.targets.iter().zip(&self.predicted) {
            for (ti, prof) in p.iter().enumerate() {
                for (n, v) in prof.iter().enumerate() {
                    let _ = writeln!(pred, "{},{},{ti},{n},{v}", t.target.name, t.target.field);
                }
            }
        }
        w.write("predicted.csv", &pred)?;
        w.finish()
    }
}

/// Error unless `dir` holds a finished run with the expected hash.
pub fn require(dir: &Path, file: &str, hash: &str) -> CliResult<String> {
    let p = dir.join(file);
    if !p.exists() {
        return Err(CliError::Missing(p));
    }
    read_artefact(&p, hash)
}
