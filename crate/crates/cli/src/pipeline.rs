//! Surrogate construction: schedules, plant runs at quadrature nodes, PCE
//! statistics, POD, RNN training and fresh-sample validation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use stochmpc_core::pod::SnapshotMatrix;
use stochmpc_core::rnn::validate_model_window;
use stochmpc_core::{
    compute_pod_basis, fit_pce, lhc_sample, quadrature_rule, seed, surrogate_stats, FieldArray, PceBasis,
    PodBasis, QuadratureRule, RnnModel, Sequence, TrainConfig, ValidationReport,
};

use crate::artefact::{csv_records, parse_field, read_artefact, ArtefactWriter};
use crate::config::{stage, PipelineConfig, Reduction, Statistic, Target};
use crate::error::{CliError, CliResult};
use crate::evaluate::{par_map, EvalCache, Evaluator};

/// Piecewise-constant LHC designs over `segments` levels, optionally ramped
/// at the rate limit, starting from the OCP's previous control.
pub fn make_schedules(cfg: &PipelineConfig, count: usize, seed_value: u64) -> CliResult<Vec<Vec<f64>>> {
    let o = &cfg.ocp;
    let k = o.horizon;
    let seg = cfg.sampling.segments;
    let design = lhc_sample(&vec![(o.control_lo, o.control_hi); seg], count, seed_value)?;
    Ok((0..count)
        .map(|i| {
            let levels = design.sample(i);
            let mut prev = o.previous_control;
            (0..k)
                .map(|t| {
                    let level = levels[t * seg / k];
                    let u = if cfg.sampling.rate_limited {
                        prev + (level - prev).clamp(-o.rate_limit, o.rate_limit)
                    } else {
                        level
                    };
                    prev = u.clamp(o.control_lo, o.control_hi);
                    prev
                })
                .collect()
        })
        .collect())
}

/// Plain copy of the training report columns that are persisted.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub train_mse: f64,
    pub val_mse: f64,
    pub test_mse: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub restart_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetResult {
    pub target: Target,
    /// Index of the target's field in the evaluator output.
    pub field: usize,
    /// Statistical field `[schedule][time][node]` of the training schedules.
    pub stats: Vec<Vec<Vec<f64>>>,
    pub pod: Option<PodBasis>,
    pub model: RnnModel,
    pub training: TrainSummary,
    pub validation: ValidationReport,
}

impl TargetResult {
    /// Reduced value(s) of one spatial profile.
    pub fn reduce(&self, profile: &[f64]) -> CliResult<Vec<f64>> {
        reduce(self.target.reduction, self.pod.as_ref(), profile)
    }

    /// Spatial profile reconstructed from reduced output; exit models yield one value.
    pub fn reconstruct(&self, output: &[f64]) -> CliResult<Vec<f64>> {
        match &self.pod {
            Some(p) => Ok(p.reconstruct(output)?),
            None => Ok(output.to_vec()),
        }
    }

    /// Output weights giving the exit value.
    pub fn exit_weights(&self) -> Vec<f64> {
        match &self.pod {
            Some(p) => (0..p.mode_count()).map(|i| p.modes[(i, p.dof() - 1)]).collect(),
            None => vec![1.0],
        }
    }

    /// Reconstruction rows for every node (one row for exit models).
    pub fn node_rows(&self) -> Vec<Vec<f64>> {
        match &self.pod {
            Some(p) => (0..p.dof()).map(|n| (0..p.mode_count()).map(|i| p.modes[(i, n)]).collect()).collect(),
            None => vec![vec![1.0]],
        }
    }
}

fn reduce(reduction: Reduction, pod: Option<&PodBasis>, profile: &[f64]) -> CliResult<Vec<f64>> {
    Ok(match (reduction, pod) {
        (Reduction::Pod, Some(p)) => p.project(profile)?,
        _ => vec![*profile.last().expect("nonempty profile")],
    })
}

/// Everything Algorithm 1 produces, as persisted in the bundle directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub config_hash: String,
    pub n1: usize,
    pub attempts: usize,
    pub schedules: Vec<Vec<f64>>,
    pub fresh_schedules: Vec<Vec<f64>>,
    pub grid: Vec<f64>,
    pub field_names: Vec<String>,
    pub targets: Vec<TargetResult>,
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub cache_dir: Option<PathBuf>,
    pub verbose: bool,
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    ev: &'a dyn Evaluator,
    cache: EvalCache,
    rule: QuadratureRule,
    basis: PceBasis,
    verbose: bool,
}

impl Ctx<'_> {
    fn say(&self, msg: &str) {
        if self.verbose {
            eprintln!("[build] {msg}");
        }
    }

    /// Statistical fields `[target][schedule][time][node]` for a set of schedules.
    fn statistics(&self, schedules: &[Vec<f64>], set: u64, fields: &[(Statistic, usize)]) -> CliResult<Vec<Vec<Vec<Vec<f64>>>>> {
        let unc = self.cfg.uncertainty_spec()?;
        let q = self.rule.len();
        let plant_seed = self.cfg.stage_seed(stage::PLANT);
        let runs = par_map(schedules.len() * q, |i| {
            let (s, node) = (i / q, i % q);
            let draw = unc.from_germ(self.rule.node(node))?;
            let tag = format!("set{set}-s{s}-q{node}");
            self.cache.get_or_eval(self.ev, &tag, &schedules[s], &draw, seed::derive(plant_seed, &[set, s as u64, node as u64]))
        });
        let mut runs = runs.into_iter().collect::<stochmpc_core::Result<Vec<FieldArray>>>()?;
        let stats_seed = self.cfg.stage_seed(stage::STATS);
        let mut out = vec![Vec::with_capacity(schedules.len()); fields.len()];
        for s in 0..schedules.len() {
            let evals: Vec<FieldArray> = runs.drain(..q).collect();
            let pce = fit_pce(&evals, &self.rule, &self.basis)?;
            let st = surrogate_stats(&pce, self.cfg.pce.n2, self.cfg.pce.beta, seed::derive(stats_seed, &[set, s as u64]))?;
            for (ti, &(stat, f)) in fields.iter().enumerate() {
                let a = match stat {
                    Statistic::Mean => &st.mean,
                    Statistic::Upper => &st.upper,
                };
                out[ti].push((0..a.shape.times).map(|t| a.profile(t, f).to_vec()).collect());
            }
        }
        Ok(out)
    }
}

/// Sequences `u_t -> reduced(stat_{t+1})` for every schedule.
fn sequences(schedules: &[Vec<f64>], stats: &[Vec<Vec<f64>>], reduction: Reduction, pod: Option<&PodBasis>) -> CliResult<Vec<Sequence>> {
    schedules
        .iter()
        .zip(stats)
        .map(|(u, st)| {
            let targets = st[1..].iter().map(|p| reduce(reduction, pod, p)).collect::<CliResult<Vec<_>>>()?;
            Ok(Sequence::from_controls(u, targets)?)
        })
        .collect()
}

/// Run Algorithm 1 with `ev` as the black-box simulator.
pub fn run_pipeline(cfg: &PipelineConfig, ev: &dyn Evaluator, opts: &BuildOptions) -> CliResult<Bundle> {
    cfg.validate()?;
    let families = cfg.families()?;
    let ctx = Ctx {
        cfg,
        ev,
        cache: EvalCache::new(opts.cache_dir.as_deref()),
        rule: quadrature_rule(&families, &vec![cfg.sampling.quadrature_level; families.len()])?,
        basis: PceBasis::total_degree(&families, cfg.pce.order)?,
        verbose: opts.verbose,
    };
    let field_names = ev.field_names();
    let targets = cfg.targets();
    let mut fields = Vec::with_capacity(targets.len());
    for t in &targets {
        let f = field_names
            .iter()
            .position(|n| n == &t.field)
            .ok_or_else(|| stochmpc_core::Error::Config(format!("evaluator has no field '{}'", t.field)))?;
        fields.push((t.stat, f));
    }
    let fresh_schedules = make_schedules(cfg, cfg.sampling.n_fresh, cfg.stage_seed(stage::FRESH))?;
    ctx.say(&format!("{} fresh schedules x {} quadrature nodes", fresh_schedules.len(), ctx.rule.len()));
    let fresh_stats = ctx.statistics(&fresh_schedules, 1, &fields)?;
    let mut n1 = cfg.sampling.n1;
    let mut attempt = 0;
    loop {
        attempt += 1;
        let schedules = make_schedules(cfg, n1, cfg.stage_seed(stage::LHC))?;
        ctx.say(&format!("attempt {attempt}: {n1} schedules x {} quadrature nodes", ctx.rule.len()));
        let stats = ctx.statistics(&schedules, 0, &fields)?;
        let mut results = Vec::with_capacity(targets.len());
        for (ti, t) in targets.iter().enumerate() {
            let pod = match t.reduction {
                Reduction::Pod => {
                    let cols: Vec<Vec<f64>> = stats[ti].iter().flat_map(|s| s[1..].iter().cloned()).collect();
                    Some(compute_pod_basis(&SnapshotMatrix::from_columns(t.name.clone(), &cols)?, cfg.pod.threshold)?)
                }
                Reduction::Exit => None,
            };
            let seqs = sequences(&schedules, &stats[ti], t.reduction, pod.as_ref())?;
            let tc = TrainConfig {
                hidden: cfg.rnn.hidden[&t.name].clone(),
                split: cfg.rnn.split,
                split_seed: seed::derive(cfg.stage_seed(stage::SPLIT), &[ti as u64]),
                init_seed: seed::derive(cfg.stage_seed(stage::INIT), &[ti as u64]),
                patience: cfg.rnn.patience,
                max_epochs: cfg.rnn.max_epochs,
                restarts: cfg.rnn.restarts,
                ..TrainConfig::default()
            };
            let (model, report) = stochmpc_core::train_rnn(&seqs, &tc)?;
            let fresh = sequences(&fresh_schedules, &fresh_stats[ti], t.reduction, pod.as_ref())?;
            let validation = validate_model_window(&model, &fresh, cfg.rnn.tolerance, cfg.rnn.steady_start)?;
            ctx.say(&format!(
                "{}: modes {} test mse {:.3e} epochs {} fresh worst {:.4}",
                t.name,
                pod.as_ref().map_or(1, PodBasis::mode_count),
                report.test_mse,
                report.epochs_run,
                validation.worst
            ));
            results.push(TargetResult {
                target: t.clone(),
                field: fields[ti].1,
                stats: stats[ti].clone(),
                pod,
                model,
                training: TrainSummary {
                    train_mse: report.train_mse,
                    val_mse: report.val_mse,
                    test_mse: report.test_mse,
                    epochs_run: report.epochs_run,
                    best_epoch: report.best_epoch,
                    restart_used: report.restart_used,
                },
                validation,
            });
        }
        let worst = results
            .iter()
            .filter(|r| !r.validation.pass)
            .max_by(|a, b| a.validation.worst.total_cmp(&b.validation.worst));
        match worst {
            Some(w) if attempt >= 2 => {
                return Err(CliError::Validation {
                    target: w.target.name.clone(),
                    error: w.validation.worst,
                    tolerance: w.validation.tolerance,
                })
            }
            Some(w) => {
                ctx.say(&format!("validation failed for '{}' ({:.4}); doubling N1", w.target.name, w.validation.worst));
                n1 *= 2;
            }
            None => {
                return Ok(Bundle {
                    config_hash: cfg.hash(),
                    n1,
                    attempts: attempt,
                    schedules,
                    fresh_schedules,
                    grid: ev.grid(),
                    field_names,
                    targets: results,
                })
            }
        }
    }
}

fn schedules_csv(s: &[Vec<f64>]) -> String {
    let mut out = String::from("schedule,step,control\n");
    for (i, u) in s.iter().enumerate() {
        for (t, v) in u.iter().enumerate() {
            let _ = writeln!(out, "{i},{t},{v}");
        }
    }
    out
}

fn parse_schedules(path: &Path, body: &str) -> CliResult<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for rec in csv_records(path, body)? {
        let i: usize = parse_field(path, &rec, 0)?;
        let v: f64 = parse_field(path, &rec, 2)?;
        if i == out.len() {
            out.push(Vec::new());
        }
        out.get_mut(i)
            .ok_or_else(|| CliError::Malformed { file: path.to_path_buf(), reason: "schedules out of order".into() })?
            .push(v);
    }
    Ok(out)
}

impl Bundle {
    /// Persist every artefact under `dir`, stamped with the config hash.
    pub fn save(&self, cfg: &PipelineConfig, dir: &Path) -> CliResult<()> {
        let mut w = ArtefactWriter::new(dir, &self.config_hash)?;
        w.write("config.toml", &cfg.to_toml())?;
        let mut prov = String::from("key,value\n");
        let _ = writeln!(prov, "config_hash,{}", self.config_hash);
        let _ = writeln!(prov, "case,{}", cfg.case.kind);
        let _ = writeln!(prov, "master_seed,{}", cfg.case.seed);
        for (name, tag) in [("lhc", stage::LHC), ("plant", stage::PLANT), ("stats", stage::STATS), ("split", stage::SPLIT), ("init", stage::INIT), ("fresh", stage::FRESH)] {
            let _ = writeln!(prov, "seed_{name},{}", cfg.stage_seed(tag));
        }
        let _ = writeln!(prov, "n1,{}", self.n1);
        let _ = writeln!(prov, "attempts,{}", self.attempts);
        let _ = writeln!(prov, "fields,{}", self.field_names.join(" "));
        w.write("provenance.csv", &prov)?;
        w.write("schedules.csv", &schedules_csv(&self.schedules))?;
        w.write("fresh_schedules.csv", &schedules_csv(&self.fresh_schedules))?;
        let mut grid = String::from("node,x\n");
        for (i, x) in self.grid.iter().enumerate() {
            let _ = writeln!(grid, "{i},{x}");
        }
        w.write("grid.csv", &grid)?;
        let mut training = String::from("target,hidden,train_mse,val_mse,test_mse,epochs,best_epoch,restart\n");
        let mut validation = String::from("target,sequence,relative_error,tolerance,pass\n");
        for r in &self.targets {
            let name = &r.target.name;
            let mut st = String::from("schedule,time,node,value\n");
            for (s, times) in r.stats.iter().enumerate() {
                for (t, prof) in times.iter().enumerate() {
                    for (n, v) in prof.iter().enumerate() {
                        let _ = writeln!(st, "{s},{t},{n},{v}");
                    }
                }
            }
            w.write(&format!("stats_{name}.csv"), &st)?;
            if let Some(p) = &r.pod {
                w.write(&format!("pod_{name}_modes.csv"), &p.modes_csv())?;
                w.write(&format!("pod_{name}_singular_values.csv"), &p.singular_values_csv())?;
            }
            w.write(&format!("rnn_{name}.txt"), &r.model.to_text())?;
            let t = &r.training;
            let hidden: Vec<String> = r.model.hidden_sizes().iter().map(|h| h.to_string()).collect();
            let _ = writeln!(
                training,
                "{name},{},{},{},{},{},{},{}",
                hidden.join(" "),
                t.train_mse,
                t.val_mse,
                t.test_mse,
                t.epochs_run,
                t.best_epoch,
                t.restart_used
            );
            for (i, e) in r.validation.errors.iter().enumerate() {
                let _ = writeln!(validation, "{name},{i},{e},{},{}", r.validation.tolerance, *e <= r.validation.tolerance);
            }
        }
        w.write("training.csv", &training)?;
        w.write("validation.csv", &validation)?;
        w.finish()
    }

    /// Load a bundle written for `cfg`; files stamped with another hash are refused.
    pub fn load(cfg: &PipelineConfig, dir: &Path) -> CliResult<Bundle> {
        let hash = cfg.hash();
        let read = |name: &str| read_artefact(&dir.join(name), &hash);
        let prov_path = dir.join("provenance.csv");
        let prov = csv_records(&prov_path, &read("provenance.csv")?)?;
        let get = |key: &str| -> CliResult<String> {
            prov.iter()
                .find(|r| r.get(0) == Some(key))
                .and_then(|r| r.get(1))
                .map(str::to_string)
                .ok_or_else(|| CliError::Malformed { file: prov_path.clone(), reason: format!("missing key {key}") })
        };
        let num = |key: &str| -> CliResult<usize> {
            get(key)?.parse().map_err(|_| CliError::Malformed { file: prov_path.clone(), reason: format!("bad {key}") })
        };
        let field_names: Vec<String> = get("fields")?.split_whitespace().map(str::to_string).collect();
        let grid_path = dir.join("grid.csv");
        let grid = csv_records(&grid_path, &read("grid.csv")?)?
            .iter()
            .map(|r| parse_field(&grid_path, r, 1))
            .collect::<CliResult<Vec<f64>>>()?;
        let schedules = parse_schedules(&dir.join("schedules.csv"), &read("schedules.csv")?)?;
        let fresh_schedules = parse_schedules(&dir.join("fresh_schedules.csv"), &read("fresh_schedules.csv")?)?;
        let train_path = dir.join("training.csv");
        let training = csv_records(&train_path, &read("training.csv")?)?;
        let val_path = dir.join("validation.csv");
        let validation = csv_records(&val_path, &read("validation.csv")?)?;
        let mut targets = Vec::new();
        for t in cfg.targets() {
            let name = t.name.clone();
            let field = field_names
                .iter()
                .position(|f| f == &t.field)
                .ok_or_else(|| CliError::Malformed { file: prov_path.clone(), reason: format!("no field {}", t.field) })?;
            let model = RnnModel::from_text(&read(&format!("rnn_{name}.txt"))?)?;
            let pod = match t.reduction {
                Reduction::Pod => Some(PodBasis::from_csv(
                    &name,
                    &read(&format!("pod_{name}_modes.csv"))?,
                    &read(&format!("pod_{name}_singular_values.csv"))?,
                )?),
                Reduction::Exit => None,
            };
            let st_path = dir.join(format!("stats_{name}.csv"));
            let mut stats: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; grid.len()]; cfg.ocp.horizon + 1]; schedules.len()];
            for rec in csv_records(&st_path, &read(&format!("stats_{name}.csv"))?)? {
                let s: usize = parse_field(&st_path, &rec, 0)?;
                let ti: usize = parse_field(&st_path, &rec, 1)?;
                let n: usize = parse_field(&st_path, &rec, 2)?;
                let v: f64 = parse_field(&st_path, &rec, 3)?;
                *stats
                    .get_mut(s)
                    .and_then(|x| x.get_mut(ti))
                    .and_then(|x| x.get_mut(n))
                    .ok_or_else(|| CliError::Malformed { file: st_path.clone(), reason: "index out of range".into() })? = v;
            }
            let row = training
                .iter()
                .find(|r| r.get(0) == Some(name.as_str()))
                .ok_or_else(|| CliError::Malformed { file: train_path.clone(), reason: format!("no row for {name}") })?;
            let training = TrainSummary {
                train_mse: parse_field(&train_path, row, 2)?,
                val_mse: parse_field(&train_path, row, 3)?,
                test_mse: parse_field(&train_path, row, 4)?,
                epochs_run: parse_field(&train_path, row, 5)?,
                best_epoch: parse_field(&train_path, row, 6)?,
                restart_used: parse_field(&train_path, row, 7)?,
            };
            let mut errors = Vec::new();
            let mut tolerance = cfg.rnn.tolerance;
            for r in validation.iter().filter(|r| r.get(0) == Some(name.as_str())) {
                errors.push(parse_field::<f64>(&val_path, r, 2)?);
                tolerance = parse_field(&val_path, r, 3)?;
            }
            let (worst_index, worst) = errors
                .iter()
                .copied()
                .enumerate()
                .fold((0, 0.0f64), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
            targets.push(TargetResult {
                target: t,
                field,
                stats,
                pod,
                model,
                training,
                validation: ValidationReport { pass: errors.iter().all(|e| *e <= tolerance), errors, worst, worst_index, tolerance },
            });
        }
        Ok(Bundle {
            config_hash: hash,
            n1: num("n1")?,
            attempts: num("attempts")?,
            schedules,
            fresh_schedules,
            grid,
            field_names,
            targets,
        })
    }

    pub fn models(&self) -> Vec<RnnModel> {
        self.targets.iter().map(|t| t.model.clone()).collect()
    }
}
