//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng as _;
use stochmpc_cli::control::plant_limits;
use stochmpc_cli::{
    build, export_plotdata, run_control, run_validation, Bundle, ControlRun, ExportKind, Layout, PipelineConfig,
    ValidationRun,
};
use stochmpc_core::milp::{
    encode_rnn_rollout, propagate_activation_bounds, solve_lp, solve_milp, LpStatus, MilpOptions, MilpStatus,
    RolloutEncoding,
};
use stochmpc_core::nmpc::{ObjectiveKind, OcpObjective, OcpSpec, OutputConstraint};
use stochmpc_core::{
    compute_pod_basis, fit_pce, quadrature_rule, relative_l2, seed, simulate, surrogate_stats, train_rnn,
    ControlSchedule, Family, FieldArray, FieldShape, ParameterDraw, PceBasis, PlantConfig, PlantKind, RnnModel,
    Sequence, SnapshotMatrix, TrainConfig,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn scratch() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// ---------------------------------------------------------------- 1

/// E[x^d] under the standard normal / uniform(-1, 1) density.
fn exact_moment(family: Family, d: u32) -> f64 {
    if d % 2 == 1 {
        return 0.0;
    }
    match family {
        Family::HermiteProb => (1..=d).filter(|k| k % 2 == 1).map(f64::from).product(),
        Family::LegendreUniform => 1.0 / f64::from(d + 1),
    }
}

fn quadrature_exactness() -> Check {
    let started = Instant::now();
    let fams = [Family::HermiteProb, Family::LegendreUniform];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for level in 1..=5usize {
        let top = 2 * level as u32 - 1;
        for &fa in &fams {
            for &fb in &fams {
                let rule = quadrature_rule(&[fa, fb], &[level, level]).map_err(|e| e.to_string())?;
                for da in 0..=top {
                    for db in 0..=top {
                        let q = rule.integrate(|x| x[0].powi(da as i32) * x[1].powi(db as i32));
                        let exact = exact_moment(fa, da) * exact_moment(fb, db);
                        worst = worst.max((q - exact).abs() / exact.abs().max(1.0));
                        checked += 1;
                    }
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(worst <= 1e-10 && secs < 1.0, format!("{checked} monomials, worst error {worst:.2e}, {secs:.3} s"))
}

// ---------------------------------------------------------------- 2

fn scalar_field(v: f64) -> FieldArray {
    FieldArray::from_vec(FieldShape::new(1, 1, 1), vec![v]).unwrap()
}

fn pce_recovery() -> Check {
    let fams = [Family::HermiteProb, Family::LegendreUniform];
    let g = |x: &[f64]| 1.0 + 0.5 * x[0] - 0.3 * x[1] + 0.7 * x[0] * x[1] + 0.2 * x[0] * x[0] - 0.4 * x[1] * x[1];
    let rule = quadrature_rule(&fams, &[3, 3]).map_err(|e| e.to_string())?;
    let basis = PceBasis::total_degree(&fams, 2).map_err(|e| e.to_string())?;
    let evals: Vec<FieldArray> = (0..rule.len()).map(|k| scalar_field(g(rule.node(k)))).collect();
    let s = fit_pce(&evals, &rule, &basis).map_err(|e| e.to_string())?;
    let mut rng = seed::rng(3);
    let mut pointwise = 0.0f64;
    for _ in 0..200 {
        let x = [rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)];
        pointwise = pointwise.max((s.evaluate_point(0, &x).map_err(|e| e.to_string())? - g(&x)).abs());
    }

    let h = [Family::HermiteProb];
    let rule1 = quadrature_rule(&h, &[3]).map_err(|e| e.to_string())?;
    let basis1 = PceBasis::total_degree(&h, 2).map_err(|e| e.to_string())?;
    let sq: Vec<FieldArray> = (0..rule1.len()).map(|k| scalar_field(rule1.node(k)[0].powi(2))).collect();
    let s_sq = fit_pce(&sq, &rule1, &basis1).map_err(|e| e.to_string())?;
    let (mean, var) = (s_sq.mean().get(0, 0, 0), s_sq.variance().get(0, 0, 0));
    let lin: Vec<FieldArray> = (0..rule1.len()).map(|k| scalar_field(rule1.node(k)[0])).collect();
    let s_lin = fit_pce(&lin, &rule1, &basis1).map_err(|e| e.to_string())?;
    let st = surrogate_stats(&s_lin, 4000, 0.05, 17).map_err(|e| e.to_string())?;
    let (lo, up) = (st.lower.get(0, 0, 0), st.upper.get(0, 0, 0));
    let z = 1.959964;
    let ok = pointwise <= 1e-8
        && (mean - 1.0).abs() <= 1e-8
        && (var - 2.0).abs() <= 1e-8
        && (lo + z).abs() <= 0.08
        && (up - z).abs() <= 0.08;
    ensure(
        ok,
        format!("pointwise {pointwise:.1e}; theta^2 mean {mean:.10} var {var:.10}; theta bounds [{lo:.4}, {up:.4}]"),
    )
}

// ---------------------------------------------------------------- tubular / packed-bed pipelines

struct CaseRun {
    cfg: PipelineConfig,
    bundle: Bundle,
    control: ControlRun,
    validation: ValidationRun,
    seconds: f64,
}

fn run_case(kind: PlantKind) -> Result<CaseRun, String> {
    let started = Instant::now();
    let cfg = PipelineConfig::defaults(kind);
    let root = scratch().join(kind.name());
    let _ = std::fs::remove_dir_all(&root);
    let layout = Layout::new(&root);
    let bundle = build(&cfg, &layout, false, false).map_err(|e| format!("build: {e}"))?;
    let control = run_control(&cfg, &bundle).map_err(|e| format!("control: {e}"))?;
    control.save(&bundle, &layout.control()).map_err(|e| e.to_string())?;
    let validation = run_validation(&cfg, &bundle, &control.log.controls).map_err(|e| format!("validate: {e}"))?;
    validation.save(&bundle, &layout.validate()).map_err(|e| e.to_string())?;
    Ok(CaseRun { cfg, bundle, control, validation, seconds: started.elapsed().as_secs_f64() })
}

fn tubular() -> &'static Result<CaseRun, String> {
    static RUN: OnceLock<Result<CaseRun, String>> = OnceLock::new();
    RUN.get_or_init(|| run_case(PlantKind::Tubular))
}

fn packed_bed() -> &'static Result<CaseRun, String> {
    static RUN: OnceLock<Result<CaseRun, String>> = OnceLock::new();
    RUN.get_or_init(|| run_case(PlantKind::PackedBed))
}

// ---------------------------------------------------------------- 3

fn synthetic_rank_r() -> Check {
    let (rows, cols, r) = (30, 12, 4);
    let mut rng = seed::rng(11);
    let a: Vec<Vec<f64>> = (0..r).map(|_| (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let b: Vec<Vec<f64>> = (0..r).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let columns: Vec<Vec<f64>> =
        (0..cols).map(|j| (0..rows).map(|i| (0..r).map(|k| a[k][i] * b[k][j] * (r - k) as f64).sum()).collect()).collect();
    let snaps = SnapshotMatrix::from_columns("synthetic", &columns).map_err(|e| e.to_string())?;
    let full = compute_pod_basis(&snaps, 1.0).map_err(|e| e.to_string())?;
    let total: f64 = columns.iter().flatten().map(|v| v * v).sum();
    let mut worst = 0.0f64;
    for keep in 1..=r {
        let mut err = 0.0;
        for c in &columns {
            let mut rec = vec![0.0; rows];
            for m in 0..keep {
                let coef: f64 = (0..rows).map(|i| full.modes[(m, i)] * c[i]).sum();
                for i in 0..rows {
                    rec[i] += coef * full.modes[(m, i)];
                }
            }
            err += c.iter().zip(&rec).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        }
        let tail: f64 = full.singular_values[keep..].iter().map(|s| s * s).sum();
        worst = worst.max((err - tail).abs() / total);
    }
    ensure(worst <= 1e-8, format!("Eckart-Young worst relative mismatch {worst:.1e}"))
}

fn pod_energy() -> Check {
    let run = tubular().as_ref().map_err(Clone::clone)?;
    let mut parts = Vec::new();
    let mut ok = true;
    for t in &run.bundle.targets {
        if let Some(p) = &t.pod {
            let e2 = p.energy_fraction[1.min(p.energy_fraction.len() - 1)];
            ok &= e2 >= 0.99;
            parts.push(format!("{} 2-mode energy {:.5} ({} retained)", t.target.name, e2, p.mode_count()));
        }
    }
    let synth = synthetic_rank_r();
    ok &= synth.is_ok();
    parts.push(synth.unwrap_or_else(|e| e));
    ensure(ok && !parts.is_empty(), parts.join("; "))
}

// ---------------------------------------------------------------- 4

fn toy_spec(horizon: usize, limit: f64) -> OcpSpec {
    OcpSpec {
        horizon,
        control_lo: -1.0,
        control_hi: 1.0,
        rate_limit: 0.5,
        previous_control: 0.0,
        objective: OcpObjective { model: 0, weights: vec![1.0], offset: 0.0, kind: ObjectiveKind::Sum },
        constraints: vec![OutputConstraint {
            name: "cap".into(),
            model: 0,
            rows: vec![vec![1.0]],
            offsets: vec![0.0],
            setpoint: limit,
            epsilon: 0.0,
        }],
        prediction_cap: None,
    }
}

fn network_instance(s: u64) -> Option<(RnnModel, OcpSpec, RolloutEncoding)> {
    let mut rng = seed::rng(seed::derive(s, &[77]));
    let hidden = rng.random_range(2..=5);
    let horizon = rng.random_range(1..=3);
    let m = RnnModel::random(1, &[hidden], 1, s).ok()?;
    let spec = toy_spec(horizon, rng.random_range(-0.5..1.5));
    let cbox = spec.control_box(spec.previous_control, horizon);
    let b = propagate_activation_bounds(&m, &cbox, &m.zero_state()).ok()?;
    let enc = encode_rnn_rollout(std::slice::from_ref(&m), &[b], &spec).ok()?;
    let n = enc.problem.binary_count();
    (1..=12).contains(&n).then_some((m, spec, enc))
}

/// Best objective over every activation pattern, one LP each.
fn enumerate_patterns(enc: &RolloutEncoding) -> Option<f64> {
    let bins = enc.problem.binaries();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << bins.len()) {
        let mut p = enc.problem.clone();
        for (k, &b) in bins.iter().enumerate() {
            let v = f64::from(mask >> k & 1);
            p.vars[b].lo = v;
            p.vars[b].hi = v;
        }
        let s = solve_lp(&p).ok()?;
        if s.status == LpStatus::Optimal {
            best = Some(best.map_or(s.objective, |b: f64| b.max(s.objective)));
        }
    }
    best
}

fn milp_vs_oracle() -> Check {
    let started = Instant::now();
    let (mut tested, mut s, mut worst_obj, mut worst_replay, mut bins) = (0, 0u64, 0.0f64, 0.0f64, 0);
    while tested < 50 {
        s += 1;
        let Some((m, spec, enc)) = network_instance(s) else { continue };
        tested += 1;
        bins = bins.max(enc.problem.binary_count());
        let oracle = enumerate_patterns(&enc);
        let sol = solve_milp(&enc.problem, &MilpOptions::default()).map_err(|e| format!("instance {s}: {e}"))?;
        match oracle {
            None if sol.status == MilpStatus::Infeasible => {}
            None => return Err(format!("instance {s}: oracle infeasible, solver {:?}", sol.status)),
            Some(best) => {
                let obj = sol.objective.ok_or_else(|| format!("instance {s}: no incumbent"))?;
                worst_obj = worst_obj.max((obj - best).abs());
                let u = enc.control_values(&sol.x);
                let roll = m.forward_controls(&u, None).map_err(|e| e.to_string())?;
                worst_replay = worst_replay.max((spec.objective_value(&roll.outputs) - obj).abs());
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(
        worst_obj <= 1e-6 && worst_replay <= 1e-5 && secs < 300.0,
        format!("50 networks (max {bins} binaries): optimum gap {worst_obj:.1e}, replay {worst_replay:.1e}, {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- 5

fn teacher_student() -> Check {
    let mut teacher = RnnModel::random(1, &[4], 1, 0).map_err(|e| e.to_string())?;
    teacher.layers[0].b.fill(0.2);
    let mut rng = seed::rng(5);
    let seqs: Vec<Sequence> = (0..30)
        .map(|_| {
            let u: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = teacher.forward_controls(&u, None).unwrap().outputs;
            Sequence::from_controls(&u, out).unwrap()
        })
        .collect();
    let cfg = TrainConfig { hidden: vec![4], restarts: 4, ..TrainConfig::default() };
    let (_, report) = train_rnn(&seqs, &cfg).map_err(|e| e.to_string())?;
    ensure(report.test_mse < 1e-4, format!("teacher-student test mse {:.2e}", report.test_mse))
}

fn rnn_accuracy() -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, run) in [("tubular", tubular()), ("packed bed", packed_bed())] {
        match run {
            Ok(r) => {
                for t in &r.bundle.targets {
                    ok &= t.validation.worst < 0.03;
                    parts.push(format!("{name} {} steady error {:.4}", t.target.name, t.validation.worst));
                }
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    let ts = teacher_student();
    ok &= ts.is_ok();
    parts.push(ts.unwrap_or_else(|e| e));
    ensure(ok, parts.join("; "))
}

// ---------------------------------------------------------------- 6, 7

fn policy_admissible(cfg: &PipelineConfig, u: &[f64]) -> (bool, f64) {
    let mut prev = cfg.ocp.previous_control;
    let mut worst_step = 0.0f64;
    let mut ok = !u.is_empty();
    for &v in u {
        ok &= v >= cfg.ocp.control_lo - 1e-9 && v <= cfg.ocp.control_hi + 1e-9;
        worst_step = worst_step.max((v - prev).abs());
        prev = v;
    }
    (ok && worst_step <= cfg.ocp.rate_limit + 1e-9, worst_step)
}

fn limit_index(run: &CaseRun, field: &str) -> Option<usize> {
    plant_limits(&run.cfg, &run.bundle).iter().position(|l| l.name == field)
}

fn tubular_closed_loop() -> Check {
    let run = tubular().as_ref().map_err(Clone::clone)?;
    let r = &run.validation.report;
    let ti = limit_index(run, "T").ok_or("no temperature limit")?;
    let (admissible, step) = policy_admissible(&run.cfg, &run.control.log.controls);
    let ok = r.n_draws == 200 && r.steady_within[ti] >= 0.95 && admissible && run.seconds < 1800.0;
    ensure(
        ok,
        format!(
            "{} draws, steady T <= 4 for {:.3}, policy admissible {admissible} (max step {step:.3}), full run {:.0} s",
            r.n_draws, r.steady_within[ti], run.seconds
        ),
    )
}

fn packed_bed_closed_loop() -> Check {
    let run = packed_bed().as_ref().map_err(Clone::clone)?;
    let r = &run.validation.report;
    let aa = limit_index(run, "x_aa").ok_or("no acetic acid limit")?;
    let fa = limit_index(run, "x_fa").ok_or("no formic acid limit")?;
    let (admissible, step) = policy_admissible(&run.cfg, &run.control.log.controls);
    let ok = r.n_draws == 100 && r.always_within[aa] >= 1.0 && r.always_within[fa] >= 1.0 && admissible;
    ensure(
        ok,
        format!(
            "{} draws, x_aa <= 4.1 always for {:.3}, x_fa <= 2.1 always for {:.3}, policy admissible {admissible} (max step {step:.3}), {:.0} s",
            r.n_draws, r.always_within[aa], r.always_within[fa], run.seconds
        ),
    )
}

// ---------------------------------------------------------------- 8

fn small_config() -> PipelineConfig {
    let text = r#"
[case]
kind = "tubular"
seed = 5

[plant]
spatial_nodes = 24

[sampling]
n1 = 6
n_fresh = 2
segments = 3

[pce]
n2 = 500

[rnn]
steady_start = 2
restarts = 1
tolerance = 1.0

[rnn.hidden]
C_mean = [4]
T_upper = [4]

[ocp]
horizon = 8

[validate]
n_draws = 3
"#;
    PipelineConfig::from_toml_str(text, None).unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn run_small(root: &Path) -> Result<(), String> {
    let cfg = small_config();
    let layout = Layout::new(root);
    let bundle = build(&cfg, &layout, false, false).map_err(|e| e.to_string())?;
    let c = run_control(&cfg, &bundle).map_err(|e| e.to_string())?;
    c.save(&bundle, &layout.control()).map_err(|e| e.to_string())?;
    let v = run_validation(&cfg, &bundle, &c.log.controls).map_err(|e| e.to_string())?;
    v.save(&bundle, &layout.validate()).map_err(|e| e.to_string())?;
    export_plotdata(&cfg, &layout, ExportKind::All).map_err(|e| e.to_string())?;
    Ok(())
}

fn determinism() -> Check {
    let base = scratch().join("determinism");
    let _ = std::fs::remove_dir_all(&base);
    let (a, b) = (base.join("a"), base.join("b"));
    run_small(&a)?;
    run_small(&b)?;
    let (ta, tb) = (tree(&a), tree(&b));
    let differing: Vec<String> = ta
        .iter()
        .zip(&tb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    ensure(
        ta.len() == tb.len() && differing.is_empty() && ta.len() > 20,
        format!("{} artefacts across build/control/validate/export, {} differ {:?}", ta.len(), differing.len(), differing),
    )
}

// ---------------------------------------------------------------- 9

fn exit_series(cfg: &PlantConfig, draw: &ParameterDraw, schedule: &[f64]) -> Result<Vec<Vec<f64>>, String> {
    let tr = simulate(cfg, draw, &ControlSchedule::new(schedule.to_vec()), 0).map_err(|e| e.to_string())?;
    let n = cfg.spatial_nodes;
    Ok((0..cfg.field_count()).map(|f| tr.states.series(f, n - 1)).collect())
}

fn mesh_convergence() -> Check {
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for (kind, schedules) in [
        (PlantKind::Tubular, vec![vec![1.0; 50], (0..50).map(|t| (0.1 * (t + 1) as f64).min(2.0)).collect()]),
        (PlantKind::PackedBed, vec![vec![60.0; 20], (0..20).map(|t| 50.0 + t as f64).collect()]),
    ] {
        let pc = PipelineConfig::defaults(kind);
        let draw = pc.uncertainty_spec().map_err(|e| e.to_string())?.nominal();
        let coarse = pc.plant_config().map_err(|e| e.to_string())?.without_noise();
        let mut fine = coarse.clone();
        fine.spatial_nodes = 2 * coarse.spatial_nodes;
        let mut case_worst = 0.0f64;
        for s in &schedules {
            let a = exit_series(&coarse, &draw, s)?;
            let b = exit_series(&fine, &draw, s)?;
            for (x, y) in a.iter().zip(&b) {
                case_worst = case_worst.max(relative_l2(x, y));
            }
        }
        worst = worst.max(case_worst);
        parts.push(format!("{} {}->{} nodes: {:.4}", kind.name(), coarse.spatial_nodes, fine.spatial_nodes, case_worst));
    }
    ensure(worst < 0.01, format!("worst exit relative L2 {}", parts.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("quadrature exactness", quadrature_exactness),
        ("PCE recovery", pce_recovery),
        ("POD energy and Eckart-Young", pod_energy),
        ("MILP vs pattern enumeration", milp_vs_oracle),
        ("RNN surrogate accuracy", rnn_accuracy),
        ("tubular closed-loop robustness", tubular_closed_loop),
        ("packed-bed closed-loop robustness", packed_bed_closed_loop),
        ("determinism", determinism),
        ("mesh convergence", mesh_convergence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("criterion {} {name}: PASS ({msg}) [{secs:.1} s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({msg}) [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
