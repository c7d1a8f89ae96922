use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use stochmpc_cli::artefact::{csv_records, parse_field, ArtefactWriter};
use stochmpc_cli::control::load_policy;
use stochmpc_cli::{
    build, export_plotdata, resolve_config, run_control, run_validation, simulate_schedule, Bundle, CliError,
    CliResult, ExportKind, Layout, PipelineConfig,
};

#[derive(Parser)]
#[command(name = "stochmpc", version, about = "PCE-POD-RNN surrogates and MILP-based robust NMPC")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; omitted keys take the case defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// tubular | packed-bed
    #[arg(long, global = true)]
    case: Option<String>,
}

#[derive(Subcommand)]
enum Verb {
    /// Simulate the plant under one schedule.
    Simulate {
        /// Constant control held over the whole horizon.
        #[arg(long, conflicts_with = "schedule")]
        control: Option<f64>,
        /// CSV with a `control` column (one row per step).
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Seeded random parameter draw instead of the nominal one.
        #[arg(long)]
        random_draw: bool,
    },
    /// Build the surrogate bundle (schedules, PCE, POD, RNN, validation).
    Build {
        /// Recompute plant evaluations instead of using the cache.
        #[arg(long)]
        no_cache: bool,
    },
    /// Run the shrinking-horizon closed loop against the plant.
    Control,
    /// Monte-Carlo validation of the closed-loop policy.
    Validate,
    /// Emit plot data (`x,series,value`).
    Export {
        /// exit | profiles | policy | mc | all
        #[arg(long, default_value = "all")]
        kind: String,
    },
}

fn read_schedule(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let col = rdr
        .headers()
        .ok()
        .and_then(|h| h.iter().position(|c| c == "control"))
        .ok_or_else(|| CliError::Malformed { file: path.to_path_buf(), reason: "no 'control' column".into() })?;
    csv_records(path, &body)?.iter().map(|r| parse_field(path, r, col)).collect()
}

fn run(cli: Cli) -> CliResult<()> {
    let c = &cli.common;
    let cfg: PipelineConfig = resolve_config(c.config.as_deref(), c.case.as_deref(), c.seed)?;
    let layout = Layout::new(&c.out);
    let started = Instant::now();
    match cli.verb {
        Verb::Simulate { control, schedule, random_draw } => {
            let u = match (control, schedule) {
                (_, Some(p)) => read_schedule(&p)?,
                (Some(v), None) => vec![v; cfg.ocp.horizon],
                (None, None) => vec![cfg.ocp.control_hi; cfg.ocp.horizon],
            };
            let traj = simulate_schedule(&cfg, &u, random_draw)?;
            let mut w = ArtefactWriter::new(&layout.root.join("simulate"), &cfg.hash())?;
            w.write("states.csv", &traj.to_csv(false))?;
            w.write("outputs.csv", &traj.to_csv(true))?;
            w.finish()?;
            eprintln!("simulated {} steps ({} clamp events)", u.len(), traj.clamp_events);
        }
        Verb::Build { no_cache } => {
            let b = build(&cfg, &layout, !no_cache, true)?;
            for t in &b.targets {
                eprintln!(
                    "{}: {} modes, test mse {:.3e}, fresh worst {:.4}",
                    t.target.name,
                    t.pod.as_ref().map_or(1, |p| p.mode_count()),
                    t.training.test_mse,
                    t.validation.worst
                );
            }
            eprintln!("bundle written to {} (N1 = {})", layout.bundle().display(), b.n1);
        }
        Verb::Control => {
            let bundle = Bundle::load(&cfg, &layout.bundle())?;
            let run = run_control(&cfg, &bundle)?;
            run.save(&bundle, &layout.control())?;
            eprintln!(
                "closed loop: {} steps, realized objective {:.6}, {} violation records",
                run.log.controls.len(),
                run.log.realized_objective,
                run.log.violations.len()
            );
        }
        Verb::Validate => {
            let bundle = Bundle::load(&cfg, &layout.bundle())?;
            let policy = load_policy(&layout.control().join("policy.csv"), &bundle.config_hash)?;
            let v = run_validation(&cfg, &bundle, &policy)?;
            v.save(&bundle, &layout.validate())?;
            for (i, name) in v.report.limit_names.iter().enumerate() {
                eprintln!(
                    "{name}: steady within limit {:.3}, always within limit {:.3} ({} draws)",
                    v.report.steady_within[i], v.report.always_within[i], v.report.n_draws
                );
            }
        }
        Verb::Export { kind } => {
            let k = ExportKind::parse(&kind).ok_or_else(|| {
                CliError::Core(stochmpc_core::Error::Config(format!("unknown export kind '{kind}'")))
            })?;
            let files = export_plotdata(&cfg, &layout, k)?;
            eprintln!("wrote {} plot files to {}", files.len(), layout.plots().display());
        }
    }
    eprintln!("done in {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
