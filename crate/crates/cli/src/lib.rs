//! Configuration, surrogate-construction pipeline, closed-loop runs and
//! plot-data export for the `stochmpc` command-line tool.

pub mod artefact;
pub mod config;
pub mod control;
pub mod error;
pub mod evaluate;
pub mod export;
pub mod pipeline;

use std::path::Path;

use stochmpc_core::{simulate, ControlSchedule, PlantKind, TrajectorySet};

pub use config::{PipelineConfig, Reduction, Statistic, Target};
pub use control::{run_control, run_validation, ControlRun, ValidationRun};
pub use error::{CliError, CliResult};
pub use evaluate::{EvalCache, Evaluator, PlantEvaluator};
pub use export::{export_plotdata, ExportKind, Layout};
pub use pipeline::{make_schedules, run_pipeline, BuildOptions, Bundle, TargetResult};

/// Config from an optional file, an optional case and an optional seed override.
pub fn resolve_config(path: Option<&Path>, case: Option<&str>, seed: Option<u64>) -> CliResult<PipelineConfig> {
    let kind = case.map(PlantKind::parse).transpose()?;
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p, kind)?,
        None => PipelineConfig::defaults(kind.unwrap_or(PlantKind::Tubular)),
    };
    if let Some(s) = seed {
        cfg.case.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Simulate one schedule with nominal or seeded random parameters.
pub fn simulate_schedule(cfg: &PipelineConfig, schedule: &[f64], random_draw: bool) -> CliResult<TrajectorySet> {
    let unc = cfg.uncertainty_spec()?;
    let draw = if random_draw {
        unc.draw(1, cfg.stage_seed(config::stage::CONTROL_DRAW))?.remove(0)
    } else {
        unc.nominal()
    };
    Ok(simulate(
        &cfg.plant_config()?,
        &draw,
        &ControlSchedule::new(schedule.to_vec()),
        cfg.stage_seed(config::stage::CONTROL_PLANT),
    )?)
}

/// Full build: Algorithm 1 on the plant, persisted under `layout.bundle()`.
pub fn build(cfg: &PipelineConfig, layout: &Layout, use_cache: bool, verbose: bool) -> CliResult<Bundle> {
    let ev = PlantEvaluator { config: cfg.plant_config()? };
    let opts = BuildOptions { cache_dir: use_cache.then(|| layout.cache()), verbose };
    let bundle = run_pipeline(cfg, &ev, &opts)?;
    bundle.save(cfg, &layout.bundle())?;
    Ok(bundle)
}
