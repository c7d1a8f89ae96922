//! Plot-data export with the fixed column schema `x,series,value`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::artefact::{csv_records, parse_field, ArtefactWriter};
use crate::config::PipelineConfig;
use crate::control::{load_policy, require};
use crate::error::{CliError, CliResult};
use crate::pipeline::Bundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    /// Exit time profiles of every statistical field in the bundle.
    Exit,
    /// Spatial profiles at the last step.
    Profiles,
    /// Applied control policy of the closed loop.
    Policy,
    /// Monte-Carlo trajectory bundles with the predicted series.
    MonteCarlo,
    /// Everything whose inputs exist (the bundle is required).
    All,
}

impl ExportKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "exit" => ExportKind::Exit,
            "profiles" => ExportKind::Profiles,
            "policy" => ExportKind::Policy,
            "mc" => ExportKind::MonteCarlo,
            "all" => ExportKind::All,
            _ => return None,
        })
    }
}

/// Directory layout below `--out`.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }
    pub fn bundle(&self) -> PathBuf {
        self.root.join("bundle")
    }
    pub fn control(&self) -> PathBuf {
        self.root.join("control")
    }
    pub fn validate(&self) -> PathBuf {
        self.root.join("validate")
    }
    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
    pub fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }
}

struct Plot(String);

impl Plot {
    fn new() -> Self {
        Plot(String::from("x,series,value\n"))
    }
    fn row(&mut self, x: f64, series: &str, v: f64) {
        let _ = writeln!(self.0, "{x},{series},{v}");
    }
}

/// Write plot files under `layout.plots()`; returns their names.
pub fn export_plotdata(cfg: &PipelineConfig, layout: &Layout, kind: ExportKind) -> CliResult<Vec<String>> {
    let bundle = Bundle::load(cfg, &layout.bundle())?;
    let hash = bundle.config_hash.clone();
    let dt = cfg.plant.report_interval;
    let mut files: Vec<(String, String)> = Vec::new();
    let all = kind == ExportKind::All;
    if all || kind == ExportKind::Exit {
        for t in &bundle.targets {
            let mut p = Plot::new();
            for (s, times) in t.stats.iter().enumerate() {
                for (ti, prof) in times.iter().enumerate().skip(1) {
                    p.row(ti as f64 * dt, &format!("schedule_{s}"), *prof.last().expect("nonempty"));
                }
            }
            files.push((format!("plot_exit_{}.csv", t.target.name), p.0));
        }
    }
    if all || kind == ExportKind::Profiles {
        for t in &bundle.targets {
            let mut p = Plot::new();
            for (s, times) in t.stats.iter().enumerate() {
                for (n, v) in times.last().expect("nonempty").iter().enumerate() {
                    p.row(bundle.grid[n], &format!("schedule_{s}"), *v);
                }
            }
            files.push((format!("plot_profile_{}.csv", t.target.name), p.0));
        }
    }
    let control_present = layout.control().join("policy.csv").exists();
    if kind == ExportKind::Policy || (all && control_present) {
        let policy = load_policy(&layout.control().join("policy.csv"), &hash)?;
        let mut p = Plot::new();
        for (t, u) in policy.iter().enumerate() {
            p.row(t as f64 * dt, "control", *u);
        }
        files.push(("plot_policy.csv".into(), p.0));
    }
    let mc_present = layout.validate().join("mc_exit.csv").exists();
    if kind == ExportKind::MonteCarlo || (all && mc_present) {
        files.extend(monte_carlo_plots(&bundle, &layout.validate(), &hash)?);
    }
    let mut w = ArtefactWriter::new(&layout.plots(), &hash)?;
    let mut names = Vec::with_capacity(files.len());
    for (name, body) in files {
        w.write(&name, &body)?;
        names.push(name);
    }
    w.finish()?;
    Ok(names)
}

fn monte_carlo_plots(bundle: &Bundle, dir: &Path, hash: &str) -> CliResult<Vec<(String, String)>> {
    let exit_path = dir.join("mc_exit.csv");
    let final_path = dir.join("mc_final.csv");
    let pred_path = dir.join("predicted.csv");
    let exit = csv_records(&exit_path, &require(dir, "mc_exit.csv", hash)?)?;
    let fin = csv_records(&final_path, &require(dir, "mc_final.csv", hash)?)?;
    let pred = csv_records(&pred_path, &require(dir, "predicted.csv", hash)?)?;
    let mut exit_plots: BTreeMap<String, Plot> = BTreeMap::new();
    let mut final_plots: BTreeMap<String, Plot> = BTreeMap::new();
    for rec in &exit {
        let d: usize = parse_field(&exit_path, rec, 0)?;
        let field = rec.get(1).unwrap_or_default().to_string();
        exit_plots.entry(field).or_insert_with(Plot::new).row(parse_field(&exit_path, rec, 2)?, &format!("draw_{d}"), parse_field(&exit_path, rec, 3)?);
    }
    for rec in &fin {
        let d: usize = parse_field(&final_path, rec, 0)?;
        let field = rec.get(1).unwrap_or_default().to_string();
        final_plots.entry(field).or_insert_with(Plot::new).row(parse_field(&final_path, rec, 2)?, &format!("draw_{d}"), parse_field(&final_path, rec, 3)?);
    }
    if exit_plots.is_empty() {
        return Err(CliError::Malformed { file: exit_path, reason: "no Monte-Carlo rows".into() });
    }
    let times: usize = bundle.targets.first().map_or(0, |t| t.stats.first().map_or(0, Vec::len));
    let dt_grid: Vec<f64> = {
        // Time coordinates of the trajectory bundle, reused for the predicted series.
        let mut v: Vec<f64> = exit
            .iter()
            .filter(|r| r.get(0) == Some("0") && r.get(1) == exit.first().and_then(|f| f.get(1)))
            .filter_map(|r| r.get(2).and_then(|s| s.parse().ok()))
            .collect();
        v.truncate(times);
        v
    };
    for t in &bundle.targets {
        let series = format!("predicted_{}", t.target.name);
        let last_time = pred
            .iter()
            .filter(|r| r.get(0) == Some(t.target.name.as_str()))
            .filter_map(|r| r.get(2).and_then(|s| s.parse::<usize>().ok()))
            .max()
            .unwrap_or(0);
        let nodes = pred
            .iter()
            .filter(|r| r.get(0) == Some(t.target.name.as_str()) && r.get(2) == Some("0"))
            .count();
        for rec in pred.iter().filter(|r| r.get(0) == Some(t.target.name.as_str())) {
            let ti: usize = parse_field(&pred_path, rec, 2)?;
            let n: usize = parse_field(&pred_path, rec, 3)?;
            let v: f64 = parse_field(&pred_path, rec, 4)?;
            if n + 1 == nodes {
                if let (Some(p), Some(x)) = (exit_plots.get_mut(&t.target.field), dt_grid.get(ti)) {
                    p.row(*x, &series, v);
                }
            }
            if ti == last_time && nodes == bundle.grid.len() {
                if let Some(p) = final_plots.get_mut(&t.target.field) {
                    p.row(bundle.grid[n], &series, v);
                }
            }
        }
    }
    let mut out = Vec::new();
    for (f, p) in exit_plots {
        out.push((format!("plot_mc_exit_{f}.csv"), p.0));
    }
    for (f, p) in final_plots {
        out.push((format!("plot_mc_profile_{f}.csv"), p.0));
    }
    Ok(out)
}
