//! Method-of-lines simulators for the tubular reactor and the packed-bed
//! bioreactor, exposed as black boxes: controls and a parameter draw in, noisy
//! distributed trajectories out.

pub mod blocktri;
pub mod integrate;
mod packed_bed;
mod tubular;

use std::fmt::Write as _;

use rand_distr::{Distribution as _, StandardNormal};

use crate::error::{Error, Result};
use crate::field::{FieldArray, FieldShape};
use crate::seed;
use crate::uq::ParameterDraw;

pub use integrate::{IntegrationStats, StepControl};
pub use packed_bed::{solve_bead_profile, BeadProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlantKind {
    Tubular,
    PackedBed,
}

impl PlantKind {
    pub fn name(&self) -> &'static str {
        match self {
            PlantKind::Tubular => "tubular",
            PlantKind::PackedBed => "packed_bed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tubular" => Ok(PlantKind::Tubular),
            "packed_bed" | "packed-bed" | "bioreactor" => Ok(PlantKind::PackedBed),
            other => Err(Error::Config(format!("unknown plant kind '{other}'"))),
        }
    }

    pub fn field_names(&self) -> &'static [&'static str] {
        match self {
            PlantKind::Tubular => &["C", "T"],
            PlantKind::PackedBed => &["x_gly", "x_sa", "x_aa", "x_fa"],
        }
    }
}

/// Dimensionless exothermic tubular reactor.
#[derive(Debug, Clone, PartialEq)]
pub struct TubularParams {
    pub pe1: f64,
    pub pe2: f64,
    pub le: f64,
    pub da: f64,
    pub beta: f64,
    pub gamma: f64,
    pub b: f64,
    pub tw_min: f64,
    pub tw_max: f64,
}

impl Default for TubularParams {
    fn default() -> Self {
        TubularParams {
            pe1: 5.0,
            pe2: 5.0,
            le: 1.0,
            da: 0.1,
            beta: 1.5,
            gamma: 10.0,
            b: 12.0,
            tw_min: 0.0,
            tw_max: 2.0,
        }
    }
}

/// Packed bed of alginate beads with immobilised biomass (units: cm, h, g/L).
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBedParams {
    pub v: f64,
    pub length: f64,
    /// Bulk diffusivities of glycerol, succinic, acetic and formic acid.
    pub d: [f64; 4],
    /// Bead-phase diffusivities, same species order.
    pub d_bead: [f64; 4],
    pub eps: f64,
    pub rho_bead: f64,
    pub radius: f64,
    pub x_cons: f64,
    pub alpha_gly: f64,
    pub alpha_sa: f64,
    pub beta_gly: f64,
    pub beta_sa: f64,
    pub beta_aa: f64,
    pub beta_fa: f64,
    pub mu_max: f64,
    pub ks_gly: f64,
    pub ki_gly: f64,
    pub x_co2: f64,
    pub k_x_co2: f64,
    pub sa_star: f64,
    pub n_sa: f64,
    /// Half-saturation constant of the substrate gate on maintenance terms.
    pub substrate_gate: f64,
    pub feed_min: f64,
    pub feed_max: f64,
}

impl Default for PackedBedParams {
    fn default() -> Self {
        PackedBedParams {
            v: 0.1,
            length: 20.0,
            d: [0.01, 0.01, 0.02, 0.02],
            d_bead: [0.01, 0.00989, 0.01384, 0.01835],
            eps: 0.55,
            rho_bead: 2.12,
            radius: 0.15,
            x_cons: 0.21,
            alpha_gly: 2.39,
            alpha_sa: 4.5,
            beta_gly: 0.187,
            beta_sa: 0.21,
            beta_aa: 0.0055,
            beta_fa: 0.011,
            mu_max: 0.2568,
            ks_gly: 5.4,
            ki_gly: 119.99,
            x_co2: 0.03,
            k_x_co2: 0.03,
            sa_star: 45.6,
            n_sa: 5.0,
            substrate_gate: 0.1,
            feed_min: 50.0,
            feed_max: 70.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantParams {
    Tubular(TubularParams),
    PackedBed(PackedBedParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub params: PlantParams,
    pub spatial_nodes: usize,
    pub report_interval: f64,
    pub state_noise_var: f64,
    pub output_noise_var: f64,
    pub bead_nodes: usize,
    pub rtol: f64,
    pub atol: f64,
}

impl PlantConfig {
    pub fn tubular() -> Self {
        PlantConfig {
            params: PlantParams::Tubular(TubularParams::default()),
            spatial_nodes: 200,
            report_interval: 0.4,
            state_noise_var: 1e-5,
            output_noise_var: 1e-6,
            bead_nodes: 0,
            rtol: 1e-6,
            atol: 1e-8,
        }
    }

    pub fn packed_bed() -> Self {
        PlantConfig {
            params: PlantParams::PackedBed(PackedBedParams::default()),
            spatial_nodes: 100,
            report_interval: 15.0,
            state_noise_var: 1e-6,
            output_noise_var: 1e-6,
            bead_nodes: 25,
            rtol: 1e-5,
            atol: 1e-7,
        }
    }

    pub fn for_kind(kind: PlantKind) -> Self {
        match kind {
            PlantKind::Tubular => Self::tubular(),
            PlantKind::PackedBed => Self::packed_bed(),
        }
    }

    pub fn kind(&self) -> PlantKind {
        match self.params {
            PlantParams::Tubular(_) => PlantKind::Tubular,
            PlantParams::PackedBed(_) => PlantKind::PackedBed,
        }
    }

    pub fn without_noise(mut self) -> Self {
        self.state_noise_var = 0.0;
        self.output_noise_var = 0.0;
        self
    }

    pub fn field_names(&self) -> &'static [&'static str] {
        self.kind().field_names()
    }

    pub fn field_count(&self) -> usize {
        self.field_names().len()
    }

    pub fn domain_length(&self) -> f64 {
        match &self.params {
            PlantParams::Tubular(_) => 1.0,
            PlantParams::PackedBed(p) => p.length,
        }
    }

    /// Node coordinates along the reactor axis.
    pub fn grid(&self) -> Vec<f64> {
        let m = self.spatial_nodes;
        let l = self.domain_length();
        (0..m).map(|i| l * i as f64 / (m - 1) as f64).collect()
    }

    /// Box bounds of the manipulated variable.
    pub fn control_bounds(&self) -> (f64, f64) {
        match &self.params {
            PlantParams::Tubular(p) => (p.tw_min, p.tw_max),
            PlantParams::PackedBed(p) => (p.feed_min, p.feed_max),
        }
    }

    /// Names of the parameters a draw may override.
    pub fn uncertain_parameter_names(&self) -> &'static [&'static str] {
        match self.kind() {
            PlantKind::Tubular => &["Da", "B"],
            PlantKind::PackedBed => &["x_gly0_offset", "D_bead_gly"],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let min_nodes = match self.kind() {
            PlantKind::Tubular => 4,
            PlantKind::PackedBed => 3,
        };
        if self.spatial_nodes < min_nodes {
            return bad(format!("spatial_nodes must be >= {min_nodes}, got {}", self.spatial_nodes));
        }
        if !(self.report_interval > 0.0) || !self.report_interval.is_finite() {
            return bad(format!("report_interval must be > 0, got {}", self.report_interval));
        }
        if !(self.state_noise_var >= 0.0) || !(self.output_noise_var >= 0.0) {
            return bad("noise variances must be >= 0".into());
        }
        if !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return bad("integration tolerances must be > 0".into());
        }
        match &self.params {
            PlantParams::Tubular(p) => {
                if !(p.pe1 > 0.0 && p.pe2 > 0.0 && p.le > 0.0 && p.gamma > 0.0) {
                    return bad("Pe1, Pe2, Le and gamma must be > 0".into());
                }
                if !(p.tw_min < p.tw_max) {
                    return bad("Tw range is empty".into());
                }
            }
            PlantParams::PackedBed(p) => {
                if p.d.iter().chain(&p.d_bead).any(|&d| !(d > 0.0)) {
                    return bad("all diffusion coefficients must be > 0".into());
                }
                if !(p.eps > 0.0 && p.eps < 1.0) {
                    return bad(format!("eps must lie in (0, 1), got {}", p.eps));
                }
                if !(p.v >= 0.0 && p.length > 0.0 && p.radius > 0.0 && p.sa_star > 0.0) {
                    return bad("v >= 0, L > 0, R > 0 and SA* > 0 are required".into());
                }
                if !(p.feed_min < p.feed_max) || p.feed_min < 0.0 {
                    return bad("feed range is empty or negative".into());
                }
                if self.bead_nodes < 3 {
                    return bad(format!("bead_nodes must be >= 3, got {}", self.bead_nodes));
                }
            }
        }
        Ok(())
    }

    /// Value of a named physical parameter.
    pub fn param(&self, name: &str) -> Option<f64> {
        let mut me = self.clone();
        let mut out = None;
        me.visit_param(name, |v| {
            out = Some(*v);
        });
        out
    }

    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let mut found = false;
        self.visit_param(name, |v| {
            *v = value;
            found = true;
        });
        if found {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown {} parameter '{name}'",
                self.kind().name()
            )))
        }
    }

    fn visit_param(&mut self, name: &str, f: impl FnOnce(&mut f64)) {
        let slot: Option<&mut f64> = match &mut self.params {
            PlantParams::Tubular(p) => match name {
                "Pe1" => Some(&mut p.pe1),
                "Pe2" => Some(&mut p.pe2),
                "Le" => Some(&mut p.le),
                "Da" => Some(&mut p.da),
                "beta" => Some(&mut p.beta),
                "gamma" => Some(&mut p.gamma),
                "B" => Some(&mut p.b),
                "Tw_min" => Some(&mut p.tw_min),
                "Tw_max" => Some(&mut p.tw_max),
                _ => None,
            },
            PlantParams::PackedBed(p) => match name {
                "v" => Some(&mut p.v),
                "L" => Some(&mut p.length),
                "D_gly" => Some(&mut p.d[0]),
                "D_sa" => Some(&mut p.d[1]),
                "D_aa" => Some(&mut p.d[2]),
                "D_fa" => Some(&mut p.d[3]),
                "D_bead_gly" => Some(&mut p.d_bead[0]),
                "D_bead_sa" => Some(&mut p.d_bead[1]),
                "D_bead_aa" => Some(&mut p.d_bead[2]),
                "D_bead_fa" => Some(&mut p.d_bead[3]),
                "eps" => Some(&mut p.eps),
                "rho_bead" => Some(&mut p.rho_bead),
                "R" => Some(&mut p.radius),
                "X_cons" => Some(&mut p.x_cons),
                "alpha_gly" => Some(&mut p.alpha_gly),
                "alpha_sa" => Some(&mut p.alpha_sa),
                "beta_gly" => Some(&mut p.beta_gly),
                "beta_sa" => Some(&mut p.beta_sa),
                "beta_aa" => Some(&mut p.beta_aa),
                "beta_fa" => Some(&mut p.beta_fa),
                "mu_max" => Some(&mut p.mu_max),
                "K_S_gly" => Some(&mut p.ks_gly),
                "K_I_gly" => Some(&mut p.ki_gly),
                "x_CO2" => Some(&mut p.x_co2),
                "K_x_CO2" => Some(&mut p.k_x_co2),
                "SA_star" => Some(&mut p.sa_star),
                "n_SA" => Some(&mut p.n_sa),
                "substrate_gate" => Some(&mut p.substrate_gate),
                "feed_min" => Some(&mut p.feed_min),
                "feed_max" => Some(&mut p.feed_max),
                _ => None,
            },
        };
        if let Some(v) = slot {
            f(v);
        }
    }

    /// Copy of the configuration with the draw's values substituted.
    /// Returns the feed offset separately for the packed bed.
    fn apply_draw(&self, draw: &ParameterDraw) -> Result<(PlantConfig, f64)> {
        let names = self.uncertain_parameter_names();
        let mut cfg = self.clone();
        let mut offset = 0.0;
        for (name, &value) in &draw.values {
            if !names.contains(&name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "parameter '{name}' is not uncertain in the {} plant",
                    self.kind().name()
                )));
            }
            if !value.is_finite() {
                return Err(Error::InvalidArgument(format!("parameter '{name}' is not finite")));
            }
            if name == "x_gly0_offset" {
                offset = value;
            } else {
                cfg.set_param(name, value)?;
            }
        }
        cfg.validate()?;
        Ok((cfg, offset))
    }
}

/// One manipulated-variable value per reporting interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    pub values: Vec<f64>,
}

impl ControlSchedule {
    pub fn new(values: Vec<f64>) -> Self {
        ControlSchedule { values }
    }

    pub fn constant(value: f64, horizon: usize) -> Self {
        ControlSchedule {
            values: vec![value; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }
}

/// Simulated trajectory; `time_grid[0] = 0` holds the initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub states: FieldArray,
    pub outputs: FieldArray,
    pub time_grid: Vec<f64>,
    pub field_names: Vec<String>,
    /// Number of noisy concentrations clamped at zero.
    pub clamp_events: usize,
    pub stats: IntegrationStats,
}

impl TrajectorySet {
    /// CSV with header `time,field,node,value` for `states` or `outputs`.
    pub fn to_csv(&self, outputs: bool) -> String {
        let a = if outputs { &self.outputs } else { &self.states };
        let mut s = String::from("time,field,node,value\n");
        for (t, time) in self.time_grid.iter().enumerate() {
            for (f, name) in self.field_names.iter().enumerate() {
                for (n, v) in a.profile(t, f).iter().enumerate() {
                    let _ = writeln!(s, "{time},{name},{n},{v}");
                }
            }
        }
        s
    }
}

enum Model {
    Tubular(tubular::TubularModel),
    PackedBed(packed_bed::PackedBedModel),
}

/// Stateful plant advanced one reporting interval at a time.
pub struct PlantSession {
    config: PlantConfig,
    model: Model,
    y: Vec<f64>,
    step: usize,
    h: f64,
    rng: seed::Rng,
    clamp_events: usize,
    stats: IntegrationStats,
    field_names: Vec<String>,
}

/// Snapshot returned by [`PlantSession::advance`]; profiles are `[field × node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantStep {
    pub time: f64,
    pub state: Vec<f64>,
    pub output: Vec<f64>,
}

impl PlantSession {
    pub fn new(config: &PlantConfig, draw: &ParameterDraw, seed: u64) -> Result<Self> {
        config.validate()?;
        let (cfg, offset) = config.apply_draw(draw)?;
        let model = match &cfg.params {
            PlantParams::Tubular(p) => Model::Tubular(tubular::TubularModel::new(p.clone(), cfg.spatial_nodes)),
            PlantParams::PackedBed(p) => Model::PackedBed(packed_bed::PackedBedModel::new(
                p.clone(),
                cfg.spatial_nodes,
                cfg.bead_nodes,
                offset,
            )),
        };
        let n = match &model {
            Model::Tubular(m) => integrate::OdeSystem::dim(m),
            Model::PackedBed(m) => integrate::OdeSystem::dim(m),
        };
        Ok(PlantSession {
            field_names: cfg.field_names().iter().map(|s| s.to_string()).collect(),
            config: cfg,
            model,
            y: vec![0.0; n],
            step: 0,
            h: 0.0,
            rng: seed::rng(seed),
            clamp_events: 0,
            stats: IntegrationStats::default(),
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.config.report_interval
    }

    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    pub fn stats(&self) -> IntegrationStats {
        self.stats
    }

    fn profile(&self, control: Option<f64>) -> Vec<f64> {
        match &self.model {
            Model::Tubular(m) => m.full_profile(&self.y),
            Model::PackedBed(m) => m.full_profile(&self.y, control),
        }
    }

    /// Initial (noise-free state, noisy output) snapshot at time zero.
    pub fn initial(&mut self) -> PlantStep {
        let state = self.profile(None);
        let output = self.observe(&state);
        PlantStep {
            time: 0.0,
            state,
            output,
        }
    }

    fn observe(&mut self, state: &[f64]) -> Vec<f64> {
        let sd = self.config.output_noise_var.sqrt();
        let clamp = self.config.kind() == PlantKind::PackedBed;
        state
            .iter()
            .map(|&x| {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                let v = x + sd * e;
                if clamp && v < 0.0 {
                    self.clamp_events += 1;
                    0.0
                } else {
                    v
                }
            })
            .collect()
    }

    /// Hold `control` over the next reporting interval.
    pub fn advance(&mut self, control: f64) -> Result<PlantStep> {
        let (lo, hi) = self.config.control_bounds();
        if !(control >= lo - 1e-9 && control <= hi + 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "control {control} outside [{lo}, {hi}] at step {}",
                self.step
            )));
        }
        let t0 = self.time();
        let t1 = (self.step + 1) as f64 * self.config.report_interval;
        let ctl = StepControl {
            rtol: self.config.rtol,
            atol: self.config.atol,
            max_step: self.config.report_interval / 10.0,
        };
        let stats = match &mut self.model {
            Model::Tubular(m) => {
                m.set_control(control);
                integrate::ros2(m, &mut self.y, 0.0, t1 - t0, &ctl, &mut self.h)
            }
            Model::PackedBed(m) => {
                m.set_control(control);
                integrate::dopri5(m, &mut self.y, 0.0, t1 - t0, &ctl, &mut self.h)
            }
        }
        .map_err(|e| match e {
            Error::Integration { time, reason } => Error::Integration { time: t0 + time, reason },
            other => other,
        })?;
        self.stats.add(stats);
        self.step += 1;
        let sd = self.config.state_noise_var.sqrt();
        if sd > 0.0 {
            for v in self.y.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                *v += sd * e;
            }
        }
        if let Model::PackedBed(_) = self.model {
            for v in self.y.iter_mut() {
                if *v < 0.0 {
                    if sd > 0.0 {
                        self.clamp_events += 1;
                    }
                    *v = 0.0;
                }
            }
        }
        let state = self.profile(Some(control));
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                time: t1,
                reason: "non-finite state".into(),
            });
        }
        let output = self.observe(&state);
        Ok(PlantStep { time: t1, state, output })
    }

    pub fn field_names(&self) -> &[String] {
        &self.field_names
    }
}

/// Run the plant over a whole schedule.
pub fn simulate(config: &PlantConfig, draw: &ParameterDraw, schedule: &ControlSchedule, seed: u64) -> Result<TrajectorySet> {
    if schedule.values.is_empty() {
        return Err(Error::InvalidArgument("control schedule is empty".into()));
    }
    let mut session = PlantSession::new(config, draw, seed)?;
    let k = schedule.horizon();
    let shape = FieldShape::new(k + 1, config.field_count(), config.spatial_nodes);
    let mut states = FieldArray::zeros(shape);
    let mut outputs = FieldArray::zeros(shape);
    let mut time_grid = Vec::with_capacity(k + 1);
    let first = session.initial();
    let slice = shape.slice_len();
    let mut record = |t: usize, s: &PlantStep| {
        states.data[t * slice..(t + 1) * slice].copy_from_slice(&s.state);
        outputs.data[t * slice..(t + 1) * slice].copy_from_slice(&s.output);
        time_grid.push(s.time);
    };
    record(0, &first);
    for (t, &u) in schedule.values.iter().enumerate() {
        let s = session.advance(u)?;
        record(t + 1, &s);
    }
    Ok(TrajectorySet {
        states,
        outputs,
        time_grid,
        field_names: session.field_names.clone(),
        clamp_events: session.clamp_events,
        stats: session.stats,
    })
}

#[cfg(test)]
mod tests;
