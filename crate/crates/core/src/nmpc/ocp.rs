use crate::error::{Error, Result};
use crate::plant::PlantKind;

/// How predicted exit values are aggregated over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Sum over every predicted step.
    Sum,
    /// Last predicted step only.
    Terminal,
}

impl ObjectiveKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(ObjectiveKind::Sum),
            "terminal" => Ok(ObjectiveKind::Terminal),
            _ => Err(Error::Config(format!("unknown objective kind '{s}' (expected sum or terminal)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Sum => "sum",
            ObjectiveKind::Terminal => "terminal",
        }
    }
}

/// Maximise `weights · O_t + offset` of model `model`.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpObjective {
    pub model: usize,
    pub weights: Vec<f64>,
    pub offset: f64,
    pub kind: ObjectiveKind,
}

/// Upper bound on a reconstructed field at every spatial node:
/// `rows[n] · O_t + offsets[n] ≤ setpoint − epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputConstraint {
    pub name: String,
    pub model: usize,
    pub rows: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    pub setpoint: f64,
    pub epsilon: f64,
}

impl OutputConstraint {
    pub fn limit(&self) -> f64 {
        self.setpoint - self.epsilon
    }

    pub fn values(&self, output: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.offsets)
            .map(|(r, o)| r.iter().zip(output).map(|(a, b)| a * b).sum::<f64>() + o)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSpec {
    /// Mission length in control steps.
    pub horizon: usize,
    pub control_lo: f64,
    pub control_hi: f64,
    pub rate_limit: f64,
    /// Control applied before the first step.
    pub previous_control: f64,
    pub objective: OcpObjective,
    pub constraints: Vec<OutputConstraint>,
    /// Optional cap on the number of predicted steps per MILP.
    pub prediction_cap: Option<usize>,
}

impl OcpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("OCP horizon must be at least 1".into()));
        }
        if !(self.control_lo <= self.control_hi) || !(self.rate_limit >= 0.0) {
            return Err(Error::InvalidArgument("OCP needs control_lo <= control_hi and rate_limit >= 0".into()));
        }
        if self.constraints.iter().any(|c| !(c.epsilon >= 0.0) || c.rows.len() != c.offsets.len()) {
            return Err(Error::InvalidArgument("output constraints need epsilon >= 0 and one offset per row".into()));
        }
        if self.prediction_cap == Some(0) {
            return Err(Error::InvalidArgument("prediction cap must be at least 1".into()));
        }
        Ok(())
    }

    /// Per-step control intervals reachable from `previous` under the box
    /// and rate limits.
    pub fn control_box(&self, previous: f64, steps: usize) -> Vec<(f64, f64)> {
        (0..steps)
            .map(|t| {
                let reach = self.rate_limit * (t + 1) as f64;
                let lo = self.control_lo.max(previous - reach);
                let hi = self.control_hi.min(previous + reach);
                if lo <= hi {
                    (lo, hi)
                } else {
                    let c = previous.clamp(self.control_lo, self.control_hi);
                    (c, c)
                }
            })
            .collect()
    }

    /// Number of steps predicted when `remaining` steps are left.
    pub fn prediction_steps(&self, remaining: usize) -> usize {
        match self.prediction_cap {
            Some(cap) => remaining.min(cap),
            None => remaining,
        }
    }

    /// Objective value of a predicted output sequence of the objective model.
    pub fn objective_value(&self, outputs: &[Vec<f64>]) -> f64 {
        let term = |o: &Vec<f64>| self.objective.weights.iter().zip(o).map(|(w, v)| w * v).sum::<f64>() + self.objective.offset;
        match self.objective.kind {
            ObjectiveKind::Sum => outputs.iter().map(term).sum(),
            ObjectiveKind::Terminal => outputs.last().map(term).unwrap_or(0.0),
        }
    }
}

/// Case-level OCP settings (limits, rates, mission length).
#[derive(Debug, Clone, PartialEq)]
pub struct OcpSettings {
    pub horizon: usize,
    pub control_lo: f64,
    pub control_hi: f64,
    pub rate_limit: f64,
    pub previous_control: f64,
    /// `(field, setpoint, epsilon)` for every upper-bounded field.
    pub limits: Vec<(String, f64, f64)>,
    pub objective_kind: ObjectiveKind,
    pub prediction_cap: Option<usize>,
}

impl OcpSettings {
    pub fn for_kind(kind: PlantKind) -> Self {
        match kind {
            PlantKind::Tubular => OcpSettings {
                horizon: 50,
                control_lo: 0.0,
                control_hi: 2.0,
                rate_limit: 0.1,
                previous_control: 0.0,
                limits: vec![("T".into(), 4.0, 0.1)],
                objective_kind: ObjectiveKind::Sum,
                prediction_cap: Some(5),
            },
            PlantKind::PackedBed => OcpSettings {
                horizon: 20,
                control_lo: 50.0,
                control_hi: 70.0,
                rate_limit: 1.0,
                previous_control: 50.0,
                limits: vec![("x_aa".into(), 4.1, 0.1), ("x_fa".into(), 2.1, 0.1)],
                objective_kind: ObjectiveKind::Sum,
                prediction_cap: Some(5),
            },
        }
    }
}

/// Where the surrogates for an OCP live in the caller's model list.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateRefs {
    /// Model and output weights giving the expected exit quantity.
    pub objective: (usize, Vec<f64>),
    /// `(field, model, rows)`: the field's upper-bound reconstruction rows.
    pub constrained: Vec<(String, usize, Vec<Vec<f64>>)>,
}

/// Assemble the OCP of a case from its settings and surrogate references.
pub fn build_ocp(settings: &OcpSettings, refs: &SurrogateRefs) -> Result<OcpSpec> {
    let mut constraints = Vec::with_capacity(settings.limits.len());
    for (field, setpoint, epsilon) in &settings.limits {
        let (_, model, rows) = refs
            .constrained
            .iter()
            .find(|(f, _, _)| f == field)
            .ok_or_else(|| Error::Config(format!("no upper-bound surrogate for constrained field '{field}'")))?;
        constraints.push(OutputConstraint {
            name: format!("{field}_upper"),
            model: *model,
            rows: rows.clone(),
            offsets: vec![0.0; rows.len()],
            setpoint: *setpoint,
            epsilon: *epsilon,
        });
    }
    let spec = OcpSpec {
        horizon: settings.horizon,
        control_lo: settings.control_lo,
        control_hi: settings.control_hi,
        rate_limit: settings.rate_limit,
        previous_control: settings.previous_control,
        objective: OcpObjective {
            model: refs.objective.0,
            weights: refs.objective.1.clone(),
            offset: 0.0,
            kind: settings.objective_kind,
        },
        constraints,
        prediction_cap: settings.prediction_cap,
    };
    spec.validate()?;
    Ok(spec)
}
