//! Pipeline configuration: TOML sections with per-case defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stochmpc_core::nmpc::{ObjectiveKind, OcpSettings};
use stochmpc_core::sampling::Family;
use stochmpc_core::{seed, Distribution, Error, PlantConfig, PlantKind, Result, UncertainParameter, UncertaintySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSection {
    pub kind: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub spatial_nodes: usize,
    pub bead_nodes: usize,
    pub report_interval: f64,
    pub state_noise_var: f64,
    pub output_noise_var: f64,
    pub rtol: f64,
    pub atol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    /// Training schedules (N1).
    pub n1: usize,
    /// Held-out schedules for the validation step.
    pub n_fresh: usize,
    /// Gauss points per uncertain dimension.
    pub quadrature_level: usize,
    /// Piecewise-constant levels per schedule (LHC dimension).
    pub segments: usize,
    /// Ramp between levels at the OCP rate limit.
    pub rate_limited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PceSection {
    pub order: u32,
    pub n2: usize,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodSection {
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RnnSection {
    pub patience: usize,
    pub max_epochs: usize,
    pub restarts: usize,
    pub split: [f64; 3],
    /// Relative-error tolerance of the fresh-sample validation.
    pub tolerance: f64,
    /// First step of the steady window used by the validation.
    pub steady_start: usize,
    pub hidden: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpSection {
    /// Mission length k; training schedules use the same length.
    pub horizon: usize,
    pub control_lo: f64,
    pub control_hi: f64,
    pub rate_limit: f64,
    pub previous_control: f64,
    /// `sum` or `terminal`.
    pub objective: String,
    /// Steps predicted per MILP; 0 means the whole remaining horizon.
    pub prediction_cap: usize,
    /// Field name to `[setpoint, epsilon]`.
    pub limits: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MilpSection {
    pub gap_tol: f64,
    pub node_limit: usize,
    pub candidate_levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    pub n_draws: usize,
    /// `random` (seeded draw) or `nominal` parameters for the closed-loop plant.
    pub control_draw: String,
}

/// Fully resolved configuration; its canonical TOML text defines the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub case: CaseSection,
    pub plant: PlantSection,
    /// Physical parameter overrides by name.
    pub parameters: BTreeMap<String, f64>,
    /// `name = "normal MEAN STD"` or `name = "uniform LOW HIGH"`.
    pub uncertainty: BTreeMap<String, String>,
    pub sampling: SamplingSection,
    pub pce: PceSection,
    pub pod: PodSection,
    pub rnn: RnnSection,
    pub ocp: OcpSection,
    pub milp: MilpSection,
    pub validate: ValidateSection,
}

/// Statistic of a plant field that a surrogate tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Mean,
    Upper,
}

/// How a statistical field is reduced before the RNN sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// POD coefficients of the whole spatial profile.
    Pod,
    /// The value at the outlet node only.
    Exit,
}

/// One reduced surrogate built by the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub name: String,
    pub field: String,
    pub stat: Statistic,
    pub reduction: Reduction,
}

/// Fixed stream tags for per-stage seeds.
pub mod stage {
    pub const LHC: u64 = 1;
    pub const PLANT: u64 = 2;
    pub const STATS: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const INIT: u64 = 5;
    pub const FRESH: u64 = 6;
    pub const CONTROL_PLANT: u64 = 7;
    pub const MONTE_CARLO: u64 = 8;
    pub const CONTROL_DRAW: u64 = 9;
    pub const BOUND_STATS: u64 = 10;
    pub const BOUND_PLANT: u64 = 11;
}

impl PipelineConfig {
    pub fn defaults(kind: PlantKind) -> Self {
        let plant = PlantConfig::for_kind(kind);
        let ocp = OcpSettings::for_kind(kind);
        let (uncertainty, segments, hidden): (&[(&str, &str)], usize, &[(&str, [usize; 2])]) = match kind {
            PlantKind::Tubular => (
                &[("Da", "normal 0.08 0.008"), ("B", "normal 8 0.8")],
                5,
                &[("C_mean", [15, 15]), ("T_upper", [15, 15])],
            ),
            PlantKind::PackedBed => (
                &[("x_gly0_offset", "uniform -2.5 2.5"), ("D_bead_gly", "uniform 0.008 0.012")],
                4,
                &[("x_sa_mean_exit", [15, 15]), ("x_aa_upper", [15, 15]), ("x_fa_upper", [20, 20])],
            ),
        };
        PipelineConfig {
            case: CaseSection { kind: kind.name().to_string(), seed: 2021 },
            plant: PlantSection {
                spatial_nodes: plant.spatial_nodes,
                bead_nodes: plant.bead_nodes,
                report_interval: plant.report_interval,
                state_noise_var: plant.state_noise_var,
                output_noise_var: plant.output_noise_var,
                rtol: plant.rtol,
                atol: plant.atol,
            },
            parameters: BTreeMap::new(),
            uncertainty: uncertainty.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            sampling: SamplingSection { n1: 20, n_fresh: 4, quadrature_level: 3, segments, rate_limited: true },
            pce: PceSection { order: 2, n2: 4000, beta: 0.05 },
            pod: PodSection { threshold: 0.998 },
            rnn: RnnSection {
                patience: 6,
                max_epochs: 1000,
                restarts: 2,
                split: [0.7, 0.15, 0.15],
                tolerance: 0.03,
                steady_start: ocp.horizon / 5,
                hidden: hidden.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect(),
            },
            ocp: OcpSection {
                horizon: ocp.horizon,
                control_lo: ocp.control_lo,
                control_hi: ocp.control_hi,
                rate_limit: ocp.rate_limit,
                previous_control: ocp.previous_control,
                objective: ocp.objective_kind.name().to_string(),
                prediction_cap: ocp.prediction_cap.unwrap_or(0),
                limits: ocp.limits.iter().map(|(f, s, e)| (f.clone(), [*s, *e])).collect(),
            },
            milp: MilpSection { gap_tol: 1e-6, node_limit: 20_000, candidate_levels: 21 },
            validate: ValidateSection {
                n_draws: match kind {
                    PlantKind::Tubular => 200,
                    PlantKind::PackedBed => 100,
                },
                control_draw: "random".into(),
            },
        }
    }

    /// Parse TOML text; keys absent from the text take the defaults of its case.
    pub fn from_toml_str(text: &str, case_override: Option<PlantKind>) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let kind = match case_override {
            Some(k) => k,
            None => match user.get("case").and_then(|c| c.get("kind")).and_then(|k| k.as_str()) {
                Some(s) => PlantKind::parse(s).map_err(|e| Error::Config(e.to_string()))?,
                None => return Err(Error::Config("missing [case] kind (or pass --case)".into())),
            },
        };
        let defaults = Self::defaults(kind);
        let mut merged = toml::Table::try_from(&defaults).map_err(|e| Error::Config(e.to_string()))?;
        for (section, value) in user {
            let Some(slot) = merged.get_mut(&section) else {
                return Err(Error::Config(format!("unknown section [{section}]")));
            };
            let toml::Value::Table(body) = value else {
                return Err(Error::Config(format!("'{section}' must be a section")));
            };
            // Open maps are replaced wholesale; fixed sections merge key by key.
            if section == "parameters" || section == "uncertainty" {
                *slot = toml::Value::Table(body);
                continue;
            }
            let toml::Value::Table(dst) = slot else { unreachable!("defaults serialise sections as tables") };
            for (key, v) in body {
                match (dst.get_mut(&key), v) {
                    (Some(toml::Value::Table(inner)), toml::Value::Table(vals)) => {
                        for (k2, v2) in vals {
                            if !inner.contains_key(&k2) {
                                return Err(Error::Config(format!("unknown key '{k2}' in [{section}.{key}]")));
                            }
                            inner.insert(k2, v2);
                        }
                    }
                    (Some(old), v) => *old = v,
                    (None, _) => return Err(Error::Config(format!("unknown key '{key}' in [{section}]"))),
                }
            }
        }
        let mut cfg: PipelineConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.case.kind = kind.name().to_string();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, case_override: Option<PlantKind>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, case_override)
    }

    pub fn kind(&self) -> PlantKind {
        PlantKind::parse(&self.case.kind).expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let kind = PlantKind::parse(&self.case.kind).map_err(|e| Error::Config(e.to_string()))?;
        self.plant_config()?;
        let unc = self.uncertainty_spec()?;
        let plant = PlantConfig::for_kind(kind);
        for p in &unc.parameters {
            if !plant.uncertain_parameter_names().contains(&p.name.as_str()) {
                return bad(format!("'{}' is not an uncertain parameter of the {} plant", p.name, kind.name()));
            }
        }
        let s = &self.sampling;
        if s.n1 < 2 || s.n_fresh < 1 || s.quadrature_level < 1 || s.segments < 1 {
            return bad("sampling needs n1 >= 2, n_fresh >= 1, quadrature_level >= 1, segments >= 1".into());
        }
        if s.segments > self.ocp.horizon {
            return bad("more schedule segments than steps".into());
        }
        if self.pce.order + 1 > 2 * s.quadrature_level as u32 {
            return bad(format!(
                "quadrature level {} cannot project order-{} polynomials exactly",
                s.quadrature_level, self.pce.order
            ));
        }
        if !(self.pod.threshold > 0.0 && self.pod.threshold <= 1.0) {
            return bad("pod threshold must lie in (0, 1]".into());
        }
        if self.rnn.steady_start >= self.ocp.horizon {
            return bad("rnn steady_start must be below the horizon".into());
        }
        for t in self.targets() {
            match self.rnn.hidden.get(&t.name) {
                Some(h) if !h.is_empty() && h.iter().all(|&n| n > 0) => {}
                _ => return bad(format!("rnn.hidden needs a nonempty layer list for '{}'", t.name)),
            }
        }
        for name in self.rnn.hidden.keys() {
            if !self.targets().iter().any(|t| &t.name == name) {
                return bad(format!("rnn.hidden has unknown surrogate '{name}'"));
            }
        }
        ObjectiveKind::parse(&self.ocp.objective).map_err(|e| Error::Config(e.to_string()))?;
        for field in self.ocp.limits.keys() {
            if !self.targets().iter().any(|t| &t.field == field && t.stat == Statistic::Upper) {
                return bad(format!("no upper-bound surrogate for limited field '{field}'"));
            }
        }
        if self.milp.node_limit == 0 || !(self.milp.gap_tol >= 0.0) {
            return bad("milp needs node_limit >= 1 and gap_tol >= 0".into());
        }
        if self.validate.n_draws == 0 {
            return bad("validate n_draws must be >= 1".into());
        }
        if !matches!(self.validate.control_draw.as_str(), "random" | "nominal") {
            return bad("validate control_draw must be 'random' or 'nominal'".into());
        }
        self.ocp_settings().and_then(|o| {
            if o.control_lo < o.control_hi && o.rate_limit >= 0.0 && o.horizon >= 1 {
                Ok(())
            } else {
                Err(Error::Config("ocp needs control_lo < control_hi, rate_limit >= 0, horizon >= 1".into()))
            }
        })
    }

    pub fn targets(&self) -> Vec<Target> {
        let t = |name: &str, field: &str, stat, reduction| Target {
            name: name.into(),
            field: field.into(),
            stat,
            reduction,
        };
        match PlantKind::parse(&self.case.kind).unwrap_or(PlantKind::Tubular) {
            PlantKind::Tubular => vec![
                t("C_mean", "C", Statistic::Mean, Reduction::Pod),
                t("T_upper", "T", Statistic::Upper, Reduction::Pod),
            ],
            PlantKind::PackedBed => vec![
                t("x_sa_mean_exit", "x_sa", Statistic::Mean, Reduction::Exit),
                t("x_aa_upper", "x_aa", Statistic::Upper, Reduction::Pod),
                t("x_fa_upper", "x_fa", Statistic::Upper, Reduction::Pod),
            ],
        }
    }

    /// Index of the surrogate maximised by the controller.
    pub fn objective_target(&self) -> usize {
        0
    }

    pub fn plant_config(&self) -> Result<PlantConfig> {
        let kind = PlantKind::parse(&self.case.kind).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = PlantConfig::for_kind(kind);
        c.spatial_nodes = self.plant.spatial_nodes;
        c.bead_nodes = self.plant.bead_nodes;
        c.report_interval = self.plant.report_interval;
        c.state_noise_var = self.plant.state_noise_var;
        c.output_noise_var = self.plant.output_noise_var;
        c.rtol = self.plant.rtol;
        c.atol = self.plant.atol;
        for (k, v) in &self.parameters {
            c.set_param(k, *v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn uncertainty_spec(&self) -> Result<UncertaintySpec> {
        let params = self
            .uncertainty
            .iter()
            .map(|(name, text)| {
                Ok(UncertainParameter { name: name.clone(), distribution: parse_distribution(text)? })
            })
            .collect::<Result<Vec<_>>>()?;
        UncertaintySpec::new(params).map_err(|e| Error::Config(e.to_string()))
    }

    /// Polynomial family of each uncertain dimension, in spec order.
    pub fn families(&self) -> Result<Vec<Family>> {
        Ok(self
            .uncertainty_spec()?
            .parameters
            .iter()
            .map(|p| match p.distribution {
                Distribution::Normal { .. } => Family::HermiteProb,
                Distribution::Uniform { .. } => Family::LegendreUniform,
            })
            .collect())
    }

    pub fn ocp_settings(&self) -> Result<OcpSettings> {
        Ok(OcpSettings {
            horizon: self.ocp.horizon,
            control_lo: self.ocp.control_lo,
            control_hi: self.ocp.control_hi,
            rate_limit: self.ocp.rate_limit,
            previous_control: self.ocp.previous_control,
            limits: self.ocp.limits.iter().map(|(f, [s, e])| (f.clone(), *s, *e)).collect(),
            objective_kind: ObjectiveKind::parse(&self.ocp.objective)?,
            prediction_cap: (self.ocp.prediction_cap > 0).then_some(self.ocp.prediction_cap),
        })
    }

    /// Canonical TOML text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn stage_seed(&self, stage: u64) -> u64 {
        seed::derive(self.case.seed, &[stage])
    }
}

/// `normal MEAN STD` or `uniform LOW HIGH`.
pub fn parse_distribution(text: &str) -> Result<Distribution> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Config(format!("bad number '{s}' in '{text}'")));
    let d = match parts.as_slice() {
        ["normal", a, b] => Distribution::Normal { mean: num(a)?, std: num(b)? },
        ["uniform", a, b] => Distribution::Uniform { low: num(a)?, high: num(b)? },
        _ => return Err(Error::Config(format!("expected 'normal MEAN STD' or 'uniform LOW HIGH', got '{text}'"))),
    };
    d.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_case() {
        let t = PipelineConfig::defaults(PlantKind::Tubular);
        assert_eq!(t.sampling.n1, 20);
        assert_eq!(t.pce.order, 2);
        assert_eq!(t.pce.n2, 4000);
        assert_eq!(t.pod.threshold, 0.998);
        assert_eq!(t.rnn.hidden["T_upper"], vec![15, 15]);
        assert_eq!(t.ocp.limits["T"], [4.0, 0.1]);
        t.validate().unwrap();
        let p = PipelineConfig::defaults(PlantKind::PackedBed);
        assert_eq!(p.rnn.hidden["x_fa_upper"], vec![20, 20]);
        assert_eq!(p.ocp.rate_limit, 1.0);
        p.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let text = "[case]\nkind = \"tubular\"\nseed = 3\n\n[sampling]\nn1 = 6\n\n[rnn.hidden]\nC_mean = [4]\n";
        let c = PipelineConfig::from_toml_str(text, None).unwrap();
        assert_eq!(c.case.seed, 3);
        assert_eq!(c.sampling.n1, 6);
        assert_eq!(c.rnn.hidden["C_mean"], vec![4]);
        assert_eq!(c.rnn.hidden["T_upper"], vec![15, 15]);
        let again = PipelineConfig::from_toml_str(&c.to_toml(), None).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
        assert_ne!(PipelineConfig::defaults(PlantKind::Tubular).hash(), c.hash());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(PipelineConfig::from_toml_str("[case]\nkind = \"tubular\"\nsed = 1\n", None).is_err());
        assert!(PipelineConfig::from_toml_str("[nope]\na = 1\n", Some(PlantKind::Tubular)).is_err());
        assert!(PipelineConfig::from_toml_str("[rnn.hidden]\nQ = [3]\n", Some(PlantKind::Tubular)).is_err());
        assert!(PipelineConfig::from_toml_str("[uncertainty]\nDa = \"normal 0.08 -1\"\n", Some(PlantKind::Tubular)).is_err());
        assert!(PipelineConfig::from_toml_str("[uncertainty]\nfoo = \"normal 1 1\"\n", Some(PlantKind::Tubular)).is_err());
        assert!(PipelineConfig::from_toml_str("", None).is_err());
    }

    #[test]
    fn case_flag_overrides_file() {
        let c = PipelineConfig::from_toml_str("[case]\nkind = \"tubular\"\nseed = 1\n", Some(PlantKind::PackedBed)).unwrap();
        assert_eq!(c.kind(), PlantKind::PackedBed);
        assert_eq!(c.ocp.horizon, 20);
    }

    #[test]
    fn distributions_parse() {
        assert_eq!(parse_distribution("normal 8 0.8").unwrap(), Distribution::Normal { mean: 8.0, std: 0.8 });
        assert_eq!(
            parse_distribution("uniform -2.5 2.5").unwrap(),
            Distribution::Uniform { low: -2.5, high: 2.5 }
        );
        assert!(parse_distribution("gamma 1 2").is_err());
        assert!(parse_distribution("uniform 2 1").is_err());
    }
}
