//! Uncertain-parameter descriptions, Monte-Carlo draws and the affine germ maps.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution as _, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::seed;

/// Distribution family of a single uncertain parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Normal { mean, std } => {
                if !(std > 0.0) || !mean.is_finite() || !std.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "normal distribution needs finite mean and std > 0 (got {mean}, {std})"
                    )));
                }
            }
            Distribution::Uniform { low, high } => {
                if !(low < high) || !low.is_finite() || !high.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "uniform distribution needs low < high (got {low}, {high})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Physical value for a standard germ value.
    pub fn from_germ(&self, theta: f64) -> f64 {
        match *self {
            Distribution::Normal { mean, std } => mean + std * theta,
            Distribution::Uniform { low, high } => 0.5 * (low + high) + 0.5 * (high - low) * theta,
        }
    }

    /// Standard germ value for a physical value.
    pub fn to_germ(&self, value: f64) -> f64 {
        match *self {
            Distribution::Normal { mean, std } => (value - mean) / std,
            Distribution::Uniform { low, high } => {
                (value - 0.5 * (low + high)) / (0.5 * (high - low))
            }
        }
    }

    /// Draw one standard germ value (N(0,1) or U(-1,1)).
    pub fn sample_germ(&self, rng: &mut seed::Rng) -> f64 {
        match self {
            Distribution::Normal { .. } => StandardNormal.sample(rng),
            Distribution::Uniform { .. } => rng.random_range(-1.0..=1.0),
        }
    }
}

/// A named uncertain parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainParameter {
    pub name: String,
    pub distribution: Distribution,
}

/// Ordered set of independent uncertain parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UncertaintySpec {
    pub parameters: Vec<UncertainParameter>,
}

/// Realised values of uncertain parameters, keyed by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterDraw {
    pub values: BTreeMap<String, f64>,
}

impl ParameterDraw {
    pub fn new<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            values: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

impl UncertaintySpec {
    pub fn new(parameters: Vec<UncertainParameter>) -> Result<Self> {
        for p in &parameters {
            p.distribution.validate()?;
        }
        let mut names: Vec<&str> = parameters.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate uncertain parameter name".into()));
        }
        Ok(Self { parameters })
    }

    pub fn dim(&self) -> usize {
        self.parameters.len()
    }

    /// `true` when every drawn name belongs to this spec.
    pub fn owns(&self, draw: &ParameterDraw) -> bool {
        draw.values
            .keys()
            .all(|k| self.parameters.iter().any(|p| &p.name == k))
    }

    /// `n` i.i.d. draws, reproducible by `seed`.
    pub fn draw(&self, n: usize, seed: u64) -> Result<Vec<ParameterDraw>> {
        if n == 0 {
            return Err(Error::InvalidArgument("draw count must be >= 1".into()));
        }
        let mut rng = seed::rng(seed);
        Ok((0..n)
            .map(|_| {
                let theta: Vec<f64> = self
                    .parameters
                    .iter()
                    .map(|p| p.distribution.sample_germ(&mut rng))
                    .collect();
                self.from_germ(&theta).expect("dimension matches by construction")
            })
            .collect())
    }

    /// Standard germ vector for a draw; parameters missing from the draw are an error.
    pub fn to_germ(&self, draw: &ParameterDraw) -> Result<Vec<f64>> {
        self.parameters
            .iter()
            .map(|p| {
                draw.get(&p.name)
                    .map(|v| p.distribution.to_germ(v))
                    .ok_or_else(|| Error::InvalidArgument(format!("draw lacks parameter '{}'", p.name)))
            })
            .collect()
    }

    pub fn from_germ(&self, theta: &[f64]) -> Result<ParameterDraw> {
        check_dim("germ vector", self.dim(), theta.len())?;
        Ok(ParameterDraw {
            values: self
                .parameters
                .iter()
                .zip(theta)
                .map(|(p, &t)| (p.name.clone(), p.distribution.from_germ(t)))
                .collect(),
        })
    }

    /// Distribution collapsed to its centre (mean for normal, midpoint for uniform).
    pub fn nominal(&self) -> ParameterDraw {
        self.from_germ(&vec![0.0; self.dim()]).expect("dimension matches")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal_spec() -> UncertaintySpec {
        UncertaintySpec::new(vec![UncertainParameter {
            name: "Da".into(),
            distribution: Distribution::Normal { mean: 0.08, std: 0.008 },
        }])
        .unwrap()
    }

    #[test]
    fn normal_sample_mean_within_clt_bound() {
        let draws = normal_spec().draw(4000, 11).unwrap();
        let mean = draws.iter().map(|d| d.get("Da").unwrap()).sum::<f64>() / 4000.0;
        assert!((mean - 0.08).abs() <= 4.0 * 0.008 / (4000f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn uniform_draws_inside_interval() {
        let spec = UncertaintySpec::new(vec![UncertainParameter {
            name: "off".into(),
            distribution: Distribution::Uniform { low: -2.5, high: 2.5 },
        }])
        .unwrap();
        for d in spec.draw(2000, 3).unwrap() {
            let v = d.get("off").unwrap();
            assert!((-2.5..=2.5).contains(&v));
        }
    }

    #[test]
    fn same_seed_same_draws() {
        let s = normal_spec();
        assert_eq!(s.draw(50, 9).unwrap(), s.draw(50, 9).unwrap());
        assert_ne!(s.draw(50, 9).unwrap(), s.draw(50, 10).unwrap());
    }

    #[test]
    fn germ_maps() {
        let n = Distribution::Normal { mean: 0.08, std: 0.008 };
        assert_eq!(n.from_germ(0.0), 0.08);
        let u = Distribution::Uniform { low: 50.0 - 2.5, high: 50.0 + 2.5 };
        assert_eq!(u.from_germ(1.0), 52.5);
        for &p in &[0.05, 0.08, 0.11, -3.0] {
            assert!((n.from_germ(n.to_germ(p)) - p).abs() < 1e-14);
        }
        for &p in &[47.5, 49.0, 52.5] {
            assert!((u.from_germ(u.to_germ(p)) - p).abs() < 1e-14);
        }
    }

    #[test]
    fn invalid_distributions_rejected() {
        assert!(Distribution::Normal { mean: 0.0, std: 0.0 }.validate().is_err());
        assert!(Distribution::Uniform { low: 1.0, high: 1.0 }.validate().is_err());
    }

    #[test]
    fn missing_parameter_in_draw() {
        let s = normal_spec();
        assert!(s.to_germ(&ParameterDraw::new([("B", 8.0)])).is_err());
    }
}
