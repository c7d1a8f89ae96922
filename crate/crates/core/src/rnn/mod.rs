//! Stacked Elman recurrent networks with ReLU hidden layers and a linear
//! read-out:
//!
//! `s¹_t = relu(U¹ x_t + W¹ s¹_{t-1} + b¹)`, `sˡ_t = relu(Uˡ s^{l-1}_t + Wˡ sˡ_{t-1} + bˡ)`,
//! `O_t = V s^L_t + c`.
//!
//! Inputs and outputs are standardised with constants stored in the model, so
//! callers always work in physical units.

mod train;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::error::{check_dim, Error, Result};
use crate::seed;

pub use train::{train_rnn, validate_model, validate_model_window, Sequence, SplitIndices, TrainConfig, TrainReport, ValidationReport};

#[derive(Debug, Clone, PartialEq)]
pub struct RnnLayer {
    /// `[hidden × layer input]`.
    pub u: DMatrix<f64>,
    /// `[hidden × hidden]`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl RnnLayer {
    pub fn size(&self) -> usize {
        self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    pub layers: Vec<RnnLayer>,
    /// `[output × last hidden]`.
    pub v: DMatrix<f64>,
    pub c: DVector<f64>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

/// Hidden states of every layer.
pub type HiddenState = Vec<DVector<f64>>;

/// Result of a rollout; `outputs[t]` follows input `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub outputs: Vec<Vec<f64>>,
    pub hidden: Vec<HiddenState>,
    /// Pre-activations per step and layer.
    pub pre_activations: Vec<Vec<DVector<f64>>>,
}

impl RnnModel {
    /// Model with zero weights and identity standardisation.
    pub fn zeros(input_dim: usize, hidden: &[usize], output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidArgument("RNN dimensions must be positive with at least one hidden layer".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(RnnLayer {
                u: DMatrix::zeros(h, prev),
                w: DMatrix::zeros(h, h),
                b: DVector::zeros(h),
            });
            prev = h;
        }
        Ok(RnnModel {
            layers,
            v: DMatrix::zeros(output_dim, prev),
            c: DVector::zeros(output_dim),
            input_mean: vec![0.0; input_dim],
            input_std: vec![1.0; input_dim],
            output_mean: vec![0.0; output_dim],
            output_std: vec![1.0; output_dim],
        })
    }

    /// Random initialisation: Glorot-uniform input weights, contracted
    /// recurrent weights and small positive biases to keep units alive.
    pub fn random(input_dim: usize, hidden: &[usize], output_dim: usize, seed_value: u64) -> Result<Self> {
        let mut m = Self::zeros(input_dim, hidden, output_dim)?;
        let mut rng = seed::rng(seed_value);
        let mut fill = |mat: &mut DMatrix<f64>, scale: f64| {
            for v in mat.iter_mut() {
                *v = scale * rng.random_range(-1.0..1.0);
            }
        };
        for layer in m.layers.iter_mut() {
            let (h, n_in) = layer.u.shape();
            fill(&mut layer.u, (6.0 / (h + n_in) as f64).sqrt());
            fill(&mut layer.w, 0.5 / (h as f64).sqrt());
            layer.b.fill(0.1);
        }
        let (o, h) = m.v.shape();
        fill(&mut m.v, (6.0 / (o + h) as f64).sqrt());
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].u.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.size()).collect()
    }

    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(|l| l.size()).sum()
    }

    pub fn zero_state(&self) -> HiddenState {
        self.layers.iter().map(|l| DVector::zeros(l.size())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.u.iter().chain(l.w.iter()).chain(l.b.iter()).all(|v| v.is_finite()))
            && self.v.iter().chain(self.c.iter()).all(|v| v.is_finite())
    }

    pub fn standardize_input(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter().enumerate().map(|(i, v)| (v - self.input_mean[i]) / self.input_std[i]),
        )
    }

    pub fn destandardize_output(&self, o: &DVector<f64>) -> Vec<f64> {
        o.iter()
            .enumerate()
            .map(|(i, v)| v * self.output_std[i] + self.output_mean[i])
            .collect()
    }

    /// Advance `state` by one input; returns (pre-activations, output).
    pub fn step(&self, state: &mut HiddenState, input: &[f64]) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
        check_dim("RNN input width", self.input_dim(), input.len())?;
        check_dim("RNN hidden layers", self.layers.len(), state.len())?;
        let mut x = self.standardize_input(input);
        let mut pre = Vec::with_capacity(self.layers.len());
        for (layer, s) in self.layers.iter().zip(state.iter_mut()) {
            check_dim("RNN hidden width", layer.size(), s.len())?;
            let z = &layer.u * &x + &layer.w * &*s + &layer.b;
            *s = z.map(|v| v.max(0.0));
            x = s.clone();
            pre.push(z);
        }
        let o = &self.v * &x + &self.c;
        Ok((pre, self.destandardize_output(&o)))
    }

    /// Roll out from `s0` (zeros when `None`).
    pub fn forward(&self, inputs: &[Vec<f64>], s0: Option<&HiddenState>) -> Result<Rollout> {
        let mut state = match s0 {
            Some(s) => s.clone(),
            None => self.zero_state(),
        };
        let mut out = Rollout {
            outputs: Vec::with_capacity(inputs.len()),
            hidden: Vec::with_capacity(inputs.len()),
            pre_activations: Vec::with_capacity(inputs.len()),
        };
        for x in inputs {
            let (pre, o) = self.step(&mut state, x)?;
            out.outputs.push(o);
            out.hidden.push(state.clone());
            out.pre_activations.push(pre);
        }
        Ok(out)
    }

    /// Scalar-control convenience wrapper around [`RnnModel::forward`].
    pub fn forward_controls(&self, controls: &[f64], s0: Option<&HiddenState>) -> Result<Rollout> {
        let inputs: Vec<Vec<f64>> = controls.iter().map(|&u| vec![u]).collect();
        self.forward(&inputs, s0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.u.len() + l.w.len() + l.b.len()).sum::<usize>() + self.v.len() + self.c.len()
    }

    /// Flattened parameters: per layer U, W (row-major), b; then V, c.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.parameter_count());
        let push_mat = |p: &mut Vec<f64>, m: &DMatrix<f64>| {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    p.push(m[(i, j)]);
                }
            }
        };
        for l in &self.layers {
            push_mat(&mut p, &l.u);
            push_mat(&mut p, &l.w);
            p.extend(l.b.iter());
        }
        push_mat(&mut p, &self.v);
        p.extend(self.c.iter());
        p
    }

    pub fn set_parameters(&mut self, p: &[f64]) -> Result<()> {
        check_dim("RNN parameter vector", self.parameter_count(), p.len())?;
        let mut k = 0;
        let read_mat = |m: &mut DMatrix<f64>, k: &mut usize| {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    m[(i, j)] = p[*k];
                    *k += 1;
                }
            }
        };
        for l in self.layers.iter_mut() {
            read_mat(&mut l.u, &mut k);
            read_mat(&mut l.w, &mut k);
            for v in l.b.iter_mut() {
                *v = p[k];
                k += 1;
            }
        }
        read_mat(&mut self.v, &mut k);
        for v in self.c.iter_mut() {
            *v = p[k];
            k += 1;
        }
        Ok(())
    }

    /// Self-describing text format; floats use shortest round-trip notation.
    pub fn to_text(&self) -> String {
        let mut s = String::from("rnn-model 1\n");
        let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "input_dim {}", self.input_dim());
        let _ = writeln!(
            s,
            "hidden {}",
            self.hidden_sizes().iter().map(|h| h.to_string()).collect::<Vec<_>>().join(" ")
        );
        let _ = writeln!(s, "output_dim {}", self.output_dim());
        let _ = writeln!(s, "input_mean {}", join(&mut self.input_mean.iter().copied()));
        let _ = writeln!(s, "input_std {}", join(&mut self.input_std.iter().copied()));
        let _ = writeln!(s, "output_mean {}", join(&mut self.output_mean.iter().copied()));
        let _ = writeln!(s, "output_std {}", join(&mut self.output_std.iter().copied()));
        let _ = writeln!(s, "parameters {}", join(&mut self.parameters().into_iter()));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("rnn-model 1") {
            return Err(Error::Parse("missing 'rnn-model 1' header".into()));
        }
        let mut fields = std::collections::BTreeMap::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            fields.insert(key.to_string(), rest.to_string());
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| Error::Parse(format!("missing '{k}'")));
        let floats = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{t}' in '{k}'"))))
                .collect()
        };
        let ints = |k: &str| -> Result<Vec<usize>> {
            get(k)?
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::Parse(format!("bad count '{t}' in '{k}'"))))
                .collect()
        };
        let input_dim = *ints("input_dim")?.first().ok_or_else(|| Error::Parse("empty input_dim".into()))?;
        let output_dim = *ints("output_dim")?.first().ok_or_else(|| Error::Parse("empty output_dim".into()))?;
        let hidden = ints("hidden")?;
        let mut m = RnnModel::zeros(input_dim, &hidden, output_dim)?;
        m.input_mean = floats("input_mean")?;
        m.input_std = floats("input_std")?;
        m.output_mean = floats("output_mean")?;
        m.output_std = floats("output_std")?;
        if m.input_mean.len() != input_dim
            || m.input_std.len() != input_dim
            || m.output_mean.len() != output_dim
            || m.output_std.len() != output_dim
        {
            return Err(Error::Parse("standardisation constants have the wrong length".into()));
        }
        m.set_parameters(&floats("parameters")?)
            .map_err(|e| Error::Parse(format!("parameter block: {e}")))?;
        Ok(m)
    }
}

/// Free-function form of [`RnnModel::forward_controls`].
pub fn rnn_forward(model: &RnnModel, controls: &[f64], s0: Option<&HiddenState>) -> Result<Rollout> {
    model.forward_controls(controls, s0)
}
