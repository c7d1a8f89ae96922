//! Levenberg–Marquardt training with early stopping.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use super::RnnModel;
use crate::error::{Error, Result};
use crate::seed;

/// One training sequence: per-step inputs and targets of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Sequence {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "sequence needs equal nonzero input/target lengths (got {} and {})",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Sequence { inputs, targets })
    }

    /// Scalar-control sequence.
    pub fn from_controls(controls: &[f64], targets: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(controls.iter().map(|&u| vec![u]).collect(), targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub split_seed: u64,
    pub init_seed: u64,
    pub patience: usize,
    pub max_epochs: usize,
    /// Extra random initialisations; the best validation loss wins.
    pub restarts: usize,
    pub mu_initial: f64,
    pub mu_max: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![15, 15],
            split: [0.70, 0.15, 0.15],
            split_seed: 0,
            init_seed: 1,
            patience: 6,
            max_epochs: 1000,
            restarts: 0,
            mu_initial: 1e-3,
            mu_max: 1e10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Shuffle whole sequences into three nonempty partitions.
    pub fn new(n: usize, ratios: [f64; 3], seed_value: u64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidArgument(format!("need at least 3 sequences to split, got {n}")));
        }
        if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("split ratios must be positive and sum to 1".into()));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seed::rng(seed_value));
        let n_val = ((ratios[1] * n as f64).round() as usize).max(1);
        let n_test = ((ratios[2] * n as f64).round() as usize).max(1);
        let n_val = n_val.min(n - 2);
        let n_test = n_test.min(n - 1 - n_val);
        let n_train = n - n_val - n_test;
        let mut train = idx[..n_train].to_vec();
        let mut val = idx[n_train..n_train + n_val].to_vec();
        let mut test = idx[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Ok(SplitIndices { train, val, test })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean squared errors in physical units.
    pub train_mse: f64,
    pub val_mse: f64,
    pub test_mse: f64,
    pub epochs_run: usize,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
    pub split_ratios: [f64; 3],
    pub split: SplitIndices,
    /// Standardised training loss after each accepted step of the winning run.
    pub loss_history: Vec<f64>,
    pub restart_used: usize,
}

struct Prepared {
    inputs: Vec<Vec<DVector<f64>>>,
    targets: Vec<Vec<DVector<f64>>>,
    residuals: usize,
}

fn column_stats(rows: impl Iterator<Item = Vec<f64>>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut n = 0usize;
    let rows: Vec<Vec<f64>> = rows.collect();
    for r in &rows {
        for i in 0..dim {
            sum[i] += r[i];
        }
        n += 1;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    for r in &rows {
        for i in 0..dim {
            sq[i] += (r[i] - mean[i]).powi(2);
        }
    }
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| {
            let sd = (s / n as f64).sqrt();
            if sd > 1e-12 * (1.0 + m.abs()) {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn prepare(model: &RnnModel, seqs: &[&Sequence]) -> Prepared {
    let inputs = seqs
        .iter()
        .map(|s| s.inputs.iter().map(|x| model.standardize_input(x)).collect())
        .collect();
    let targets: Vec<Vec<DVector<f64>>> = seqs
        .iter()
        .map(|s| {
            s.targets
                .iter()
                .map(|y| {
                    DVector::from_iterator(
                        y.len(),
                        y.iter().enumerate().map(|(i, v)| (v - model.output_mean[i]) / model.output_std[i]),
                    )
                })
                .collect()
        })
        .collect();
    let residuals = seqs.iter().map(|s| s.len()).sum::<usize>() * model.output_dim();
    Prepared { inputs, targets, residuals }
}

/// Standardised residual vector.
fn residuals(model: &RnnModel, data: &Prepared) -> DVector<f64> {
    let mut r = DVector::zeros(data.residuals);
    let mut row = 0;
    for (xs, ys) in data.inputs.iter().zip(&data.targets) {
        let mut state = model.zero_state();
        for (x, y) in xs.iter().zip(ys) {
            let mut h = x.clone();
            for (layer, s) in model.layers.iter().zip(state.iter_mut()) {
                let z = &layer.u * &h + &layer.w * &*s + &layer.b;
                *s = z.map(|v| v.max(0.0));
                h = s.clone();
            }
            let o = &model.v * &h + &model.c;
            for i in 0..o.len() {
                r[row] = o[i] - y[i];
                row += 1;
            }
        }
    }
    r
}

fn mse(r: &DVector<f64>) -> f64 {
    if r.is_empty() {
        0.0
    } else {
        r.norm_squared() / r.len() as f64
    }
}

/// Residuals and their Jacobian by forward-mode sensitivity propagation.
///
/// A unit counts as active when its pre-activation exceeds `active_above`;
/// a small negative threshold gives the other one-sided derivative at kinks.
fn residuals_and_jacobian(model: &RnnModel, data: &Prepared, active_above: f64) -> (DVector<f64>, DMatrix<f64>) {
    let p = model.parameter_count();
    let nl = model.layers.len();
    let mut offsets = Vec::with_capacity(nl);
    let mut off = 0;
    for l in &model.layers {
        offsets.push(off);
        off += l.u.len() + l.w.len() + l.b.len();
    }
    let v_off = off;
    let c_off = v_off + model.v.len();
    let out_dim = model.output_dim();

    let mut r = DVector::zeros(data.residuals);
    let mut jac = DMatrix::zeros(data.residuals, p);
    let mut row = 0;
    for (xs, ys) in data.inputs.iter().zip(&data.targets) {
        let mut state = model.zero_state();
        let mut sens: Vec<DMatrix<f64>> = model.layers.iter().map(|l| DMatrix::zeros(l.size(), p)).collect();
        for (x, y) in xs.iter().zip(ys) {
            let mut h_in = x.clone();
            for li in 0..nl {
                let layer = &model.layers[li];
                let hsz = layer.size();
                let n_in = layer.u.ncols();
                let prev = state[li].clone();
                let z = &layer.u * &h_in + &layer.w * &prev + &layer.b;
                // dz = U dh_in + W ds_prev + direct terms
                let mut dz = &layer.w * &sens[li];
                if li > 0 {
                    dz += &layer.u * &sens[li - 1];
                }
                let base = offsets[li];
                for i in 0..hsz {
                    for j in 0..n_in {
                        dz[(i, base + i * n_in + j)] += h_in[j];
                    }
                    let wb = base + layer.u.len();
                    for j in 0..hsz {
                        dz[(i, wb + i * hsz + j)] += prev[j];
                    }
                    dz[(i, base + layer.u.len() + layer.w.len() + i)] += 1.0;
                }
                for i in 0..hsz {
                    if z[i] <= active_above {
                        dz.row_mut(i).fill(0.0);
                    }
                }
                let s = z.map(|v| v.max(0.0));
                sens[li] = dz;
                state[li] = s.clone();
                h_in = s;
            }
            let o = &model.v * &h_in + &model.c;
            let d_o = &model.v * &sens[nl - 1];
            let hl = h_in.len();
            for i in 0..out_dim {
                r[row] = o[i] - y[i];
                jac.row_mut(row).copy_from(&d_o.row(i));
                for j in 0..hl {
                    jac[(row, v_off + i * hl + j)] += h_in[j];
                }
                jac[(row, c_off + i)] += 1.0;
                row += 1;
            }
        }
    }
    (r, jac)
}

/// Solve `(JᵀJ + μI) δ = −Jᵀr`, using the dual form when rows < columns.
fn lm_step(jac: &DMatrix<f64>, r: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let (m, n) = jac.shape();
    if m < n {
        let mut a = jac * jac.transpose();
        for i in 0..m {
            a[(i, i)] += mu;
        }
        let y = a.cholesky()?.solve(r);
        Some(-(jac.transpose() * y))
    } else {
        let mut a = jac.transpose() * jac;
        for i in 0..n {
            a[(i, i)] += mu;
        }
        let g = jac.transpose() * r;
        Some(-a.cholesky()?.solve(&g))
    }
}

const KINK_TOL: f64 = 1e-7;

struct RunResult {
    model: RnnModel,
    best_val: f64,
    epochs: usize,
    best_epoch: usize,
    history: Vec<f64>,
}

fn lm_run(mut model: RnnModel, train: &Prepared, val: &Prepared, cfg: &TrainConfig) -> Result<RunResult> {
    let mut theta = model.parameters();
    let (mut r, mut jac) = residuals_and_jacobian(&model, train, 0.0);
    let mut loss = mse(&r);
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged { epoch: 0 });
    }
    let mut best = model.clone();
    let mut best_val = mse(&residuals(&model, val));
    let mut best_epoch = 0;
    let mut fails = 0;
    let mut mu = cfg.mu_initial;
    let mut history = vec![loss];
    let mut epoch = 0;
    let mut kink_retry = false;
    while epoch < cfg.max_epochs {
        let mut accepted = false;
        while mu <= cfg.mu_max {
            if let Some(delta) = lm_step(&jac, &r, mu) {
                let trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
                if trial.iter().all(|v| v.is_finite()) {
                    model.set_parameters(&trial)?;
                    let trial_loss = mse(&residuals(&model, train));
                    if trial_loss.is_finite() && trial_loss < loss {
                        theta = trial;
                        loss = trial_loss;
                        accepted = true;
                        mu = (mu * 0.1).max(1e-15);
                        break;
                    }
                }
            }
            mu *= 10.0;
        }
        if !accepted {
            model.set_parameters(&theta)?;
            if kink_retry {
                break;
            }
            // Stalled on a ReLU kink: retry once with near-zero units active.
            kink_retry = true;
            mu = cfg.mu_initial;
            jac = residuals_and_jacobian(&model, train, -KINK_TOL).1;
            continue;
        }
        kink_retry = false;
        epoch += 1;
        history.push(loss);
        let val_loss = mse(&residuals(&model, val));
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            best_epoch = epoch;
            fails = 0;
        } else {
            fails += 1;
            if fails >= cfg.patience {
                break;
            }
        }
        if loss < 1e-24 {
            break;
        }
        let (nr, nj) = residuals_and_jacobian(&model, train, 0.0);
        r = nr;
        jac = nj;
    }
    Ok(RunResult { model: best, best_val, epochs: epoch, best_epoch, history })
}

fn physical_mse(model: &RnnModel, seqs: &[&Sequence]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in seqs {
        let roll = model.forward(&s.inputs, None)?;
        for (o, y) in roll.outputs.iter().zip(&s.targets) {
            for (a, b) in o.iter().zip(y) {
                sum += (a - b).powi(2);
                n += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Train a ReLU RNN on whole-sequence splits with Levenberg–Marquardt and
/// validation-based early stopping. Returns the best-validation weights.
pub fn train_rnn(sequences: &[Sequence], cfg: &TrainConfig) -> Result<(RnnModel, TrainReport)> {
    let split = SplitIndices::new(sequences.len(), cfg.split, cfg.split_seed)?;
    let input_dim = sequences[0].inputs[0].len();
    let output_dim = sequences[0].targets[0].len();
    for s in sequences {
        if s.is_empty()
            || s.inputs.len() != s.targets.len()
            || s.inputs.iter().any(|x| x.len() != input_dim)
            || s.targets.iter().any(|y| y.len() != output_dim)
        {
            return Err(Error::InvalidArgument("sequences have inconsistent shapes".into()));
        }
        if s.inputs.iter().chain(&s.targets).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("sequences contain non-finite values".into()));
        }
    }
    let pick = |ix: &[usize]| ix.iter().map(|&i| &sequences[i]).collect::<Vec<_>>();
    let (tr, va, te) = (pick(&split.train), pick(&split.val), pick(&split.test));
    let (in_mean, in_std) = column_stats(tr.iter().flat_map(|s| s.inputs.iter().cloned()), input_dim);
    let (out_mean, out_std) = column_stats(tr.iter().flat_map(|s| s.targets.iter().cloned()), output_dim);

    let mut best: Option<(RunResult, usize)> = None;
    for restart in 0..=cfg.restarts {
        let mut model = RnnModel::random(input_dim, &cfg.hidden, output_dim, seed::derive(cfg.init_seed, &[restart as u64]))?;
        model.input_mean = in_mean.clone();
        model.input_std = in_std.clone();
        model.output_mean = out_mean.clone();
        model.output_std = out_std.clone();
        let train_data = prepare(&model, &tr);
        let val_data = prepare(&model, &va);
        let run = lm_run(model, &train_data, &val_data, cfg)?;
        if best.as_ref().is_none_or(|(b, _)| run.best_val < b.best_val) {
            best = Some((run, restart));
        }
    }
    let (run, restart_used) = best.expect("at least one run");
    let model = run.model;
    let report = TrainReport {
        train_mse: physical_mse(&model, &tr)?,
        val_mse: physical_mse(&model, &va)?,
        test_mse: physical_mse(&model, &te)?,
        epochs_run: run.epochs,
        best_epoch: run.best_epoch,
        split_ratios: cfg.split,
        split,
        loss_history: run.history,
        restart_used,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Relative L2 error per sequence.
    pub errors: Vec<f64>,
    pub worst: f64,
    pub worst_index: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Relative L2 error of each sequence over all steps.
pub fn validate_model(model: &RnnModel, fresh: &[Sequence], tolerance: f64) -> Result<ValidationReport> {
    validate_model_window(model, fresh, tolerance, 0)
}

/// Relative L2 error over steps `start..` of each sequence, e.g. the steady
/// portion of a trajectory.
pub fn validate_model_window(model: &RnnModel, fresh: &[Sequence], tolerance: f64, start: usize) -> Result<ValidationReport> {
    let mut errors = Vec::with_capacity(fresh.len());
    for s in fresh {
        let roll = model.forward(&s.inputs, None)?;
        let (mut num, mut den) = (0.0, 0.0);
        for (o, y) in roll.outputs.iter().zip(&s.targets).skip(start) {
            for (a, b) in o.iter().zip(y) {
                num += (a - b).powi(2);
                den += b * b;
            }
        }
        errors.push(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() });
    }
    let (worst_index, worst) = errors
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0f64), |acc, (i, e)| if e > acc.1 || e.is_nan() { (i, e) } else { acc });
    Ok(ValidationReport {
        pass: errors.iter().all(|e| *e <= tolerance),
        errors,
        worst,
        worst_index,
        tolerance,
    })
}
