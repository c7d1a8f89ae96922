//! Big-M encoding of ReLU RNN rollouts with per-neuron activation bounds.

use nalgebra::{DMatrix, DVector};

use super::{solve_lp, LpStatus, MilpProblem, Sense, VarRole};
use crate::error::{check_dim, Error, Result};
use crate::nmpc::{ObjectiveKind, OcpSpec};
use crate::rnn::{HiddenState, RnnModel};

/// Interval bounds of one model's rollout over a control box.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBounds {
    pub control_box: Vec<(f64, f64)>,
    pub s0: HiddenState,
    /// `pre[t][layer] = (lower, upper)` per unit.
    pub pre: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
    /// Post-ReLU intervals, same layout.
    pub post: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
    /// Physical output intervals per step.
    pub outputs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ActivationBounds {
    pub fn horizon(&self) -> usize {
        self.control_box.len()
    }

    /// Scale every pre-activation interval about its midpoint (soundness is
    /// kept for factors ≥ 1); post and output intervals follow.
    pub fn loosened(&self, model: &RnnModel, factor: f64) -> ActivationBounds {
        let mut b = self.clone();
        for (t, step) in b.pre.iter_mut().enumerate() {
            for (l, (lo, hi)) in step.iter_mut().enumerate() {
                for k in 0..lo.len() {
                    let mid = 0.5 * (lo[k] + hi[k]);
                    let half = 0.5 * (hi[k] - lo[k]) * factor + 1e-3 * (factor - 1.0);
                    lo[k] = mid - half;
                    hi[k] = mid + half;
                }
                b.post[t][l] = (lo.iter().map(|v| v.max(0.0)).collect(), hi.iter().map(|v| v.max(0.0)).collect());
            }
            let last = b.post[t].last().expect("at least one layer").clone();
            b.outputs[t] = output_interval(model, &last.0, &last.1);
        }
        b
    }
}

fn affine_interval(
    m: &nalgebra::DMatrix<f64>,
    lo: &[f64],
    hi: &[f64],
    acc_lo: &mut [f64],
    acc_hi: &mut [f64],
) {
    for i in 0..m.nrows() {
        for k in 0..m.ncols() {
            let a = m[(i, k)];
            if a >= 0.0 {
                acc_lo[i] += a * lo[k];
                acc_hi[i] += a * hi[k];
            } else {
                acc_lo[i] += a * hi[k];
                acc_hi[i] += a * lo[k];
            }
        }
    }
}

fn output_interval(model: &RnnModel, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let o = model.output_dim();
    let mut ol: Vec<f64> = model.c.iter().copied().collect();
    let mut oh = ol.clone();
    affine_interval(&model.v, lo, hi, &mut ol, &mut oh);
    let pl = (0..o).map(|i| ol[i] * model.output_std[i] + model.output_mean[i]).collect();
    let ph = (0..o).map(|i| oh[i] * model.output_std[i] + model.output_mean[i]).collect();
    (pl, ph)
}

/// Linear relaxation of one layer's ReLUs at one step: `h <= up_a z + up_b`,
/// `h >= lo_a z`.
struct Relaxation {
    up_a: Vec<f64>,
    up_b: Vec<f64>,
    lo_a: Vec<f64>,
}

impl Relaxation {
    fn new(lo: &[f64], hi: &[f64]) -> Self {
        let mut r = Relaxation { up_a: vec![0.0; lo.len()], up_b: vec![0.0; lo.len()], lo_a: vec![0.0; lo.len()] };
        for k in 0..lo.len() {
            let (l, u) = (lo[k], hi[k]);
            if u <= 0.0 {
                continue;
            }
            if l >= 0.0 {
                r.up_a[k] = 1.0;
                r.lo_a[k] = 1.0;
                continue;
            }
            let a = u / (u - l);
            r.up_a[k] = a;
            r.up_b[k] = -a * l;
            r.lo_a[k] = if u >= -l { 1.0 } else { 0.0 };
        }
        r
    }
}

/// Linear form over the unrolled network during back-substitution.
struct LinearForm {
    /// Coefficients on post-activations, indexed `t * layers + l`.
    h: Vec<Option<DMatrix<f64>>>,
    /// Coefficients on the standardised input per step, one column each.
    x: Vec<DVector<f64>>,
    d: DVector<f64>,
}

impl LinearForm {
    fn new(rows: usize, steps: usize, layers: usize) -> Self {
        LinearForm { h: vec![None; steps * layers], x: vec![DVector::zeros(rows); steps], d: DVector::zeros(rows) }
    }

    fn add_h(&mut self, idx: usize, m: DMatrix<f64>) {
        match &mut self.h[idx] {
            Some(c) => *c += m,
            slot => *slot = Some(m),
        }
    }

    /// Replace `g · z^l_t` by the layer's affine map.
    fn push_pre(&mut self, model: &RnnModel, s0: &HiddenState, g: &DMatrix<f64>, t: usize, l: usize) {
        let layers = model.layers.len();
        let layer = &model.layers[l];
        self.d += g * &layer.b;
        if l == 0 {
            self.x[t] += g * layer.u.column(0);
        } else {
            self.add_h(t * layers + l - 1, g * &layer.u);
        }
        if t > 0 {
            self.add_h((t - 1) * layers + l, g * &layer.w);
        } else {
            self.d += g * (&layer.w * &s0[l]);
        }
    }

    /// Substitute every post-activation back to the inputs and concretise
    /// over `xbox`; `upper` selects the bound.
    fn bound(mut self, model: &RnnModel, s0: &HiddenState, relax: &[Relaxation], xbox: &[(f64, f64)], upper: bool) -> Vec<f64> {
        let layers = model.layers.len();
        for idx in (0..self.h.len()).rev() {
            let Some(c) = self.h[idx].take() else { continue };
            let r = &relax[idx];
            let mut g = c;
            for k in 0..g.ncols() {
                for i in 0..g.nrows() {
                    let v = g[(i, k)];
                    if (v >= 0.0) == upper {
                        self.d[i] += v * r.up_b[k];
                        g[(i, k)] = v * r.up_a[k];
                    } else {
                        g[(i, k)] = v * r.lo_a[k];
                    }
                }
            }
            self.push_pre(model, s0, &g, idx / layers, idx % layers);
        }
        let mut out: Vec<f64> = self.d.iter().copied().collect();
        for (t, &(lo, hi)) in xbox.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                let c = self.x[t][i];
                *o += if (c >= 0.0) == upper { c * hi } else { c * lo };
            }
        }
        let slack = |v: f64| 1e-9 * (1.0 + v.abs());
        out.iter().map(|&v| if upper { v + slack(v) } else { v - slack(v) }).collect()
    }
}

/// Bounds of every pre-activation for every control sequence in
/// `control_box` starting from hidden state `s0`: interval propagation
/// intersected with linear-relaxation back-substitution to the inputs.
pub fn propagate_activation_bounds(model: &RnnModel, control_box: &[(f64, f64)], s0: &HiddenState) -> Result<ActivationBounds> {
    if control_box.is_empty() {
        return Err(Error::InvalidArgument("activation bounds need a horizon of at least 1".into()));
    }
    check_dim("RNN input width", 1, model.input_dim())?;
    check_dim("initial hidden layers", model.layers.len(), s0.len())?;
    if control_box.iter().any(|(l, h)| !(l <= h)) {
        return Err(Error::InvalidArgument("control box needs lower <= upper".into()));
    }
    let steps = control_box.len();
    let layers = model.layers.len();
    let (mu, sd) = (model.input_mean[0], model.input_std[0]);
    let xbox: Vec<(f64, f64)> = control_box.iter().map(|&(l, h)| ((l - mu) / sd, (h - mu) / sd)).collect();
    let mut relax: Vec<Relaxation> = Vec::with_capacity(steps * layers);
    let mut prev_lo: Vec<Vec<f64>> = s0.iter().map(|s| s.iter().copied().collect()).collect();
    let mut prev_hi = prev_lo.clone();
    let mut out = ActivationBounds {
        control_box: control_box.to_vec(),
        s0: s0.clone(),
        pre: Vec::new(),
        post: Vec::new(),
        outputs: Vec::new(),
    };
    for t in 0..steps {
        let mut in_lo = vec![xbox[t].0];
        let mut in_hi = vec![xbox[t].1];
        let mut pre_t = Vec::new();
        let mut post_t = Vec::new();
        for (l, layer) in model.layers.iter().enumerate() {
            let mut zl: Vec<f64> = layer.b.iter().copied().collect();
            let mut zh = zl.clone();
            affine_interval(&layer.u, &in_lo, &in_hi, &mut zl, &mut zh);
            affine_interval(&layer.w, &prev_lo[l], &prev_hi[l], &mut zl, &mut zh);
            if t > 0 || l > 0 {
                let eye = DMatrix::identity(layer.size(), layer.size());
                let symbolic = |upper: bool| {
                    let mut f = LinearForm::new(layer.size(), steps, layers);
                    f.push_pre(model, s0, &eye, t, l);
                    f.bound(model, s0, &relax, &xbox, upper)
                };
                for (k, v) in symbolic(false).into_iter().enumerate() {
                    zl[k] = zl[k].max(v);
                }
                for (k, v) in symbolic(true).into_iter().enumerate() {
                    zh[k] = zh[k].min(v);
                }
                for k in 0..zl.len() {
                    if zl[k] > zh[k] {
                        let m = 0.5 * (zl[k] + zh[k]);
                        zl[k] = m;
                        zh[k] = m;
                    }
                }
            }
            relax.push(Relaxation::new(&zl, &zh));
            let hl: Vec<f64> = zl.iter().map(|v| v.max(0.0)).collect();
            let hh: Vec<f64> = zh.iter().map(|v| v.max(0.0)).collect();
            prev_lo[l] = hl.clone();
            prev_hi[l] = hh.clone();
            in_lo = hl.clone();
            in_hi = hh.clone();
            pre_t.push((zl, zh));
            post_t.push((hl, hh));
        }
        let (mut ol, mut oh) = output_interval(model, &in_lo, &in_hi);
        let symbolic = |upper: bool| {
            let mut f = LinearForm::new(model.output_dim(), steps, layers);
            f.add_h(t * layers + layers - 1, model.v.clone());
            f.d = model.c.clone();
            f.bound(model, s0, &relax, &xbox, upper)
        };
        for (i, (lo, hi)) in symbolic(false).into_iter().zip(symbolic(true)).enumerate() {
            let (a, b) = (
                lo * model.output_std[i] + model.output_mean[i],
                hi * model.output_std[i] + model.output_mean[i],
            );
            ol[i] = ol[i].max(a.min(b));
            oh[i] = oh[i].min(a.max(b));
        }
        out.outputs.push((ol, oh));
        out.pre.push(pre_t);
        out.post.push(post_t);
    }
    Ok(out)
}

/// How one ReLU unit is represented in the MILP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitEncoding {
    /// Upper bound ≤ 0: output fixed at zero, no variable.
    Inactive,
    /// Lower bound ≥ 0: `h = z`, no binary.
    Active { h: usize },
    Unstable { h: usize, delta: usize },
}

/// A rollout MILP together with the map back to network quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutEncoding {
    pub problem: MilpProblem,
    pub controls: Vec<usize>,
    /// Models present in the MILP (indices into the caller's list).
    pub included: Vec<usize>,
    /// `units[k][t][layer][unit]` for `included[k]`.
    pub units: Vec<Vec<Vec<Vec<UnitEncoding>>>>,
    /// `outputs[k][t][i]`.
    pub outputs: Vec<Vec<Vec<usize>>>,
    pub s0: Vec<HiddenState>,
    /// Output-constraint rows kept / dropped as provably redundant.
    pub rows_kept: usize,
    pub rows_pruned: usize,
}

impl RolloutEncoding {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Full MILP assignment implied by a control sequence (replay through
    /// the networks with binaries from the observed activation pattern).
    pub fn assignment(&self, models: &[RnnModel], controls: &[f64]) -> Result<Vec<f64>> {
        check_dim("control sequence", self.horizon(), controls.len())?;
        let mut x = vec![0.0; self.problem.vars.len()];
        for (t, &c) in self.controls.iter().enumerate() {
            x[c] = controls[t];
        }
        for (k, &mi) in self.included.iter().enumerate() {
            let roll = models[mi].forward_controls(controls, Some(&self.s0[k]))?;
            for t in 0..controls.len() {
                for (l, layer_units) in self.units[k][t].iter().enumerate() {
                    for (j, enc) in layer_units.iter().enumerate() {
                        let z = roll.pre_activations[t][l][j];
                        match *enc {
                            UnitEncoding::Inactive => {}
                            UnitEncoding::Active { h } => x[h] = z.max(0.0),
                            UnitEncoding::Unstable { h, delta } => {
                                x[h] = z.max(0.0);
                                x[delta] = if z > 0.0 { 1.0 } else { 0.0 };
                            }
                        }
                    }
                }
                for (i, &o) in self.outputs[k][t].iter().enumerate() {
                    x[o] = roll.outputs[t][i];
                }
            }
        }
        Ok(x)
    }

    pub fn control_values(&self, x: &[f64]) -> Vec<f64> {
        self.controls.iter().map(|&c| x[c]).collect()
    }
}

/// Indices of rows `p_n · O ≤ r_n` that are not implied by the others.
/// Row `n` is dropped when `p_n = Σ λ_m p_m` with `λ ≥ 0` and
/// `Σ λ_m r_m ≤ r_n` over the rows still kept.
pub fn prune_redundant_rows(rows: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<usize>> {
    check_dim("row right-hand sides", rows.len(), rhs.len())?;
    let mut kept: Vec<usize> = (0..rows.len()).collect();
    let dim = rows.first().map_or(0, |r| r.len());
    for n in 0..rows.len() {
        let others: Vec<usize> = kept.iter().copied().filter(|&m| m != n).collect();
        if others.is_empty() {
            continue;
        }
        let mut lp = MilpProblem::new(Sense::Minimize);
        let lam: Vec<usize> = others.iter().map(|&m| lp.add_var(format!("l{m}"), 0.0, 1e6, VarRole::Free)).collect();
        for d in 0..dim {
            let coeffs = others.iter().zip(&lam).map(|(&m, &v)| (v, rows[m][d])).collect();
            lp.add_eq(format!("p{d}"), coeffs, rows[n][d]);
        }
        lp.objective = others.iter().zip(&lam).map(|(&m, &v)| (v, rhs[m])).collect();
        let sol = solve_lp(&lp)?;
        if sol.status == LpStatus::Optimal && sol.objective <= rhs[n] + 1e-10 * (1.0 + rhs[n].abs()) {
            kept.retain(|&m| m != n);
        }
    }
    Ok(kept)
}

/// Build the MILP of a rollout over `bounds[k].horizon()` steps for the
/// objective and constraints of `ocp`. `bounds[k]` belongs to `models[k]`.
pub fn encode_rnn_rollout(models: &[RnnModel], bounds: &[ActivationBounds], ocp: &OcpSpec) -> Result<RolloutEncoding> {
    ocp.validate()?;
    check_dim("activation bounds per model", models.len(), bounds.len())?;
    let horizon = bounds.first().map_or(0, |b| b.horizon());
    if horizon == 0 || bounds.iter().any(|b| b.horizon() != horizon || b.control_box != bounds[0].control_box) {
        return Err(Error::InvalidArgument("activation bounds disagree on horizon or control box".into()));
    }
    if ocp.objective.model >= models.len() || ocp.constraints.iter().any(|c| c.model >= models.len()) {
        return Err(Error::InvalidArgument("OCP references a model that was not supplied".into()));
    }
    for (m, b) in models.iter().zip(bounds) {
        check_dim("RNN input width", 1, m.input_dim())?;
        if b.pre.first().is_none_or(|p| p.len() != m.layers.len()) {
            return Err(Error::InvalidArgument("activation bounds do not match the model layers".into()));
        }
    }
    check_dim("objective weights", models[ocp.objective.model].output_dim(), ocp.objective.weights.len())?;

    // Keep only constraint rows that can bind.
    let mut active_rows: Vec<Vec<Vec<usize>>> = Vec::new();
    let (mut rows_kept, mut rows_pruned) = (0, 0);
    for c in &ocp.constraints {
        let odim = models[c.model].output_dim();
        if c.rows.iter().any(|r| r.len() != odim) {
            return Err(Error::InvalidArgument(format!("constraint {} rows do not match model outputs", c.name)));
        }
        let rhs: Vec<f64> = c.offsets.iter().map(|o| c.limit() - o).collect();
        let hull = prune_redundant_rows(&c.rows, &rhs)?;
        let mut per_step = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let (ol, oh) = &bounds[c.model].outputs[t];
            let keep: Vec<usize> = hull
                .iter()
                .copied()
                .filter(|&n| {
                    let max: f64 = c.rows[n].iter().enumerate().map(|(i, a)| if *a >= 0.0 { a * oh[i] } else { a * ol[i] }).sum();
                    max > rhs[n]
                })
                .collect();
            rows_kept += keep.len();
            rows_pruned += c.rows.len() - keep.len();
            per_step.push(keep);
        }
        active_rows.push(per_step);
    }
    let mut included = vec![ocp.objective.model];
    for (ci, c) in ocp.constraints.iter().enumerate() {
        if active_rows[ci].iter().any(|r| !r.is_empty()) && !included.contains(&c.model) {
            included.push(c.model);
        }
    }
    included.sort_unstable();

    let mut p = MilpProblem::new(Sense::Maximize);
    let controls: Vec<usize> = (0..horizon)
        .map(|t| {
            let (l, h) = bounds[0].control_box[t];
            p.add_var(format!("u_{t}"), l, h, VarRole::Control { step: t })
        })
        .collect();
    for t in 1..horizon {
        p.add_constraint(format!("rate_{t}"), vec![(controls[t], 1.0), (controls[t - 1], -1.0)], -ocp.rate_limit, ocp.rate_limit);
    }

    let mut all_units = Vec::new();
    let mut all_outputs = Vec::new();
    let mut s0s = Vec::new();
    for &mi in &included {
        let model = &models[mi];
        let b = &bounds[mi];
        let (mu, sd) = (model.input_mean[0], model.input_std[0]);
        let mut units_m: Vec<Vec<Vec<UnitEncoding>>> = Vec::with_capacity(horizon);
        let mut outs_m = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let mut units_t: Vec<Vec<UnitEncoding>> = Vec::with_capacity(model.layers.len());
            for (l, layer) in model.layers.iter().enumerate() {
                let (zl, zh) = &b.pre[t][l];
                let mut units_l = Vec::with_capacity(layer.size());
                for j in 0..layer.size() {
                    let (lo, hi) = (zl[j], zh[j]);
                    if hi <= 0.0 {
                        units_l.push(UnitEncoding::Inactive);
                        continue;
                    }
                    // z = lin·x + constant
                    let mut lin: Vec<(usize, f64)> = Vec::new();
                    let mut constant = layer.b[j];
                    if l == 0 {
                        let a = layer.u[(j, 0)];
                        lin.push((controls[t], a / sd));
                        constant -= a * mu / sd;
                    } else {
                        for (k, enc) in units_t[l - 1].iter().enumerate() {
                            if let UnitEncoding::Active { h } | UnitEncoding::Unstable { h, .. } = *enc {
                                lin.push((h, layer.u[(j, k)]));
                            }
                        }
                    }
                    if t == 0 {
                        for k in 0..layer.size() {
                            constant += layer.w[(j, k)] * b.s0[l][k];
                        }
                    } else {
                        for (k, enc) in units_m[t - 1][l].iter().enumerate() {
                            if let UnitEncoding::Active { h } | UnitEncoding::Unstable { h, .. } = *enc {
                                lin.push((h, layer.w[(j, k)]));
                            }
                        }
                    }
                    lin.retain(|&(_, a)| a != 0.0);
                    let neg: Vec<(usize, f64)> = lin.iter().map(|&(v, a)| (v, -a)).collect();
                    let tag = format!("{mi}_{t}_{l}_{j}");
                    let role = VarRole::Hidden { model: mi, step: t, layer: l, unit: j };
                    if lo >= 0.0 {
                        let h = p.add_var(format!("h_{tag}"), lo, hi, role);
                        let mut row = vec![(h, 1.0)];
                        row.extend(neg);
                        p.add_eq(format!("act_{tag}"), row, constant);
                        units_l.push(UnitEncoding::Active { h });
                    } else {
                        let h = p.add_var(format!("h_{tag}"), 0.0, hi, role);
                        let delta = p.add_binary(format!("d_{tag}"), VarRole::Activation { model: mi, step: t, layer: l, unit: j });
                        let mut r1 = vec![(h, 1.0)];
                        r1.extend(neg.iter().copied());
                        p.add_ge(format!("relu_lo_{tag}"), r1, constant);
                        let mut r2 = vec![(h, 1.0)];
                        r2.extend(neg);
                        r2.push((delta, -lo));
                        p.add_le(format!("relu_z_{tag}"), r2, constant - lo);
                        p.add_le(format!("relu_on_{tag}"), vec![(h, 1.0), (delta, -hi)], 0.0);
                        units_l.push(UnitEncoding::Unstable { h, delta });
                    }
                }
                units_t.push(units_l);
            }
            let last = units_t.last().expect("at least one layer");
            let (ol, oh) = &b.outputs[t];
            let mut outs_t = Vec::with_capacity(model.output_dim());
            for i in 0..model.output_dim() {
                let s = model.output_std[i];
                let o = p.add_var(format!("o_{mi}_{t}_{i}"), ol[i], oh[i], VarRole::Output { model: mi, step: t, index: i });
                let mut row = vec![(o, 1.0)];
                for (k, enc) in last.iter().enumerate() {
                    if let UnitEncoding::Active { h } | UnitEncoding::Unstable { h, .. } = *enc {
                        let a = s * model.v[(i, k)];
                        if a != 0.0 {
                            row.push((h, -a));
                        }
                    }
                }
                p.add_eq(format!("out_{mi}_{t}_{i}"), row, s * model.c[i] + model.output_mean[i]);
                outs_t.push(o);
            }
            units_m.push(units_t);
            outs_m.push(outs_t);
        }
        all_units.push(units_m);
        all_outputs.push(outs_m);
        s0s.push(b.s0.clone());
    }
    let slot = |mi: usize| included.iter().position(|&m| m == mi).expect("included model");

    for (ci, c) in ocp.constraints.iter().enumerate() {
        for t in 0..horizon {
            for &n in &active_rows[ci][t] {
                let outs = &all_outputs[slot(c.model)][t];
                let coeffs: Vec<(usize, f64)> =
                    c.rows[n].iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(i, a)| (outs[i], *a)).collect();
                p.add_le(format!("{}_{t}_{n}", c.name), coeffs, c.limit() - c.offsets[n]);
            }
        }
    }
    let ok = slot(ocp.objective.model);
    let steps: Vec<usize> = match ocp.objective.kind {
        ObjectiveKind::Sum => (0..horizon).collect(),
        ObjectiveKind::Terminal => vec![horizon - 1],
    };
    for &t in &steps {
        for (i, &w) in ocp.objective.weights.iter().enumerate() {
            if w != 0.0 {
                p.objective.push((all_outputs[ok][t][i], w));
            }
        }
        p.objective_constant += ocp.objective.offset;
    }
    Ok(RolloutEncoding {
        problem: p,
        controls,
        included,
        units: all_units,
        outputs: all_outputs,
        s0: s0s,
        rows_kept,
        rows_pruned,
    })
}
