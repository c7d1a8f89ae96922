//! Two-phase packed-bed bioreactor: convection–diffusion in the bulk with
//! quasi-steady reaction–diffusion inside spherical beads.

use super::blocktri::BlockTridiag;
use super::integrate::OdeSystem;
use super::{PackedBedParams, PlantConfig, PlantParams};
use crate::error::{Error, Result};
use crate::uq::ParameterDraw;

const GLY: usize = 0;
const SA: usize = 1;
const AA: usize = 2;
const FA: usize = 3;

/// Species rates per unit bead mass plus the Jacobian of the glycerol and
/// succinate rates with respect to (glycerol, succinate).
#[derive(Debug, Clone, Copy)]
struct Rates {
    r: [f64; 4],
    dr: [[f64; 2]; 2],
}

fn kinetics(p: &PackedBedParams, g: f64, s: f64) -> Rates {
    if g <= 0.0 {
        return Rates {
            r: [0.0; 4],
            dr: [[0.0; 2]; 2],
        };
    }
    let co2 = p.x_co2 / (p.k_x_co2 + p.x_co2);
    let den = p.ks_gly + g + g * g / p.ki_gly;
    let mono = g / den;
    let dmono = (p.ks_gly - g * g / p.ki_gly) / (den * den);
    let base = 1.0 - s / p.sa_star;
    let (inh, dinh) = if base > 0.0 {
        let lower = if p.n_sa.fract() == 0.0 && p.n_sa >= 1.0 {
            base.powi(p.n_sa as i32 - 1)
        } else {
            base.powf(p.n_sa - 1.0)
        };
        (lower * base, -p.n_sa / p.sa_star * lower)
    } else {
        (0.0, 0.0)
    };
    let mu = p.mu_max * co2 * mono * inh;
    let dmu_g = p.mu_max * co2 * dmono * inh;
    let dmu_s = p.mu_max * co2 * mono * dinh;
    let gate = g / (g + p.substrate_gate);
    let dgate = p.substrate_gate / ((g + p.substrate_gate) * (g + p.substrate_gate));
    let x = p.x_cons;
    Rates {
        r: [
            (p.alpha_gly * mu + p.beta_gly * gate) * x,
            (p.alpha_sa * mu + p.beta_sa * gate) * x,
            p.beta_aa * gate * x,
            p.beta_fa * gate * x,
        ],
        dr: [
            [(p.alpha_gly * dmu_g + p.beta_gly * dgate) * x, p.alpha_gly * dmu_s * x],
            [(p.alpha_sa * dmu_g + p.beta_sa * dgate) * x, p.alpha_sa * dmu_s * x],
        ],
    }
}

/// Radial grid `r_j = j·R/(N-1)` with the spherical finite-volume Laplacian.
#[derive(Debug, Clone)]
struct BeadGrid {
    n: usize,
    dr: f64,
    /// Coefficients of `x_{j-1}` and `x_{j+1}` in the discrete Laplacian.
    left: Vec<f64>,
    right: Vec<f64>,
    /// Composite Simpson/trapezoid weights for `(3/R³)∫ f r² dr`.
    weights: Vec<f64>,
}

impl BeadGrid {
    fn new(n: usize, radius: f64) -> Self {
        let dr = radius / (n - 1) as f64;
        let mut left = vec![0.0; n];
        let mut right = vec![0.0; n];
        right[0] = 6.0 / (dr * dr);
        for j in 1..n {
            let jf = j as f64;
            left[j] = (jf - 0.5).powi(2) / (jf * jf * dr * dr);
            right[j] = (jf + 0.5).powi(2) / (jf * jf * dr * dr);
        }
        let mut w = vec![0.0; n];
        let intervals = n - 1;
        if intervals % 2 == 0 {
            for (j, wj) in w.iter_mut().enumerate() {
                let c = if j == 0 || j == intervals {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                *wj = c * dr / 3.0;
            }
        } else {
            for (j, wj) in w.iter_mut().enumerate() {
                *wj = if j == 0 || j == intervals { 0.5 * dr } else { dr };
            }
        }
        for (j, wj) in w.iter_mut().enumerate() {
            let r = j as f64 * dr;
            *wj *= 3.0 * r * r / radius.powi(3);
        }
        BeadGrid {
            n,
            dr,
            left,
            right,
            weights: w,
        }
    }

    /// Discrete Laplacian at node `j` of the component at `offset` in a
    /// vector interleaving `stride` components per node.
    #[inline]
    fn laplacian(&self, x: &[f64], stride: usize, offset: usize, j: usize, surface: f64) -> f64 {
        let at = |k: usize| x[stride * k + offset];
        let xp = if j + 1 == self.n - 1 { surface } else { at(j + 1) };
        if j == 0 {
            self.right[0] * (xp - at(0))
        } else {
            self.left[j] * (at(j - 1) - at(j)) + self.right[j] * (xp - at(j))
        }
    }
}

/// Steady radial bead profiles for one bulk state.
#[derive(Debug, Clone, PartialEq)]
pub struct BeadProfile {
    pub radii: Vec<f64>,
    /// Per species (gly, sa, aa, fa), centre to surface.
    pub profiles: [Vec<f64>; 4],
    /// Bulk source terms; glycerol as consumption, products as generation.
    pub r_tot: [f64; 4],
    pub newton_iterations: usize,
    pub residual: f64,
}

struct BeadSolver {
    grid: BeadGrid,
    jac: BlockTridiag,
    work: Vec<super::blocktri::Block>,
    res: Vec<f64>,
    trial: Vec<f64>,
}

const NEWTON_MAX_ITER: usize = 50;

impl BeadSolver {
    fn new(n: usize, radius: f64) -> Self {
        BeadSolver {
            grid: BeadGrid::new(n, radius),
            jac: BlockTridiag::zeros(n - 1),
            work: Vec::with_capacity(n),
            res: vec![0.0; 2 * (n - 1)],
            trial: vec![0.0; 2 * (n - 1)],
        }
    }

    /// Residual of the coupled glycerol/succinate problem; `x` interleaves
    /// (gly, sa) on the interior nodes `0..N-1`.
    fn residual(&self, p: &PackedBedParams, dg: f64, ds: f64, bulk: [f64; 2], x: &[f64], out: &mut [f64]) -> f64 {
        let m = self.grid.n - 1;
        let mut norm = 0.0f64;
        for j in 0..m {
            let k = kinetics(p, x[2 * j], x[2 * j + 1]);
            out[2 * j] = dg * self.grid.laplacian(x, 2, 0, j, bulk[0]) - k.r[GLY];
            out[2 * j + 1] = ds * self.grid.laplacian(x, 2, 1, j, bulk[1]) + k.r[SA];
            norm = norm.max(out[2 * j].abs()).max(out[2 * j + 1].abs());
        }
        norm
    }

    fn assemble(&mut self, p: &PackedBedParams, dg: f64, ds: f64, x: &[f64]) {
        let m = self.grid.n - 1;
        for j in 0..m {
            let k = kinetics(p, x[2 * j], x[2 * j + 1]);
            let diag = self.grid.left[j] + self.grid.right[j];
            let diag = if j == 0 { self.grid.right[0] } else { diag };
            self.jac.diag[j] = [
                [-dg * diag - k.dr[0][0], -k.dr[0][1]],
                [k.dr[1][0], -ds * diag + k.dr[1][1]],
            ];
            self.jac.lower[j] = if j == 0 {
                [[0.0; 2]; 2]
            } else {
                [[dg * self.grid.left[j], 0.0], [0.0, ds * self.grid.left[j]]]
            };
            self.jac.upper[j] = if j + 1 == m {
                [[0.0; 2]; 2]
            } else {
                [[dg * self.grid.right[j], 0.0], [0.0, ds * self.grid.right[j]]]
            };
        }
    }

    /// Damped Newton iteration from the warm start in `x`.
    fn solve(&mut self, p: &PackedBedParams, d_bead_gly: f64, bulk: [f64; 2], x: &mut [f64]) -> Result<(usize, f64)> {
        let (dg, ds) = (d_bead_gly, p.d_bead[SA]);
        let mut res = std::mem::take(&mut self.res);
        let mut trial = std::mem::take(&mut self.trial);
        let mut tres = vec![0.0; res.len()];
        let mut delta = vec![0.0; res.len()];
        let scale = 1.0 + bulk[0].abs().max(bulk[1].abs());
        let tol = 1e-10 * scale * dg.min(ds) * self.grid.right[0];
        let mut norm = self.residual(p, dg, ds, bulk, x, &mut res);
        let mut iters = 0;
        let outcome = loop {
            if norm <= tol {
                break Ok((iters, norm));
            }
            if iters == NEWTON_MAX_ITER {
                break Err(Error::BeadNonConvergence { residual: norm });
            }
            iters += 1;
            self.assemble(p, dg, ds, x);
            for (d, r) in delta.iter_mut().zip(&res) {
                *d = -r;
            }
            if let Err(e) = self.jac.solve_with(&mut delta, &mut self.work) {
                break Err(e);
            }
            let mut alpha = 1.0;
            let accepted = loop {
                for i in 0..x.len() {
                    trial[i] = x[i] + alpha * delta[i];
                }
                let tn = self.residual(p, dg, ds, bulk, &trial, &mut tres);
                if tn < (1.0 - 1e-4 * alpha) * norm || tn <= tol {
                    std::mem::swap(&mut res, &mut tres);
                    break Some(tn);
                }
                alpha *= 0.5;
                if alpha < 1e-6 {
                    break None;
                }
            };
            match accepted {
                Some(tn) => {
                    x.copy_from_slice(&trial);
                    norm = tn;
                    let step = delta.iter().fold(0.0f64, |m, d| m.max(d.abs())) * alpha;
                    if step <= 1e-13 * scale {
                        break Ok((iters, norm));
                    }
                }
                None => break Err(Error::BeadNonConvergence { residual: norm }),
            }
        };
        self.res = res;
        self.trial = trial;
        outcome
    }

    /// Bulk source terms `ρ_bead(1-ε)·(3/R³)∫ r_i r² dr` from a converged profile.
    fn source_terms(&self, p: &PackedBedParams, x: &[f64], bulk: [f64; 2]) -> [f64; 4] {
        let n = self.grid.n;
        let mut tot = [0.0; 4];
        for j in 0..n {
            let (g, s) = if j + 1 == n { (bulk[0], bulk[1]) } else { (x[2 * j], x[2 * j + 1]) };
            let k = kinetics(p, g, s);
            for i in 0..4 {
                tot[i] += self.grid.weights[j] * k.r[i];
            }
        }
        let factor = p.rho_bead * (1.0 - p.eps);
        tot.map(|v| v * factor)
    }
}

/// Solve the bead boundary-value problem for one bulk state.
///
/// Bead-surface values equal the bulk values; the centre is a symmetry point.
pub fn solve_bead_profile(bulk: [f64; 4], config: &PlantConfig, draw: &ParameterDraw) -> Result<BeadProfile> {
    let PlantParams::PackedBed(p0) = &config.params else {
        return Err(Error::InvalidArgument("bead profiles exist only for the packed bed".into()));
    };
    if bulk.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("bulk concentrations must be finite and >= 0".into()));
    }
    config.validate()?;
    let mut p = p0.clone();
    if let Some(d) = draw.values.get("D_bead_gly") {
        p.d_bead[GLY] = *d;
    }
    let n = config.bead_nodes;
    let mut solver = BeadSolver::new(n, p.radius);
    let mut x = vec![0.0; 2 * (n - 1)];
    for j in 0..n - 1 {
        x[2 * j] = bulk[GLY];
        x[2 * j + 1] = bulk[SA];
    }
    let (newton_iterations, residual) = solver.solve(&p, p.d_bead[GLY], [bulk[GLY], bulk[SA]], &mut x)?;
    let r_tot = solver.source_terms(&p, &x, [bulk[GLY], bulk[SA]]);

    // Acetate and formate only see glycerol through the rate expressions,
    // so their profiles follow from linear problems.
    let mut lin = BlockTridiag::zeros(n - 1);
    let mut rhs = vec![0.0; 2 * (n - 1)];
    let (da, df) = (p.d_bead[AA], p.d_bead[FA]);
    let grid = &solver.grid;
    for j in 0..n - 1 {
        let k = kinetics(&p, x[2 * j], x[2 * j + 1]);
        let diag = if j == 0 { grid.right[0] } else { grid.left[j] + grid.right[j] };
        lin.diag[j] = [[-da * diag, 0.0], [0.0, -df * diag]];
        if j > 0 {
            lin.lower[j] = [[da * grid.left[j], 0.0], [0.0, df * grid.left[j]]];
        }
        if j + 2 < n {
            lin.upper[j] = [[da * grid.right[j], 0.0], [0.0, df * grid.right[j]]];
        }
        rhs[2 * j] = -k.r[AA];
        rhs[2 * j + 1] = -k.r[FA];
        if j + 2 == n {
            rhs[2 * j] -= da * grid.right[j] * bulk[AA];
            rhs[2 * j + 1] -= df * grid.right[j] * bulk[FA];
        }
    }
    lin.solve(&mut rhs)?;

    let mut profiles: [Vec<f64>; 4] = Default::default();
    for j in 0..n - 1 {
        profiles[GLY].push(x[2 * j]);
        profiles[SA].push(x[2 * j + 1]);
        profiles[AA].push(rhs[2 * j]);
        profiles[FA].push(rhs[2 * j + 1]);
    }
    for (i, prof) in profiles.iter_mut().enumerate() {
        prof.push(bulk[i]);
    }
    Ok(BeadProfile {
        radii: (0..n).map(|j| j as f64 * grid.dr).collect(),
        profiles,
        r_tot,
        newton_iterations,
        residual,
    })
}

/// Bulk phase on nodes `1..m` (node 0 carries the Dirichlet feed).
/// State layout is node-major: `y[4(j-1) + species]`.
pub(crate) struct PackedBedModel {
    p: PackedBedParams,
    m: usize,
    h: f64,
    feed_offset: f64,
    feed: f64,
    solver: BeadSolver,
    /// Warm starts of the bead (gly, sa) profiles per bulk node.
    warm: Vec<Vec<f64>>,
    sources: Vec<[f64; 4]>,
}

impl PackedBedModel {
    pub(crate) fn new(p: PackedBedParams, m: usize, bead_nodes: usize, feed_offset: f64) -> Self {
        let solver = BeadSolver::new(bead_nodes, p.radius);
        PackedBedModel {
            h: p.length / (m - 1) as f64,
            warm: vec![Vec::new(); m - 1],
            sources: vec![[0.0; 4]; m - 1],
            p,
            m,
            feed_offset,
            feed: 0.0,
            solver,
        }
    }

    pub(crate) fn set_control(&mut self, nominal_feed: f64) {
        self.feed = (nominal_feed + self.feed_offset).max(0.0);
    }

    /// Species-major `[field × node]` profile; the inlet node shows the feed
    /// held over the interval that just ended (zero before the first move).
    pub(crate) fn full_profile(&self, y: &[f64], control: Option<f64>) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; 4 * m];
        if control.is_some() {
            out[0] = self.feed;
        }
        for j in 1..m {
            for i in 0..4 {
                out[i * m + j] = y[4 * (j - 1) + i];
            }
        }
        out
    }

    fn update_sources(&mut self, y: &[f64]) -> Result<()> {
        let nb = self.solver.grid.n;
        for j in 0..self.m - 1 {
            let g = y[4 * j + GLY].max(0.0);
            let s = y[4 * j + SA].max(0.0);
            if g <= 0.0 {
                self.sources[j] = [0.0; 4];
                self.warm[j].clear();
                continue;
            }
            let warm = &mut self.warm[j];
            if warm.is_empty() {
                warm.resize(2 * (nb - 1), 0.0);
                for k in 0..nb - 1 {
                    warm[2 * k] = g;
                    warm[2 * k + 1] = s;
                }
            }
            let d_gly = self.p.d_bead[GLY];
            match self.solver.solve(&self.p, d_gly, [g, s], warm) {
                Ok(_) => {}
                Err(_) => {
                    // Retry once from the uniform bulk state before giving up.
                    for k in 0..nb - 1 {
                        warm[2 * k] = g;
                        warm[2 * k + 1] = s;
                    }
                    self.solver.solve(&self.p, d_gly, [g, s], warm)?;
                }
            }
            self.sources[j] = self.solver.source_terms(&self.p, warm, [g, s]);
        }
        Ok(())
    }
}

impl OdeSystem for PackedBedModel {
    fn dim(&self) -> usize {
        4 * (self.m - 1)
    }

    fn rhs(&mut self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self.update_sources(y)?;
        let m = self.m;
        let h = self.h;
        let u = self.p.v / self.p.eps;
        let inlet = [self.feed, 0.0, 0.0, 0.0];
        let at = |j: usize, i: usize| -> f64 {
            if j == 0 {
                inlet[i]
            } else if j == m {
                // Zero-gradient outlet through a mirrored ghost node.
                y[4 * (m - 3) + i]
            } else {
                y[4 * (j - 1) + i]
            }
        };
        for j in 1..m {
            for i in 0..4 {
                let (xm, x, xp) = (at(j - 1, i), at(j, i), at(j + 1, i));
                let diff = self.p.d[i] * (xp - 2.0 * x + xm) / (h * h);
                // Third-order upwind-biased stencil, central next to the inlet.
                let grad = if j >= 2 {
                    (2.0 * xp + 3.0 * x - 6.0 * xm + at(j - 2, i)) / (6.0 * h)
                } else {
                    (xp - xm) / (2.0 * h)
                };
                let src = self.sources[j - 1][i];
                let sign = if i == GLY { -1.0 } else { 1.0 };
                dy[4 * (j - 1) + i] = diff - u * grad + sign * src;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::relative_l2;

    #[test]
    fn kinetics_derivatives_match_finite_differences() {
        let p = PackedBedParams::default();
        for &(g, s) in &[(0.5, 0.0), (20.0, 10.0), (80.0, 40.0), (3.0, 44.0)] {
            let k = kinetics(&p, g, s);
            let d = 1e-6;
            let kg = (kinetics(&p, g + d, s).r, kinetics(&p, g - d, s).r);
            let ks = (kinetics(&p, g, s + d).r, kinetics(&p, g, s - d).r);
            for i in 0..2 {
                let fg = (kg.0[i] - kg.1[i]) / (2.0 * d);
                let fs = (ks.0[i] - ks.1[i]) / (2.0 * d);
                assert!((fg - k.dr[i][0]).abs() < 1e-6, "{g},{s} d/dg {i}");
                assert!((fs - k.dr[i][1]).abs() < 1e-6, "{g},{s} d/ds {i}");
            }
        }
    }

    #[test]
    fn no_reaction_gives_uniform_profile() {
        let mut cfg = PlantConfig::packed_bed();
        cfg.set_param("X_cons", 0.0).unwrap();
        let bulk = [40.0, 5.0, 1.0, 2.0];
        let b = solve_bead_profile(bulk, &cfg, &ParameterDraw::default()).unwrap();
        for i in 0..4 {
            assert!(b.profiles[i].iter().all(|&v| (v - bulk[i]).abs() < 1e-9), "species {i}");
            assert_eq!(b.r_tot[i], 0.0);
        }
    }

    #[test]
    fn inhibition_limit_leaves_maintenance_rates() {
        let cfg = PlantConfig::packed_bed();
        let p = PackedBedParams::default();
        let k = kinetics(&p, 50.0, p.sa_star);
        let gate = 50.0 / (50.0 + p.substrate_gate);
        assert!((k.r[GLY] - p.beta_gly * gate * p.x_cons).abs() < 1e-15);
        assert!((k.r[SA] - p.beta_sa * gate * p.x_cons).abs() < 1e-15);
        let b = solve_bead_profile([50.0, p.sa_star, 0.0, 0.0], &cfg, &ParameterDraw::default()).unwrap();
        assert!(b.r_tot.iter().all(|&r| r > 0.0));
    }

    #[test]
    fn nominal_bead_signs_and_conservation() {
        let cfg = PlantConfig::packed_bed();
        let b = solve_bead_profile([50.0, 0.0, 0.0, 0.0], &cfg, &ParameterDraw::default()).unwrap();
        assert!(b.r_tot.iter().all(|&r| r > 0.0));
        // Glycerol decreases towards the centre, products accumulate there.
        assert!(b.profiles[GLY][0] < 50.0);
        assert!(b.profiles[SA][0] > 0.0 && b.profiles[AA][0] > 0.0 && b.profiles[FA][0] > 0.0);
        // Surface flux balances the integrated consumption: 3 D' x'(R) / R.
        let p = PackedBedParams::default();
        let n = b.radii.len();
        let dr = b.radii[1];
        let slope = (3.0 * b.profiles[GLY][n - 1] - 4.0 * b.profiles[GLY][n - 2] + b.profiles[GLY][n - 3]) / (2.0 * dr);
        let flux = 3.0 * p.d_bead[GLY] * slope / p.radius * p.rho_bead * (1.0 - p.eps);
        assert!((flux - b.r_tot[GLY]).abs() < 0.02 * b.r_tot[GLY], "{flux} vs {}", b.r_tot[GLY]);
    }

    #[test]
    fn bead_profile_grid_refinement() {
        let cfg = PlantConfig::packed_bed();
        let mut fine = cfg.clone();
        fine.bead_nodes = 4 * (cfg.bead_nodes - 1) + 1;
        let bulk = [50.0, 0.0, 0.0, 0.0];
        let draw = ParameterDraw::default();
        let a = solve_bead_profile(bulk, &cfg, &draw).unwrap();
        let b = solve_bead_profile(bulk, &fine, &draw).unwrap();
        for i in 0..4 {
            let sub: Vec<f64> = b.profiles[i].iter().step_by(4).copied().collect();
            assert!(relative_l2(&a.profiles[i], &sub) < 0.005, "species {i}");
            // Deviation from the surface value is the meaningful part of the profile.
            let da: Vec<f64> = a.profiles[i].iter().map(|v| v - bulk[i]).collect();
            let db: Vec<f64> = sub.iter().map(|v| v - bulk[i]).collect();
            assert!(relative_l2(&da, &db) < 0.01, "species {i} deviation");
        }
    }

    #[test]
    fn bead_argument_errors() {
        let cfg = PlantConfig::packed_bed();
        assert!(solve_bead_profile([-1.0, 0.0, 0.0, 0.0], &cfg, &ParameterDraw::default()).is_err());
        assert!(solve_bead_profile([1.0; 4], &PlantConfig::tubular(), &ParameterDraw::default()).is_err());
    }
}
