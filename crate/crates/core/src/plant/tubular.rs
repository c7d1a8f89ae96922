//! Exothermic tubular reactor: conversion `C` and temperature `T` on a
//! uniform grid with Robin inlet and zero-gradient outlet conditions.

use super::blocktri::BlockTridiag;
use super::integrate::{LinearizedSystem, OdeSystem};
use super::TubularParams;
use crate::error::Result;

pub(crate) struct TubularModel {
    p: TubularParams,
    m: usize,
    h: f64,
    tw: f64,
}

impl TubularModel {
    pub(crate) fn new(p: TubularParams, m: usize) -> Self {
        TubularModel {
            p,
            m,
            h: 1.0 / (m - 1) as f64,
            tw: 0.0,
        }
    }

    pub(crate) fn set_control(&mut self, tw: f64) {
        self.tw = tw;
    }

    fn interior(&self) -> usize {
        self.m - 2
    }

    /// Boundary values from the one-sided second-order stencils; needs at
    /// least two interior nodes.
    fn boundaries(&self, y: &[f64]) -> [f64; 4] {
        let n = self.interior();
        let (c1, t1, c2, t2) = (y[0], y[1], y[2], y[3]);
        let (cl, tl, cl2, tl2) = (y[2 * n - 2], y[2 * n - 1], y[2 * n - 4], y[2 * n - 3]);
        [
            (4.0 * c1 - c2) / (3.0 + 2.0 * self.h * self.p.pe1),
            (4.0 * t1 - t2) / (3.0 + 2.0 * self.h * self.p.pe2),
            (4.0 * cl - cl2) / 3.0,
            (4.0 * tl - tl2) / 3.0,
        ]
    }

    /// Full `[C profile, T profile]` including boundary nodes.
    pub(crate) fn full_profile(&self, y: &[f64]) -> Vec<f64> {
        let m = self.m;
        let n = self.interior();
        let [c0, t0, cn, tn] = self.boundaries(y);
        let mut out = vec![0.0; 2 * m];
        out[0] = c0;
        out[m] = t0;
        out[m - 1] = cn;
        out[2 * m - 1] = tn;
        for j in 0..n {
            out[1 + j] = y[2 * j];
            out[m + 1 + j] = y[2 * j + 1];
        }
        out
    }

    #[inline]
    fn arrhenius(&self, t: f64) -> (f64, f64) {
        let d = 1.0 + t / self.p.gamma;
        let e = (t / d).exp();
        (e, e / (d * d))
    }
}

impl OdeSystem for TubularModel {
    fn dim(&self) -> usize {
        2 * self.interior()
    }

    fn rhs(&mut self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.interior();
        let p = &self.p;
        let h = self.h;
        let [c0, t0, cn, tn] = self.boundaries(y);
        let (dc, dt) = (1.0 / (p.pe1 * h * h), 1.0 / (p.le * p.pe2 * h * h));
        let conv = 0.5 / h;
        for j in 0..n {
            let (c, t) = (y[2 * j], y[2 * j + 1]);
            let (cm, tm) = if j == 0 { (c0, t0) } else { (y[2 * j - 2], y[2 * j - 1]) };
            let (cp, tp) = if j + 1 == n { (cn, tn) } else { (y[2 * j + 2], y[2 * j + 3]) };
            let (e, _) = self.arrhenius(t);
            let r = p.da * (1.0 - c) * e;
            dy[2 * j] = dc * (cp - 2.0 * c + cm) - conv * (cp - cm) + r;
            dy[2 * j + 1] = dt * (tp - 2.0 * t + tm) - conv * (tp - tm) / p.le - p.beta / p.le * t
                + p.b * r
                + p.beta / p.le * self.tw;
        }
        Ok(())
    }
}

impl LinearizedSystem for TubularModel {
    fn jacobian(&mut self, y: &[f64], jac: &mut BlockTridiag) -> Result<()> {
        let n = self.interior();
        let p = &self.p;
        let h = self.h;
        let (dc, dt) = (1.0 / (p.pe1 * h * h), 1.0 / (p.le * p.pe2 * h * h));
        let conv = 0.5 / h;
        // Couplings to the left/right neighbour per field.
        let (lc, rc) = (dc + conv, dc - conv);
        let (lt, rt) = (dt + conv / p.le, dt - conv / p.le);
        for j in 0..n {
            let (c, t) = (y[2 * j], y[2 * j + 1]);
            let (e, de) = self.arrhenius(t);
            jac.diag[j] = [
                [-2.0 * dc - p.da * e, p.da * (1.0 - c) * de],
                [-p.b * p.da * e, -2.0 * dt - p.beta / p.le + p.b * p.da * (1.0 - c) * de],
            ];
            jac.lower[j] = [[lc, 0.0], [0.0, lt]];
            jac.upper[j] = [[rc, 0.0], [0.0, rt]];
        }
        jac.lower[0] = super::blocktri::ZERO;
        jac.upper[n - 1] = super::blocktri::ZERO;
        // Eliminated boundary nodes feed back into the first and last rows.
        let ac = 1.0 / (3.0 + 2.0 * h * p.pe1);
        let at = 1.0 / (3.0 + 2.0 * h * p.pe2);
        jac.diag[0][0][0] += lc * 4.0 * ac;
        jac.diag[0][1][1] += lt * 4.0 * at;
        jac.upper[0][0][0] -= lc * ac;
        jac.upper[0][1][1] -= lt * at;
        jac.diag[n - 1][0][0] += rc * 4.0 / 3.0;
        jac.diag[n - 1][1][1] += rt * 4.0 / 3.0;
        jac.lower[n - 1][0][0] -= rc / 3.0;
        jac.lower[n - 1][1][1] -= rt / 3.0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_matches_finite_differences() {
        for m in [4usize, 5, 9] {
            let mut model = TubularModel::new(TubularParams::default(), m);
            model.set_control(1.3);
            let n = model.dim();
            let y: Vec<f64> = (0..n).map(|i| 0.1 + 0.37 * ((i as f64) * 1.3).sin().abs()).collect();
            let mut jac = BlockTridiag::zeros(n / 2);
            model.jacobian(&y, &mut jac).unwrap();
            let mut f0 = vec![0.0; n];
            model.rhs(&y, &mut f0).unwrap();
            for col in 0..n {
                let mut e = vec![0.0; n];
                e[col] = 1.0;
                let jcol = jac.mul_vec(&e);
                let mut yp = y.clone();
                let mut ym = y.clone();
                let d = 1e-6;
                yp[col] += d;
                ym[col] -= d;
                let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
                model.rhs(&yp, &mut fp).unwrap();
                model.rhs(&ym, &mut fm).unwrap();
                for row in 0..n {
                    let fd = (fp[row] - fm[row]) / (2.0 * d);
                    assert!(
                        (fd - jcol[row]).abs() < 1e-5 * (1.0 + fd.abs()),
                        "m={m} ({row},{col}): fd {fd} vs {}",
                        jcol[row]
                    );
                }
            }
        }
    }
}
