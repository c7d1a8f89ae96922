//! Adaptive time integrators used between reporting times.

use super::blocktri::BlockTridiag;
use crate::error::{Error, Result};

/// Autonomous right-hand side `dy/dt = f(y)`; controls are frozen within a
/// reporting interval, so every plant is autonomous between report times.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&mut self, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

/// System whose Jacobian is block-tridiagonal with interleaved 2×2 blocks.
pub trait LinearizedSystem: OdeSystem {
    fn jacobian(&mut self, y: &[f64], jac: &mut BlockTridiag) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl IntegrationStats {
    pub fn add(&mut self, other: IntegrationStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.rhs_evals += other.rhs_evals;
    }
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], ctl: &StepControl) -> f64 {
    let n = err.len().max(1) as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = ctl.atol + ctl.rtol * a.abs().max(b.abs());
            (e / sc) * (e / sc)
        })
        .sum();
    (s / n).sqrt()
}

fn check_finite(v: &[f64], t: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration {
            time: t,
            reason: "non-finite state".into(),
        })
    }
}

const MIN_STEP_FRACTION: f64 = 1e-12;

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Dormand–Prince 5(4) from `t0` to `t1`. `h` carries the step size between
/// calls.
pub fn dopri5<S: OdeSystem>(
    sys: &mut S,
    y: &mut [f64],
    t0: f64,
    t1: f64,
    ctl: &StepControl,
    h: &mut f64,
) -> Result<IntegrationStats> {
    let n = sys.dim();
    let mut stats = IntegrationStats::default();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut err = vec![0.0; n];
    let span = t1 - t0;
    let mut t = t0;
    if !(*h > 0.0) {
        *h = (0.01 * span).min(ctl.max_step);
    }
    sys.rhs(y, &mut k[0])?;
    stats.rhs_evals += 1;
    while t < t1 {
        let mut step = h.min(ctl.max_step).min(t1 - t);
        let last = t + step >= t1 - 1e-12 * span;
        if last {
            step = t1 - t;
        }
        for s in 0..6 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s + 1) {
                    acc += step * A[s][j] * kj[i];
                }
                tmp[i] = acc;
            }
            if s == 5 {
                ynew.copy_from_slice(&tmp);
            }
            sys.rhs(&tmp, &mut k[s + 1])?;
            stats.rhs_evals += 1;
        }
        for i in 0..n {
            err[i] = step * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
        }
        let en = error_norm(&err, y, &ynew, ctl);
        if !en.is_finite() {
            stats.rejected += 1;
            *h = step * 0.2;
        } else if en <= 1.0 {
            y.copy_from_slice(&ynew);
            t = if last { t1 } else { t + step };
            k.swap(0, 6);
            stats.accepted += 1;
            let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
            // A final step truncated at t1 should not shrink the next interval's step.
            let proposal = (step * fac).min(ctl.max_step);
            *h = if last { proposal.max(*h) } else { proposal };
            continue;
        } else {
            stats.rejected += 1;
            *h = step * (0.9 * en.powf(-0.2)).clamp(0.2, 1.0);
        }
        if *h < MIN_STEP_FRACTION * span.max(1.0) {
            return Err(Error::Integration {
                time: t,
                reason: format!("step size underflow ({:e})", *h),
            });
        }
    }
    check_finite(y, t1)?;
    Ok(stats)
}

/// Two-stage L-stable linearly implicit Rosenbrock method of order 2 with an
/// embedded first-order error estimate; the Jacobian is refreshed every step.
pub fn ros2<S: LinearizedSystem>(
    sys: &mut S,
    y: &mut [f64],
    t0: f64,
    t1: f64,
    ctl: &StepControl,
    h: &mut f64,
) -> Result<IntegrationStats> {
    let gamma = 1.0 + 1.0 / std::f64::consts::SQRT_2;
    let n = sys.dim();
    let mut stats = IntegrationStats::default();
    let mut jac = BlockTridiag::zeros(n / 2);
    let mut f0 = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut err = vec![0.0; n];
    let span = t1 - t0;
    let mut t = t0;
    if !(*h > 0.0) {
        *h = (0.01 * span).min(ctl.max_step);
    }
    let mut fresh = true;
    while t < t1 {
        if fresh {
            sys.jacobian(y, &mut jac)?;
            sys.rhs(y, &mut f0)?;
            stats.rhs_evals += 1;
            fresh = false;
        }
        let mut step = h.min(ctl.max_step).min(t1 - t);
        let last = t + step >= t1 - 1e-12 * span;
        if last {
            step = t1 - t;
        }
        let m = jac.shifted_identity(gamma * step);
        k1.copy_from_slice(&f0);
        let solved = m.solve(&mut k1).and_then(|_| {
            for i in 0..n {
                tmp[i] = y[i] + step * k1[i];
            }
            sys.rhs(&tmp, &mut k2)
        });
        stats.rhs_evals += 1;
        let en = match solved {
            Ok(()) => {
                for i in 0..n {
                    k2[i] -= 2.0 * k1[i];
                }
                m.solve(&mut k2)?;
                for i in 0..n {
                    ynew[i] = y[i] + step * (1.5 * k1[i] + 0.5 * k2[i]);
                    err[i] = 0.5 * step * (k1[i] + k2[i]);
                }
                // The first-order embedded solution is not L-stable; filtering
                // the estimate through the iteration matrix stops stiff,
                // already-decayed modes from dictating the step size.
                m.solve(&mut err)?;
                error_norm(&err, y, &ynew, ctl)
            }
            Err(Error::NonFiniteEvaluation { .. }) | Err(Error::Degenerate(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if en.is_finite() && en <= 1.0 {
            y.copy_from_slice(&ynew);
            t = if last { t1 } else { t + step };
            stats.accepted += 1;
            fresh = true;
            let fac = if en == 0.0 { 4.0 } else { (0.9 / en.sqrt()).clamp(0.2, 4.0) };
            *h = (step * fac).min(ctl.max_step);
            if last {
                *h = h.max(step);
            }
        } else {
            stats.rejected += 1;
            let fac = if en.is_finite() { (0.9 / en.sqrt()).clamp(0.1, 0.9) } else { 0.2 };
            *h = step * fac;
            if *h < MIN_STEP_FRACTION * span.max(1.0) {
                return Err(Error::Integration {
                    time: t,
                    reason: format!("step size underflow ({:e})", *h),
                });
            }
        }
    }
    check_finite(y, t1)?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two decoupled linear oscillators plus decay, interleaved as 2×2 blocks.
    struct Linear {
        rate: f64,
    }

    impl OdeSystem for Linear {
        fn dim(&self) -> usize {
            4
        }
        fn rhs(&mut self, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[1];
            dy[1] = -y[0];
            dy[2] = -self.rate * y[2];
            dy[3] = -self.rate * (y[3] - y[2]);
            Ok(())
        }
    }

    impl LinearizedSystem for Linear {
        fn jacobian(&mut self, _y: &[f64], jac: &mut BlockTridiag) -> Result<()> {
            jac.diag[0] = [[0.0, 1.0], [-1.0, 0.0]];
            jac.diag[1] = [[-self.rate, 0.0], [self.rate, -self.rate]];
            Ok(())
        }
    }

    fn exact(t: f64, rate: f64) -> [f64; 4] {
        let e = (-rate * t).exp();
        [t.cos(), -t.sin(), e, e * (1.0 + rate * t)]
    }

    #[test]
    fn dopri5_matches_closed_form() {
        let ctl = StepControl { rtol: 1e-10, atol: 1e-12, max_step: 0.5 };
        let mut y = [1.0, 0.0, 1.0, 1.0];
        let mut h = 0.0;
        let mut sys = Linear { rate: 0.7 };
        for i in 0..10 {
            dopri5(&mut sys, &mut y, i as f64, i as f64 + 1.0, &ctl, &mut h).unwrap();
        }
        let e = exact(10.0, 0.7);
        for i in 0..4 {
            assert!((y[i] - e[i]).abs() < 1e-8, "{i}: {} vs {}", y[i], e[i]);
        }
    }

    #[test]
    fn ros2_handles_stiff_decay() {
        let ctl = StepControl { rtol: 1e-4, atol: 1e-7, max_step: 0.1 };
        let mut y = [1.0, 0.0, 1.0, 1.0];
        let mut h = 0.0;
        let mut sys = Linear { rate: 1e4 };
        let stats = ros2(&mut sys, &mut y, 0.0, 2.0, &ctl, &mut h).unwrap();
        // An explicit method would need ~1e4 steps for stability alone.
        assert!(stats.accepted < 1500, "{stats:?}");
        let e = exact(2.0, 1e4);
        for i in 0..4 {
            assert!((y[i] - e[i]).abs() < 1e-3, "{i}: {} vs {}", y[i], e[i]);
        }
    }

    #[test]
    fn ros2_converges_at_second_order() {
        let run = |rtol: f64| {
            let ctl = StepControl { rtol, atol: rtol * 1e-2, max_step: 1.0 };
            let mut y = [1.0, 0.0, 1.0, 1.0];
            let mut h = 0.0;
            ros2(&mut Linear { rate: 2.0 }, &mut y, 0.0, 3.0, &ctl, &mut h).unwrap();
            let e = exact(3.0, 2.0);
            (0..4).map(|i| (y[i] - e[i]).abs()).fold(0.0, f64::max)
        };
        assert!(run(1e-8) < 1e-5);
        assert!(run(1e-8) < run(1e-5));
    }

    struct Blowup;
    impl OdeSystem for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&mut self, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[0] * y[0];
            Ok(())
        }
    }

    #[test]
    fn finite_time_blowup_is_reported_with_time() {
        let ctl = StepControl { rtol: 1e-8, atol: 1e-10, max_step: 0.1 };
        let mut y = [1.0];
        let mut h = 0.0;
        match dopri5(&mut Blowup, &mut y, 0.0, 2.0, &ctl, &mut h) {
            Err(Error::Integration { time, .. }) => assert!(time > 0.9 && time <= 1.001, "{time}"),
            other => panic!("expected integration error, got {other:?}"),
        }
    }
}
