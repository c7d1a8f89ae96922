//! Block-tridiagonal systems with 2×2 blocks.

use crate::error::{Error, Result};

pub type Block = [[f64; 2]; 2];

pub const ZERO: Block = [[0.0; 2]; 2];

/// `lower[i]` couples row block `i` to block `i-1`, `upper[i]` to block `i+1`.
#[derive(Debug, Clone)]
pub struct BlockTridiag {
    pub lower: Vec<Block>,
    pub diag: Vec<Block>,
    pub upper: Vec<Block>,
}

impl BlockTridiag {
    pub fn zeros(n: usize) -> Self {
        BlockTridiag {
            lower: vec![ZERO; n],
            diag: vec![ZERO; n],
            upper: vec![ZERO; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `I - s·self`.
    pub fn shifted_identity(&self, s: f64) -> BlockTridiag {
        let scale = |b: &Block| [[-s * b[0][0], -s * b[0][1]], [-s * b[1][0], -s * b[1][1]]];
        let mut diag: Vec<Block> = self.diag.iter().map(scale).collect();
        for d in diag.iter_mut() {
            d[0][0] += 1.0;
            d[1][1] += 1.0;
        }
        BlockTridiag {
            lower: self.lower.iter().map(scale).collect(),
            diag,
            upper: self.upper.iter().map(scale).collect(),
        }
    }

    /// `y = self · x` with `x` interleaved per block.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; 2 * n];
        for i in 0..n {
            let mut acc = mv(&self.diag[i], [x[2 * i], x[2 * i + 1]]);
            if i > 0 {
                let l = mv(&self.lower[i], [x[2 * i - 2], x[2 * i - 1]]);
                acc = [acc[0] + l[0], acc[1] + l[1]];
            }
            if i + 1 < n {
                let u = mv(&self.upper[i], [x[2 * i + 2], x[2 * i + 3]]);
                acc = [acc[0] + u[0], acc[1] + u[1]];
            }
            y[2 * i] = acc[0];
            y[2 * i + 1] = acc[1];
        }
        y
    }

    /// Block Thomas elimination; `rhs` is overwritten with the solution.
    pub fn solve(&self, rhs: &mut [f64]) -> Result<()> {
        self.solve_with(rhs, &mut Vec::new())
    }

    /// As [`BlockTridiag::solve`], reusing `work` for the eliminated upper blocks.
    pub fn solve_with(&self, rhs: &mut [f64], work: &mut Vec<Block>) -> Result<()> {
        let n = self.len();
        work.clear();
        for i in 0..n {
            let mut d = self.diag[i];
            let mut r = [rhs[2 * i], rhs[2 * i + 1]];
            if i > 0 {
                let l = self.lower[i];
                d = sub(&d, &mm(&l, &work[i - 1]));
                let prev = mv(&l, [rhs[2 * i - 2], rhs[2 * i - 1]]);
                r = [r[0] - prev[0], r[1] - prev[1]];
            }
            let inv = inverse(&d)?;
            work.push(mm(&inv, &self.upper[i]));
            let sol = mv(&inv, r);
            rhs[2 * i] = sol[0];
            rhs[2 * i + 1] = sol[1];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            let c = mv(&work[i], [rhs[2 * i + 2], rhs[2 * i + 3]]);
            rhs[2 * i] -= c[0];
            rhs[2 * i + 1] -= c[1];
        }
        Ok(())
    }
}

#[inline]
fn mv(a: &Block, x: [f64; 2]) -> [f64; 2] {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

#[inline]
fn mm(a: &Block, b: &Block) -> Block {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

#[inline]
fn sub(a: &Block, b: &Block) -> Block {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

fn inverse(a: &Block) -> Result<Block> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(det.abs() > 1e-300 && det.abs() > 1e-14 * scale * scale) {
        return Err(Error::Degenerate("singular block in block-tridiagonal solve".into()));
    }
    Ok([[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn solve_inverts_multiplication(
            n in 1usize..12,
            vals in proptest::collection::vec(-1.0f64..1.0, 12 * 12 + 24),
        ) {
            let mut m = BlockTridiag::zeros(n);
            let mut it = vals.iter().copied();
            for i in 0..n {
                for r in 0..2 {
                    for c in 0..2 {
                        m.lower[i][r][c] = if i > 0 { it.next().unwrap() } else { 0.0 };
                        m.upper[i][r][c] = if i + 1 < n { it.next().unwrap() } else { 0.0 };
                        // Diagonal dominance keeps the test systems well conditioned.
                        m.diag[i][r][c] = it.next().unwrap() + if r == c { 6.0 } else { 0.0 };
                    }
                }
            }
            let x: Vec<f64> = (0..2 * n).map(|i| (i as f64 * 0.7).sin()).collect();
            let mut b = m.mul_vec(&x);
            m.solve(&mut b).unwrap();
            for (a, e) in b.iter().zip(&x) {
                prop_assert!((a - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_block_is_reported() {
        let m = BlockTridiag::zeros(2);
        assert!(m.solve(&mut [1.0; 4]).is_err());
    }
}
