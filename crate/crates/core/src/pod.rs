//! Proper orthogonal decomposition of snapshot matrices.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};

/// Snapshots stored column-wise: `[spatial DOF × snapshot]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub data: DMatrix<f64>,
    pub field_id: String,
}

impl SnapshotMatrix {
    pub fn from_columns(field_id: impl Into<String>, columns: &[Vec<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidArgument("snapshot set is empty".into()));
        }
        let rows = columns[0].len();
        for c in columns {
            check_dim("snapshot length", rows, c.len())?;
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("snapshot contains non-finite entries".into()));
            }
        }
        let data = DMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i]);
        Ok(SnapshotMatrix {
            data,
            field_id: field_id.into(),
        })
    }

    pub fn dof(&self) -> usize {
        self.data.nrows()
    }

    pub fn count(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    /// `[mode × spatial DOF]`, orthonormal rows.
    pub modes: DMatrix<f64>,
    /// All singular values of the snapshot matrix, nonincreasing.
    pub singular_values: Vec<f64>,
    /// Cumulative squared-singular-value ratio, one entry per singular value.
    pub energy_fraction: Vec<f64>,
    pub field_id: String,
}

impl PodBasis {
    pub fn mode_count(&self) -> usize {
        self.modes.nrows()
    }

    pub fn dof(&self) -> usize {
        self.modes.ncols()
    }

    /// Energy captured by the retained modes.
    pub fn captured_energy(&self) -> f64 {
        self.energy_fraction[self.mode_count() - 1]
    }

    pub fn project(&self, field: &[f64]) -> Result<Vec<f64>> {
        check_dim("POD projection input", self.dof(), field.len())?;
        Ok((0..self.mode_count())
            .map(|i| self.modes.row(i).iter().zip(field).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn reconstruct(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim("POD reduced vector", self.mode_count(), u.len())?;
        let mut out = vec![0.0; self.dof()];
        for (i, &ui) in u.iter().enumerate() {
            for (o, m) in out.iter_mut().zip(self.modes.row(i).iter()) {
                *o += ui * m;
            }
        }
        Ok(out)
    }

    /// Relative Frobenius error predicted by the discarded singular values.
    pub fn truncation_error(&self) -> f64 {
        (1.0 - self.captured_energy()).max(0.0).sqrt()
    }

    /// Mode table with header `mode_index,node_index,value`.
    pub fn modes_csv(&self) -> String {
        let mut s = String::from("mode_index,node_index,value\n");
        for i in 0..self.mode_count() {
            for j in 0..self.dof() {
                let _ = writeln!(s, "{i},{j},{}", self.modes[(i, j)]);
            }
        }
        s
    }

    /// Singular-value sidecar with header `index,singular_value,energy_fraction`.
    pub fn singular_values_csv(&self) -> String {
        let mut s = String::from("index,singular_value,energy_fraction\n");
        for (i, (sv, e)) in self.singular_values.iter().zip(&self.energy_fraction).enumerate() {
            let _ = writeln!(s, "{i},{sv},{e}");
        }
        s
    }

    pub fn from_csv(field_id: &str, modes_csv: &str, sv_csv: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for rec in csv::Reader::from_reader(modes_csv.as_bytes()).records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let i: usize = parse_field(&rec, 0)?;
            let j: usize = parse_field(&rec, 1)?;
            let v: f64 = parse_field(&rec, 2)?;
            entries.push((i, j, v));
        }
        let mut sv = Vec::new();
        let mut ef = Vec::new();
        for rec in csv::Reader::from_reader(sv_csv.as_bytes()).records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            sv.push(parse_field::<f64>(&rec, 1)?);
            ef.push(parse_field::<f64>(&rec, 2)?);
        }
        let rows = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
        let cols = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        if rows == 0 || entries.len() != rows * cols || sv.len() < rows {
            return Err(Error::Parse(format!("incomplete POD basis for '{field_id}'")));
        }
        let mut modes = DMatrix::zeros(rows, cols);
        for (i, j, v) in entries {
            modes[(i, j)] = v;
        }
        Ok(PodBasis {
            modes,
            singular_values: sv,
            energy_fraction: ef,
            field_id: field_id.to_string(),
        })
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let s = rec.get(i).ok_or_else(|| Error::Parse(format!("missing column {i}")))?;
    s.trim().parse().map_err(|_| Error::Parse(format!("cannot parse '{s}'")))
}

/// Dominant left singular directions capturing at least `energy_threshold` of
/// the squared singular-value mass.
pub fn compute_pod_basis(snapshots: &SnapshotMatrix, energy_threshold: f64) -> Result<PodBasis> {
    if !(energy_threshold > 0.0 && energy_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "energy threshold must lie in (0, 1], got {energy_threshold}"
        )));
    }
    if snapshots.count() < 2 {
        return Err(Error::InvalidArgument("POD needs at least 2 snapshots".into()));
    }
    if snapshots.data.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate(format!("snapshots of '{}' are all zero", snapshots.field_id)));
    }
    let svd = snapshots.data.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    let energy_fraction: Vec<f64> = singular_values
        .iter()
        .map(|s| {
            acc += s * s;
            (acc / total).min(1.0)
        })
        .collect();
    // Tolerate round-off in the cumulative sum when the threshold is exactly 1.
    let a = energy_fraction
        .iter()
        .position(|&e| e >= energy_threshold - 1e-12)
        .unwrap_or(energy_fraction.len() - 1)
        + 1;
    let dof = snapshots.dof();
    let mut modes = DMatrix::zeros(a, dof);
    for (r, &c) in order.iter().take(a).enumerate() {
        let col = u.column(c);
        // Deterministic sign: largest-magnitude entry positive.
        let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..dof {
            modes[(r, j)] = sign * col[j];
        }
    }
    Ok(PodBasis {
        modes,
        singular_values,
        energy_fraction,
        field_id: snapshots.field_id.clone(),
    })
}

pub fn project(basis: &PodBasis, field: &[f64]) -> Result<Vec<f64>> {
    basis.project(field)
}

pub fn reconstruct(basis: &PodBasis, u: &[f64]) -> Result<Vec<f64>> {
    basis.reconstruct(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn rank_one_snapshots() {
        let s = vec![1.0, 2.0, -2.0];
        let snaps = SnapshotMatrix::from_columns("x", &[s.clone(), s.clone(), s.clone()]).unwrap();
        let b = compute_pod_basis(&snaps, 0.998).unwrap();
        assert_eq!(b.mode_count(), 1);
        assert!((b.captured_energy() - 1.0).abs() < 1e-14);
        for j in 0..3 {
            assert!((b.modes[(0, j)].abs() - s[j].abs() / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_two_snapshots() {
        let e1 = [1.0, 0.0, 0.0, 0.0];
        let e2 = [0.0, 0.6, 0.8, 0.0];
        let cols: Vec<Vec<f64>> = (0..6)
            .map(|k| {
                let (a, b) = (3.0 * (k as f64 + 1.0), (k as f64 - 2.5));
                (0..4).map(|i| a * e1[i] + b * e2[i]).collect()
            })
            .collect();
        let snaps = SnapshotMatrix::from_columns("x", &cols).unwrap();
        let b = compute_pod_basis(&snaps, 1.0).unwrap();
        assert_eq!(b.mode_count(), 2);
        let gram = &b.modes * b.modes.transpose();
        assert!((gram - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-12);
        for c in &cols {
            let r = b.reconstruct(&b.project(c).unwrap()).unwrap();
            assert!(r.iter().zip(c).all(|(x, y)| (x - y).abs() < 1e-10));
        }
        assert!(b.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn projection_examples() {
        let cols = vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![1.0, 1.0, 0.0]];
        let b = compute_pod_basis(&SnapshotMatrix::from_columns("x", &cols).unwrap(), 1.0).unwrap();
        let m0: Vec<f64> = b.modes.row(0).iter().map(|v| 5.0 * v).collect();
        let u = b.project(&m0).unwrap();
        assert!((u[0] - 5.0).abs() < 1e-12 && u[1].abs() < 1e-12);
        assert!(b.project(&[0.0; 3]).unwrap().iter().all(|&v| v == 0.0));
        assert!(b.reconstruct(&[0.0, 0.0]).unwrap().iter().all(|&v| v == 0.0));
        assert!(b.project(&[1.0]).is_err());
        assert!(b.reconstruct(&[1.0]).is_err());
    }

    #[test]
    fn argument_errors() {
        let z = SnapshotMatrix::from_columns("z", &[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        assert!(matches!(compute_pod_basis(&z, 0.9), Err(Error::Degenerate(_))));
        let one = SnapshotMatrix::from_columns("o", &[vec![1.0; 3]]).unwrap();
        assert!(compute_pod_basis(&one, 0.9).is_err());
        let two = SnapshotMatrix::from_columns("t", &[vec![1.0; 3], vec![2.0; 3]]).unwrap();
        assert!(compute_pod_basis(&two, 0.0).is_err());
        assert!(compute_pod_basis(&two, 1.5).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let cols: Vec<Vec<f64>> = (0..5).map(|k| (0..7).map(|i| ((i * k) as f64).sin() + 0.1).collect()).collect();
        let b = compute_pod_basis(&SnapshotMatrix::from_columns("f", &cols).unwrap(), 0.99).unwrap();
        let back = PodBasis::from_csv("f", &b.modes_csv(), &b.singular_values_csv()).unwrap();
        assert_eq!(back, b);
    }

    proptest! {
        #[test]
        fn eckart_young_and_projector_identities(
            data in proptest::collection::vec(-10.0f64..10.0, 8 * 6),
            threshold in 0.5f64..1.0,
        ) {
            let cols: Vec<Vec<f64>> = data.chunks(8).map(|c| c.to_vec()).collect();
            prop_assume!(data.iter().any(|&v| v != 0.0));
            let snaps = SnapshotMatrix::from_columns("p", &cols).unwrap();
            let b = compute_pod_basis(&snaps, threshold).unwrap();
            prop_assert!(b.captured_energy() >= threshold - 1e-12);
            let gram = &b.modes * b.modes.transpose();
            prop_assert!((gram - DMatrix::<f64>::identity(b.mode_count(), b.mode_count())).abs().max() < 1e-10);
            let mut err2 = 0.0;
            let mut tot2 = 0.0;
            for c in &cols {
                let u = b.project(c).unwrap();
                prop_assert!(norm(&u) <= norm(c) * (1.0 + 1e-12));
                let r = b.reconstruct(&u).unwrap();
                let u2 = b.project(&r).unwrap();
                prop_assert!(u.iter().zip(&u2).all(|(x, y)| (x - y).abs() < 1e-10));
                let rr = b.reconstruct(&u2).unwrap();
                prop_assert!(r.iter().zip(&rr).all(|(x, y)| (x - y).abs() < 1e-10));
                err2 += c.iter().zip(&r).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
                tot2 += c.iter().map(|x| x * x).sum::<f64>();
            }
            let discarded: f64 = b.singular_values[b.mode_count()..].iter().map(|s| s * s).sum();
            let total: f64 = b.singular_values.iter().map(|s| s * s).sum();
            prop_assert!(((err2 / tot2).sqrt() - (discarded / total).sqrt()).abs() < 1e-8);
        }
    }
}
