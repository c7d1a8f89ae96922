//! Dense space-time arrays laid out as `[time step × field × spatial node]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldShape {
    pub times: usize,
    pub fields: usize,
    pub nodes: usize,
}

impl FieldShape {
    pub fn new(times: usize, fields: usize, nodes: usize) -> Self {
        FieldShape { times, fields, nodes }
    }

    pub fn len(&self) -> usize {
        self.times * self.fields * self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, t: usize, f: usize, n: usize) -> usize {
        (t * self.fields + f) * self.nodes + n
    }

    /// Number of entries in one time slice.
    pub fn slice_len(&self) -> usize {
        self.fields * self.nodes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldArray {
    pub shape: FieldShape,
    pub data: Vec<f64>,
}

impl FieldArray {
    pub fn zeros(shape: FieldShape) -> Self {
        FieldArray { shape, data: vec![0.0; shape.len()] }
    }

    pub fn from_vec(shape: FieldShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                context: "field array data",
                expected: shape.len(),
                got: data.len(),
            });
        }
        Ok(FieldArray { shape, data })
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize, n: usize) -> f64 {
        self.data[self.shape.index(t, f, n)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, f: usize, n: usize, v: f64) {
        let i = self.shape.index(t, f, n);
        self.data[i] = v;
    }

    /// Spatial profile of field `f` at time step `t`.
    pub fn profile(&self, t: usize, f: usize) -> &[f64] {
        let start = self.shape.index(t, f, 0);
        &self.data[start..start + self.shape.nodes]
    }

    pub fn profile_mut(&mut self, t: usize, f: usize) -> &mut [f64] {
        let start = self.shape.index(t, f, 0);
        let n = self.shape.nodes;
        &mut self.data[start..start + n]
    }

    /// Time series of a single node.
    pub fn series(&self, f: usize, n: usize) -> Vec<f64> {
        (0..self.shape.times).map(|t| self.get(t, f, n)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Relative L2 distance `‖a − b‖ / ‖b‖` (absolute when `b` is zero).
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
