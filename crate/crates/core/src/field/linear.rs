use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{Field, FieldKind};
use crate::error::invalid;
use crate::Result;

/// Time-independent linear field `f(x, t) = A x`.
///
/// Used for closed-form checks (scalar products of `1 + a·dt`) and for the
/// linear-quadratic benchmark where the optimum is known from a Riccati sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLinear")]
pub struct LinearField {
    kind: FieldKind,
    dim: usize,
    /// Row-major `dim × dim`.
    matrix: Vec<f64>,
}

#[derive(Deserialize)]
struct RawLinear {
    kind: FieldKind,
    dim: usize,
    matrix: Vec<f64>,
}

impl TryFrom<RawLinear> for LinearField {
    type Error = crate::Error;

    fn try_from(r: RawLinear) -> Result<Self> {
        Self::new(r.kind, r.dim, r.matrix)
    }
}

impl LinearField {
    pub fn new(kind: FieldKind, dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if dim == 0 || matrix.len() != dim * dim {
            return Err(invalid("linear field needs a dim × dim matrix"));
        }
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(invalid("linear field matrix must be finite"));
        }
        Ok(Self { kind, dim, matrix })
    }

    pub fn scalar(kind: FieldKind, a: f64) -> Self {
        Self {
            kind,
            dim: 1,
            matrix: alloc::vec![a],
        }
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }
}

impl Field for LinearField {
    fn kind(&self) -> FieldKind {
        self.kind
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], _t: f64) -> Vec<f64> {
        self.matrix
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn vjp(&self, _x: &[f64], _t: f64, y: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.dim];
        for (row, yi) in self.matrix.chunks_exact(self.dim).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn vjp_is_transpose_product() {
        let f = LinearField::new(FieldKind::FlowVelocity, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f.eval(&[1.0, 1.0], 0.3), vec![3.0, 7.0]);
        assert_eq!(f.vjp(&[0.0, 0.0], 0.3, &[1.0, 0.0]), vec![1.0, 2.0]);
        assert_eq!(f.vjp(&[0.0, 0.0], 0.3, &[0.0, 1.0]), vec![3.0, 4.0]);
        assert!(LinearField::new(FieldKind::FlowVelocity, 2, vec![1.0]).is_err());
    }
}
