//! Generative fields: ε-prediction networks for diffusion models and velocity
//! networks for flow matching.
//!
//! Every field exposes its forward evaluation and an exact vector-Jacobian
//! product with respect to the state. The adjoint recursion consumes nothing
//! else, so a field never needs to materialize its Jacobian.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::math::all_finite;
use crate::Result;

mod linear;
mod mixture;
mod mlp;
pub mod train;

pub use linear::LinearField;
pub use mixture::{AnalyticMixtureField, GaussianMixture};
pub use mlp::{Dense, Mlp, MlpField, TimeEmbedding, ToyClassifier};
pub use train::{train_classifier, train_dsm, train_flow, ClassifierReport, TrainHyper, TrainLog};

/// Which network role a field plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Predicts the injected noise `ε` from `x_t`.
    DiffusionEps,
    /// Predicts the velocity `v` of the interpolation path.
    FlowVelocity,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::DiffusionEps => "diffusion_eps",
            FieldKind::FlowVelocity => "flow_velocity",
        }
    }
}

/// A time-dependent vector field `f(x, t)` on `R^d`.
///
/// Implementations must be pure: the same inputs give the same outputs, and
/// `vjp(x, t, y)` equals `[∂f/∂x (x, t)]ᵀ y`.
pub trait Field {
    fn kind(&self) -> FieldKind;

    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], t: f64) -> Vec<f64>;

    fn vjp(&self, x: &[f64], t: f64, y: &[f64]) -> Vec<f64>;

    /// [`Field::eval`] with input validation.
    fn try_eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_input(self.dim(), x, t)?;
        Ok(self.eval(x, t))
    }

    /// [`Field::vjp`] with input validation.
    fn try_vjp(&self, x: &[f64], t: f64, y: &[f64]) -> Result<Vec<f64>> {
        check_input(self.dim(), x, t)?;
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: y.len(),
            });
        }
        Ok(self.vjp(x, t, y))
    }
}

impl<F: Field + ?Sized> Field for &F {
    fn kind(&self) -> FieldKind {
        (**self).kind()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        (**self).eval(x, t)
    }
    fn vjp(&self, x: &[f64], t: f64, y: &[f64]) -> Vec<f64> {
        (**self).vjp(x, t, y)
    }
}

fn check_input(dim: usize, x: &[f64], t: f64) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    if !all_finite(x) || !t.is_finite() {
        return Err(Error::NonFinite {
            context: "field input",
            step: 0,
        });
    }
    Ok(())
}

/// Any of the concrete fields, for callers that pick one at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnyField {
    Mixture(AnalyticMixtureField),
    Linear(LinearField),
    Mlp(MlpField),
}

impl Field for AnyField {
    fn kind(&self) -> FieldKind {
        match self {
            AnyField::Mixture(f) => f.kind(),
            AnyField::Linear(f) => f.kind(),
            AnyField::Mlp(f) => f.kind(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            AnyField::Mixture(f) => f.dim(),
            AnyField::Linear(f) => f.dim(),
            AnyField::Mlp(f) => f.dim(),
        }
    }

    fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        match self {
            AnyField::Mixture(f) => f.eval(x, t),
            AnyField::Linear(f) => f.eval(x, t),
            AnyField::Mlp(f) => f.eval(x, t),
        }
    }

    fn vjp(&self, x: &[f64], t: f64, y: &[f64]) -> Vec<f64> {
        match self {
            AnyField::Mixture(f) => f.vjp(x, t, y),
            AnyField::Linear(f) => f.vjp(x, t, y),
            AnyField::Mlp(f) => f.vjp(x, t, y),
        }
    }
}
