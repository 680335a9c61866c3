use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Field, FieldKind};
use crate::error::invalid;
use crate::math::{dot, ln, log_sum_exp, softmax, sqrt, PI};
use crate::rng::normal_vec;
use crate::schedule::AlphaBar;
use crate::Result;

/// Isotropic Gaussian mixture `Σ_j w_j N(μ_j, τ² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture")]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// Component variance `τ²`.
    variance: f64,
}

#[derive(Deserialize)]
struct RawMixture {
    means: Vec<Vec<f64>>,
    weights: Vec<f64>,
    variance: f64,
}

impl TryFrom<RawMixture> for GaussianMixture {
    type Error = crate::Error;

    fn try_from(r: RawMixture) -> Result<Self> {
        Self::new(r.means, r.weights, r.variance)
    }
}

impl GaussianMixture {
    pub fn new(means: Vec<Vec<f64>>, weights: Vec<f64>, variance: f64) -> Result<Self> {
        if means.is_empty() {
            return Err(invalid("mixture needs at least one component"));
        }
        if weights.len() != means.len() {
            return Err(invalid("one weight per component is required"));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(invalid("component means must share a positive dimension"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(invalid("weights must be non-negative"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(invalid("weights must sum to 1"));
        }
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(invalid(
                "component variance must be finite and non-negative",
            ));
        }
        Ok(Self {
            means,
            weights,
            variance,
        })
    }

    /// Equal-weight mixture with components evenly spaced on a circle in the
    /// first two coordinates.
    pub fn ring(components: usize, radius: f64, variance: f64) -> Result<Self> {
        if components == 0 {
            return Err(invalid("ring needs at least one component"));
        }
        let means = (0..components)
            .map(|j| {
                let a = 2.0 * PI * j as f64 / components as f64;
                alloc::vec![radius * crate::math::cos(a), radius * crate::math::sin(a)]
            })
            .collect();
        let w = 1.0 / components as f64;
        let mut weights = alloc::vec![w; components];
        // keep the simplex exact
        let rest: f64 = weights[1..].iter().sum();
        weights[0] = 1.0 - rest;
        Self::new(means, weights, variance)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Posterior component probabilities for a point `x` under the mixture
    /// with means scaled by `scale` and component variance `var`.
    fn responsibilities(&self, x: &[f64], scale: f64, var: f64) -> Vec<f64> {
        let logits: Vec<f64> = self
            .means
            .iter()
            .zip(&self.weights)
            .map(|(m, &w)| {
                let d2: f64 = x
                    .iter()
                    .zip(m)
                    .map(|(a, b)| (a - scale * b) * (a - scale * b))
                    .sum();
                ln(w) - 0.5 * d2 / var
            })
            .collect();
        softmax(&logits)
    }

    /// Responsibility-weighted mean of the (unscaled) component means.
    fn mean_of_means(&self, gamma: &[f64]) -> Vec<f64> {
        let mut mbar = alloc::vec![0.0; self.dim()];
        for (m, g) in self.means.iter().zip(gamma) {
            for (a, b) in mbar.iter_mut().zip(m) {
                *a += g * b;
            }
        }
        mbar
    }

    /// `Σ_j γ_j (μ_j − μ̄)((μ_j − μ̄)·y)`, i.e. the responsibility covariance of
    /// the means applied to `y`.
    fn covariance_apply(&self, gamma: &[f64], mbar: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.dim()];
        for (m, g) in self.means.iter().zip(gamma) {
            let c: Vec<f64> = m.iter().zip(mbar).map(|(a, b)| a - b).collect();
            let proj = g * dot(&c, y);
            for (o, ci) in out.iter_mut().zip(&c) {
                *o += proj * ci;
            }
        }
        out
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let var = self.variance;
        let d = self.dim() as f64;
        let terms: Vec<f64> = self
            .means
            .iter()
            .zip(&self.weights)
            .map(|(m, &w)| {
                let d2: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                ln(w) - 0.5 * d2 / var
            })
            .collect();
        log_sum_exp(&terms) - 0.5 * d * ln(2.0 * PI * var)
    }

    /// `∇ log p(x) = Σ_j γ_j (μ_j − x) / τ²`.
    pub fn grad_log_density(&self, x: &[f64]) -> Vec<f64> {
        let gamma = self.responsibilities(x, 1.0, self.variance);
        let mbar = self.mean_of_means(&gamma);
        mbar.iter()
            .zip(x)
            .map(|(m, xi)| (m - xi) / self.variance)
            .collect()
    }

    pub fn sample_component<R: Rng + ?Sized>(&self, rng: &mut R, j: usize) -> Vec<f64> {
        let tau = sqrt(self.variance);
        let z = normal_vec(rng, self.dim());
        self.means[j]
            .iter()
            .zip(z)
            .map(|(m, e)| m + tau * e)
            .collect()
    }

    /// Draws a component index according to the weights.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return j;
            }
        }
        self.weights.len() - 1
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let j = self.sample_index(rng);
        self.sample_component(rng, j)
    }
}

/// The exact minimizer of the training objective for Gaussian-mixture data.
///
/// For `DiffusionEps` this is `ε*(x, t) = −sqrt(1 − ᾱ_t) ∇ log p_t(x)`, where
/// `p_t` is the mixture pushed through `x_t = sqrt(ᾱ_t) x_1 + sqrt(1 − ᾱ_t) ε`.
/// For `FlowVelocity` it is `E[x_1 − x_0 | x_t]` on the path
/// `x_t = (1 − t) x_0 + t x_1` with `x_0 ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMixtureField {
    kind: FieldKind,
    mixture: GaussianMixture,
    #[serde(default)]
    alpha_bar: AlphaBar,
}

impl AnalyticMixtureField {
    pub fn new(kind: FieldKind, mixture: GaussianMixture, alpha_bar: AlphaBar) -> Self {
        Self {
            kind,
            mixture,
            alpha_bar,
        }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn alpha_bar(&self) -> AlphaBar {
        self.alpha_bar
    }

    /// Marginal component variance at time `t` and the scale applied to the
    /// component means.
    fn marginal(&self, t: f64) -> (f64, f64) {
        let tau2 = self.mixture.variance;
        match self.kind {
            FieldKind::DiffusionEps => {
                let ab = self.alpha_bar.value(t);
                (ab * tau2 + 1.0 - ab, sqrt(ab))
            }
            FieldKind::FlowVelocity => ((1.0 - t) * (1.0 - t) + t * t * tau2, t),
        }
    }
}

impl Field for AnalyticMixtureField {
    fn kind(&self) -> FieldKind {
        self.kind
    }

    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        let (s2, scale) = self.marginal(t);
        let gamma = self.mixture.responsibilities(x, scale, s2);
        let mbar = self.mixture.mean_of_means(&gamma);
        match self.kind {
            FieldKind::DiffusionEps => {
                let c = sqrt(1.0 - self.alpha_bar.value(t)) / s2;
                x.iter()
                    .zip(&mbar)
                    .map(|(xi, m)| c * (xi - scale * m))
                    .collect()
            }
            FieldKind::FlowVelocity => {
                let kappa = (t * self.mixture.variance - (1.0 - t)) / s2;
                x.iter()
                    .zip(&mbar)
                    .map(|(xi, m)| m + kappa * (xi - t * m))
                    .collect()
            }
        }
    }

    fn vjp(&self, x: &[f64], t: f64, y: &[f64]) -> Vec<f64> {
        // The Jacobian is symmetric in both cases: a multiple of the identity
        // plus a multiple of the responsibility covariance of the means.
        let (s2, scale) = self.marginal(t);
        let gamma = self.mixture.responsibilities(x, scale, s2);
        let mbar = self.mixture.mean_of_means(&gamma);
        let cov_y = self.mixture.covariance_apply(&gamma, &mbar, y);
        match self.kind {
            FieldKind::DiffusionEps => {
                let c = sqrt(1.0 - self.alpha_bar.value(t)) / s2;
                let k = scale * scale / s2;
                y.iter()
                    .zip(&cov_y)
                    .map(|(yi, ci)| c * (yi - k * ci))
                    .collect()
            }
            FieldKind::FlowVelocity => {
                let kappa = (t * self.mixture.variance - (1.0 - t)) / s2;
                let k = t * (1.0 - kappa * t) / s2;
                y.iter()
                    .zip(&cov_y)
                    .map(|(yi, ci)| kappa * yi + k * ci)
                    .collect()
            }
        }
    }
}
