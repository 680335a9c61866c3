//! Differentiable terminal rewards.
//!
//! Each variant is a desk-scale stand-in for a learned reward: a target
//! attribute (`QuadraticTarget`, `LinearProbe`), a counterfactual class
//! (`ClassifierLogit`) and a preference for typical samples
//! (`MixtureLogDensity`). Gradients are analytic.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error};
use crate::field::{GaussianMixture, ToyClassifier};
use crate::math::dot;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reward {
    /// `−scale · ‖x − target‖²`.
    QuadraticTarget { target: Vec<f64>, scale: f64 },
    /// Logit of `target_class`.
    ClassifierLogit {
        classifier: ToyClassifier,
        target_class: usize,
    },
    /// `log p(x)` of a Gaussian mixture.
    MixtureLogDensity { mixture: GaussianMixture },
    /// `directionᵀ x`.
    LinearProbe { direction: Vec<f64> },
}

impl Reward {
    pub fn quadratic(target: Vec<f64>, scale: f64) -> Self {
        Reward::QuadraticTarget { target, scale }
    }

    pub fn linear(direction: Vec<f64>) -> Self {
        Reward::LinearProbe { direction }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Reward::QuadraticTarget { .. } => "quadratic_target",
            Reward::ClassifierLogit { .. } => "classifier_logit",
            Reward::MixtureLogDensity { .. } => "mixture_log_density",
            Reward::LinearProbe { .. } => "linear_probe",
        }
    }

    /// Input dimension the reward is defined on.
    pub fn dim(&self) -> usize {
        match self {
            Reward::QuadraticTarget { target, .. } => target.len(),
            Reward::ClassifierLogit { classifier, .. } => classifier.dim(),
            Reward::MixtureLogDensity { mixture } => mixture.dim(),
            Reward::LinearProbe { direction } => direction.len(),
        }
    }

    /// Checks parameters and that the reward accepts `d`-vectors.
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.dim(),
            });
        }
        match self {
            Reward::QuadraticTarget { target, scale } => {
                if !scale.is_finite() || target.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("quadratic reward parameters must be finite"));
                }
            }
            Reward::ClassifierLogit {
                classifier,
                target_class,
            } => {
                if *target_class >= classifier.classes() {
                    return Err(Error::LabelOutOfRange {
                        label: *target_class,
                        classes: classifier.classes(),
                    });
                }
            }
            Reward::MixtureLogDensity { .. } => {}
            Reward::LinearProbe { direction } => {
                if direction.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("probe direction must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Reward::QuadraticTarget { target, scale } => {
                -scale
                    * x.iter()
                        .zip(target)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
            }
            Reward::ClassifierLogit {
                classifier,
                target_class,
            } => classifier.logits(x)[*target_class],
            Reward::MixtureLogDensity { mixture } => mixture.log_density(x),
            Reward::LinearProbe { direction } => dot(direction, x),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Reward::QuadraticTarget { target, scale } => x
                .iter()
                .zip(target)
                .map(|(a, b)| -2.0 * scale * (a - b))
                .collect(),
            Reward::ClassifierLogit {
                classifier,
                target_class,
            } => classifier.logit_grad(x, *target_class),
            Reward::MixtureLogDensity { mixture } => mixture.grad_log_density(x),
            Reward::LinearProbe { direction } => direction.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Mlp;
    use crate::rng::{normal_vec, seeded};
    use alloc::vec;

    fn fd_check(r: &Reward, x: &[f64]) {
        let g = r.grad(x);
        for i in 0..x.len() {
            let h = 1e-5;
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (r.value(&xp) - r.value(&xm)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-5 * fd.abs().max(1.0),
                "{} {fd} vs {}",
                r.name(),
                g[i]
            );
        }
    }

    #[test]
    fn closed_forms() {
        let q = Reward::quadratic(vec![1.0, 2.0], 1.0);
        assert_eq!(q.value(&[1.0, 2.0]), 0.0);
        assert_eq!(q.grad(&[1.0, 2.0]), vec![0.0, 0.0]);
        assert_eq!(q.grad(&[2.0, 2.0]), vec![-2.0, 0.0]);
        let q3 = Reward::quadratic(vec![1.0, 2.0], 3.0);
        assert_eq!(
            q3.grad(&[0.5, -1.0]),
            q.grad(&[0.5, -1.0])
                .iter()
                .map(|g| 3.0 * g)
                .collect::<Vec<_>>()
        );

        let l = Reward::linear(vec![0.5, -1.5]);
        assert_eq!(l.value(&[0.0, 0.0]), 0.0);
        assert_eq!(l.grad(&[9.0, 3.0]), vec![0.5, -1.5]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(5);
        let clf = ToyClassifier::new(Mlp::random(&[2, 16, 16, 2], &mut rng).unwrap()).unwrap();
        let rewards = [
            Reward::quadratic(vec![0.3, -0.2], 2.0),
            Reward::linear(vec![1.0, 2.0]),
            Reward::ClassifierLogit {
                classifier: clf,
                target_class: 1,
            },
            Reward::MixtureLogDensity {
                mixture: GaussianMixture::ring(8, 2.0, 0.3).unwrap(),
            },
        ];
        for r in &rewards {
            r.validate(2).unwrap();
            for _ in 0..100 {
                let x = normal_vec(&mut rng, 2);
                fd_check(r, &x);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(Reward::linear(vec![1.0]).validate(2).is_err());
        let mut rng = seeded(1);
        let clf = ToyClassifier::new(Mlp::random(&[2, 4, 2], &mut rng).unwrap()).unwrap();
        let r = Reward::ClassifierLogit {
            classifier: clf,
            target_class: 2,
        };
        assert!(matches!(r.validate(2), Err(Error::LabelOutOfRange { .. })));
    }
}
