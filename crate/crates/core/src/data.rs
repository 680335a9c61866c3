//! Seeded toy datasets.

use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::invalid;
use crate::field::GaussianMixture;
use crate::math::{cos, sin, PI};
use crate::rng::seeded;
use crate::Result;

/// Labelled point cloud; `labels[i]` belongs to `points[i]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Labelled {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Two interleaving half circles with isotropic Gaussian jitter. Label 0 is
/// the upper moon.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Labelled {
    let mut rng = seeded(seed);
    let mut out = Labelled::default();
    for i in 0..n {
        let label = i % 2;
        let s: f64 = rng.random::<f64>() * PI;
        let (x, y) = if label == 0 {
            (cos(s), sin(s))
        } else {
            (1.0 - cos(s), 0.5 - sin(s))
        };
        let jx: f64 = rng.sample(StandardNormal);
        let jy: f64 = rng.sample(StandardNormal);
        out.points.push(alloc::vec![x + noise * jx, y + noise * jy]);
        out.labels.push(label);
    }
    out
}

/// `n_per` points around each center with standard deviation `std`; the label
/// is the center index.
pub fn blobs(centers: &[Vec<f64>], std: f64, n_per: usize, seed: u64) -> Result<Labelled> {
    let Some(first) = centers.first() else {
        return Err(invalid("blobs need at least one center"));
    };
    let d = first.len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(invalid("blob centers must share a positive dimension"));
    }
    if !(std >= 0.0) {
        return Err(invalid("blob std must be non-negative"));
    }
    let mut rng = seeded(seed);
    let mut out = Labelled::default();
    for _ in 0..n_per {
        for (label, c) in centers.iter().enumerate() {
            let p = c
                .iter()
                .map(|m| m + std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            out.points.push(p);
            out.labels.push(label);
        }
    }
    Ok(out)
}

/// Samples from a mixture, labelled by component index.
pub fn mixture_samples(mixture: &GaussianMixture, n: usize, seed: u64) -> Labelled {
    let mut rng = seeded(seed);
    let mut out = Labelled::default();
    for _ in 0..n {
        let j = mixture.sample_index(&mut rng);
        out.points.push(mixture.sample_component(&mut rng, j));
        out.labels.push(j);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_are_seeded_and_balanced() {
        let a = two_moons(100, 0.05, 3);
        let b = two_moons(100, 0.05, 3);
        assert_eq!(a, b);
        assert_eq!(a.labels.iter().filter(|&&l| l == 1).count(), 50);
        assert_ne!(a, two_moons(100, 0.05, 4));
    }

    #[test]
    fn blobs_cluster_round_centers() {
        let c = alloc::vec![alloc::vec![-3.0, 0.0], alloc::vec![3.0, 0.0]];
        let b = blobs(&c, 0.1, 50, 1).unwrap();
        assert_eq!(b.points.len(), 100);
        for (p, &l) in b.points.iter().zip(&b.labels) {
            assert!(crate::math::distance(p, &c[l]) < 1.0);
        }
        assert!(blobs(&[], 0.1, 5, 1).is_err());
    }
}
