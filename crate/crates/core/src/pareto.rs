//! Reward/fidelity aggregation and non-dominated fronts.
//!
//! Fidelity is the Euclidean distance between the edited and the source
//! sample; lower is better. Reward gain is `r(edited) − r(source)`; higher is
//! better.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::math::sqrt;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub method: String,
    pub scale: f64,
    pub gain_mean: f64,
    pub gain_std: f64,
    pub distance_mean: f64,
    pub distance_std: f64,
    pub n: usize,
}

/// Mean and sample standard deviation (`n − 1` denominator, `0` for a single
/// value).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(invalid("statistics of an empty sample"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, sqrt(ss / (n - 1.0))))
}

impl ParetoPoint {
    /// Aggregates per-cell `(gain, distance)` pairs of one `(method, scale)`.
    pub fn from_cells(method: &str, scale: f64, gains: &[f64], distances: &[f64]) -> Result<Self> {
        if gains.len() != distances.len() {
            return Err(invalid("gain and distance samples differ in length"));
        }
        let (gain_mean, gain_std) = mean_std(gains)?;
        let (distance_mean, distance_std) = mean_std(distances)?;
        let p = Self {
            method: method.into(),
            scale,
            gain_mean,
            gain_std,
            distance_mean,
            distance_std,
            n: gains.len(),
        };
        if ![p.gain_mean, p.gain_std, p.distance_mean, p.distance_std]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(invalid("non-finite aggregate"));
        }
        Ok(p)
    }
}

/// `a` dominates `b`: no worse in both objectives and strictly better in one.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    let (ga, da) = a;
    let (gb, db) = b;
    ga >= gb && da <= db && (ga > gb || da < db)
}

/// Indices of the non-dominated `(gain, distance)` pairs, ordered by distance
/// ascending; pairs at equal distance keep their input order and exact
/// duplicates are all kept.
pub fn front_indices(pairs: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&i, &j| pairs[i].1.total_cmp(&pairs[j].1));
    let mut keep = Vec::new();
    let mut best_closer = f64::NEG_INFINITY;
    let mut start = 0;
    while start < order.len() {
        let d = pairs[order[start]].1;
        let mut end = start;
        while end < order.len() && pairs[order[end]].1.total_cmp(&d) == Ordering::Equal {
            end += 1;
        }
        let group = &order[start..end];
        let g_max = group
            .iter()
            .map(|&i| pairs[i].0)
            .fold(f64::NEG_INFINITY, f64::max);
        if g_max > best_closer {
            keep.extend(group.iter().copied().filter(|&i| pairs[i].0 == g_max));
        }
        best_closer = best_closer.max(g_max);
        start = end;
    }
    keep
}

/// Non-dominated subset under (maximize mean gain, minimize mean distance).
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let pairs: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.gain_mean, p.distance_mean))
        .collect();
    front_indices(&pairs)
        .into_iter()
        .map(|i| points[i].clone())
        .collect()
}

/// Fraction of `reference` points matched by some `candidate` point with gain
/// at least as high and distance at most as large.
pub fn coverage(candidate: &[(f64, f64)], reference: &[(f64, f64)]) -> f64 {
    if reference.is_empty() {
        return 1.0;
    }
    let hit = reference
        .iter()
        .filter(|&&(g, d)| candidate.iter().any(|&(cg, cd)| cg >= g && cd <= d))
        .count();
    hit as f64 / reference.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use alloc::vec;
    use rand::Rng;

    fn brute(pairs: &[(f64, f64)]) -> Vec<usize> {
        let mut keep: Vec<usize> = (0..pairs.len())
            .filter(|&i| !(0..pairs.len()).any(|j| dominates(pairs[j], pairs[i])))
            .collect();
        keep.sort_by(|&i, &j| pairs[i].1.total_cmp(&pairs[j].1));
        keep
    }

    #[test]
    fn small_cases() {
        assert_eq!(front_indices(&[(1.0, 1.0)]), vec![0]);
        assert_eq!(front_indices(&[(0.5, 2.0), (1.0, 1.0)]), vec![1]);
        assert_eq!(front_indices(&[(1.0, 1.0), (1.0, 1.0)]), vec![0, 1]);
        assert_eq!(front_indices(&[(2.0, 3.0), (1.0, 1.0)]), vec![1, 0]);
        assert!(front_indices(&[]).is_empty());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = seeded(11);
        for round in 0..50 {
            let pairs: Vec<(f64, f64)> = (0..100)
                .map(|_| {
                    if round % 2 == 0 {
                        (rng.random::<f64>(), rng.random::<f64>())
                    } else {
                        // coarse values force ties
                        (rng.random_range(0..6) as f64, rng.random_range(0..6) as f64)
                    }
                })
                .collect();
            assert_eq!(front_indices(&pairs), brute(&pairs));
        }
    }

    #[test]
    fn statistics_match_welford() {
        let mut rng = seeded(3);
        let v: Vec<f64> = (0..257).map(|_| rng.random::<f64>() * 10.0 - 3.0).collect();
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for &x in &v {
            n += 1.0;
            let delta = x - mean;
            mean += delta / n;
            m2 += delta * (x - mean);
        }
        let (m, s) = mean_std(&v).unwrap();
        assert!((m - mean).abs() < 1e-12);
        assert!((s - sqrt(m2 / (n - 1.0))).abs() < 1e-12);
        assert_eq!(mean_std(&[4.0]).unwrap(), (4.0, 0.0));
        assert!(mean_std(&[]).is_err());
    }

    #[test]
    fn coverage_counts_matches() {
        let oc = [(1.0, 1.0), (2.0, 2.0)];
        let dps = [(0.5, 1.0), (2.5, 2.0), (1.5, 3.0)];
        assert!((coverage(&oc, &dps) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(coverage(&oc, &[]), 1.0);
    }
}
