//! Comparison methods: pixel-space gradient ascent and inversion followed by
//! reward-guided sampling (DPS, FreeDoM, TFG).
//!
//! The guided samplers invert the source deterministically to
//! `inversion_depth` and sample forward on the same grid, adding a guidance
//! correction after every posterior step. All three share the one-jump clean
//! estimate `x̂_{1|t}` and its VJP.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dynamics::{forward_step, invert_deterministic, InversionOptions, Sampler, StepMap};
use crate::error::{invalid, Error};
use crate::field::{Field, FieldKind};
use crate::math::{all_finite, sqrt};
use crate::rewards::Reward;
use crate::rng::{normal_vec, seeded};
use crate::schedule::{Mode, Schedule, TimeGrid, DEFAULT_T_MIN};
use crate::Result;

/// `N` steps of `x ← x + λ ∇r(x)`.
pub fn gradient_ascent(reward: &Reward, x1: &[f64], steps: usize, lambda: f64) -> Result<Vec<f64>> {
    let mut x = x1.to_vec();
    for k in 0..steps {
        let g = reward.grad(&x);
        x.iter_mut().zip(&g).for_each(|(x, g)| *x += lambda * g);
        if !all_finite(&x) {
            return Err(Error::NonFinite {
                context: "gradient ascent",
                step: k + 1,
            });
        }
    }
    Ok(x)
}

fn check_time<F: Field>(field: &F, schedule: Schedule, t: f64) -> Result<()> {
    if !schedule.matches(field.kind()) {
        return Err(Error::FamilyMismatch);
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(invalid("posterior mean needs t in (0, 1)"));
    }
    Ok(())
}

/// `(a, c)` with `x̂_{1|t} = a x + c f(x, t)`.
fn jump_coefficients(schedule: Schedule, t: f64) -> (f64, f64) {
    match schedule {
        Schedule::Diffusion(s) => {
            let ab = s.alpha_bar(t);
            (1.0 / sqrt(ab), -sqrt(1.0 - ab) / sqrt(ab))
        }
        Schedule::Flow(_) => (1.0, 1.0 - t),
    }
}

/// One-jump clean estimate `x̂_{1|t}`: `(x − sqrt(1 − ᾱ_t) ε) / sqrt(ᾱ_t)` for
/// diffusion, `x + (1 − t) v` for flows.
pub fn posterior_mean_full<F: Field>(
    field: &F,
    schedule: Schedule,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    check_time(field, schedule, t)?;
    let f = field.try_eval(x, t)?;
    let (a, c) = jump_coefficients(schedule, t);
    Ok(x.iter().zip(&f).map(|(x, f)| a * x + c * f).collect())
}

/// `[∂x̂_{1|t}/∂x]ᵀ y`.
pub fn posterior_mean_vjp<F: Field>(
    field: &F,
    schedule: Schedule,
    x: &[f64],
    t: f64,
    y: &[f64],
) -> Result<Vec<f64>> {
    check_time(field, schedule, t)?;
    let j = field.try_vjp(x, t, y)?;
    let (a, c) = jump_coefficients(schedule, t);
    Ok(y.iter().zip(&j).map(|(y, j)| a * y + c * j).collect())
}

/// The single-interval map `x_t ↦ x̂_{1|t}` as a [`StepMap`].
#[derive(Debug, Clone)]
pub struct OneJump<F> {
    field: F,
    schedule: Schedule,
    t: f64,
}

impl<F: Field> OneJump<F> {
    pub fn new(field: F, schedule: Schedule, t: f64) -> Result<Self> {
        check_time(&field, schedule, t)?;
        Ok(Self { field, schedule, t })
    }
}

impl<F: Field> StepMap for OneJump<F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn steps(&self) -> usize {
        1
    }

    fn step(&self, k: usize, x: &[f64]) -> Vec<f64> {
        assert_eq!(k, 0, "one-jump map has a single step");
        let f = self.field.eval(x, self.t);
        let (a, c) = jump_coefficients(self.schedule, self.t);
        x.iter().zip(&f).map(|(x, f)| a * x + c * f).collect()
    }

    fn step_vjp(&self, k: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        assert_eq!(k, 0, "one-jump map has a single step");
        let j = self.field.vjp(x, self.t, y);
        let (a, c) = jump_coefficients(self.schedule, self.t);
        y.iter().zip(&j).map(|(y, j)| a * y + c * j).collect()
    }
}

/// `w ∇_{x_t} r(x̂_{1|t})`, the guidance direction of DPS-style samplers.
///
/// This equals `−p_0` of the adjoint sweep on the two-point trajectory
/// `{x_t, x̂_{1|t}}` of [`OneJump`].
pub fn dps_guidance<F: Field>(
    field: &F,
    schedule: Schedule,
    reward: &Reward,
    x: &[f64],
    t: f64,
    w: f64,
) -> Result<Vec<f64>> {
    let xhat = posterior_mean_full(field, schedule, x, t)?;
    let g = reward.grad(&xhat);
    let v = posterior_mean_vjp(field, schedule, x, t, &g)?;
    Ok(v.iter().map(|v| w * v).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ga,
    Dps,
    FreeDoM,
    Tfg,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ga => "ga",
            Method::Dps => "dps",
            Method::FreeDoM => "freedom",
            Method::Tfg => "tfg",
        }
    }
}

/// Hyperparameters of the baselines. Strengths are constant in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub method: Method,
    /// Time the source is inverted to before guided sampling.
    pub inversion_depth: f64,
    pub n_steps: usize,
    /// `ρ_t`: strength on `∇_{x_t} r(x̂_{1|t})`.
    pub rho: f64,
    /// `μ_t`: strength on `∇_{x̂_{1|t}} r(x̂_{1|t})` (TFG only).
    pub mu: f64,
    /// `N_recur`: repetitions of each step with forward re-noising in
    /// between (FreeDoM, TFG).
    pub n_recur: usize,
    /// `N_iter`: inner updates of the clean estimate (TFG).
    pub n_iter: usize,
    /// `γ̄`: noise scale on the clean estimate for the `ρ` gradient (TFG).
    pub gamma_bar: f64,
    /// Gradient-ascent steps `N`.
    pub ga_steps: usize,
    /// Gradient-ascent step size `λ`.
    pub ga_lr: f64,
    /// Seeds the re-noising and `γ̄` draws.
    pub seed: u64,
    pub t_min: f64,
    pub inversion: InversionOptions,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            method: Method::Dps,
            inversion_depth: 0.7,
            n_steps: 50,
            rho: 1.0,
            mu: 0.0,
            n_recur: 1,
            n_iter: 1,
            gamma_bar: 0.1,
            ga_steps: 25,
            ga_lr: 0.01,
            seed: 0,
            t_min: DEFAULT_T_MIN,
            inversion: InversionOptions::default(),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(finite_nonneg(self.rho) && finite_nonneg(self.mu) && finite_nonneg(self.gamma_bar)) {
            return Err(invalid(
                "guidance strengths must be finite and non-negative",
            ));
        }
        if !finite_nonneg(self.ga_lr) {
            return Err(invalid(
                "gradient-ascent step must be finite and non-negative",
            ));
        }
        if self.n_recur == 0 || self.n_iter == 0 {
            return Err(invalid("n_recur and n_iter must be at least 1"));
        }
        if self.method != Method::Ga {
            if !(self.inversion_depth > 0.0 && self.inversion_depth < 1.0) {
                return Err(invalid("inversion depth must lie in (0, 1)"));
            }
            self.grid()?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.inversion_depth, self.n_steps, self.t_min)
    }
}

/// Runs the configured baseline on `x1` and returns the edited sample.
pub fn guided_sample<F: Field>(
    field: &F,
    schedule: Schedule,
    reward: &Reward,
    x1: &[f64],
    config: &BaselineConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    reward.validate(x1.len())?;
    if config.method == Method::Ga {
        return gradient_ascent(reward, x1, config.ga_steps, config.ga_lr);
    }
    let sampler = Sampler::new(field, schedule, config.grid()?, Mode::Deterministic)?;
    let start = invert_deterministic(&sampler, x1, config.inversion)?.states[0].clone();
    let recur = match config.method {
        Method::Dps => 1,
        _ => config.n_recur,
    };
    let mut rng = seeded(config.seed);
    let d = x1.len();
    let mut x = start;
    for k in 0..sampler.grid().n_steps() {
        let t = sampler.grid().time(k);
        for r in 0..recur {
            let mut next = sampler.step(k, &x);
            let correction = match config.method {
                Method::Tfg => tfg_correction(&sampler, reward, &x, k, config, &mut rng)?,
                _ => dps_guidance(field, schedule, reward, &x, t, config.rho)?,
            };
            next.iter_mut().zip(&correction).for_each(|(n, c)| *n += c);
            if !all_finite(&next) {
                return Err(Error::NonFinite {
                    context: "guided sampling",
                    step: k + 1,
                });
            }
            x = if r + 1 < recur {
                let eps = normal_vec(&mut rng, d);
                forward_step(&sampler, k, &next, &eps)
            } else {
                next
            };
        }
    }
    Ok(x)
}

/// `ρ ∇_{x_t} r(x̂ + γ̄ζ)` plus the next-state image of `Δ`, where `Δ` is
/// built by `N_iter` steps of `Δ ← Δ + μ ∇r(x̂ + Δ)`.
fn tfg_correction<F: Field, R: rand::Rng>(
    sampler: &Sampler<&F>,
    reward: &Reward,
    x: &[f64],
    k: usize,
    config: &BaselineConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let field = *sampler.field();
    let schedule = sampler.schedule();
    let t = sampler.grid().time(k);
    let xhat = posterior_mean_full(field, schedule, x, t)?;
    let mut probe = xhat.clone();
    if config.gamma_bar > 0.0 {
        let z = normal_vec(rng, x.len());
        probe
            .iter_mut()
            .zip(&z)
            .for_each(|(p, z)| *p += config.gamma_bar * z);
    }
    let g = reward.grad(&probe);
    let mut out: Vec<f64> = posterior_mean_vjp(field, schedule, x, t, &g)?
        .iter()
        .map(|v| config.rho * v)
        .collect();

    if config.mu > 0.0 {
        let mut delta = alloc::vec![0.0; x.len()];
        for _ in 0..config.n_iter {
            let at: Vec<f64> = xhat.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let g = reward.grad(&at);
            delta
                .iter_mut()
                .zip(&g)
                .for_each(|(d, g)| *d += config.mu * g);
        }
        let t_next = sampler.grid().time(k + 1);
        let scale = match (schedule, field.kind()) {
            (Schedule::Diffusion(s), FieldKind::DiffusionEps) => sqrt(s.alpha_bar(t_next)),
            _ => sampler.grid().dt() / (1.0 - t),
        };
        out.iter_mut()
            .zip(&delta)
            .for_each(|(o, d)| *o += scale * d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::compute_adjoint;
    use crate::field::{AnalyticMixtureField, GaussianMixture, MlpField};
    use crate::math::{distance, norm_inf};
    use crate::schedule::{AlphaBar, DiffusionSchedule, FlowSchedule};
    use alloc::vec;

    fn diffusion() -> Schedule {
        Schedule::Diffusion(DiffusionSchedule::new(AlphaBar::Cosine))
    }

    fn ring(kind: FieldKind) -> AnalyticMixtureField {
        AnalyticMixtureField::new(
            kind,
            GaussianMixture::ring(8, 2.0, 0.05).unwrap(),
            AlphaBar::Cosine,
        )
    }

    #[test]
    fn gradient_ascent_closed_forms() {
        let l = Reward::linear(vec![1.0, -2.0]);
        assert_eq!(
            gradient_ascent(&l, &[0.5, 0.5], 0, 0.1).unwrap(),
            vec![0.5, 0.5]
        );
        let out = gradient_ascent(&l, &[0.5, 0.5], 10, 0.1).unwrap();
        assert!(distance(&out, &[1.5, -1.5]) < 1e-14);

        let q = Reward::quadratic(vec![1.0, 1.0], 1.0);
        let x1 = [3.0, -2.0];
        let lambda = 0.1;
        let mut x = x1.to_vec();
        for k in 1..=20 {
            x = gradient_ascent(&q, &x, 1, lambda).unwrap();
            let expected = crate::math::powi(1.0 - 2.0 * lambda, k) * distance(&x1, &[1.0, 1.0]);
            assert!((distance(&x, &[1.0, 1.0]) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_mean_special_cases() {
        let zero = MlpField::zeros(FieldKind::DiffusionEps, 2, &[4]).unwrap();
        let t = 0.6;
        let ab = DiffusionSchedule::default().alpha_bar(t);
        let got = posterior_mean_full(&zero, diffusion(), &[1.0, 2.0], t).unwrap();
        assert!(distance(&got, &[1.0 / sqrt(ab), 2.0 / sqrt(ab)]) < 1e-15);

        let zero = MlpField::zeros(FieldKind::FlowVelocity, 2, &[4]).unwrap();
        assert_eq!(
            posterior_mean_full(&zero, Schedule::Flow(FlowSchedule), &[1.0, 2.0], t).unwrap(),
            vec![1.0, 2.0]
        );

        // N(0, I) data: x̂ = (x − (1 − ᾱ) x) / sqrt(ᾱ) = sqrt(ᾱ) x
        let m = GaussianMixture::new(vec![vec![0.0, 0.0]], vec![1.0], 1.0).unwrap();
        let f = AnalyticMixtureField::new(FieldKind::DiffusionEps, m, AlphaBar::Cosine);
        let got = posterior_mean_full(&f, diffusion(), &[0.4, -0.9], t).unwrap();
        assert!(distance(&got, &[sqrt(ab) * 0.4, -sqrt(ab) * 0.9]) < 1e-9);
    }

    #[test]
    fn guidance_special_cases() {
        let zero = MlpField::zeros(FieldKind::DiffusionEps, 2, &[4]).unwrap();
        let l = Reward::linear(vec![0.5, -1.0]);
        let t = 0.3;
        let ab = DiffusionSchedule::default().alpha_bar(t);
        let g = dps_guidance(&zero, diffusion(), &l, &[0.1, 0.2], t, 2.0).unwrap();
        assert!(distance(&g, &[2.0 * 0.5 / sqrt(ab), -2.0 / sqrt(ab)]) < 1e-14);
        let g0 = dps_guidance(&zero, diffusion(), &l, &[0.1, 0.2], t, 0.0).unwrap();
        assert!(g0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn guidance_is_negative_one_jump_adjoint() {
        let mut rng = seeded(2);
        let q = Reward::quadratic(vec![1.0, -0.5], 1.0);
        for (kind, sched) in [
            (FieldKind::DiffusionEps, diffusion()),
            (FieldKind::FlowVelocity, Schedule::Flow(FlowSchedule)),
        ] {
            let f = ring(kind);
            for i in 1..20 {
                let t = i as f64 / 20.0;
                let x = normal_vec(&mut rng, 2);
                let g = dps_guidance(&f, sched, &q, &x, t, 1.5).unwrap();
                let jump = OneJump::new(&f, sched, t).unwrap();
                let states = vec![x.clone(), jump.step(0, &x)];
                let p = compute_adjoint(&jump, &states, &q, 1.5).unwrap();
                for (a, b) in g.iter().zip(&p.adjoints[0]) {
                    assert!((a + b).abs() <= 1e-10 * a.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn zero_guidance_is_round_trip() {
        let f = ring(FieldKind::DiffusionEps);
        let q = Reward::quadratic(vec![0.0, 0.0], 1.0);
        let x1 = [1.4, 1.4];
        for method in [Method::Dps, Method::FreeDoM, Method::Tfg] {
            let cfg = BaselineConfig {
                method,
                rho: 0.0,
                mu: 0.0,
                gamma_bar: 0.0,
                ..BaselineConfig::default()
            };
            let out = guided_sample(&f, diffusion(), &q, &x1, &cfg).unwrap();
            assert!(norm_inf(&crate::math::sub(&out, &x1)) < 1e-6);
        }
    }

    #[test]
    fn degenerate_configs_reduce_to_dps() {
        let q = Reward::quadratic(vec![0.0, 2.0], 1.0);
        for (kind, sched) in [
            (FieldKind::DiffusionEps, diffusion()),
            (FieldKind::FlowVelocity, Schedule::Flow(FlowSchedule)),
        ] {
            let f = ring(kind);
            let base = BaselineConfig {
                rho: 0.05,
                n_steps: 20,
                ..BaselineConfig::default()
            };
            let x1 = [2.0, 0.1];
            let dps = guided_sample(&f, sched, &q, &x1, &base).unwrap();
            let tfg = BaselineConfig {
                method: Method::Tfg,
                mu: 0.0,
                gamma_bar: 0.0,
                n_iter: 1,
                n_recur: 1,
                ..base.clone()
            };
            let free = BaselineConfig {
                method: Method::FreeDoM,
                n_recur: 1,
                ..base.clone()
            };
            assert!(distance(&guided_sample(&f, sched, &q, &x1, &tfg).unwrap(), &dps) <= 1e-9);
            assert!(distance(&guided_sample(&f, sched, &q, &x1, &free).unwrap(), &dps) <= 1e-9);
            assert!(distance(&dps, &x1) > 1e-3);
        }
    }

    #[test]
    fn validation() {
        let bad = [
            BaselineConfig {
                rho: -1.0,
                ..BaselineConfig::default()
            },
            BaselineConfig {
                n_recur: 0,
                ..BaselineConfig::default()
            },
            BaselineConfig {
                inversion_depth: 1.0,
                ..BaselineConfig::default()
            },
        ];
        for b in &bad {
            assert!(b.validate().is_err());
        }
    }
}
