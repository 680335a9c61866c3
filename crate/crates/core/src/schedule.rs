//! Time grid and noise schedules.
//!
//! Time runs from 0 (pure noise) to 1 (data). Both model families share the
//! uniform grid `t_k = t_start + k·dt`, `k = 0..=n`, whose last point is pinned
//! to exactly `1.0`.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::field::FieldKind;
use crate::math::{sin, sqrt, PI};
use crate::Result;

/// Default lower bound on grid times; keeps the `1/t` terms of the flow
/// drift and forward SDE bounded.
pub const DEFAULT_T_MIN: f64 = 1e-3;

/// How the initial trajectory is generated and whether the sampler is
/// stochastic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Deterministic,
    Markovian,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Deterministic => "deterministic",
            Mode::Markovian => "markovian",
        }
    }
}

/// Uniform grid on `[t_start, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct TimeGrid {
    t_start: f64,
    n_steps: usize,
    dt: f64,
    t_min: f64,
}

// `dt` is derived, so a stored value is ignored on load
#[derive(Deserialize)]
struct RawGrid {
    t_start: f64,
    n_steps: usize,
    t_min: f64,
}

impl TryFrom<RawGrid> for TimeGrid {
    type Error = crate::Error;

    fn try_from(r: RawGrid) -> Result<Self> {
        Self::new(r.t_start, r.n_steps, r.t_min)
    }
}

impl TimeGrid {
    pub fn new(t_start: f64, n_steps: usize, t_min: f64) -> Result<Self> {
        if !(t_min > 0.0) {
            return Err(invalid("t_min must be positive"));
        }
        if !(t_start < 1.0) {
            return Err(invalid("t_start must be below 1"));
        }
        if !(t_start >= t_min) {
            return Err(invalid("t_start must be at least t_min"));
        }
        if n_steps == 0 {
            return Err(invalid("n_steps must be at least 1"));
        }
        Ok(Self {
            t_start,
            n_steps,
            dt: (1.0 - t_start) / n_steps as f64,
            t_min,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    /// Grid time `t_k`; `t_n` is exactly 1.
    pub fn time(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n_steps);
        if k >= self.n_steps {
            1.0
        } else {
            self.t_start + k as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Index of the grid point equal to `t` (within a small fraction of `dt`).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = ((t - self.t_start) / self.dt).round();
        if !(k >= 0.0) || k > self.n_steps as f64 {
            return None;
        }
        let k = k as usize;
        if (self.time(k) - t).abs() <= 1e-9 * self.dt {
            Some(k)
        } else {
            None
        }
    }
}

/// Squared-sine ("cosine") schedule `ᾱ_t = sin²(πt/2)`.
pub fn cosine_alpha_bar(t: f64) -> f64 {
    let s = sin(0.5 * PI * t);
    s * s
}

/// Closed-form choices of `ᾱ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaBar {
    /// `ᾱ_t = sin²(πt/2)`, `dᾱ/dt = (π/2) sin(πt)`.
    #[default]
    Cosine,
    /// `ᾱ_t = t`.
    Linear,
}

impl AlphaBar {
    pub fn value(self, t: f64) -> f64 {
        match self {
            AlphaBar::Cosine => cosine_alpha_bar(t),
            AlphaBar::Linear => t,
        }
    }

    pub fn derivative(self, t: f64) -> f64 {
        match self {
            AlphaBar::Cosine => 0.5 * PI * sin(PI * t),
            AlphaBar::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AlphaBar::Cosine => "cosine",
            AlphaBar::Linear => "linear",
        }
    }
}

/// Schedule quantities of the ε-prediction family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub alpha_bar: AlphaBar,
}

impl DiffusionSchedule {
    pub fn new(alpha_bar: AlphaBar) -> Self {
        Self { alpha_bar }
    }

    pub fn alpha_bar(&self, t: f64) -> f64 {
        self.alpha_bar.value(t)
    }

    pub fn alpha_bar_dot(&self, t: f64) -> f64 {
        self.alpha_bar.derivative(t)
    }

    /// Single-step coefficient `α_{t_prev} = ᾱ_{t_prev} / ᾱ_t`.
    pub fn step_alpha(&self, t_prev: f64, t: f64) -> f64 {
        self.alpha_bar(t_prev) / self.alpha_bar(t)
    }

    /// Per-step noise scale `η_t` of the step `t → t + dt`.
    ///
    /// Zero when deterministic; otherwise the DDPM posterior standard deviation
    /// `sqrt((1 − ᾱ_{t+dt}) / (1 − ᾱ_t) · (1 − ᾱ_t/ᾱ_{t+dt}))`.
    pub fn eta(&self, t: f64, t_next: f64, mode: Mode) -> f64 {
        match mode {
            Mode::Deterministic => 0.0,
            Mode::Markovian => {
                let a = self.alpha_bar(t);
                let a_next = self.alpha_bar(t_next);
                let var = (1.0 - a_next) / (1.0 - a) * (1.0 - a / a_next);
                sqrt(var.max(0.0))
            }
        }
    }

    /// Continuous diffusion coefficient; `sqrt(ᾱ̇/ᾱ)` for the Markovian forward process.
    pub fn sigma(&self, t: f64, mode: Mode) -> f64 {
        match mode {
            Mode::Deterministic => 0.0,
            Mode::Markovian => sqrt(self.alpha_bar_dot(t) / self.alpha_bar(t)),
        }
    }
}

/// Linear interpolation path `x_t = (1 − t) x_0 + t x_1` of the flow family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowSchedule;

impl FlowSchedule {
    pub fn alpha(&self, t: f64) -> f64 {
        t
    }

    pub fn beta(&self, t: f64) -> f64 {
        1.0 - t
    }

    /// `0` when deterministic, `sqrt(2(1 − t)/t)` for the marginal-preserving SDE.
    pub fn sigma(&self, t: f64, mode: Mode) -> f64 {
        match mode {
            Mode::Deterministic => 0.0,
            Mode::Markovian => sqrt(2.0 * (1.0 - t) / t),
        }
    }
}

/// Schedule of either family. Serialized by [`Schedule::id`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Diffusion(DiffusionSchedule),
    Flow(FlowSchedule),
}

impl Schedule {
    /// The schedule matching a field kind; `alpha_bar` is ignored for flows.
    pub fn for_kind(kind: FieldKind, alpha_bar: AlphaBar) -> Self {
        match kind {
            FieldKind::DiffusionEps => Schedule::Diffusion(DiffusionSchedule::new(alpha_bar)),
            FieldKind::FlowVelocity => Schedule::Flow(FlowSchedule),
        }
    }

    pub fn matches(&self, kind: FieldKind) -> bool {
        matches!(
            (self, kind),
            (Schedule::Diffusion(_), FieldKind::DiffusionEps)
                | (Schedule::Flow(_), FieldKind::FlowVelocity)
        )
    }

    /// Continuous diffusion coefficient `σ_t` of the family.
    pub fn sigma(&self, t: f64, mode: Mode) -> f64 {
        match self {
            Schedule::Diffusion(s) => s.sigma(t, mode),
            Schedule::Flow(s) => s.sigma(t, mode),
        }
    }

    /// Stable identifier recorded in checkpoints.
    pub fn id(&self) -> &'static str {
        match self {
            Schedule::Diffusion(s) => match s.alpha_bar {
                AlphaBar::Cosine => "diffusion-cosine",
                AlphaBar::Linear => "diffusion-linear",
            },
            Schedule::Flow(_) => "flow-linear",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "diffusion-cosine" => Some(Schedule::Diffusion(DiffusionSchedule::new(
                AlphaBar::Cosine,
            ))),
            "diffusion-linear" => Some(Schedule::Diffusion(DiffusionSchedule::new(
                AlphaBar::Linear,
            ))),
            "flow-linear" => Some(Schedule::Flow(FlowSchedule)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let g = TimeGrid::new(0.5, 50, 1e-3).unwrap();
        assert!((g.dt() - 0.01).abs() < 1e-15);
        assert_eq!(g.time(0), 0.5);
        assert_eq!(g.time(50), 1.0);

        let g = TimeGrid::new(0.9, 1, 1e-3).unwrap();
        assert_eq!(g.times(), alloc::vec![0.9, 1.0]);
        assert!((g.dt() - 0.1).abs() < 1e-15);

        let g = TimeGrid::new(0.5, 49, 1e-3).unwrap();
        assert!((g.dt() - 0.5 / 49.0).abs() < 1e-16);
        assert!((g.time(49) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(TimeGrid::new(1.0, 10, 1e-3).is_err());
        assert!(TimeGrid::new(0.5, 0, 1e-3).is_err());
        assert!(TimeGrid::new(0.5, 10, 0.0).is_err());
        assert!(TimeGrid::new(0.5, 10, -1.0).is_err());
        assert!(TimeGrid::new(1e-4, 10, 1e-3).is_err());
    }

    #[test]
    fn grid_is_strictly_increasing() {
        let g = TimeGrid::new(0.013, 37, 1e-3).unwrap();
        let ts = g.times();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(g.index_of(g.time(17)), Some(17));
        assert_eq!(g.index_of(g.time(17) + 0.3 * g.dt()), None);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_alpha_bar(1.0), 1.0);
        assert_eq!(cosine_alpha_bar(0.0), 0.0);
        // sin²(π/4) = 1/2
        assert!((cosine_alpha_bar(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cosine_derivative_matches_finite_difference() {
        for &t in &[0.1, 0.37, 0.5, 0.8, 0.95] {
            let h = 1e-6;
            let fd = (cosine_alpha_bar(t + h) - cosine_alpha_bar(t - h)) / (2.0 * h);
            assert!((fd - AlphaBar::Cosine.derivative(t)).abs() < 1e-8);
        }
    }

    #[test]
    fn schedule_grid_invariants() {
        for ab in [AlphaBar::Cosine, AlphaBar::Linear] {
            let s = DiffusionSchedule::new(ab);
            assert!((s.alpha_bar(1.0) - 1.0).abs() < 1e-9);
            let g = TimeGrid::new(0.2, 64, 1e-3).unwrap();
            for k in 1..=g.n_steps() {
                let (tp, t) = (g.time(k - 1), g.time(k));
                assert!(s.alpha_bar(t) > s.alpha_bar(tp));
                assert!((s.step_alpha(tp, t) * s.alpha_bar(t) - s.alpha_bar(tp)).abs() < 1e-12);
                let eta = s.eta(tp, t, Mode::Markovian);
                assert!(1.0 - s.alpha_bar(t) - eta * eta >= 0.0);
                assert_eq!(s.eta(tp, t, Mode::Deterministic), 0.0);
            }
        }
    }

    #[test]
    fn flow_boundaries_and_sigma() {
        let f = FlowSchedule;
        assert_eq!(
            (f.alpha(0.0), f.beta(1.0), f.alpha(1.0), f.beta(0.0)),
            (0.0, 0.0, 1.0, 1.0)
        );
        let g = TimeGrid::new(DEFAULT_T_MIN, 100, DEFAULT_T_MIN).unwrap();
        for t in g.times() {
            let s = f.sigma(t, Mode::Markovian);
            assert!(s.is_finite());
            // forward-SDE step variance 2(1 − t)dt/t divided by dt
            let dt = g.dt();
            assert!((s * s - 2.0 * (1.0 - t) * dt / t / dt).abs() < 1e-9 * (1.0 + s * s));
        }
        assert_eq!(f.sigma(0.3, Mode::Deterministic), 0.0);
    }

    #[test]
    fn schedule_ids_round_trip() {
        for s in [
            Schedule::Diffusion(DiffusionSchedule::new(AlphaBar::Cosine)),
            Schedule::Diffusion(DiffusionSchedule::new(AlphaBar::Linear)),
            Schedule::Flow(FlowSchedule),
        ] {
            assert_eq!(Schedule::from_id(s.id()), Some(s));
        }
    }
}
