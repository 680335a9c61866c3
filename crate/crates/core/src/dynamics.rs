//! Discrete sampling dynamics.
//!
//! Every interval `[t_k, t_{k+1}]` of the grid is advanced by a one-step map
//! of the form `x̂_{k+1} = A_k x + C_k f(x, t_k)`, where `f` is the field
//! output and `A_k`, `C_k` are scalars fixed by the schedule and mode. A
//! controlled step adds `g_k u_k dt` and a frozen residual `B_k`:
//!
//! ```text
//! x_{k+1} = x̂_{k+1|k}(x_k) + g_k u_k dt + B_k
//! ```
//!
//! The adjoint sweep differentiates exactly this map, so the gradients it
//! produces are the gradients of the implemented rollout.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error};
use crate::field::{Field, FieldKind};
use crate::math::{all_finite, norm, norm_inf, sqrt};
use crate::rng::{normal_vec, seeded};
use crate::schedule::{Mode, Schedule, TimeGrid};
use crate::Result;

/// A family of one-step maps `x ↦ x̂_{k+1|k}(x)` for `k = 0..steps()`.
pub trait StepMap {
    fn dim(&self) -> usize;

    fn steps(&self) -> usize;

    /// Applies the `k`-th map. Panics if `k >= steps()`.
    fn step(&self, k: usize, x: &[f64]) -> Vec<f64>;

    /// `[∂ step(k, ·)/∂x]ᵀ y` at `x`.
    fn step_vjp(&self, k: usize, x: &[f64], y: &[f64]) -> Vec<f64>;
}

/// How the control enters the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// `+ u dt`, the form used by the iterative editing scheme.
    #[default]
    Additive,
    /// `+ σ_t u dt`, with the matching stationarity condition `u = −σ_t p`.
    /// In deterministic mode `σ_t = 0`, so the control has no effect.
    SigmaScaled,
}

/// Field, schedule, grid and mode bundled into the discrete sampler.
#[derive(Debug, Clone)]
pub struct Sampler<F> {
    field: F,
    schedule: Schedule,
    grid: TimeGrid,
    mode: Mode,
}

impl<F: Field> Sampler<F> {
    pub fn new(field: F, schedule: Schedule, grid: TimeGrid, mode: Mode) -> Result<Self> {
        if !schedule.matches(field.kind()) {
            return Err(Error::FamilyMismatch);
        }
        Ok(Self {
            field,
            schedule,
            grid,
            mode,
        })
    }

    pub fn field(&self) -> &F {
        &self.field
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// The same sampler with a different mode, borrowing the field.
    pub fn with_mode(&self, mode: Mode) -> Sampler<&F> {
        Sampler {
            field: &self.field,
            schedule: self.schedule,
            grid: self.grid,
            mode,
        }
    }

    /// The same sampler on a different grid, borrowing the field.
    pub fn with_grid(&self, grid: TimeGrid) -> Sampler<&F> {
        Sampler {
            field: &self.field,
            schedule: self.schedule,
            grid,
            mode: self.mode,
        }
    }

    /// `(A_k, C_k)` of the `k`-th step.
    fn coefficients(&self, k: usize) -> (f64, f64) {
        assert!(k < self.grid.n_steps(), "step index {k} out of range");
        let t = self.grid.time(k);
        let t_next = self.grid.time(k + 1);
        match self.schedule {
            Schedule::Diffusion(s) => {
                let ab = s.alpha_bar(t);
                let ab_next = s.alpha_bar(t_next);
                let eta = s.eta(t, t_next, self.mode);
                let a = sqrt(ab_next) / sqrt(ab);
                let dir = sqrt((1.0 - ab_next - eta * eta).max(0.0));
                (a, dir - a * sqrt(1.0 - ab))
            }
            Schedule::Flow(_) => {
                let dt = self.grid.dt();
                let c = flow_coupling(self.mode);
                (1.0 - c * dt / t, (1.0 + c) * dt)
            }
        }
    }

    /// Coefficient of `x` in the `k`-th step; the step is `A_k x` plus a
    /// field term.
    pub fn linear_coefficient(&self, k: usize) -> f64 {
        self.coefficients(k).0
    }

    /// `x̂_{t+dt|t}` at grid time `t`.
    pub fn posterior_step(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let k = self.step_index(t)?;
        self.check_state(x, k)?;
        Ok(self.step(k, x))
    }

    fn step_index(&self, t: f64) -> Result<usize> {
        match self.grid.index_of(t) {
            Some(k) if k < self.grid.n_steps() => Ok(k),
            _ => Err(Error::OffGrid { t }),
        }
    }

    fn check_state(&self, x: &[f64], step: usize) -> Result<()> {
        if x.len() != self.field.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.field.dim(),
                got: x.len(),
            });
        }
        if !all_finite(x) {
            return Err(Error::NonFinite {
                context: "state",
                step,
            });
        }
        Ok(())
    }

    /// Continuous-time drift `b(x, t)` for diffusion coefficient `sigma`.
    ///
    /// Diffusion: `(ᾱ̇/2ᾱ) x − (ᾱ̇/2ᾱ + σ²/2) ε / sqrt(1 − ᾱ)`.
    /// Flow: `v + t σ² / (2(1 − t)) · (v − x/t)`.
    pub fn unified_drift(&self, x: &[f64], t: f64, sigma: f64) -> Result<Vec<f64>> {
        if !(t >= self.grid.t_min() && t < 1.0) {
            return Err(invalid("drift needs t in [t_min, 1)"));
        }
        self.check_state(x, 0)?;
        let f = self.field.eval(x, t);
        let s2 = sigma * sigma;
        Ok(match self.schedule {
            Schedule::Diffusion(s) => {
                let r = s.alpha_bar_dot(t) / (2.0 * s.alpha_bar(t));
                let c = (r + 0.5 * s2) / sqrt(1.0 - s.alpha_bar(t));
                x.iter().zip(&f).map(|(x, e)| r * x - c * e).collect()
            }
            Schedule::Flow(_) => {
                let c = t * s2 / (2.0 * (1.0 - t));
                x.iter().zip(&f).map(|(x, v)| v + c * (v - x / t)).collect()
            }
        })
    }

    /// Effective control gain `g_k` of the `k`-th interval.
    pub fn control_gain(&self, k: usize, injection: Injection) -> f64 {
        match injection {
            Injection::Additive => 1.0,
            Injection::SigmaScaled => self.schedule.sigma(self.grid.time(k), self.mode),
        }
    }

    /// Standard deviation scale of the noise expected in `B_k`, per
    /// coordinate. Used by the residual sanity bound.
    fn noise_scale(&self, k: usize) -> f64 {
        let t = self.grid.time(k);
        let t_next = self.grid.time(k + 1);
        let dt = self.grid.dt();
        match self.schedule {
            Schedule::Diffusion(s) => {
                let eta = s.eta(t, t_next, Mode::Markovian);
                eta.max(sqrt(1.0 - s.step_alpha(t, t_next)))
            }
            Schedule::Flow(s) => {
                let forward = sqrt(2.0 * (1.0 - t_next) * dt / t_next);
                (s.sigma(t, Mode::Markovian) * sqrt(dt)).max(forward)
            }
        }
    }
}

/// `t σ_t² / (2(1 − t))` for the flow family, which is `1` for the
/// marginal-preserving SDE and `0` for the ODE.
fn flow_coupling(mode: Mode) -> f64 {
    match mode {
        Mode::Deterministic => 0.0,
        Mode::Markovian => 1.0,
    }
}

impl<F: Field> StepMap for Sampler<F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn steps(&self) -> usize {
        self.grid.n_steps()
    }

    fn step(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let (a, c) = self.coefficients(k);
        let f = self.field.eval(x, self.grid.time(k));
        x.iter().zip(&f).map(|(x, f)| a * x + c * f).collect()
    }

    fn step_vjp(&self, k: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        let (a, c) = self.coefficients(k);
        let jt = self.field.vjp(x, self.grid.time(k), y);
        y.iter().zip(&jt).map(|(y, j)| a * y + c * j).collect()
    }
}

/// A grid-aligned trajectory with its frozen Brownian residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// `x_{t_k}` for `k = 0..=n`.
    pub states: Vec<Vec<f64>>,
    /// `B_{t_k}` for `k = 0..n`; all zero in deterministic mode.
    pub residuals: Vec<Vec<f64>>,
    pub mode: Mode,
    /// The sample the trajectory was built from (`states[n]` at creation).
    pub source: Vec<f64>,
    /// Noise seed of a Markovian trajectory.
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.source.len()
    }

    pub fn endpoint(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Checks shapes, finiteness and that deterministic residuals vanish.
    pub fn validate(&self) -> Result<()> {
        let n = self.grid.n_steps();
        let d = self.dim();
        if self.states.len() != n + 1 {
            return Err(Error::LengthMismatch {
                what: "states",
                expected: n + 1,
                got: self.states.len(),
            });
        }
        if self.residuals.len() != n {
            return Err(Error::LengthMismatch {
                what: "residuals",
                expected: n,
                got: self.residuals.len(),
            });
        }
        for (k, v) in self.states.iter().chain(&self.residuals).enumerate() {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
            if !all_finite(v) {
                return Err(Error::NonFinite {
                    context: "trajectory",
                    step: k % (n + 1),
                });
            }
        }
        if self.mode == Mode::Deterministic
            && self.residuals.iter().any(|b| b.iter().any(|&v| v != 0.0))
        {
            return Err(invalid("deterministic trajectory with non-zero residuals"));
        }
        Ok(())
    }
}

/// Fixed-point refinement of the inversion steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionOptions {
    /// Refinement iterations per step; `0` keeps the explicit inversion step.
    pub max_iterations: usize,
    /// Stop once `‖x̂(x) − x_{k+1}‖∞ ≤ tolerance · max(1, ‖x_{k+1}‖∞)`.
    pub tolerance: f64,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-13,
        }
    }
}

impl InversionOptions {
    /// The plain explicit inversion step without refinement.
    pub fn explicit() -> Self {
        Self {
            max_iterations: 0,
            tolerance: 0.0,
        }
    }
}

/// Residuals above this multiple of the tolerance after all iterations are
/// reported as a stall rather than accepted.
const STALL_FACTOR: f64 = 1e4;

/// Maps `x1` back to `t_start` along the deterministic sampler.
///
/// Each step starts from the explicit inversion (the DDIM inversion for
/// diffusion, the time-reversed Euler step for flows), then solves
/// `x̂_{k+1|k}(x_k) = x_{k+1}` by the fixed-point iteration
/// `x ← x − (x̂(x) − x_{k+1}) / A_k`. With [`InversionOptions::explicit`] only
/// the explicit step is taken.
pub fn invert_deterministic<F: Field>(
    sampler: &Sampler<F>,
    x1: &[f64],
    options: InversionOptions,
) -> Result<Trajectory> {
    let det = sampler.with_mode(Mode::Deterministic);
    det.check_state(x1, det.grid.n_steps())?;
    let n = det.grid.n_steps();
    let d = x1.len();
    let mut states = alloc::vec![Vec::new(); n + 1];
    states[n] = x1.to_vec();
    for k in (0..n).rev() {
        let target = &states[k + 1];
        let mut x = explicit_inverse(&det, k, target);
        if !all_finite(&x) {
            x = target.clone();
        }
        if options.max_iterations > 0 {
            x = refine(&det, k, target, x, options)?;
        }
        if !all_finite(&x) {
            return Err(Error::NonFinite {
                context: "inversion",
                step: k,
            });
        }
        states[k] = x;
    }
    Ok(Trajectory {
        grid: det.grid,
        states,
        residuals: alloc::vec![alloc::vec![0.0; d]; n],
        mode: Mode::Deterministic,
        source: x1.to_vec(),
        seed: None,
    })
}

fn explicit_inverse<F: Field>(sampler: &Sampler<F>, k: usize, x_next: &[f64]) -> Vec<f64> {
    let t = sampler.grid.time(k);
    let t_next = sampler.grid.time(k + 1);
    let f = sampler.field.eval(x_next, t_next);
    match sampler.schedule {
        Schedule::Diffusion(s) => {
            let ab = s.alpha_bar(t);
            let ab_next = s.alpha_bar(t_next);
            let a = sqrt(ab) / sqrt(ab_next);
            let c_back = sqrt(1.0 - ab_next);
            let c_dir = sqrt(1.0 - ab);
            x_next
                .iter()
                .zip(&f)
                .map(|(x, e)| a * (x - c_back * e) + c_dir * e)
                .collect()
        }
        Schedule::Flow(_) => {
            let dt = sampler.grid.dt();
            x_next.iter().zip(&f).map(|(x, v)| x - v * dt).collect()
        }
    }
}

fn refine<F: Field>(
    sampler: &Sampler<F>,
    k: usize,
    target: &[f64],
    mut x: Vec<f64>,
    options: InversionOptions,
) -> Result<Vec<f64>> {
    let a = sampler.linear_coefficient(k);
    let scale = norm_inf(target).max(1.0);
    let mut best = (f64::INFINITY, x.clone());
    for _ in 0..options.max_iterations {
        let mismatch: Vec<f64> = sampler
            .step(k, &x)
            .iter()
            .zip(target)
            .map(|(y, t)| y - t)
            .collect();
        let r = norm_inf(&mismatch);
        if !r.is_finite() {
            break;
        }
        if r < best.0 {
            best = (r, x.clone());
        }
        if r <= options.tolerance * scale {
            return Ok(x);
        }
        x.iter_mut().zip(&mismatch).for_each(|(x, m)| *x -= m / a);
    }
    if best.0 <= STALL_FACTOR * options.tolerance * scale {
        Ok(best.1)
    } else {
        Err(Error::InversionStalled {
            step: k,
            residual: best.0,
        })
    }
}

/// Options of [`make_markovian`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovOptions {
    /// Abort if `‖B_k‖ > bound · ν_k · sqrt(d)`, where `ν_k` is the noise
    /// scale of step `k`. `None` disables the check.
    pub residual_bound: Option<f64>,
}

impl Default for MarkovOptions {
    fn default() -> Self {
        Self {
            residual_bound: Some(10.0),
        }
    }
}

/// Noises `x1` back to `t_start` with the marginal-preserving forward process
/// and records the Brownian residuals `B_k = x_{k+1} − x̂_{k+1|k}(x_k)`.
///
/// Diffusion: `x_k = sqrt(α) x_{k+1} + sqrt(1 − α) ε`, `α = ᾱ_{t_k}/ᾱ_{t_{k+1}}`.
/// Flow: `x_k = x_{k+1} − x_{k+1} dt / t_{k+1} + sqrt(2(1 − t_{k+1}) dt / t_{k+1}) ε`.
pub fn make_markovian<F: Field>(
    sampler: &Sampler<F>,
    x1: &[f64],
    seed: u64,
    options: MarkovOptions,
) -> Result<Trajectory> {
    let markov = sampler.with_mode(Mode::Markovian);
    let grid = markov.grid;
    let n = grid.n_steps();
    let d = x1.len();
    markov.check_state(x1, n)?;
    let mut rng = seeded(seed);
    let mut states = alloc::vec![Vec::new(); n + 1];
    states[n] = x1.to_vec();
    for k in (0..n).rev() {
        let eps = normal_vec(&mut rng, d);
        let x = forward_step(&markov, k, &states[k + 1], &eps);
        if !all_finite(&x) {
            return Err(Error::NonFinite {
                context: "forward process",
                step: k,
            });
        }
        states[k] = x;
    }

    let mut residuals = Vec::with_capacity(n);
    for k in 0..n {
        let mean = markov.step(k, &states[k]);
        let b: Vec<f64> = states[k + 1]
            .iter()
            .zip(&mean)
            .map(|(x, m)| x - m)
            .collect();
        let b_norm = norm(&b);
        if !b_norm.is_finite() {
            return Err(Error::NonFinite {
                context: "residual",
                step: k,
            });
        }
        if let Some(factor) = options.residual_bound {
            let bound = factor * markov.noise_scale(k) * sqrt(d as f64);
            if b_norm > bound {
                return Err(Error::ResidualBound {
                    step: k,
                    norm: b_norm,
                    bound,
                });
            }
        }
        residuals.push(b);
    }

    Ok(Trajectory {
        grid,
        states,
        residuals,
        mode: Mode::Markovian,
        source: x1.to_vec(),
        seed: Some(seed),
    })
}

/// One step of the marginal-preserving forward process from `t_{k+1}` back
/// to `t_k`, driven by the standard normal draw `eps`.
pub fn forward_step<F: Field>(
    sampler: &Sampler<F>,
    k: usize,
    x_next: &[f64],
    eps: &[f64],
) -> Vec<f64> {
    let t = sampler.grid.time(k);
    let t_next = sampler.grid.time(k + 1);
    let dt = sampler.grid.dt();
    let (a, c) = match sampler.schedule {
        Schedule::Diffusion(s) => {
            let alpha = s.step_alpha(t, t_next);
            (sqrt(alpha), sqrt(1.0 - alpha))
        }
        Schedule::Flow(_) => (1.0 - dt / t_next, sqrt(2.0 * (1.0 - t_next) * dt / t_next)),
    };
    x_next.iter().zip(eps).map(|(x, e)| a * x + c * e).collect()
}

/// Builds the initial trajectory for `mode`.
pub fn initial_trajectory<F: Field>(
    sampler: &Sampler<F>,
    x1: &[f64],
    seed: u64,
    inversion: InversionOptions,
    markov: MarkovOptions,
) -> Result<Trajectory> {
    match sampler.mode {
        Mode::Deterministic => invert_deterministic(sampler, x1, inversion),
        Mode::Markovian => make_markovian(sampler, x1, seed, markov),
    }
}

/// Re-simulates `trajectory` from its first state with `controls` added to
/// every interval and the residuals held fixed.
///
/// Until the first non-zero control the recorded states are returned as is,
/// so a zero-control rollout reproduces the trajectory bit for bit even where
/// inversion left a round-off defect in the deterministic path.
pub fn rollout<F: Field>(
    sampler: &Sampler<F>,
    trajectory: &Trajectory,
    controls: &[Vec<f64>],
    injection: Injection,
) -> Result<Trajectory> {
    if sampler.mode != trajectory.mode {
        return Err(invalid("sampler mode differs from the trajectory mode"));
    }
    if sampler.grid != trajectory.grid {
        return Err(invalid("sampler grid differs from the trajectory grid"));
    }
    let n = trajectory.grid.n_steps();
    if controls.len() != n {
        return Err(Error::LengthMismatch {
            what: "controls",
            expected: n,
            got: controls.len(),
        });
    }
    let d = trajectory.dim();
    if let Some(u) = controls.iter().find(|u| u.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: u.len(),
        });
    }
    let dt = trajectory.grid.dt();
    let mut states = Vec::with_capacity(n + 1);
    states.push(trajectory.states[0].clone());
    let mut on_path = true;
    for k in 0..n {
        on_path = on_path && controls[k].iter().all(|&u| u == 0.0);
        if on_path {
            states.push(trajectory.states[k + 1].clone());
            continue;
        }
        let g = sampler.control_gain(k, injection) * dt;
        let mean = sampler.step(k, &states[k]);
        let next: Vec<f64> = mean
            .iter()
            .zip(&controls[k])
            .zip(&trajectory.residuals[k])
            .map(|((m, u), b)| m + g * u + b)
            .collect();
        if !all_finite(&next) {
            return Err(Error::NonFinite {
                context: "rollout",
                step: k + 1,
            });
        }
        states.push(next);
    }
    Ok(Trajectory {
        states,
        ..trajectory.clone()
    })
}

/// Forward sampling from `x` at `t_start` with zero control and zero
/// residuals.
pub fn sample<F: Field>(sampler: &Sampler<F>, x: &[f64]) -> Result<Vec<f64>> {
    sampler.check_state(x, 0)?;
    let mut x = x.to_vec();
    for k in 0..sampler.grid.n_steps() {
        x = sampler.step(k, &x);
        if !all_finite(&x) {
            return Err(Error::NonFinite {
                context: "sampling",
                step: k + 1,
            });
        }
    }
    Ok(x)
}

/// Forward sampling with fresh noise in Markovian mode (`η_t` for diffusion,
/// `σ_t sqrt(dt)` for flows).
pub fn sample_stochastic<F: Field>(sampler: &Sampler<F>, x: &[f64], seed: u64) -> Result<Vec<f64>> {
    sampler.check_state(x, 0)?;
    let mut rng = seeded(seed);
    let mut x = x.to_vec();
    let grid = sampler.grid;
    for k in 0..grid.n_steps() {
        let t = grid.time(k);
        let std = match sampler.schedule {
            Schedule::Diffusion(s) => s.eta(t, grid.time(k + 1), sampler.mode),
            Schedule::Flow(s) => s.sigma(t, sampler.mode) * sqrt(grid.dt()),
        };
        let mut next = sampler.step(k, &x);
        if std > 0.0 {
            let z = normal_vec(&mut rng, x.len());
            next.iter_mut().zip(&z).for_each(|(v, z)| *v += std * z);
        }
        if !all_finite(&next) {
            return Err(Error::NonFinite {
                context: "sampling",
                step: k + 1,
            });
        }
        x = next;
    }
    Ok(x)
}

/// Whether the field family needs the `t ≥ t_min` floor.
pub fn needs_time_floor(kind: FieldKind) -> bool {
    kind == FieldKind::FlowVelocity
}
