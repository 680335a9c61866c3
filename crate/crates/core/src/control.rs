//! Adjoint recursion, control update and the iterative edit loop.
//!
//! The editing problem is
//!
//! ```text
//! min_u  Σ_k ½‖u_k‖² dt − w · r(x_n)
//! s.t.   x_{k+1} = x̂_{k+1|k}(x_k) + g_k u_k dt + B_k,   x_0 fixed
//! ```
//!
//! Each iteration takes one relaxation step of the stationarity condition
//! `u_k = −g_k p_k`, re-simulates the trajectory with the residuals held fixed
//! and recomputes the adjoints `p_k` on the new states.

use alloc::boxed::Box;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    initial_trajectory, rollout, Injection, InversionOptions, MarkovOptions, Sampler, StepMap,
    Trajectory,
};
use crate::error::{invalid, Error};
use crate::field::Field;
use crate::math::{all_finite, distance, norm, norm_sq};
use crate::rewards::Reward;
use crate::schedule::{Mode, Schedule, TimeGrid, DEFAULT_T_MIN};
use crate::Result;

/// Adjoint states `p_k`, `k = 0..=n`, for reward weight `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointPath {
    pub adjoints: Vec<Vec<f64>>,
    pub reward_weight: f64,
}

impl AdjointPath {
    pub fn terminal(&self) -> &[f64] {
        self.adjoints.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Backward sweep `p_n = −w ∇r(x_n)`, `p_k = [∂x̂_{k+1|k}/∂x_k]ᵀ p_{k+1}`.
///
/// `states` has one entry per grid point of `map`. The controls are
/// state-independent, so they do not appear in the recursion.
pub fn compute_adjoint<M: StepMap + ?Sized>(
    map: &M,
    states: &[Vec<f64>],
    reward: &Reward,
    w: f64,
) -> Result<AdjointPath> {
    let n = map.steps();
    if states.len() != n + 1 {
        return Err(Error::LengthMismatch {
            what: "states",
            expected: n + 1,
            got: states.len(),
        });
    }
    let mut adjoints = alloc::vec![Vec::new(); n + 1];
    let terminal: Vec<f64> = reward.grad(&states[n]).iter().map(|g| -w * g).collect();
    if !all_finite(&terminal) {
        return Err(Error::NonFinite {
            context: "reward gradient",
            step: n,
        });
    }
    adjoints[n] = terminal;
    for k in (0..n).rev() {
        let p = map.step_vjp(k, &states[k], &adjoints[k + 1]);
        if !all_finite(&p) {
            return Err(Error::NonFinite {
                context: "adjoint",
                step: k,
            });
        }
        adjoints[k] = p;
    }
    Ok(AdjointPath {
        adjoints,
        reward_weight: w,
    })
}

/// Update rule applied to the stationarity residual `u_k + g_k p_k`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// `u ← u − λ (u + g p)`.
    #[default]
    PlainStep,
    /// `m ← β m + (u + g p)`, `u ← u − λ m`.
    Momentum { beta: f64 },
}

/// Stateful control updater; holds the momentum buffer.
#[derive(Debug, Clone)]
pub struct ControlUpdater {
    optimizer: Optimizer,
    velocity: Vec<Vec<f64>>,
}

impl ControlUpdater {
    pub fn new(optimizer: Optimizer) -> Self {
        Self {
            optimizer,
            velocity: Vec::new(),
        }
    }

    /// Updates `controls` in place; `gains[k]` multiplies `p_k`.
    pub fn update(
        &mut self,
        controls: &mut [Vec<f64>],
        adjoint: &AdjointPath,
        gains: &[f64],
        lambda: f64,
    ) {
        debug_assert!(adjoint.adjoints.len() > controls.len() && gains.len() == controls.len());
        match self.optimizer {
            Optimizer::PlainStep => {
                for ((u, p), g) in controls.iter_mut().zip(&adjoint.adjoints).zip(gains) {
                    for (u, p) in u.iter_mut().zip(p) {
                        *u -= lambda * (*u + g * p);
                    }
                }
            }
            Optimizer::Momentum { beta } => {
                if self.velocity.len() != controls.len() {
                    self.velocity = controls.iter().map(|u| alloc::vec![0.0; u.len()]).collect();
                }
                for (((u, m), p), g) in controls
                    .iter_mut()
                    .zip(&mut self.velocity)
                    .zip(&adjoint.adjoints)
                    .zip(gains)
                {
                    for ((u, m), p) in u.iter_mut().zip(m.iter_mut()).zip(p) {
                        *m = beta * *m + (*u + g * p);
                        *u -= lambda * *m;
                    }
                }
            }
        }
    }
}

/// One plain step `u_k ← u_k − λ (u_k + p_k)`.
pub fn update_control(controls: &[Vec<f64>], adjoint: &AdjointPath, lambda: f64) -> Vec<Vec<f64>> {
    let mut out = controls.to_vec();
    let gains = alloc::vec![1.0; controls.len()];
    ControlUpdater::new(Optimizer::PlainStep).update(&mut out, adjoint, &gains, lambda);
    out
}

/// `max_k ‖u_k + p_k‖`; zero exactly at a stationary point of the Hamiltonian.
pub fn pmp_residual(controls: &[Vec<f64>], adjoint: &AdjointPath) -> f64 {
    let gains = alloc::vec![1.0; controls.len()];
    pmp_residual_scaled(controls, adjoint, &gains)
}

/// `max_k ‖u_k + g_k p_k‖`.
pub fn pmp_residual_scaled(controls: &[Vec<f64>], adjoint: &AdjointPath, gains: &[f64]) -> f64 {
    controls
        .iter()
        .zip(&adjoint.adjoints)
        .zip(gains)
        .map(|((u, p), g)| {
            let r: Vec<f64> = u.iter().zip(p).map(|(u, p)| u + g * p).collect();
            norm(&r)
        })
        .fold(0.0, f64::max)
}

/// Left Riemann sum `Σ_k ½‖u_k‖² dt`.
pub fn control_energy(controls: &[Vec<f64>], dt: f64) -> f64 {
    controls.iter().map(|u| 0.5 * norm_sq(u) * dt).sum()
}

/// Objective `Σ_k ½‖u_k‖² dt − w · r(x_n)` of a controlled trajectory.
pub fn cost(trajectory: &Trajectory, controls: &[Vec<f64>], reward: &Reward, w: f64) -> f64 {
    control_energy(controls, trajectory.grid.dt()) - w * reward.value(trajectory.endpoint())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditConfig {
    /// Depth `T`: the trajectory starts at `t = T`.
    pub t_start: f64,
    pub n_steps: usize,
    /// Outer iterations `N`.
    pub iterations: usize,
    /// Step size `λ` of the control update.
    pub learning_rate: f64,
    /// Reward weight `w`.
    pub reward_weight: f64,
    pub mode: Mode,
    /// Noise seed of the Markovian trajectory.
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Stop once the PMP residual falls below this value.
    pub early_stop: Option<f64>,
    pub injection: Injection,
    pub t_min: f64,
    pub inversion: InversionOptions,
    pub markov: MarkovOptions,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            t_start: 0.5,
            n_steps: 50,
            iterations: 25,
            learning_rate: 0.2,
            reward_weight: 1.0,
            mode: Mode::Deterministic,
            seed: 0,
            optimizer: Optimizer::PlainStep,
            early_stop: None,
            injection: Injection::Additive,
            t_min: DEFAULT_T_MIN,
            inversion: InversionOptions::default(),
            markov: MarkovOptions::default(),
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(invalid("learning rate must lie in (0, 1]"));
        }
        if !(self.reward_weight >= 0.0 && self.reward_weight.is_finite()) {
            return Err(invalid("reward weight must be finite and non-negative"));
        }
        if let Optimizer::Momentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(invalid("momentum must lie in [0, 1)"));
            }
        }
        if let Some(th) = self.early_stop {
            if !(th >= 0.0) {
                return Err(invalid("early-stop threshold must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_start, self.n_steps, self.t_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// `0` for the uncontrolled trajectory.
    pub iteration: usize,
    pub reward: f64,
    pub energy: f64,
    pub cost: f64,
    pub pmp_residual: f64,
    /// `‖x_n − x_1‖` from the source sample.
    pub distance: f64,
}

impl IterationRecord {
    fn is_finite(&self) -> bool {
        [
            self.reward,
            self.energy,
            self.cost,
            self.pmp_residual,
            self.distance,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub initial: IterationRecord,
    /// One record per completed iteration.
    pub records: Vec<IterationRecord>,
    pub trajectory: Trajectory,
    pub controls: Vec<Vec<f64>>,
    pub stopped_early: bool,
}

impl EditReport {
    pub fn last(&self) -> &IterationRecord {
        self.records.last().unwrap_or(&self.initial)
    }

    pub fn edited(&self) -> &[f64] {
        self.trajectory.endpoint()
    }
}

/// A failed edit: the iteration at which it failed and the report up to the
/// last finite iteration.
#[derive(Debug, thiserror::Error)]
#[error("edit failed at iteration {iteration}: {source}")]
pub struct EditError {
    pub iteration: usize,
    pub source: Error,
    pub last: Option<Box<EditReport>>,
}

impl EditError {
    fn setup(source: Error) -> Self {
        Self {
            iteration: 0,
            source,
            last: None,
        }
    }
}

/// Builds the initial trajectory of `x1` and runs the iterative scheme.
pub fn edit<F: Field>(
    field: &F,
    schedule: Schedule,
    reward: &Reward,
    x1: &[f64],
    config: &EditConfig,
) -> core::result::Result<EditReport, EditError> {
    config.validate().map_err(EditError::setup)?;
    let grid = config.grid().map_err(EditError::setup)?;
    let sampler = Sampler::new(field, schedule, grid, config.mode).map_err(EditError::setup)?;
    let initial = initial_trajectory(&sampler, x1, config.seed, config.inversion, config.markov)
        .map_err(EditError::setup)?;
    edit_trajectory(&sampler, reward, initial, config)
}

/// Runs the iterative scheme on a given initial trajectory.
pub fn edit_trajectory<F: Field>(
    sampler: &Sampler<F>,
    reward: &Reward,
    initial: Trajectory,
    config: &EditConfig,
) -> core::result::Result<EditReport, EditError> {
    config.validate().map_err(EditError::setup)?;
    reward.validate(initial.dim()).map_err(EditError::setup)?;
    initial.validate().map_err(EditError::setup)?;
    let n = initial.grid.n_steps();
    let d = initial.dim();
    let dt = initial.grid.dt();
    let w = config.reward_weight;
    let gains: Vec<f64> = (0..n)
        .map(|k| sampler.control_gain(k, config.injection))
        .collect();

    let record = |iteration: usize, traj: &Trajectory, u: &[Vec<f64>], p: &AdjointPath| {
        let energy = control_energy(u, dt);
        let r = reward.value(traj.endpoint());
        IterationRecord {
            iteration,
            reward: r,
            energy,
            cost: energy - w * r,
            pmp_residual: pmp_residual_scaled(u, p, &gains),
            distance: distance(traj.endpoint(), &traj.source),
        }
    };

    let mut controls = alloc::vec![alloc::vec![0.0; d]; n];
    let mut adjoint =
        compute_adjoint(sampler, &initial.states, reward, w).map_err(EditError::setup)?;
    let first = record(0, &initial, &controls, &adjoint);
    if !first.is_finite() {
        return Err(EditError::setup(Error::NonFinite {
            context: "initial record",
            step: 0,
        }));
    }
    let mut report = EditReport {
        initial: first,
        records: Vec::with_capacity(config.iterations),
        trajectory: initial.clone(),
        controls: controls.clone(),
        stopped_early: false,
    };

    let mut updater = ControlUpdater::new(config.optimizer);
    for iteration in 1..=config.iterations {
        updater.update(&mut controls, &adjoint, &gains, config.learning_rate);
        let step = rollout(sampler, &initial, &controls, config.injection)
            .and_then(|traj| compute_adjoint(sampler, &traj.states, reward, w).map(|p| (traj, p)));
        let (traj, p) = match step {
            Ok(v) => v,
            Err(source) => {
                return Err(EditError {
                    iteration,
                    source,
                    last: Some(Box::new(report)),
                })
            }
        };
        let rec = record(iteration, &traj, &controls, &p);
        if !rec.is_finite() {
            return Err(EditError {
                iteration,
                source: Error::NonFinite {
                    context: "iteration record",
                    step: iteration,
                },
                last: Some(Box::new(report)),
            });
        }
        adjoint = p;
        report.records.push(rec);
        report.trajectory = traj;
        report.controls.clone_from(&controls);
        if config.early_stop.is_some_and(|th| rec.pmp_residual < th) {
            report.stopped_early = iteration < config.iterations;
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::invert_deterministic;
    use crate::field::{FieldKind, LinearField, MlpField};
    use crate::math::powi;
    use crate::schedule::FlowSchedule;
    use alloc::vec;

    fn flow_sampler<F: Field>(f: F, t: f64, n: usize) -> Sampler<F> {
        Sampler::new(
            f,
            Schedule::Flow(FlowSchedule),
            TimeGrid::new(t, n, DEFAULT_T_MIN).unwrap(),
            Mode::Deterministic,
        )
        .unwrap()
    }

    #[test]
    fn zero_field_adjoint_is_constant() {
        let zero = MlpField::zeros(FieldKind::FlowVelocity, 2, &[4]).unwrap();
        let s = flow_sampler(&zero, 0.5, 10);
        let tr = invert_deterministic(&s, &[1.0, -1.0], InversionOptions::default()).unwrap();
        let r = Reward::linear(vec![2.0, 3.0]);
        let p = compute_adjoint(&s, &tr.states, &r, 0.5).unwrap();
        assert!(p.adjoints.iter().all(|p| p == &vec![-1.0, -1.5]));
    }

    #[test]
    fn scalar_linear_adjoint_closed_form() {
        let a = -0.8;
        let f = LinearField::scalar(FieldKind::FlowVelocity, a);
        let n = 16;
        let s = flow_sampler(&f, 0.2, n);
        let tr = invert_deterministic(&s, &[1.3], InversionOptions::default()).unwrap();
        let r = Reward::quadratic(vec![0.0], 1.0);
        let p = compute_adjoint(&s, &tr.states, &r, 1.0).unwrap();
        let p1 = p.terminal()[0];
        assert_eq!(p1, 2.0 * 1.3);
        for k in 0..=n {
            let expected = powi(1.0 + a * s.grid().dt(), (n - k) as i32) * p1;
            assert!((p.adjoints[k][0] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn update_rules() {
        let p = AdjointPath {
            adjoints: vec![vec![1.0, -2.0], vec![0.5, 0.5], vec![9.0, 9.0]],
            reward_weight: 1.0,
        };
        let u0 = vec![vec![3.0, 1.0], vec![-1.0, 0.0]];
        let one = update_control(&u0, &p, 1.0);
        assert_eq!(one, vec![vec![-1.0, 2.0], vec![-0.5, -0.5]]);
        assert_eq!(pmp_residual(&one, &p), 0.0);
        assert_eq!(update_control(&u0, &p, 0.0), u0);
        let zero = vec![vec![0.0; 2]; 2];
        assert!((pmp_residual(&zero, &p) - crate::math::sqrt(5.0)).abs() < 1e-15);
    }

    #[test]
    fn geometric_contraction() {
        let p = AdjointPath {
            adjoints: vec![vec![0.7, -0.2], vec![-1.1, 0.4], vec![0.0, 0.0]],
            reward_weight: 1.0,
        };
        let lambda = 0.3;
        let mut u = vec![vec![0.5, 0.5], vec![2.0, -3.0]];
        let r0 = pmp_residual(&u, &p);
        for k in 1..=40 {
            u = update_control(&u, &p, lambda);
            let expected = powi(1.0 - lambda, k) * r0;
            assert!((pmp_residual(&u, &p) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_closed_form() {
        let zero = MlpField::zeros(FieldKind::FlowVelocity, 2, &[4]).unwrap();
        let s = flow_sampler(&zero, 0.6, 8);
        let tr = invert_deterministic(&s, &[0.0, 0.0], InversionOptions::default()).unwrap();
        let r = Reward::quadratic(vec![1.0, 1.0], 1.0);
        assert_eq!(cost(&tr, &vec![vec![0.0; 2]; 8], &r, 1.0), 2.0);
        let u = vec![vec![1.0, 0.5]; 8];
        let out = rollout(&s, &tr, &u, Injection::Additive).unwrap();
        // x_n = 0.4 u, energy = ½ · 1.25 · 0.4
        let x = [0.4, 0.2];
        let expected = 0.5 * 1.25 * 0.4 + (x[0] - 1.0) * (x[0] - 1.0) + (x[1] - 1.0) * (x[1] - 1.0);
        assert!((cost(&out, &u, &r, 1.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_edit_is_identity() {
        let f = LinearField::new(FieldKind::FlowVelocity, 2, vec![0.3, -0.5, 0.2, 0.1]).unwrap();
        let r = Reward::linear(vec![1.0, 1.0]);
        let cfg = EditConfig {
            reward_weight: 0.0,
            iterations: 5,
            ..EditConfig::default()
        };
        let rep = edit(&f, Schedule::Flow(FlowSchedule), &r, &[0.4, -0.3], &cfg).unwrap();
        assert_eq!(rep.records.len(), 5);
        assert!(rep.controls.iter().flatten().all(|&u| u == 0.0));
        assert!(rep.last().distance < 1e-12);
    }

    #[test]
    fn one_shot_equals_negative_adjoint() {
        let f = LinearField::new(FieldKind::FlowVelocity, 2, vec![0.3, -0.5, 0.2, 0.1]).unwrap();
        let r = Reward::quadratic(vec![1.0, 2.0], 0.5);
        let cfg = EditConfig {
            iterations: 1,
            learning_rate: 1.0,
            n_steps: 12,
            ..EditConfig::default()
        };
        let x1 = [0.4, -0.3];
        let rep = edit(&f, Schedule::Flow(FlowSchedule), &r, &x1, &cfg).unwrap();
        let s = flow_sampler(&f, cfg.t_start, cfg.n_steps);
        let tr = invert_deterministic(&s, &x1, InversionOptions::default()).unwrap();
        let p = compute_adjoint(&s, &tr.states, &r, 1.0).unwrap();
        for (u, p) in rep.controls.iter().zip(&p.adjoints) {
            assert_eq!(u, &p.iter().map(|v| -v).collect::<Vec<_>>());
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            EditConfig {
                t_start: 1.0,
                ..EditConfig::default()
            },
            EditConfig {
                iterations: 0,
                ..EditConfig::default()
            },
            EditConfig {
                learning_rate: 1.5,
                ..EditConfig::default()
            },
            EditConfig {
                reward_weight: -1.0,
                ..EditConfig::default()
            },
        ];
        for c in &bad {
            assert!(c.validate().is_err());
        }
        EditConfig::default().validate().unwrap();
    }

    #[test]
    fn early_stop_truncates_records() {
        let f = LinearField::scalar(FieldKind::FlowVelocity, 0.0);
        let r = Reward::linear(vec![1.0]);
        let cfg = EditConfig {
            iterations: 50,
            learning_rate: 1.0,
            early_stop: Some(1e-9),
            ..EditConfig::default()
        };
        let rep = edit(&f, Schedule::Flow(FlowSchedule), &r, &[0.0], &cfg).unwrap();
        assert_eq!(rep.records.len(), 1);
        assert!(rep.stopped_early);
    }
}
