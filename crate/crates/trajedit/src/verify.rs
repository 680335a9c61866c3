//! Oracle suite run by `trajedit verify`.
//!
//! Each group compares the implementation with an independent computation:
//! finite differences, a Riccati sweep, a brute-force dominance filter, a
//! closed form, or a second code path that must agree exactly. `quick`
//! shrinks instance counts, never tolerances.

use std::fmt::Write as _;
use std::time::Instant;

use anyhow::{ensure, Result};
use rand::Rng;
use trajedit_core::baselines::{
    dps_guidance, gradient_ascent, guided_sample, BaselineConfig, Method, OneJump,
};
use trajedit_core::control::{
    compute_adjoint, edit, pmp_residual, update_control, AdjointPath, EditConfig,
};
use trajedit_core::dynamics::{
    invert_deterministic, make_markovian, rollout, sample, Injection, InversionOptions,
    MarkovOptions, Sampler, StepMap, Trajectory,
};
use trajedit_core::field::{
    train_dsm, train_flow, AnalyticMixtureField, AnyField, Field, FieldKind, GaussianMixture,
    LinearField, TrainHyper,
};
use trajedit_core::math::{norm_inf, sub};
use trajedit_core::pareto::{dominates, front_indices, mean_std};
use trajedit_core::rewards::Reward;
use trajedit_core::rng::{normal_vec, seeded};
use trajedit_core::schedule::{
    AlphaBar, DiffusionSchedule, Mode, Schedule, TimeGrid, DEFAULT_T_MIN,
};

use crate::lqr;

/// One measured quantity against its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    /// `measured <= tolerance` unless the check is a lower bound.
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
            detail: detail.into(),
        }
    }

    pub fn at_least(name: &str, measured: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance: bound,
            passed: measured >= bound,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupResult {
    pub group: &'static str,
    pub checks: Vec<Check>,
    /// Set when the group could not run at all.
    pub error: Option<String>,
    pub seconds: f64,
}

impl GroupResult {
    pub fn passed(&self) -> bool {
        self.error.is_none() && !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

fn family(kind: FieldKind) -> Schedule {
    Schedule::for_kind(kind, AlphaBar::Cosine)
}

fn grid(t: f64, n: usize) -> Result<TimeGrid> {
    Ok(TimeGrid::new(t, n, DEFAULT_T_MIN)?)
}

fn trajectory<F: Field>(s: &Sampler<F>, x1: &[f64], seed: u64) -> Result<Trajectory> {
    Ok(match s.mode() {
        Mode::Deterministic => invert_deterministic(s, x1, InversionOptions::default())?,
        Mode::Markovian => make_markovian(
            s,
            x1,
            seed,
            MarkovOptions {
                residual_bound: None,
            },
        )?,
    })
}

/// Terminal reward of a zero-control replay started from `x` at index `k`.
fn replay_reward<M: StepMap>(s: &M, tr: &Trajectory, k: usize, x: &[f64], r: &Reward) -> f64 {
    let mut x = x.to_vec();
    for j in k..s.steps() {
        x = s
            .step(j, &x)
            .iter()
            .zip(&tr.residuals[j])
            .map(|(m, b)| m + b)
            .collect();
    }
    r.value(&x)
}

/// Worst error of the adjoint against central differences of the replayed
/// terminal reward, relative to `max(|p_k|∞, 1e-8)`, over all grid indices.
pub fn adjoint_fd_error<M: StepMap>(s: &M, tr: &Trajectory, r: &Reward, w: f64) -> Result<f64> {
    let p = compute_adjoint(s, &tr.states, r, w)?;
    let mut worst: f64 = 0.0;
    for k in 0..=s.steps() {
        let x = &tr.states[k];
        let h = 1e-5 * norm_inf(x).max(1.0);
        let scale = norm_inf(&p.adjoints[k]).max(1e-8);
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = -w * (replay_reward(s, tr, k, &xp, r) - replay_reward(s, tr, k, &xm, r))
                / (2.0 * h);
            worst = worst.max((fd - p.adjoints[k][i]).abs() / scale);
        }
    }
    Ok(worst)
}

fn random_mixture(d: usize, seed: u64) -> Result<GaussianMixture> {
    let mut rng = seeded(seed);
    let means = (0..3).map(|_| normal_vec(&mut rng, d)).collect();
    Ok(GaussianMixture::new(means, vec![0.5, 0.3, 0.2], 0.3)?)
}

/// Finite-difference adjoint check for `d ∈ {1, 2, 4}`, `n ∈ {8, 32}`, both
/// families and both modes, on analytic and on briefly trained fields.
pub fn adjoint_exactness(quick: bool) -> Result<Vec<Check>> {
    let dims: &[usize] = if quick { &[1, 2] } else { &[1, 2, 4] };
    let hyper = TrainHyper {
        hidden: vec![16, 16],
        epochs: 2,
        steps_per_epoch: 20,
        batch_size: 32,
        ..TrainHyper::default()
    };
    let mut out = Vec::new();
    for kind in [FieldKind::DiffusionEps, FieldKind::FlowVelocity] {
        for &d in dims {
            let mix = random_mixture(d, d as u64)?;
            let mut rng = seeded(100 + d as u64);
            let data: Vec<Vec<f64>> = (0..128).map(|_| mix.sample(&mut rng)).collect();
            let trained = match kind {
                FieldKind::DiffusionEps => {
                    train_dsm(&data, &DiffusionSchedule::default(), &hyper)?.0
                }
                FieldKind::FlowVelocity => train_flow(&data, &hyper)?.0,
            };
            let fields = [
                (
                    "analytic",
                    AnyField::Mixture(AnalyticMixtureField::new(kind, mix, AlphaBar::Cosine)),
                ),
                ("trained", AnyField::Mlp(trained)),
            ];
            let r = Reward::quadratic(normal_vec(&mut rng, d), 0.7);
            for (label, f) in &fields {
                let mut worst: f64 = 0.0;
                let mut cases = 0;
                for n in [8usize, 32] {
                    for mode in [Mode::Deterministic, Mode::Markovian] {
                        let s = Sampler::new(f, family(kind), grid(0.4, n)?, mode)?;
                        let x1 = normal_vec(&mut rng, d);
                        let tr = trajectory(&s, &x1, 7)?;
                        worst = worst.max(adjoint_fd_error(&s, &tr, &r, 1.3)?);
                        cases += 1;
                    }
                }
                out.push(Check::at_most(
                    &format!("adjoint fd {} {label} d={d}", kind.as_str()),
                    worst,
                    1e-4,
                    format!("{cases} trajectories, worst relative error"),
                ));
            }
        }
    }
    Ok(out)
}

/// DPS guidance against the negated adjoint of the one-jump trajectory.
pub fn dps_adjoint_identity(pairs: usize) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mix = GaussianMixture::ring(6, 1.5, 0.1)?;
    for kind in [FieldKind::DiffusionEps, FieldKind::FlowVelocity] {
        let f = AnalyticMixtureField::new(kind, mix.clone(), AlphaBar::Cosine);
        let schedule = family(kind);
        let r = Reward::quadratic(vec![1.0, -0.5], 0.8);
        let mut rng = seeded(42);
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let x: Vec<f64> = normal_vec(&mut rng, 2).iter().map(|v| 2.0 * v).collect();
            let t = rng.random_range(0.02..0.98);
            let w = rng.random_range(0.1..3.0);
            let g = dps_guidance(&f, schedule, &r, &x, t, w)?;
            let jump = OneJump::new(&f, schedule, t)?;
            let states = vec![x.clone(), jump.step(0, &x)];
            let p = compute_adjoint(&jump, &states, &r, w)?;
            let diff: Vec<f64> = g.iter().zip(&p.adjoints[0]).map(|(a, b)| a + b).collect();
            worst = worst.max(norm_inf(&diff) / norm_inf(&g).max(1.0));
        }
        out.push(Check::at_most(
            &format!("dps guidance vs adjoint {}", kind.as_str()),
            worst,
            1e-10,
            format!("{pairs} random (x, t) pairs"),
        ));
    }
    Ok(out)
}

/// Converged edits on linear flow fields with a quadratic target against the
/// Riccati optimum: `d = 2`, `n = 64`, `N = 200`, `λ = 0.2`.
pub fn lqr_oracle(instances: usize) -> Result<Vec<Check>> {
    let (t_start, n) = (0.36, 64);
    let mut worst_cost: f64 = 0.0;
    let mut worst_pmp: f64 = 0.0;
    let mut worst_control: f64 = 0.0;
    let mut worst_value: f64 = 0.0;
    for i in 0..instances {
        let mut rng = seeded(1000 + i as u64);
        let a: Vec<f64> = normal_vec(&mut rng, 4).iter().map(|v| 0.5 * v).collect();
        let target: Vec<f64> = normal_vec(&mut rng, 2).iter().map(|v| 1.5 * v).collect();
        let x1 = normal_vec(&mut rng, 2);
        let field = LinearField::new(FieldKind::FlowVelocity, 2, a.clone())?;
        let reward = Reward::quadratic(target.clone(), 1.0);
        let config = EditConfig {
            t_start,
            n_steps: n,
            iterations: 200,
            learning_rate: 0.2,
            reward_weight: 1.0,
            ..EditConfig::default()
        };
        let report = edit(
            &field,
            family(FieldKind::FlowVelocity),
            &reward,
            &x1,
            &config,
        )?;
        let dt = report.trajectory.grid.dt();
        let x0 = &report.trajectory.states[0];
        let opt = lqr::solve(&a, 2, dt, n, &target, 1.0, x0)?;
        ensure!(opt.cost > 0.0, "degenerate LQR instance {i}");
        let last = report.last();
        worst_cost = worst_cost.max((last.cost - opt.cost).abs() / opt.cost);
        worst_pmp = worst_pmp.max(last.pmp_residual);
        // the value function and a forward evaluation of the Riccati
        // controls must agree: the oracle checks itself
        let v = lqr::evaluate(&a, 2, dt, &target, 1.0, x0, &opt.controls);
        worst_value = worst_value.max((v - opt.cost).abs() / opt.cost);
        let du: f64 = report
            .controls
            .iter()
            .zip(&opt.controls)
            .map(|(u, v)| sub(u, v).iter().map(|e| e * e).sum::<f64>())
            .sum();
        let un: f64 = opt.controls.iter().flatten().map(|v| v * v).sum();
        worst_control = worst_control.max((du / un.max(1e-300)).sqrt());
    }
    Ok(vec![
        Check::at_most(
            "lqr cost vs riccati",
            worst_cost,
            0.05,
            format!("{instances} instances, relative gap"),
        ),
        Check::at_most(
            "lqr pmp residual",
            worst_pmp,
            1e-3,
            "max |u + p| after 200 iterations",
        ),
        Check::at_most(
            "lqr control l2",
            worst_control,
            0.05,
            "relative l2 gap to the Riccati controls",
        ),
        Check::at_most(
            "riccati value vs rollout",
            worst_value,
            0.02,
            "value function against forward cost",
        ),
    ])
}

/// Markovian replay, deterministic replay and round trip, and the `w = 0`
/// identity.
pub fn replay_contracts() -> Result<Vec<Check>> {
    let ring = GaussianMixture::ring(8, 2.0, 0.05)?;
    let sources = [[2.0, 0.05], [-1.3, 1.5], [0.1, -1.95]];
    let (mut markov, mut det_replay, mut round_trip, mut identity): (f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0);
    for kind in [FieldKind::DiffusionEps, FieldKind::FlowVelocity] {
        let f = AnalyticMixtureField::new(kind, ring.clone(), AlphaBar::Cosine);
        for mode in [Mode::Deterministic, Mode::Markovian] {
            let s = Sampler::new(&f, family(kind), grid(0.3, 100)?, mode)?;
            for (j, x1) in sources.iter().enumerate() {
                let tr = trajectory(&s, x1, j as u64)?;
                // one-step map plus residual against the recorded next state
                let err = (0..100)
                    .map(|k| {
                        let next: Vec<f64> = s
                            .step(k, &tr.states[k])
                            .iter()
                            .zip(&tr.residuals[k])
                            .map(|(m, b)| m + b)
                            .collect();
                        norm_inf(&sub(&next, &tr.states[k + 1]))
                    })
                    .fold(0.0, f64::max);
                let zero = vec![vec![0.0; 2]; 100];
                let replay = rollout(&s, &tr, &zero, Injection::Additive)?;
                ensure!(replay == tr, "zero-control rollout left the recorded path");
                match mode {
                    Mode::Markovian => markov = markov.max(err),
                    Mode::Deterministic => {
                        det_replay = det_replay.max(err);
                        round_trip =
                            round_trip.max(norm_inf(&sub(&sample(&s, &tr.states[0])?, x1)));
                    }
                }
                let config = EditConfig {
                    reward_weight: 0.0,
                    mode,
                    seed: j as u64,
                    markov: MarkovOptions {
                        residual_bound: None,
                    },
                    ..EditConfig::default()
                };
                let rep = edit(
                    &f,
                    family(kind),
                    &Reward::linear(vec![1.0, 0.0]),
                    x1,
                    &config,
                )?;
                identity = identity.max(norm_inf(&sub(rep.edited(), x1)));
            }
        }
    }
    Ok(vec![
        Check::at_most(
            "markovian replay",
            markov,
            1e-12,
            "max one-step gap, zero control",
        ),
        Check::at_most(
            "deterministic replay",
            det_replay,
            1e-9,
            "max one-step gap, zero control",
        ),
        Check::at_most(
            "inversion round trip",
            round_trip,
            1e-6,
            "n = 100, analytic mixture",
        ),
        Check::at_most("w = 0 identity", identity, 1e-12, "edited minus source"),
    ])
}

/// Adjoint linearity in `w` and the geometric contraction of the update.
pub fn linearity_contracts() -> Result<Vec<Check>> {
    let mut lin: f64 = 0.0;
    let ring = GaussianMixture::ring(6, 1.5, 0.1)?;
    let mut rng = seeded(5);
    for kind in [FieldKind::DiffusionEps, FieldKind::FlowVelocity] {
        let f = AnalyticMixtureField::new(kind, ring.clone(), AlphaBar::Cosine);
        for mode in [Mode::Deterministic, Mode::Markovian] {
            let s = Sampler::new(&f, family(kind), grid(0.5, 12)?, mode)?;
            for _ in 0..10 {
                let tr = trajectory(&s, &normal_vec(&mut rng, 2), 3)?;
                let r = Reward::quadratic(normal_vec(&mut rng, 2), 1.0);
                let w = rng.random_range(0.0..5.0);
                let p1 = compute_adjoint(&s, &tr.states, &r, w)?;
                let p2 = compute_adjoint(&s, &tr.states, &r, 2.0 * w)?;
                for (a, b) in p1
                    .adjoints
                    .iter()
                    .flatten()
                    .zip(p2.adjoints.iter().flatten())
                {
                    lin = lin.max((2.0 * a - b).abs() / (1.0 + b.abs()));
                }
            }
        }
    }
    let mut contraction: f64 = 0.0;
    for _ in 0..50 {
        let adj = AdjointPath {
            adjoints: (0..5).map(|_| normal_vec(&mut rng, 3)).collect(),
            reward_weight: 1.0,
        };
        let u0: Vec<Vec<f64>> = (0..4).map(|_| normal_vec(&mut rng, 3)).collect();
        let lambda: f64 = rng.random_range(0.0..1.0);
        let steps = rng.random_range(1..30);
        let r0 = pmp_residual(&u0, &adj);
        let mut u = u0;
        for _ in 0..steps {
            u = update_control(&u, &adj, lambda);
        }
        let expect = (1.0 - lambda).powi(steps) * r0;
        contraction = contraction.max((pmp_residual(&u, &adj) - expect).abs() / (1.0 + r0));
    }
    Ok(vec![
        Check::at_most(
            "adjoint w-linearity",
            lin,
            1e-12,
            "p(2w) - 2 p(w), relative",
        ),
        Check::at_most(
            "update contraction",
            contraction,
            1e-12,
            "residual vs (1 - λ)^k r0",
        ),
    ])
}

/// Degenerate TFG and FreeDoM configurations against DPS.
pub fn structural_reductions() -> Result<Vec<Check>> {
    let ring = GaussianMixture::ring(8, 2.0, 0.05)?;
    let (mut tfg, mut freedom): (f64, f64) = (0.0, 0.0);
    let mut rng = seeded(9);
    for kind in [FieldKind::DiffusionEps, FieldKind::FlowVelocity] {
        let f = AnalyticMixtureField::new(kind, ring.clone(), AlphaBar::Cosine);
        for _ in 0..5 {
            let x1 = ring.sample(&mut rng);
            let r = Reward::quadratic(normal_vec(&mut rng, 2), 0.5);
            let rho = rng.random_range(0.1..2.0);
            let base = BaselineConfig {
                method: Method::Dps,
                rho,
                n_steps: 30,
                seed: rng.random(),
                ..BaselineConfig::default()
            };
            let dps = guided_sample(&f, family(kind), &r, &x1, &base)?;
            let t = guided_sample(
                &f,
                family(kind),
                &r,
                &x1,
                &BaselineConfig {
                    method: Method::Tfg,
                    mu: 0.0,
                    gamma_bar: 0.0,
                    n_iter: 1,
                    n_recur: 1,
                    ..base.clone()
                },
            )?;
            let fr = guided_sample(
                &f,
                family(kind),
                &r,
                &x1,
                &BaselineConfig {
                    method: Method::FreeDoM,
                    n_recur: 1,
                    ..base.clone()
                },
            )?;
            tfg = tfg.max(norm_inf(&sub(&t, &dps)));
            freedom = freedom.max(norm_inf(&sub(&fr, &dps)));
        }
    }
    // GA on a linear probe moves exactly N·λ along the direction
    let a = vec![0.3, -1.2];
    let x = vec![0.5, 0.25];
    let out = gradient_ascent(&Reward::linear(a.clone()), &x, 8, 0.125)?;
    let ga = (0..2)
        .map(|i| (out[i] - (x[i] + a[i])).abs())
        .fold(0.0, f64::max);
    Ok(vec![
        Check::at_most("tfg reduces to dps", tfg, 1e-9, "N_iter = 1, μ = 0, γ̄ = 0"),
        Check::at_most("freedom reduces to dps", freedom, 1e-9, "N_recur = 1"),
        Check::at_most("ga linear in N·λ", ga, 1e-15, "linear probe, N·λ = 1"),
    ])
}

/// Pareto front against the O(n²) dominance filter, and aggregate statistics
/// against a single-pass recomputation.
pub fn pareto_oracles(rounds: usize) -> Result<Vec<Check>> {
    let mut rng = seeded(11);
    let mut mismatches = 0;
    for round in 0..rounds {
        let pairs: Vec<(f64, f64)> = (0..100)
            .map(|_| {
                if round % 2 == 0 {
                    (rng.random::<f64>(), rng.random::<f64>())
                } else {
                    (rng.random_range(0..6) as f64, rng.random_range(0..6) as f64)
                }
            })
            .collect();
        let mut brute: Vec<usize> = (0..pairs.len())
            .filter(|&i| !pairs.iter().any(|&q| dominates(q, pairs[i])))
            .collect();
        brute.sort_by(|&i, &j| pairs[i].1.total_cmp(&pairs[j].1));
        if front_indices(&pairs) != brute {
            mismatches += 1;
        }
    }
    let mut stat: f64 = 0.0;
    for _ in 0..20 {
        let v: Vec<f64> = (0..rng.random_range(2..300))
            .map(|_| rng.random::<f64>() * 10.0 - 3.0)
            .collect();
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for &x in &v {
            n += 1.0;
            let delta = x - mean;
            mean += delta / n;
            m2 += delta * (x - mean);
        }
        let (m, s) = mean_std(&v)?;
        stat = stat
            .max((m - mean).abs())
            .max((s - (m2 / (n - 1.0)).sqrt()).abs());
    }
    Ok(vec![
        Check::at_most(
            "pareto vs brute force",
            mismatches as f64,
            0.0,
            format!("{rounds} random 100-point sets"),
        ),
        Check::at_most("mean/std single pass", stat, 1e-12, "Welford recomputation"),
    ])
}

type GroupFn = Box<dyn Fn() -> Result<Vec<Check>>>;

/// All groups; `quick` uses fewer instances.
pub fn run_suite(quick: bool) -> Vec<GroupResult> {
    let groups: Vec<(&'static str, GroupFn)> = vec![
        (
            "adjoint exactness",
            Box::new(move || adjoint_exactness(quick)),
        ),
        (
            "dps as adjoint",
            Box::new(move || dps_adjoint_identity(if quick { 20 } else { 100 })),
        ),
        (
            "lqr",
            Box::new(move || lqr_oracle(if quick { 3 } else { 10 })),
        ),
        ("replay", Box::new(replay_contracts)),
        ("linearity", Box::new(linearity_contracts)),
        ("reductions", Box::new(structural_reductions)),
        (
            "pareto",
            Box::new(move || pareto_oracles(if quick { 10 } else { 50 })),
        ),
    ];
    groups
        .into_iter()
        .map(|(group, run)| {
            let start = Instant::now();
            let (checks, error) = match run() {
                Ok(c) => (c, None),
                Err(e) => (Vec::new(), Some(format!("{e:#}"))),
            };
            GroupResult {
                group,
                checks,
                error,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

/// Plain-text pass/fail table.
pub fn table(results: &[GroupResult]) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<6} {:<42} {:>12} {:>12}  detail",
        "status", "check", "measured", "tolerance"
    )
    .unwrap();
    for g in results {
        if let Some(e) = &g.error {
            writeln!(
                s,
                "{:<6} {:<42} {:>12} {:>12}  {e}",
                "FAIL", g.group, "-", "-"
            )
            .unwrap();
        }
        for c in &g.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            writeln!(
                s,
                "{status:<6} {:<42} {:>12.3e} {:>12.3e}  {}",
                c.name, c.measured, c.tolerance, c.detail
            )
            .unwrap();
        }
        writeln!(s, "       ({} took {:.2} s)", g.group, g.seconds).unwrap();
    }
    s
}
