use proptest::prelude::*;

use trajedit_core::control::{compute_adjoint, pmp_residual, update_control, AdjointPath};
use trajedit_core::dynamics::{
    invert_deterministic, make_markovian, InversionOptions, MarkovOptions, Sampler,
};
use trajedit_core::field::{AnalyticMixtureField, Field, FieldKind, GaussianMixture, MlpField};
use trajedit_core::math::powi;
use trajedit_core::rewards::Reward;
use trajedit_core::rng::seeded;
use trajedit_core::schedule::{
    AlphaBar, DiffusionSchedule, FlowSchedule, Mode, Schedule, TimeGrid, DEFAULT_T_MIN,
};

fn vec2() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 2)
}

fn ring(kind: FieldKind) -> AnalyticMixtureField {
    AnalyticMixtureField::new(
        kind,
        GaussianMixture::ring(6, 1.5, 0.1).unwrap(),
        AlphaBar::Cosine,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_endpoints_are_pinned(t in 0.001f64..0.999, n in 1usize..500) {
        let g = TimeGrid::new(t, n, DEFAULT_T_MIN).unwrap();
        prop_assert_eq!(g.time(0), t);
        prop_assert_eq!(g.time(n), 1.0);
        let ts = g.times();
        prop_assert!(ts.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(ts.iter().all(|&s| s >= DEFAULT_T_MIN));
    }

    #[test]
    fn schedule_invariants(t in 0.001f64..0.999, n in 1usize..200) {
        let g = TimeGrid::new(t, n, DEFAULT_T_MIN).unwrap();
        for ab in [AlphaBar::Cosine, AlphaBar::Linear] {
            let s = DiffusionSchedule::new(ab);
            for k in 0..n {
                let (a, b) = (g.time(k), g.time(k + 1));
                prop_assert!((s.step_alpha(a, b) * s.alpha_bar(b) - s.alpha_bar(a)).abs() <= 1e-12);
                let eta = s.eta(a, b, Mode::Markovian);
                prop_assert!(1.0 - s.alpha_bar(b) - eta * eta >= 0.0);
                prop_assert_eq!(s.eta(a, b, Mode::Deterministic), 0.0);
            }
        }
        for k in 0..=n {
            let tk = g.time(k);
            let sigma = FlowSchedule.sigma(tk, Mode::Markovian);
            let dt = g.dt();
            prop_assert!(sigma.is_finite());
            prop_assert!((sigma * sigma - 2.0 * (1.0 - tk) * dt / tk / dt).abs() <= 1e-9 * (1.0 + sigma * sigma));
        }
    }

    #[test]
    fn vjp_is_linear(x in vec2(), y1 in vec2(), y2 in vec2(), a in -2.0f64..2.0, b in -2.0f64..2.0, t in 0.05f64..0.95, seed in 0u64..1000) {
        let mlp = MlpField::random(FieldKind::DiffusionEps, 2, &[8, 8], &mut seeded(seed)).unwrap();
        let fields: [&dyn Field; 3] = [&ring(FieldKind::DiffusionEps), &ring(FieldKind::FlowVelocity), &mlp];
        for f in fields {
            let comb: Vec<f64> = y1.iter().zip(&y2).map(|(p, q)| a * p + b * q).collect();
            let lhs = f.vjp(&x, t, &comb);
            let (v1, v2) = (f.vjp(&x, t, &y1), f.vjp(&x, t, &y2));
            for i in 0..2 {
                prop_assert!((lhs[i] - (a * v1[i] + b * v2[i])).abs() <= 1e-10 * (1.0 + lhs[i].abs()));
            }
        }
    }

    #[test]
    fn single_gaussian_eps_is_scaled_state(x in vec2(), t in 0.0f64..1.0) {
        let m = GaussianMixture::new(vec![vec![0.0, 0.0]], vec![1.0], 1.0).unwrap();
        let f = AnalyticMixtureField::new(FieldKind::DiffusionEps, m, AlphaBar::Cosine);
        let c = (1.0 - DiffusionSchedule::default().alpha_bar(t)).sqrt();
        let e = f.eval(&x, t);
        for i in 0..2 {
            prop_assert!((e[i] - c * x[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn adjoint_is_linear_in_the_weight(x1 in vec2(), target in vec2(), w in 0.0f64..5.0, markov in any::<bool>(), flow in any::<bool>()) {
        let kind = if flow { FieldKind::FlowVelocity } else { FieldKind::DiffusionEps };
        let f = ring(kind);
        let mode = if markov { Mode::Markovian } else { Mode::Deterministic };
        let s = Sampler::new(&f, Schedule::for_kind(kind, AlphaBar::Cosine), TimeGrid::new(0.5, 12, DEFAULT_T_MIN).unwrap(), mode).unwrap();
        let tr = if markov {
            make_markovian(&s, &x1, 3, MarkovOptions { residual_bound: None }).unwrap()
        } else {
            invert_deterministic(&s, &x1, InversionOptions::default()).unwrap()
        };
        let r = Reward::quadratic(target, 1.0);
        let p1 = compute_adjoint(&s, &tr.states, &r, w).unwrap();
        let p2 = compute_adjoint(&s, &tr.states, &r, 2.0 * w).unwrap();
        let terminal: Vec<f64> = r.grad(&tr.states[12]).iter().map(|g| -w * g).collect();
        prop_assert_eq!(p1.terminal(), terminal.as_slice());
        for (a, b) in p1.adjoints.iter().zip(&p2.adjoints) {
            for (a, b) in a.iter().zip(b) {
                prop_assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn control_update_contracts_geometrically(
        p in prop::collection::vec(vec2(), 4),
        u0 in prop::collection::vec(vec2(), 3),
        lambda in 0.0f64..=1.0,
        steps in 1i32..30,
    ) {
        let adj = AdjointPath { adjoints: p, reward_weight: 1.0 };
        let r0 = pmp_residual(&u0, &adj);
        let mut u = u0;
        for _ in 0..steps {
            u = update_control(&u, &adj, lambda);
        }
        prop_assert!((pmp_residual(&u, &adj) - powi(1.0 - lambda, steps) * r0).abs() <= 1e-12 * (1.0 + r0));
    }
}
