use cyberdyn::analysis::{
    attractivity_experiment, bound_envelope, AttractivityConfig, BoundConfig, LimitKind, Verdict,
};
use cyberdyn::graph::{erdos_renyi, scc_decompose, Perturbation};
use cyberdyn::integrate::{integrate, random_initial, IntegrateOptions, Method};
use cyberdyn::presets::{Preset, DEFAULT_SEED, PRESET_NAMES};
use cyberdyn::process::{mean_value, Index, ParamProcess};
use cyberdyn::spectral::{fundamental_matrix, mle, threshold_report, ConstantMatrix, MleOptions};
use cyberdyn::{DynamicsModel, ParamBundle};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_bundle(n: usize, p: f64, seed: u64, alpha: f64, beta: f64, gamma: f64) -> ParamBundle {
    let graph = erdos_renyi(n, p, seed)
        .unwrap()
        .with_perturbation(Some(Perturbation::standard(seed)))
        .unwrap();
    ParamBundle::new(
        graph,
        ParamProcess::sinusoidal(alpha, &[(alpha / 2.0, 3.0, 0.0)]),
        ParamProcess::sinusoidal(beta, &[(0.1, 1.0, 0.0), (0.1, 2f64.sqrt(), 0.0)]),
        ParamProcess::sinusoidal(gamma, &[(gamma / 2.0, 0.6, 0.0)]),
    )
    .unwrap()
}

#[test]
fn epochs_are_reproducible() {
    let build = || {
        erdos_renyi(120, 0.05, 3)
            .unwrap()
            .with_perturbation(Some(Perturbation::standard(11)))
            .unwrap()
    };
    let (a, b) = (build(), build());
    for k in 0..12 {
        let (ea, eb) = (a.epoch(k), b.epoch(k));
        assert_eq!(ea.fingerprint(), eb.fingerprint());
        for v in 0..ea.node_count() {
            let row = ea.in_neighbors(v);
            assert!(row.windows(2).all(|w| w[0] < w[1]), "duplicate or unsorted arcs");
            assert!(!row.contains(&(v as u32)), "self-loop");
        }
    }
}

#[test]
fn parameters_reproducible_at_many_probe_times() {
    for name in PRESET_NAMES {
        for preset in Preset::load(name, DEFAULT_SEED).unwrap() {
            let again = Preset::load(&preset.name, DEFAULT_SEED).unwrap().remove(0);
            let a = preset.desk_bundle(DEFAULT_SEED).unwrap();
            let b = again.desk_bundle(DEFAULT_SEED).unwrap();
            for k in 0..10_000 {
                let t = k as f64 * 0.0137;
                let v = k % 200;
                assert_eq!(
                    a.alpha.eval(t, Index::Node(v)).unwrap(),
                    b.alpha.eval(t, Index::Node(v)).unwrap()
                );
                assert_eq!(
                    a.beta.eval(t, Index::Node(v)).unwrap(),
                    b.beta.eval(t, Index::Node(v)).unwrap()
                );
            }
        }
    }
}

#[test]
fn disjoint_windows_agree_on_the_mean() {
    let processes = [
        ParamProcess::sinusoidal(0.5, &[(0.1, 1.0, 0.0), (0.1, 2f64.sqrt(), 0.0)]),
        ParamProcess::piecewise_uniform(0.4, 0.7, 9).unwrap(),
    ];
    for p in &processes {
        let a = mean_value(p, Index::Node(3), 0.0, 2000.0, 0.05).unwrap();
        let b = mean_value(p, Index::Node(3), 2000.0, 2000.0, 0.05).unwrap();
        let allowed = 2.0 * a.spread.max(b.spread);
        assert!(
            (a.value - b.value).abs() <= allowed,
            "{} vs {} (allowed {allowed})",
            a.value,
            b.value
        );
    }
}

/// At desk scale p4@0.1 has nodes with `dt·g > 1`, so plain Euler at dt = 0.05
/// overshoots 1 on a small share of steps. That variant is checked separately:
/// its clamped run must still agree with RK4.
#[test]
fn clamp_activity_is_rare() {
    for name in ["p1", "p2", "p3", "p4", "pull", "p5", "p6", "p7", "p8"] {
        for preset in Preset::load(name, DEFAULT_SEED).unwrap() {
            let bundle = preset.desk_bundle(DEFAULT_SEED).unwrap();
            let i0 = random_initial(bundle.node_count(), 0.5, 1).unwrap();
            let tr = integrate(&preset.model, &bundle, &i0, &IntegrateOptions::new(preset.t_end)).unwrap();
            assert_eq!(tr.mean_series.len(), tr.times.len());
            assert!(tr.mean_series.iter().all(|m| (0.0..=1.0).contains(m)));
            if preset.name == "p4@0.1" {
                let rk4 = integrate(
                    &preset.model,
                    &bundle,
                    &i0,
                    &IntegrateOptions::new(preset.t_end).method(Method::Rk4),
                )
                .unwrap();
                assert_eq!(rk4.clamp_events, 0);
                assert!((tr.final_mean() - rk4.final_mean()).abs() < 1e-3);
            } else {
                assert!(tr.clamp_rate() < 1e-3, "{}: {}", preset.name, tr.clamp_rate());
            }
        }
    }
}

#[test]
fn mle_matches_fundamental_matrix_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in [4usize, 16, 64] {
        let m = DMatrix::from_fn(n, n, |r, c| {
            if r == c {
                rng.gen_range(-1.0..0.0)
            } else if rng.gen_bool(0.5) {
                rng.gen_range(0.0..1.0) / n as f64
            } else {
                0.0
            }
        });
        // the two agree up to O(1/T), so the horizon is long and the step coarse
        let horizon = 1000.0;
        let est = mle(&mut ConstantMatrix(m.clone()), &MleOptions::new(horizon).dt(0.2)).unwrap();
        let u = fundamental_matrix(&mut ConstantMatrix(m), horizon, 0.0, 0.2, Method::Rk4).unwrap();
        let spectral_norm = u.singular_values().max();
        let quadrature = spectral_norm.ln() / horizon;
        assert!((est.mu - quadrature).abs() < 1e-3, "n={n}: {} vs {quadrature}", est.mu);
    }
}

#[test]
fn nonnegative_cone_is_preserved() {
    let bundle = small_bundle(20, 0.2, 4, 0.1, 0.4, 0.2);
    let model = DynamicsModel::sum();
    let mut sys = cyberdyn::spectral::Linearization::new(&model, &bundle);
    let u = fundamental_matrix(&mut sys, 15.0, 2.0, 0.05, Method::Rk4).unwrap();
    let propagated = &u * DMatrix::from_element(20, 1, 1.0);
    assert!(propagated.min() >= 0.0);
    assert!(u.min() >= -1e-12);
}

#[test]
fn tighter_tolerance_never_yields_not_attractive() {
    let bundle = small_bundle(40, 0.15, 5, 0.05, 0.4, 0.1);
    let model = DynamicsModel::sum();
    let mut previous = Verdict::Attractive;
    for tol in [1e-1, 1e-3, 1e-6, 1e-9, 1e-13] {
        let cfg = AttractivityConfig::new(&[0.25, 0.75], 30.0).tolerance(tol).seed(2);
        let v = attractivity_experiment(&model, &bundle, &cfg).unwrap().verdict.verdict;
        assert_ne!(v, Verdict::NotAttractive, "tol {tol}");
        if previous == Verdict::Inconclusive {
            assert_eq!(v, Verdict::Inconclusive);
        }
        previous = v;
    }
    assert_eq!(previous, Verdict::Inconclusive);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn condensation_is_ordered_and_partitions(n in 1usize..60, p in 0.0f64..0.15, seed in any::<u64>()) {
        let g = erdos_renyi(n, p, seed).unwrap();
        let scc = scc_decompose(g.base_arcs());
        let mut seen = vec![false; n];
        for comp in &scc.components {
            for &v in comp {
                prop_assert!(!seen[v]);
                seen[v] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        for &(j, k) in &scc.condensation_arcs {
            prop_assert!(j < k);
        }
    }

    #[test]
    fn drift_points_inward_on_the_boundary(
        seed in any::<u64>(),
        t in 0.0f64..50.0,
        prod in any::<bool>(),
        bits in proptest::collection::vec(0u8..3, 25),
    ) {
        let bundle = small_bundle(25, 0.2, seed, 0.1, 0.4, 0.3);
        let model = if prod { DynamicsModel::prod() } else { DynamicsModel::sum() };
        let state: Vec<f64> = bits.iter().map(|&b| match b { 0 => 0.0, 1 => 1.0, _ => 0.5 }).collect();
        let f = model.drift_at(&state, &bundle, t);
        for v in 0..25 {
            if state[v] == 0.0 { prop_assert!(f[v] >= 0.0); }
            if state[v] == 1.0 { prop_assert!(f[v] <= 0.0); }
        }
    }

    #[test]
    fn flow_is_monotone_and_subhomogeneous(
        seed in any::<u64>(),
        prod in any::<bool>(),
        eta in 0.01f64..0.99,
        raise in proptest::collection::vec(0.0f64..0.5, 30),
    ) {
        let bundle = small_bundle(30, 0.2, seed, 0.1, 0.4, 0.3);
        let model = if prod { DynamicsModel::prod() } else { DynamicsModel::sum() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..1.0)).collect();
        let hi: Vec<f64> = lo.iter().zip(&raise).map(|(x, r)| (x + r).min(1.0)).collect();
        let scaled: Vec<f64> = lo.iter().map(|x| eta * x).collect();
        let opts = IntegrateOptions::new(30.0);
        let a = integrate(&model, &bundle, &lo, &opts).unwrap();
        let b = integrate(&model, &bundle, &hi, &opts).unwrap();
        let c = integrate(&model, &bundle, &scaled, &opts).unwrap();
        for k in 0..a.len() {
            let (sa, sb, sc) = (a.state(k).unwrap(), b.state(k).unwrap(), c.state(k).unwrap());
            for v in 0..30 {
                prop_assert!(sa[v] <= sb[v] + 1e-9);
                prop_assert!(sc[v] >= eta * sa[v] - 1e-9);
                prop_assert!((0.0..=1.0).contains(&sa[v]));
            }
        }
    }

    #[test]
    fn mle_ignores_initial_scale(scale in 1e-6f64..1e6) {
        let m = DMatrix::from_row_slice(3, 3, &[-1.0, 0.5, 0.0, 0.2, -0.8, 0.3, 0.0, 0.4, -0.5]);
        let base = mle(&mut ConstantMatrix(m.clone()), &MleOptions::new(50.0)).unwrap();
        let scaled = mle(&mut ConstantMatrix(m), &MleOptions::new(50.0).initial(vec![scale; 3])).unwrap();
        prop_assert!((base.mu - scaled.mu).abs() < 1e-12);
    }

    #[test]
    fn envelopes_stay_ordered(
        alpha in 0.0f64..0.5,
        beta in 0.05f64..1.0,
        gamma in 0.0f64..0.3,
        seed in any::<u64>(),
        t in 0.0f64..200.0,
    ) {
        let bundle = small_bundle(15, 0.2, seed, alpha, beta, gamma);
        let i0 = random_initial(15, 0.5, seed).unwrap();
        let env = bound_envelope(&DynamicsModel::sum(), &bundle, &BoundConfig::from_initial(&i0, 200.0)).unwrap();
        for v in 0..15 {
            prop_assert!(env.lower(v, t) <= env.upper(v, t) + 1e-12);
        }
    }

    #[test]
    fn isolated_envelope_is_exact(alpha in 0.0f64..1.0, beta in 0.01f64..1.0, i0 in 0.0f64..1.0, t in 0.0f64..50.0) {
        let bundle = ParamBundle::constant(cyberdyn::TemporalGraph::new(cyberdyn::ArcSet::empty(1)), alpha, beta, 0.0).unwrap();
        let env = bound_envelope(&DynamicsModel::sum(), &bundle, &BoundConfig::from_initial(&[i0], 50.0)).unwrap();
        let a = alpha + beta;
        let exact = (-a * t).exp() * (i0 - alpha / a) + alpha / a;
        prop_assert!((env.lower(0, t) - exact).abs() < 1e-12);
        prop_assert!((env.upper(0, t) - exact).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn negative_exponent_without_pull_gives_zero_limit(
        seed in any::<u64>(),
        beta in 0.3f64..0.8,
        gamma in 0.0f64..0.05,
    ) {
        let graph = erdos_renyi(30, 0.1, seed).unwrap();
        let bundle = ParamBundle::new(
            graph,
            ParamProcess::constant(0.0),
            ParamProcess::sinusoidal(beta, &[(0.1, 1.0, 0.0)]),
            ParamProcess::sinusoidal(gamma, &[(gamma / 2.0, 0.6, 0.0)]),
        ).unwrap();
        let model = DynamicsModel::sum();
        let report = threshold_report(&model, &bundle, &MleOptions::new(100.0)).unwrap();
        prop_assume!(report.mu < -0.05);
        let t_end = (15.0 / -report.mu).ceil();
        let cfg = AttractivityConfig::new(&[0.25, 0.75], t_end).seed(seed);
        let run = attractivity_experiment(&model, &bundle, &cfg).unwrap();
        prop_assert_eq!(run.verdict.limit_kind, LimitKind::Zero);
    }
}
