//! Acceptance suite. Each test checks one criterion at its stated tolerance and
//! prints a single PASS/FAIL line to stderr (visible without `--nocapture`).

use std::fmt::Display;
use std::io::Write;

use cyberdyn::analysis::{attractivity_experiment_with, BoundConfig, LimitKind, SccLabel, Verdict};
use cyberdyn::graph::{load_edge_list, TemporalGraph};
use cyberdyn::integrate::{integrate, random_initial, IntegrateOptions, Method};
use cyberdyn::model::{validate_properties, DynamicsModel};
use cyberdyn::presets::{Preset, DEFAULT_FRACTIONS, DEFAULT_SEED};
use cyberdyn::process::{mix_seed, Members, ParamProcess};
use cyberdyn::spectral::{fundamental_matrix, mle, ConstantMatrix, FnSystem, MleOptions};
use cyberdyn::{bound_envelope, sandwich_check, scc_classification, AttractivityConfig, ParamBundle};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T_END: f64 = 100.0;

fn report(id: u32, title: &str, ok: bool, detail: impl Display) {
    let line = format!(
        "{} criterion {id} ({title}): {detail}\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "{line}");
}

fn run_preset(name: &str) -> (Preset, cyberdyn::analysis::AttractivityRun) {
    let preset = Preset::single(name, DEFAULT_SEED).unwrap();
    let bundle = preset.desk_bundle(DEFAULT_SEED).unwrap();
    let cfg = AttractivityConfig::new(&preset.fractions, preset.t_end)
        .seed(DEFAULT_SEED)
        .id(name);
    let bundles = preset.trajectory_bundles(&bundle, cfg.fractions.len());
    let run = attractivity_experiment_with(&preset.model, &bundles, &cfg).unwrap();
    (preset, run)
}

#[test]
fn criterion_01_attractivity() {
    let mut ok = true;
    let mut detail = Vec::new();
    for name in ["p1", "p2", "p3"] {
        let (_, run) = run_preset(name);
        let v = &run.verdict;
        let merged = v.max_final_distance < 1e-3;
        let limit_ok = match name {
            "p1" => v.final_means.iter().all(|&m| m < 0.01),
            "p3" => v.final_means.iter().all(|&m| m > 0.05),
            _ => true,
        };
        ok &= merged && limit_ok;
        detail.push(format!(
            "{name} max d(100)={:.2e} <i(100)>={:.4}{}",
            v.max_final_distance,
            v.final_means[0],
            if limit_ok { "" } else { " (limit target missed)" }
        ));
    }
    report(1, "attractivity p1-p3", ok, detail.join("; "));
}

/// Full-scale rerun of the p1 zero-limit check on the Gnutella05 graph when
/// `CYBERDYN_GNUTELLA` points at the SNAP edge list.
#[test]
fn criterion_01_full_scale_p1_when_available() {
    let Ok(path) = std::env::var("CYBERDYN_GNUTELLA") else {
        let _ = std::io::stderr().write_all(b"SKIP criterion 1 full-scale p1: CYBERDYN_GNUTELLA not set\n");
        return;
    };
    let preset = Preset::single("p1", DEFAULT_SEED).unwrap();
    let (graph, _) = load_edge_list(&path).unwrap();
    let bundle = preset
        .bundle(preset.temporal_graph(&graph, DEFAULT_SEED).unwrap())
        .unwrap();
    let cfg = AttractivityConfig::new(&DEFAULT_FRACTIONS, T_END).seed(DEFAULT_SEED);
    let run = cyberdyn::attractivity_experiment(&preset.model, &bundle, &cfg).unwrap();
    let v = &run.verdict;
    let ok = v.max_final_distance < 1e-3 && v.final_means.iter().all(|&m| m < 0.01);
    report(
        1,
        "attractivity p1 on Gnutella05",
        ok,
        format!(
            "max d(100)={:.2e} <i(100)>={:.2e}",
            v.max_final_distance, v.final_means[0]
        ),
    );
}

#[test]
fn criterion_02_pull_positivity() {
    let (_, run) = run_preset("pull@0.5");
    let v = &run.verdict;
    let ok = v.verdict == Verdict::Attractive && v.limit_kind == LimitKind::Positive && v.min_node_final > 1e-3;
    report(
        2,
        "pull-based positivity",
        ok,
        format!(
            "verdict={:?} limit={:?} min node i(100)={:.4}",
            v.verdict, v.limit_kind, v.min_node_final
        ),
    );
}

#[test]
fn criterion_03_bounds() {
    let mut ok = true;
    let mut detail = Vec::new();
    for name in ["p5", "p6", "p7", "p8"] {
        let preset = Preset::single(name, DEFAULT_SEED).unwrap();
        let bundle = preset.desk_bundle(DEFAULT_SEED).unwrap();
        let n = bundle.node_count();
        let mut violations = 0;
        let mut zero_b = true;
        for (k, &f) in preset.fractions.iter().enumerate() {
            let i0 = random_initial(n, f, mix_seed(DEFAULT_SEED, k as u64)).unwrap();
            let env = bound_envelope(&preset.model, &bundle, &BoundConfig::from_initial(&i0, preset.t_end)).unwrap();
            let opts = IntegrateOptions::new(preset.t_end).method(preset.default_method());
            let tr = integrate(&preset.model, &bundle, &i0, &opts).unwrap();
            violations += sandwich_check(&tr, &env).unwrap().violations;
            zero_b &= env.nodes.iter().all(|c| c.b_lower == 0.0);
        }
        let needs_zero_b = matches!(name, "p6" | "p8");
        ok &= violations == 0 && (!needs_zero_b || zero_b);
        detail.push(format!(
            "{name} violations={violations}{}",
            if needs_zero_b {
                format!(" lower B=0:{zero_b}")
            } else {
                String::new()
            }
        ));
    }
    report(3, "sandwich bounds p5-p8", ok, detail.join("; "));
}

#[test]
fn criterion_04_counterexamples() {
    let mut ok = true;
    let mut detail = Vec::new();
    for name in ["p9", "p10", "p11"] {
        let (_, run) = run_preset(name);
        let v = &run.verdict;
        let separation = v.pairwise.iter().map(|p| p.min_final_half).fold(0.0, f64::max);
        let pass = v.verdict == Verdict::NotAttractive && separation > 0.05;
        ok &= pass;
        detail.push(format!(
            "{name} verdict={:?} max pair separation over final half={separation:.4}",
            v.verdict
        ));
    }
    report(4, "counterexamples p9-p11", ok, detail.join("; "));
}

fn random_cooperative(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let scale = 2.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |r, c| {
        if r == c {
            rng.gen_range(-2.0..0.0)
        } else if rng.gen_bool(0.3) {
            rng.gen_range(0.0..scale)
        } else {
            0.0
        }
    })
}

fn dominant_real_part(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn criterion_05_spectral_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(2..=64);
        let m = random_cooperative(&mut rng, n);
        let oracle = dominant_real_part(&m);
        let est = mle(&mut ConstantMatrix(m), &MleOptions::new(500.0)).unwrap();
        worst = worst.max((est.mu - oracle).abs());
    }
    let mle_ok = worst < 1e-2;

    // time-varying cooperative samples: Φ(t, s) ≥ 0 entrywise
    let mut min_entry = f64::INFINITY;
    for _ in 0..100 {
        let n = rng.gen_range(2..=8);
        let base = random_cooperative(&mut rng, n);
        let phase: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..6.3)).collect();
        let diag_amp: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut sys = FnSystem::new(n, move |t: f64| {
            DMatrix::from_fn(n, n, |r, c| {
                let s = (t + phase[r * n + c]).sin();
                if r == c {
                    base[(r, c)] + diag_amp[r] * s
                } else {
                    base[(r, c)] * (1.0 + s)
                }
            })
        });
        let s = rng.gen_range(0.0..5.0);
        let t = s + rng.gen_range(0.5..5.0);
        let u = fundamental_matrix(&mut sys, t, s, 0.01, Method::Rk4).unwrap();
        min_entry = min_entry.min(u.min());
    }
    let nonneg_ok = min_entry >= -1e-9;

    // strongly connected mean structure with arcs active only part of the time
    let n = 6;
    let mut sys = FnSystem::new(n, move |t: f64| {
        DMatrix::from_fn(n, n, |r, c| {
            if r == c {
                -0.5
            } else if r == (c + 1) % n {
                0.8 * (t + c as f64).sin().max(0.0)
            } else {
                0.0
            }
        })
    });
    let u = fundamental_matrix(&mut sys, 3.0 + 20.0, 3.0, 0.01, Method::Rk4).unwrap();
    let positive_ok = u.min() > 0.0;

    report(
        5,
        "spectral oracle",
        mle_ok && nonneg_ok && positive_ok,
        format!(
            "max |mu - eig| over 20 matrices={worst:.2e}; min Phi entry over 100 samples={min_entry:.2e}; min Phi(23,3) on 6-cycle={:.2e}",
            u.min()
        ),
    );
}

fn small_bundle(seed: u64, alpha_zero: bool) -> ParamBundle {
    let graph = cyberdyn::graph::erdos_renyi(30, 0.2, seed)
        .unwrap()
        .with_perturbation(Some(cyberdyn::Perturbation::standard(seed)))
        .unwrap();
    let alpha = if alpha_zero {
        ParamProcess::constant(0.0)
    } else {
        ParamProcess::sinusoidal(0.2, &[(0.1, 3.0, 0.0)])
            .masked(Members::Fraction { fraction: 0.5, seed })
            .unwrap()
    };
    ParamBundle::new(
        graph,
        alpha,
        ParamProcess::sinusoidal(0.4, &[(0.1, 1.0, 0.0), (0.1, 2f64.sqrt(), 0.0)]),
        ParamProcess::sinusoidal(0.3, &[(0.2, 0.6, 0.0)]),
    )
    .unwrap()
}

#[test]
fn criterion_06_calculus() {
    let bundle = small_bundle(3, false);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for model in [DynamicsModel::prod(), DynamicsModel::sum()] {
        for _ in 0..100 {
            let t = rng.gen_range(0.0..50.0);
            let snap = bundle.snapshot(t);
            let state: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..1.0)).collect();
            let exact = model.jacobian(&state, &snap).unwrap().to_dense();
            let fd = model.finite_difference_jacobian(&state, &snap);
            worst = worst.max((exact - fd).abs().max());
        }
    }
    let fd_ok = worst < 1e-6;

    let mut agree = true;
    let no_pull = small_bundle(3, true);
    for k in 0..20 {
        let t = k as f64 * 2.5;
        let snap = bundle.snapshot(t);
        let prod = DynamicsModel::prod().jacobian_at_zero(&snap).unwrap().to_dense();
        let sum = DynamicsModel::sum().jacobian_at_zero(&snap).unwrap().to_dense();
        agree &= prod == sum;
        // without pull the analytic Jacobians at zero coincide as well
        let snap = no_pull.snapshot(t);
        let zero = vec![0.0; 30];
        let prod = DynamicsModel::prod().jacobian(&zero, &snap).unwrap().to_dense();
        let sum = DynamicsModel::sum().jacobian(&zero, &snap).unwrap().to_dense();
        agree &= (prod - sum).abs().max() < 1e-15;
    }
    report(
        6,
        "calculus checks",
        fd_ok && agree,
        format!("max |J - FD| over 200 states={worst:.2e}; Pi/Sigma zero-state Jacobians identical: {agree}"),
    );
}

#[test]
fn criterion_07_flow_order() {
    let preset = Preset::single("p2", DEFAULT_SEED).unwrap();
    let bundle = preset.desk_bundle(DEFAULT_SEED).unwrap();
    let n = bundle.node_count();
    let opts = IntegrateOptions::new(T_END).method(Method::Euler);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mono_gap = 0.0f64;
    let mut subhom_gap = 0.0f64;
    for model in [DynamicsModel::sum(), DynamicsModel::prod()] {
        for _ in 0..20 {
            let lo: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|&x| (x + rng.gen_range(0.0..0.5)).min(1.0)).collect();
            let eta = rng.gen_range(0.01..0.99);
            let scaled: Vec<f64> = lo.iter().map(|x| eta * x).collect();
            let a = integrate(&model, &bundle, &lo, &opts).unwrap();
            let b = integrate(&model, &bundle, &hi, &opts).unwrap();
            let c = integrate(&model, &bundle, &scaled, &opts).unwrap();
            for k in 0..a.len() {
                let (sa, sb, sc) = (a.state(k).unwrap(), b.state(k).unwrap(), c.state(k).unwrap());
                for v in 0..n {
                    mono_gap = mono_gap.max(sa[v] - sb[v]);
                    subhom_gap = subhom_gap.max(eta * sa[v] - sc[v]);
                }
            }
        }
    }
    report(
        7,
        "flow order properties",
        mono_gap <= 1e-9 && subhom_gap <= 1e-9,
        format!("max violation: monotonicity={mono_gap:.2e} subhomogeneity={subhom_gap:.2e}"),
    );
}

#[test]
fn criterion_08_property_validators() {
    let bundle = small_bundle(8, false);
    let prod = validate_properties(&DynamicsModel::prod(), &bundle, 1000, 8, 50.0).unwrap();
    let sum = validate_properties(&DynamicsModel::sum(), &bundle, 1000, 8, 50.0).unwrap();
    let p9 = Preset::single("p9", DEFAULT_SEED).unwrap();
    let squared = validate_properties(&p9.model, &bundle, 1000, 8, 50.0).unwrap();
    let sub = squared.check("subhomogeneity").unwrap();
    let witness = sub.witness.clone().unwrap_or_default();
    let ok = prod.all_passed() && sum.all_passed() && !sub.passed && !witness.is_empty();
    let _ = std::io::stderr().write_all(format!("squared-mean subhomogeneity witness: {witness}\n").as_bytes());
    report(
        8,
        "property validators",
        ok,
        format!(
            "prod all passed={} sum all passed={} squared-mean subhomogeneity failed={}",
            prod.all_passed(),
            sum.all_passed(),
            !sub.passed
        ),
    );
}

struct SccCase {
    n: usize,
    arcs: Vec<(usize, usize)>,
    pulled: Vec<usize>,
    /// Expected per-node limit: true for positive.
    positive: Vec<bool>,
}

fn cycle(nodes: &[usize]) -> Vec<(usize, usize)> {
    (0..nodes.len())
        .map(|k| (nodes[k], nodes[(k + 1) % nodes.len()]))
        .collect()
}

fn complete(nodes: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for &a in nodes {
        for &b in nodes {
            if a != b {
                out.push((a, b));
            }
        }
    }
    out
}

/// With γ = 0.3 and β = 0.5, a 2-cycle or a singleton decays on its own
/// while a complete digraph on 3 or more nodes does not.
fn scc_cases() -> Vec<SccCase> {
    let join = |parts: Vec<Vec<(usize, usize)>>| parts.concat();
    vec![
        SccCase {
            n: 4,
            arcs: join(vec![cycle(&[0, 1]), vec![(1, 2)], cycle(&[2, 3])]),
            pulled: vec![],
            positive: vec![false; 4],
        },
        SccCase {
            n: 5,
            arcs: join(vec![complete(&[0, 1, 2]), vec![(2, 3)], cycle(&[3, 4])]),
            pulled: vec![],
            positive: vec![true; 5],
        },
        SccCase {
            n: 5,
            arcs: join(vec![cycle(&[0, 1]), vec![(1, 2)], complete(&[2, 3, 4])]),
            pulled: vec![],
            positive: vec![false, false, true, true, true],
        },
        SccCase {
            n: 3,
            arcs: join(vec![cycle(&[0, 1]), vec![(1, 2)]]),
            pulled: vec![2],
            positive: vec![false, false, true],
        },
        SccCase {
            n: 3,
            arcs: join(vec![vec![(0, 1)], cycle(&[1, 2])]),
            pulled: vec![0],
            positive: vec![true; 3],
        },
        SccCase {
            n: 6,
            arcs: join(vec![cycle(&[0, 1]), complete(&[2, 3, 4, 5])]),
            pulled: vec![],
            positive: vec![false, false, true, true, true, true],
        },
        SccCase {
            n: 8,
            arcs: join(vec![
                cycle(&[0, 1]),
                vec![(1, 2)],
                cycle(&[2, 3]),
                vec![(3, 4)],
                complete(&[4, 5, 6]),
                vec![(6, 7)],
            ]),
            pulled: vec![],
            positive: vec![false, false, false, false, true, true, true, true],
        },
        SccCase {
            n: 6,
            arcs: join(vec![
                vec![(0, 1), (0, 3)],
                cycle(&[1, 2]),
                cycle(&[3, 4]),
                vec![(2, 5), (4, 5)],
            ]),
            pulled: vec![],
            positive: vec![false; 6],
        },
        SccCase {
            n: 6,
            arcs: join(vec![
                vec![(0, 1), (0, 3)],
                cycle(&[1, 2]),
                cycle(&[3, 4]),
                vec![(2, 5), (4, 5)],
            ]),
            pulled: vec![1],
            positive: vec![false, true, true, false, false, true],
        },
        SccCase {
            n: 8,
            arcs: join(vec![
                vec![(0, 1)],
                cycle(&[1, 2]),
                vec![(2, 3)],
                complete(&[3, 4, 5]),
                cycle(&[6, 7]),
            ]),
            pulled: vec![0],
            positive: vec![true, true, true, true, true, true, false, false],
        },
    ]
}

#[test]
fn criterion_09_scc_regression() {
    let mut mismatches = Vec::new();
    let cases = scc_cases();
    for (c, case) in cases.iter().enumerate() {
        let graph = TemporalGraph::from_arcs(case.n, case.arcs.iter().copied()).unwrap();
        let alpha = ParamProcess::constant(0.2)
            .masked(Members::Nodes {
                nodes: case.pulled.clone(),
            })
            .unwrap();
        let bundle = ParamBundle::new(graph, alpha, ParamProcess::constant(0.5), ParamProcess::constant(0.3)).unwrap();
        let model = DynamicsModel::sum();
        let rep = scc_classification(&model, &bundle, 50.0, &MleOptions::new(200.0)).unwrap();
        let tr = integrate(&model, &bundle, &vec![0.5; case.n], &IntegrateOptions::new(400.0)).unwrap();
        for v in 0..case.n {
            let label = rep.label_of(v).unwrap();
            let simulated = tr.final_state[v] > 1e-4;
            let labelled = match label {
                SccLabel::PositiveAttractive => Some(true),
                SccLabel::ZeroAttractive => Some(false),
                SccLabel::AttractivePossiblyZero => None,
            };
            if labelled != Some(case.positive[v]) || simulated != case.positive[v] {
                mismatches.push(format!(
                    "case {c} node {v}: expected {} label {label:?} simulated {:.2e}",
                    case.positive[v], tr.final_state[v]
                ));
            }
        }
    }
    report(
        9,
        "SCC classification regression",
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{} graphs, all labels match theory and simulation", cases.len())
        } else {
            mismatches.join("; ")
        },
    );
}

#[test]
fn criterion_10_numerics() {
    let mut worst_method = 0.0f64;
    let mut worst_halving = 0.0f64;
    for name in ["p1", "p2", "p3"] {
        let preset = Preset::single(name, DEFAULT_SEED).unwrap();
        let bundle = preset.desk_bundle(DEFAULT_SEED).unwrap();
        let i0 = random_initial(bundle.node_count(), 0.5, mix_seed(DEFAULT_SEED, 1)).unwrap();
        let run = |method, dt| {
            integrate(
                &preset.model,
                &bundle,
                &i0,
                &IntegrateOptions::new(T_END).method(method).dt(dt),
            )
            .unwrap()
        };
        let euler = run(Method::Euler, 0.05);
        let rk4 = run(Method::Rk4, 0.05);
        let half = run(Method::Euler, 0.025);
        let sup = euler
            .mean_series
            .iter()
            .zip(&rk4.mean_series)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_method = worst_method.max(sup);
        worst_halving = worst_halving.max((euler.final_mean() - half.final_mean()).abs());
    }
    report(
        10,
        "numerics",
        worst_method < 5e-3 && worst_halving < 1e-3,
        format!("max euler/rk4 sup gap={worst_method:.2e}; max dt-halving change={worst_halving:.2e}"),
    );
}
