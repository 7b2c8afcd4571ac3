//! Experiments on top of the simulator: attractivity verdicts, SCC-wise
//! classification, analytic bound envelopes and periodicity of the attractor.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::bundle::ParamBundle;
use crate::error::{Error, Result};
use crate::graph::{mean_structure, scc_decompose};
use crate::integrate::{
    integrate, random_initial, sig9, trajectory_distance, IntegrateOptions, Method, Storage, Trajectory,
};
use crate::model::{DynamicsModel, RecoveryFamily};
use crate::process::{mean_value, mix_seed, Index};
use crate::spectral::{mle_blocks, Linearization, MleOptions, NEAR_ZERO_BAND};

/// Per-node positivity threshold for the limit classification.
pub const POSITIVE_LIMIT: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct AttractivityConfig {
    pub id: String,
    pub fractions: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub method: Method,
    /// Final pairwise distance below which trajectories count as merged.
    pub tolerance: f64,
    /// Distance a pair must keep over the final half to count as separated.
    pub separation: f64,
    /// Seed for the initial-state shuffles.
    pub seed: u64,
}

impl AttractivityConfig {
    pub fn new(fractions: &[f64], t_end: f64) -> Self {
        AttractivityConfig {
            id: String::new(),
            fractions: fractions.to_vec(),
            t_end,
            dt: crate::integrate::DEFAULT_DT,
            method: Method::Euler,
            tolerance: 1e-3,
            separation: 1e-2,
            seed: 0,
        }
    }

    pub fn id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Attractive,
    NotAttractive,
    Inconclusive,
}

impl Verdict {
    /// Process exit code: 0 pass, 1 fail, 2 inconclusive.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Attractive => 0,
            Verdict::NotAttractive => 1,
            Verdict::Inconclusive => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    Zero,
    Positive,
    Mixed,
}

#[derive(Clone, Debug, Serialize)]
pub struct PairDistance {
    pub a: f64,
    pub b: f64,
    pub final_distance: f64,
    /// Smallest distance over the final half of the horizon.
    pub min_final_half: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttractivityVerdict {
    pub id: String,
    pub initial_fractions: Vec<f64>,
    pub pairwise: Vec<PairDistance>,
    pub max_final_distance: f64,
    pub verdict: Verdict,
    pub limit_kind: LimitKind,
    pub final_means: Vec<f64>,
    /// Smallest node value at `t_end` over all trajectories.
    pub min_node_final: f64,
    /// Nodes whose value stays above the positivity threshold over the final 10%.
    pub positive_nodes: usize,
    pub tracked_nodes: usize,
    pub tolerance: f64,
    pub separation: f64,
    pub t_end: f64,
    pub shared_realization: bool,
}

pub struct AttractivityRun {
    pub verdict: AttractivityVerdict,
    pub trajectories: Vec<Trajectory>,
}

/// One trajectory per initial fraction, all sharing `bundle`'s parameter realization.
pub fn attractivity_experiment(
    model: &DynamicsModel,
    bundle: &ParamBundle,
    cfg: &AttractivityConfig,
) -> Result<AttractivityRun> {
    let bundles = vec![bundle.clone(); cfg.fractions.len()];
    run_attractivity(model, &bundles, cfg, true)
}

/// Like [`attractivity_experiment`] but trajectory `k` uses `bundles[k]`,
/// e.g. independent realizations of a non-ergodic parameter.
pub fn attractivity_experiment_with(
    model: &DynamicsModel,
    bundles: &[ParamBundle],
    cfg: &AttractivityConfig,
) -> Result<AttractivityRun> {
    if bundles.len() != cfg.fractions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} bundles for {} fractions",
            bundles.len(),
            cfg.fractions.len()
        )));
    }
    run_attractivity(model, bundles, cfg, false)
}

fn run_attractivity(
    model: &DynamicsModel,
    bundles: &[ParamBundle],
    cfg: &AttractivityConfig,
    shared: bool,
) -> Result<AttractivityRun> {
    if cfg.fractions.len() < 2 {
        return Err(Error::InvalidArgument("need at least two initial fractions".into()));
    }
    if !cfg.fractions.iter().any(|&f| f > 0.0) {
        return Err(Error::InvalidArgument(
            "at least one initial fraction must be positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..cfg.fractions.len()).collect();
    order.sort_by(|&a, &b| cfg.fractions[a].total_cmp(&cfg.fractions[b]));
    let fractions: Vec<f64> = order.iter().map(|&k| cfg.fractions[k]).collect();
    let bundles: Vec<&ParamBundle> = order.iter().map(|&k| &bundles[k]).collect();
    let n = bundles[0].node_count();
    let opts = IntegrateOptions::new(cfg.t_end)
        .dt(cfg.dt)
        .method(cfg.method)
        .storage(Storage::Auto);

    let trajectories: Vec<Trajectory> = fractions
        .par_iter()
        .zip(bundles.par_iter())
        .enumerate()
        .map(|(k, (&f, b))| {
            let i0 = random_initial(n, f, mix_seed(cfg.seed, k as u64))?;
            let mut tr = integrate(model, b, &i0, &opts)?;
            tr.meta.seed = Some(cfg.seed);
            tr.meta.initial_fraction = Some(f);
            Ok(tr)
        })
        .collect::<Result<_>>()?;

    let len = trajectories[0].len();
    let half = len / 2;
    let mut pairwise = Vec::new();
    let mut max_series = vec![0.0f64; len];
    for a in 0..trajectories.len() {
        for b in a + 1..trajectories.len() {
            let d = trajectory_distance(&trajectories[a], &trajectories[b])?;
            for (m, x) in max_series.iter_mut().zip(&d) {
                *m = m.max(*x);
            }
            pairwise.push(PairDistance {
                a: fractions[a],
                b: fractions[b],
                final_distance: *d.last().expect("non-empty"),
                min_final_half: d[half..].iter().copied().fold(f64::INFINITY, f64::min),
            });
        }
    }
    let max_final_distance = pairwise.iter().map(|p| p.final_distance).fold(0.0, f64::max);
    let tail_start = len - (len / 10).max(1);
    let prev_start = tail_start.saturating_sub((len / 10).max(1));
    let tail_max = max_series[tail_start..].iter().copied().fold(0.0, f64::max);
    let prev_max = max_series[prev_start..tail_start].iter().copied().fold(0.0, f64::max);
    let decreasing_tail = tail_max <= prev_max + 1e-12;
    let separated = pairwise.iter().any(|p| p.min_final_half > cfg.separation);
    let verdict = if max_final_distance < cfg.tolerance && decreasing_tail {
        Verdict::Attractive
    } else if separated {
        Verdict::NotAttractive
    } else {
        Verdict::Inconclusive
    };

    // limit classification on the trajectory from the largest fraction
    let reference = trajectories.last().expect("non-empty");
    let (nodes, _) = reference.tracked(0).ok_or(Error::MissingStates)?;
    let mut node_min = vec![f64::INFINITY; nodes.len()];
    for k in tail_start..len {
        let (_, values) = reference.tracked(k).expect("tracked");
        for (m, x) in node_min.iter_mut().zip(values) {
            *m = m.min(*x);
        }
    }
    let positive_nodes = node_min.iter().filter(|&&m| m > POSITIVE_LIMIT).count();
    let limit_kind = if positive_nodes == nodes.len() {
        LimitKind::Positive
    } else if positive_nodes == 0 {
        LimitKind::Zero
    } else {
        LimitKind::Mixed
    };
    let min_node_final = trajectories
        .iter()
        .flat_map(|t| t.final_state.iter().copied())
        .fold(f64::INFINITY, f64::min);

    Ok(AttractivityRun {
        verdict: AttractivityVerdict {
            id: cfg.id.clone(),
            initial_fractions: fractions,
            pairwise,
            max_final_distance,
            verdict,
            limit_kind,
            final_means: trajectories.iter().map(|t| t.final_mean()).collect(),
            min_node_final,
            positive_nodes,
            tracked_nodes: nodes.len(),
            tolerance: cfg.tolerance,
            separation: cfg.separation,
            t_end: cfg.t_end,
            shared_realization: shared,
        },
        trajectories,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SccLabel {
    ZeroAttractive,
    PositiveAttractive,
    AttractivePossiblyZero,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentReport {
    pub index: usize,
    pub nodes: Vec<usize>,
    /// Components with arcs into this one.
    pub upstream: Vec<usize>,
    /// Some node has a positive mean pull-based attack rate.
    pub has_pull: bool,
    /// Exponent of the component's diagonal block of the zero-state linearization.
    pub mu: f64,
    pub label: SccLabel,
}

#[derive(Clone, Debug, Serialize)]
pub struct SccReport {
    pub horizon: f64,
    pub components: Vec<ComponentReport>,
}

impl SccReport {
    /// Label of the component containing `v`.
    pub fn label_of(&self, v: usize) -> Option<SccLabel> {
        self.components.iter().find(|c| c.nodes.contains(&v)).map(|c| c.label)
    }
}

/// Labels each strongly connected component of the mean attack graph.
///
/// Decision list, applied in topological order:
/// a component with a pulled node, or fed by a positive component, is
/// positive-attractive; otherwise it is zero-attractive when its block
/// exponent is below `-0.01` and every upstream component is zero-attractive;
/// otherwise positive-attractive when the exponent exceeds `0.01`; the rest
/// are attractive-possibly-zero.
pub fn scc_classification(
    model: &DynamicsModel,
    bundle: &ParamBundle,
    horizon: f64,
    mle: &MleOptions,
) -> Result<SccReport> {
    let dt = mle.dt;
    let mean = mean_structure(&bundle.graph, &bundle.gamma, horizon, dt)?;
    let support = mean.support(0.0);
    let scc = scc_decompose(&support);
    let n = bundle.node_count();
    let has_pull: Vec<bool> = (0..n)
        .map(|v| -> Result<bool> {
            if bundle.alpha.support_at(Index::Node(v)).1 <= 0.0 {
                return Ok(false);
            }
            Ok(mean_value(&bundle.alpha, Index::Node(v), 0.0, horizon, dt)?.value > 1e-9)
        })
        .collect::<Result<_>>()?;

    let mut sys = Linearization::new(model, bundle).restricted(scc.component_of.clone());
    let estimates = mle_blocks(&mut sys, &scc.component_of, scc.len(), mle)?;

    let mut labels: Vec<SccLabel> = Vec::with_capacity(scc.len());
    for (k, nodes) in scc.components.iter().enumerate() {
        let upstream = &scc.upstream[k];
        let pulled = nodes.iter().any(|&v| has_pull[v]);
        let mu = estimates[k].mu;
        let label = if pulled || upstream.iter().any(|&j| labels[j] == SccLabel::PositiveAttractive) {
            SccLabel::PositiveAttractive
        } else if mu < -NEAR_ZERO_BAND && upstream.iter().all(|&j| labels[j] == SccLabel::ZeroAttractive) {
            SccLabel::ZeroAttractive
        } else if mu > NEAR_ZERO_BAND {
            SccLabel::PositiveAttractive
        } else {
            SccLabel::AttractivePossiblyZero
        };
        labels.push(label);
    }
    Ok(SccReport {
        horizon,
        components: scc
            .components
            .iter()
            .enumerate()
            .map(|(k, nodes)| ComponentReport {
                index: k,
                nodes: nodes.clone(),
                upstream: scc.upstream[k].clone(),
                has_pull: nodes.iter().any(|&v| has_pull[v]),
                mu: estimates[k].mu,
                label: labels[k],
            })
            .collect(),
    })
}

/// Coefficients of the per-node envelopes
/// `exp(-A t)(i(0) - B/A) + B/A`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NodeBound {
    pub a_lower: f64,
    pub b_lower: f64,
    pub a_upper: f64,
    pub b_upper: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundEnvelope {
    pub nodes: Vec<NodeBound>,
    pub i_min: Vec<f64>,
    pub i_max: Vec<f64>,
    pub i0_lower: Vec<f64>,
    pub i0_upper: Vec<f64>,
}

fn envelope(a: f64, b: f64, i0: f64, t: f64) -> f64 {
    let limit = b / a;
    (-a * t).exp() * (i0 - limit) + limit
}

impl BoundEnvelope {
    pub fn lower(&self, v: usize, t: f64) -> f64 {
        let c = &self.nodes[v];
        envelope(c.a_lower, c.b_lower, self.i0_lower[v], t)
    }

    pub fn upper(&self, v: usize, t: f64) -> f64 {
        let c = &self.nodes[v];
        envelope(c.a_upper, c.b_upper, self.i0_upper[v], t)
    }

    /// Node-averaged envelopes, comparable with `⟨i(t)⟩`.
    pub fn mean_bounds(&self, t: f64) -> (f64, f64) {
        let n = self.nodes.len() as f64;
        let lo: f64 = (0..self.nodes.len()).map(|v| self.lower(v, t)).sum();
        let hi: f64 = (0..self.nodes.len()).map(|v| self.upper(v, t)).sum();
        (lo / n, hi / n)
    }

    /// `t,lower_v,upper_v,...` for the selected nodes, then the node-averaged bounds.
    pub fn write_csv(&self, times: &[f64], nodes: &[usize], mut w: impl Write) -> std::io::Result<()> {
        write!(w, "t")?;
        for v in nodes {
            write!(w, ",lower_{v},upper_{v}")?;
        }
        writeln!(w, ",lower_mean,upper_mean")?;
        for &t in times {
            write!(w, "{}", sig9(t))?;
            for &v in nodes {
                write!(w, ",{},{}", sig9(self.lower(v, t)), sig9(self.upper(v, t)))?;
            }
            let (lo, hi) = self.mean_bounds(t);
            writeln!(w, ",{},{}", sig9(lo), sig9(hi))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BoundConfig {
    /// Known lower bound on the trajectory; zeros when `None`.
    pub i_min: Option<Vec<f64>>,
    /// Known upper bound on the trajectory; ones when `None`.
    pub i_max: Option<Vec<f64>>,
    pub i0_lower: Vec<f64>,
    pub i0_upper: Vec<f64>,
    /// Time span whose arc epochs the bounds must cover.
    pub horizon: f64,
}

impl BoundConfig {
    /// Envelope for a known initial state with the default corners 0 and 1.
    pub fn from_initial(i0: &[f64], horizon: f64) -> Self {
        BoundConfig {
            i_min: None,
            i_max: None,
            i0_lower: i0.to_vec(),
            i0_upper: i0.to_vec(),
            horizon,
        }
    }
}

/// Number of probes of a custom recovery function between the corners.
const RECOVERY_PROBES: usize = 16;

/// Per-node envelope coefficients from the parameter supports:
/// the lower envelope uses the largest recovery and `g` at `i_min` with the
/// smallest α, Γ over the arcs present in every epoch; the upper envelope
/// uses the smallest recovery and `g` at `i_max` with the largest α, Γ over
/// the arcs present in any epoch.
pub fn bound_envelope(model: &DynamicsModel, bundle: &ParamBundle, cfg: &BoundConfig) -> Result<BoundEnvelope> {
    let n = bundle.node_count();
    let i_min = cfg.i_min.clone().unwrap_or_else(|| vec![0.0; n]);
    let i_max = cfg.i_max.clone().unwrap_or_else(|| vec![1.0; n]);
    for (name, v) in [
        ("i_min", &i_min),
        ("i_max", &i_max),
        ("i0_lower", &cfg.i0_lower),
        ("i0_upper", &cfg.i0_upper),
    ] {
        if v.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{name} has {} entries, expected {n}",
                v.len()
            )));
        }
    }
    if i_min.iter().zip(&i_max).any(|(a, b)| a > b) {
        return Err(Error::InvalidArgument("i_min must not exceed i_max".into()));
    }
    let union = bundle.graph.in_neighbor_union(cfg.horizon);
    let inter = bundle.graph.in_neighbor_intersection(cfg.horizon);
    let mut nodes = Vec::with_capacity(n);
    for v in 0..n {
        let (alpha_lo, alpha_hi) = bundle.alpha.support_at(Index::Node(v));
        let (beta_lo, beta_hi) = bundle.beta.support_at(Index::Node(v));
        let gamma_lo: Vec<f64> = inter[v]
            .iter()
            .map(|&u| {
                bundle
                    .gamma
                    .support_at(Index::Arc {
                        target: v,
                        source: u as usize,
                    })
                    .0
            })
            .collect();
        let gamma_hi: Vec<f64> = union[v]
            .iter()
            .map(|&u| {
                bundle
                    .gamma
                    .support_at(Index::Arc {
                        target: v,
                        source: u as usize,
                    })
                    .1
            })
            .collect();
        let g_lo = model_g(model, &i_min, alpha_lo, &inter[v], &gamma_lo);
        let g_hi = model_g(model, &i_max, alpha_hi, &union[v], &gamma_hi);
        let (h_hi, h_lo) = recovery_extrema(model, v, &i_min, &i_max, beta_lo, beta_hi);
        let c = NodeBound {
            a_lower: h_hi + g_lo,
            b_lower: g_lo,
            a_upper: h_lo + g_hi,
            b_upper: g_hi,
        };
        if !(c.a_lower > 0.0) {
            return Err(Error::DegenerateBound {
                node: v,
                which: "lower",
            });
        }
        if !(c.a_upper > 0.0) {
            return Err(Error::DegenerateBound {
                node: v,
                which: "upper",
            });
        }
        nodes.push(c);
    }
    Ok(BoundEnvelope {
        nodes,
        i_min,
        i_max,
        i0_lower: cfg.i0_lower.clone(),
        i0_upper: cfg.i0_upper.clone(),
    })
}

fn model_g(model: &DynamicsModel, state: &[f64], alpha: f64, sources: &[u32], gamma: &[f64]) -> f64 {
    use crate::model::{g_prod, g_sum, AttackFamily};
    match &model.attack {
        AttackFamily::Prod => g_prod(state, alpha, sources, gamma),
        AttackFamily::Sum => g_sum(state, alpha, sources, gamma),
        AttackFamily::Custom(f) => f.eval(state, alpha, sources, gamma),
    }
}

/// `(max h, min h)` over `i_v ∈ [i_min_v, i_max_v]` at the β extremes.
fn recovery_extrema(
    model: &DynamicsModel,
    v: usize,
    i_min: &[f64],
    i_max: &[f64],
    beta_lo: f64,
    beta_hi: f64,
) -> (f64, f64) {
    match &model.recovery {
        RecoveryFamily::BetaIdentity => (beta_hi, beta_lo),
        RecoveryFamily::Custom(h) => {
            let mut state = i_min.to_vec();
            let mut hi = f64::NEG_INFINITY;
            let mut lo = f64::INFINITY;
            for k in 0..RECOVERY_PROBES {
                let s = k as f64 / (RECOVERY_PROBES - 1) as f64;
                state[v] = i_min[v] + s * (i_max[v] - i_min[v]);
                hi = hi.max(h.eval(&state, v, beta_hi)).max(h.eval(&state, v, beta_lo));
                lo = lo.min(h.eval(&state, v, beta_lo)).min(h.eval(&state, v, beta_hi));
            }
            (hi, lo)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub t: f64,
    pub node: usize,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichReport {
    pub checked: usize,
    pub violations: usize,
    pub first: Option<Violation>,
    /// Largest amount by which a value leaves its envelope (0 when none).
    pub max_excess: f64,
}

/// Checks `lower(t) - 1e-9 ≤ i_v(t) ≤ upper(t) + 1e-9` at every grid point and node.
pub fn sandwich_check(trajectory: &Trajectory, env: &BoundEnvelope) -> Result<SandwichReport> {
    if !trajectory.has_full_states() {
        return Err(Error::MissingStates);
    }
    if trajectory.node_count() != env.nodes.len() {
        return Err(Error::InvalidArgument("envelope and trajectory sizes differ".into()));
    }
    let mut report = SandwichReport {
        checked: 0,
        violations: 0,
        first: None,
        max_excess: 0.0,
    };
    for (k, &t) in trajectory.times.iter().enumerate() {
        let state = trajectory.state(k).expect("full states");
        for (v, &x) in state.iter().enumerate() {
            let lo = env.lower(v, t);
            let hi = env.upper(v, t);
            let excess = (lo - x).max(x - hi);
            report.checked += 1;
            if excess > 1e-9 {
                report.violations += 1;
                report.max_excess = report.max_excess.max(excess);
                if report.first.is_none() {
                    report.first = Some(Violation {
                        t,
                        node: v,
                        value: x,
                        lower: lo,
                        upper: hi,
                    });
                }
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodicityReport {
    pub period: f64,
    pub burn_in: f64,
    pub epsilon: f64,
    pub defect: f64,
    pub pass: bool,
}

/// `max_t ‖i(t + w) - i(t)‖∞` over `t ∈ [burn_in, t_end - w]`, with linear
/// interpolation when `w` is not a multiple of the grid step. Uses every
/// tracked node, or the mean series when no states are stored.
pub fn periodicity_check(
    trajectory: &Trajectory,
    period: f64,
    burn_in: f64,
    epsilon: f64,
) -> Result<PeriodicityReport> {
    let t_end = *trajectory.times.last().ok_or(Error::MissingStates)?;
    if !(period > 0.0) {
        return Err(Error::InvalidArgument(format!("period must be positive, got {period}")));
    }
    if t_end + 1e-9 < burn_in + 3.0 * period {
        return Err(Error::InsufficientHorizon {
            have: t_end,
            need: burn_in + 3.0 * period,
        });
    }
    let dt = trajectory.times[1] - trajectory.times[0];
    let lag = period / dt;
    let whole = lag.floor() as usize;
    let frac = lag - whole as f64;
    let row = |k: usize| -> Vec<f64> {
        match trajectory.tracked(k) {
            Some((_, values)) => values.to_vec(),
            None => vec![trajectory.mean_series[k]],
        }
    };
    let start = (burn_in / dt - 1e-9).ceil() as usize;
    let last = trajectory.len() - 1;
    let mut defect: f64 = 0.0;
    let mut k = start;
    while k + whole + usize::from(frac > 1e-9) <= last {
        let now = row(k);
        let a = row(k + whole);
        let shifted: Vec<f64> = if frac > 1e-9 {
            let b = row(k + whole + 1);
            a.iter().zip(&b).map(|(x, y)| x + frac * (y - x)).collect()
        } else {
            a
        };
        let d = now.iter().zip(&shifted).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        defect = defect.max(d);
        k += 1;
    }
    Ok(PeriodicityReport {
        period,
        burn_in,
        epsilon,
        defect,
        pass: defect < epsilon,
    })
}
