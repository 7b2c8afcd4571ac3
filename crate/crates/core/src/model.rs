//! Unified drift `di_v/dt = -h_v(i, β_v)·i_v + g_v(i, α_v, Γ)·(1 - i_v)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bundle::{ParamBundle, Snapshot};
use crate::error::{Error, Result};
use crate::graph::ArcSet;

/// Node count above which the drift is evaluated in parallel.
const PAR_THRESHOLD: usize = 2048;

/// Collective attack function `g_v(i, α_v, Γ)` for one node, given the node's
/// attackers (ascending) and the matching `γ_vu`.
pub trait AttackFunction: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn eval(&self, state: &[f64], alpha: f64, sources: &[u32], gamma: &[f64]) -> f64;

    /// `∂g_v/∂i_u` for `u = sources[k]`, or `None` without analytic partials.
    fn partial(&self, _state: &[f64], _alpha: f64, _sources: &[u32], _gamma: &[f64], _k: usize) -> Option<f64> {
        None
    }
}

/// Recovery function `h_v`. Custom recoveries may depend on the state only
/// through `i_v`.
pub trait RecoveryFunction: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn eval(&self, state: &[f64], v: usize, beta: f64) -> f64;

    /// `∂h_v/∂i_v`, or `None` without analytic partials.
    fn partial_self(&self, _state: &[f64], _v: usize, _beta: f64) -> Option<f64> {
        None
    }
}

/// `g = α + (Σ γ_vu i_u / max(|N_v|, 1))²`: monotone but not subhomogeneous.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredMean;

impl AttackFunction for SquaredMean {
    fn name(&self) -> &str {
        "squared-mean"
    }

    fn eval(&self, state: &[f64], alpha: f64, sources: &[u32], gamma: &[f64]) -> f64 {
        let d = sources.len().max(1) as f64;
        let s: f64 = sources.iter().zip(gamma).map(|(&u, &g)| g * state[u as usize]).sum();
        alpha + (s / d) * (s / d)
    }

    fn partial(&self, state: &[f64], _alpha: f64, sources: &[u32], gamma: &[f64], k: usize) -> Option<f64> {
        let d = sources.len().max(1) as f64;
        let s: f64 = sources.iter().zip(gamma).map(|(&u, &g)| g * state[u as usize]).sum();
        Some(2.0 * s / d * gamma[k] / d)
    }
}

/// Built-in plugins addressable as `custom:<name>`.
pub fn builtin_plugin(name: &str) -> Option<Arc<dyn AttackFunction>> {
    match name {
        "squared-mean" => Some(Arc::new(SquaredMean)),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub enum AttackFamily {
    Prod,
    Sum,
    Custom(Arc<dyn AttackFunction>),
}

#[derive(Clone, Debug)]
pub enum RecoveryFamily {
    BetaIdentity,
    Custom(Arc<dyn RecoveryFunction>),
}

#[derive(Clone, Debug)]
pub struct DynamicsModel {
    pub attack: AttackFamily,
    pub recovery: RecoveryFamily,
}

/// `1 - (1 - α) ∏ (1 - γ_vu i_u)`, neighbors in ascending order.
pub fn g_prod(state: &[f64], alpha: f64, sources: &[u32], gamma: &[f64]) -> f64 {
    let mut prod = 1.0 - alpha;
    for (&u, &g) in sources.iter().zip(gamma) {
        prod *= 1.0 - g * state[u as usize];
    }
    1.0 - prod
}

/// `α + Σ γ_vu i_u`; may exceed one.
pub fn g_sum(state: &[f64], alpha: f64, sources: &[u32], gamma: &[f64]) -> f64 {
    let mut acc = alpha;
    for (&u, &g) in sources.iter().zip(gamma) {
        acc += g * state[u as usize];
    }
    acc
}

impl DynamicsModel {
    pub fn prod() -> Self {
        DynamicsModel {
            attack: AttackFamily::Prod,
            recovery: RecoveryFamily::BetaIdentity,
        }
    }

    pub fn sum() -> Self {
        DynamicsModel {
            attack: AttackFamily::Sum,
            recovery: RecoveryFamily::BetaIdentity,
        }
    }

    pub fn custom(attack: Arc<dyn AttackFunction>) -> Self {
        DynamicsModel {
            attack: AttackFamily::Custom(attack),
            recovery: RecoveryFamily::BetaIdentity,
        }
    }

    pub fn with_recovery(mut self, recovery: Arc<dyn RecoveryFunction>) -> Self {
        self.recovery = RecoveryFamily::Custom(recovery);
        self
    }

    /// Parses `"prod"`, `"sum"` or `"custom:<plugin>"`.
    pub fn from_config(s: &str) -> Result<Self> {
        match s {
            "prod" => Ok(Self::prod()),
            "sum" => Ok(Self::sum()),
            _ => s
                .strip_prefix("custom:")
                .and_then(builtin_plugin)
                .map(Self::custom)
                .ok_or_else(|| Error::UnknownModel(s.to_string())),
        }
    }

    /// Config string for this model.
    pub fn name(&self) -> String {
        let g = match &self.attack {
            AttackFamily::Prod => "prod".to_string(),
            AttackFamily::Sum => "sum".to_string(),
            AttackFamily::Custom(f) => format!("custom:{}", f.name()),
        };
        match &self.recovery {
            RecoveryFamily::BetaIdentity => g,
            RecoveryFamily::Custom(h) => format!("{g}+{}", h.name()),
        }
    }

    /// Whether analytic partial derivatives are available for every hook.
    pub fn has_partials(&self) -> bool {
        let probe_state = [0.5, 0.5];
        let g_ok = match &self.attack {
            AttackFamily::Prod | AttackFamily::Sum => true,
            AttackFamily::Custom(f) => f.partial(&probe_state, 0.0, &[1], &[0.5], 0).is_some(),
        };
        let h_ok = match &self.recovery {
            RecoveryFamily::BetaIdentity => true,
            RecoveryFamily::Custom(h) => h.partial_self(&probe_state, 0, 0.5).is_some(),
        };
        g_ok && h_ok
    }

    fn g_row(&self, state: &[f64], alpha: f64, sources: &[u32], gamma: &[f64]) -> f64 {
        match &self.attack {
            AttackFamily::Prod => g_prod(state, alpha, sources, gamma),
            AttackFamily::Sum => g_sum(state, alpha, sources, gamma),
            AttackFamily::Custom(f) => f.eval(state, alpha, sources, gamma),
        }
    }

    /// `g_v(i, α_v(t), Γ(t))`.
    pub fn g(&self, state: &[f64], v: usize, snap: &Snapshot) -> f64 {
        let (sources, gamma) = snap.row(v);
        self.g_row(state, snap.alpha[v], sources, gamma)
    }

    /// `h_v(i, β_v(t))`.
    pub fn h(&self, state: &[f64], v: usize, snap: &Snapshot) -> f64 {
        match &self.recovery {
            RecoveryFamily::BetaIdentity => snap.beta[v],
            RecoveryFamily::Custom(h) => h.eval(state, v, snap.beta[v]),
        }
    }

    fn drift_one(&self, state: &[f64], v: usize, snap: &Snapshot) -> f64 {
        let i = state[v];
        -self.h(state, v, snap) * i + self.g(state, v, snap) * (1.0 - i)
    }

    /// Writes `f(i, y(t))` into `out`.
    pub fn drift(&self, state: &[f64], snap: &Snapshot, out: &mut [f64]) {
        if state.len() >= PAR_THRESHOLD {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(v, o)| *o = self.drift_one(state, v, snap));
        } else {
            for (v, o) in out.iter_mut().enumerate() {
                *o = self.drift_one(state, v, snap);
            }
        }
    }

    /// Convenience: drift at time `t` for `bundle`.
    pub fn drift_at(&self, state: &[f64], bundle: &ParamBundle, t: f64) -> Vec<f64> {
        let snap = bundle.snapshot(t);
        let mut out = vec![0.0; state.len()];
        self.drift(state, &snap, &mut out);
        out
    }

    /// Analytic `∂g_v/∂i_u` along v's in-arcs, in arc order.
    fn g_partials(&self, state: &[f64], v: usize, snap: &Snapshot, out: &mut Vec<f64>) -> Result<()> {
        let (sources, gamma) = snap.row(v);
        let alpha = snap.alpha[v];
        out.clear();
        match &self.attack {
            AttackFamily::Sum => out.extend_from_slice(gamma),
            AttackFamily::Prod => {
                // prefix/suffix products so a zero factor does not poison the others
                let factors: Vec<f64> = sources
                    .iter()
                    .zip(gamma)
                    .map(|(&u, &g)| 1.0 - g * state[u as usize])
                    .collect();
                let mut suffix = vec![1.0; factors.len() + 1];
                for k in (0..factors.len()).rev() {
                    suffix[k] = suffix[k + 1] * factors[k];
                }
                let mut prefix = 1.0;
                for k in 0..factors.len() {
                    out.push((1.0 - alpha) * gamma[k] * prefix * suffix[k + 1]);
                    prefix *= factors[k];
                }
            }
            AttackFamily::Custom(f) => {
                for k in 0..sources.len() {
                    out.push(
                        f.partial(state, alpha, sources, gamma, k)
                            .ok_or_else(|| Error::MissingPartials(f.name().to_string()))?,
                    );
                }
            }
        }
        Ok(())
    }

    fn h_partial_self(&self, state: &[f64], v: usize, snap: &Snapshot) -> Result<f64> {
        match &self.recovery {
            RecoveryFamily::BetaIdentity => Ok(0.0),
            RecoveryFamily::Custom(h) => h
                .partial_self(state, v, snap.beta[v])
                .ok_or_else(|| Error::MissingPartials(h.name().to_string())),
        }
    }

    /// Analytic `D_i f(i, y(t))`.
    pub fn jacobian(&self, state: &[f64], snap: &Snapshot) -> Result<SparseJacobian> {
        let n = snap.node_count();
        let mut diag = vec![0.0; n];
        let mut off = Vec::with_capacity(snap.arcs.len());
        let mut partials = Vec::new();
        for v in 0..n {
            let i = state[v];
            self.g_partials(state, v, snap, &mut partials)?;
            off.extend(partials.iter().map(|p| p * (1.0 - i)));
            diag[v] = -self.h(state, v, snap) - self.h_partial_self(state, v, snap)? * i - self.g(state, v, snap);
        }
        Ok(SparseJacobian {
            diag,
            arcs: snap.arcs.clone(),
            off,
        })
    }

    /// `D_i f(0, y(t))`: `γ_vu a_vu` off the diagonal, `-β_v - α_v` on it for
    /// the Π and Σ families.
    pub fn jacobian_at_zero(&self, snap: &Snapshot) -> Result<SparseJacobian> {
        match (&self.attack, &self.recovery) {
            (AttackFamily::Prod | AttackFamily::Sum, RecoveryFamily::BetaIdentity) => Ok(SparseJacobian {
                diag: snap.alpha.iter().zip(&snap.beta).map(|(a, b)| -b - a).collect(),
                arcs: snap.arcs.clone(),
                off: snap.gamma.clone(),
            }),
            _ => self.jacobian(&vec![0.0; snap.node_count()], snap),
        }
    }

    /// Analytic Jacobian when available, central differences otherwise.
    pub fn jacobian_or_fd(&self, state: &[f64], snap: &Snapshot) -> SparseJacobian {
        match self.jacobian(state, snap) {
            Ok(j) => j,
            Err(_) => SparseJacobian::from_dense_on(&snap.arcs, &self.finite_difference_jacobian(state, snap)),
        }
    }

    /// Dense central-difference Jacobian with step `1e-6 · max(1, |i_u|)`.
    pub fn finite_difference_jacobian(&self, state: &[f64], snap: &Snapshot) -> DMatrix<f64> {
        let n = state.len();
        let mut jac = DMatrix::zeros(n, n);
        let mut x = state.to_vec();
        let mut plus = vec![0.0; n];
        let mut minus = vec![0.0; n];
        for u in 0..n {
            let h = 1e-6 * state[u].abs().max(1.0);
            x[u] = state[u] + h;
            self.drift(&x, snap, &mut plus);
            x[u] = state[u] - h;
            self.drift(&x, snap, &mut minus);
            x[u] = state[u];
            for v in 0..n {
                jac[(v, u)] = (plus[v] - minus[v]) / (2.0 * h);
            }
        }
        jac
    }
}

/// Jacobian with a diagonal plus off-diagonal entries on the arc set.
#[derive(Clone, Debug)]
pub struct SparseJacobian {
    pub diag: Vec<f64>,
    pub arcs: Arc<ArcSet>,
    /// Entry `(v, u)` for each arc `u → v`, in the arc set's flat order.
    pub off: Vec<f64>,
}

impl SparseJacobian {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    fn from_dense_on(arcs: &Arc<ArcSet>, dense: &DMatrix<f64>) -> Self {
        SparseJacobian {
            diag: (0..dense.nrows()).map(|v| dense[(v, v)]).collect(),
            arcs: arcs.clone(),
            off: arcs.iter().map(|(u, v)| dense[(v, u)]).collect(),
        }
    }

    /// `out = J x`.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        let mut k = 0;
        for v in 0..self.dim() {
            let mut acc = self.diag[v] * x[v];
            for &u in self.arcs.in_neighbors(v) {
                acc += self.off[k] * x[u as usize];
                k += 1;
            }
            out[v] = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for v in 0..n {
            m[(v, v)] = self.diag[v];
        }
        for ((u, v), &x) in self.arcs.iter().zip(&self.off) {
            m[(v, u)] = x;
        }
        m
    }
}

/// Outcome of one sampled property.
#[derive(Clone, Debug, Serialize)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub samples: usize,
    pub passed: bool,
    /// First counterexample found.
    pub witness: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PropertyReport {
    pub model: String,
    pub checks: Vec<PropertyCheck>,
    pub notes: Vec<String>,
}

impl PropertyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tracker {
    name: &'static str,
    samples: usize,
    witness: Option<String>,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Tracker {
            name,
            samples: 0,
            witness: None,
        }
    }

    fn record(&mut self, ok: bool, witness: impl FnOnce() -> String) {
        self.samples += 1;
        if !ok && self.witness.is_none() {
            self.witness = Some(witness());
        }
    }

    fn finish(self) -> PropertyCheck {
        PropertyCheck {
            name: self.name,
            samples: self.samples,
            passed: self.witness.is_none(),
            witness: self.witness,
        }
    }
}

const PROPERTY_TOL: f64 = 1e-9;

/// Sampled checks of the structural properties the theory relies on:
/// cooperativity, subhomogeneity of g, the anchors `g(0) = α` and
/// `∂g_v/∂i_u = 0` when `γ_vu = 0`, nonnegative recovery, monotonicity in
/// α, γ and β, and forward invariance of `[0,1]ⁿ`.
///
/// Each sample draws `t ∈ [0, horizon)`, a state `i ∈ [0,1]ⁿ`, `η ∈ (0,1)` and
/// a node `v`.
pub fn validate_properties(
    model: &DynamicsModel,
    bundle: &ParamBundle,
    sample_count: usize,
    seed: u64,
    horizon: f64,
) -> Result<PropertyReport> {
    if sample_count == 0 {
        return Err(Error::InvalidArgument("sample_count must be at least 1".into()));
    }
    let n = bundle.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coop = Tracker::new("cooperativity");
    let mut subhom = Tracker::new("subhomogeneity");
    let mut anchor_zero = Tracker::new("anchor_g_zero");
    let mut anchor_gamma = Tracker::new("anchor_gamma_zero");
    let mut recovery = Tracker::new("recovery_nonnegative");
    let mut mono_alpha = Tracker::new("monotone_alpha");
    let mut mono_gamma = Tracker::new("monotone_gamma");
    let mut mono_beta = Tracker::new("monotone_beta");
    let mut invariance = Tracker::new("forward_invariance");
    let zeros = vec![0.0; n];
    let mut scaled = vec![0.0; n];
    let mut partials = Vec::new();
    const D: f64 = 1e-6;

    for _ in 0..sample_count {
        let t = rng.gen::<f64>() * horizon.max(0.0);
        let snap = bundle.snapshot(t);
        let state: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let eta = rng.gen_range(f64::EPSILON..1.0);
        let v = rng.gen_range(0..n);
        let (sources, gamma) = snap.row(v);
        let alpha = snap.alpha[v];

        // cooperativity: off-diagonal entries of D_i f at the sampled state
        let row_ok = match model.g_partials(&state, v, &snap, &mut partials) {
            Ok(()) => partials.iter().all(|&p| p * (1.0 - state[v]) >= -PROPERTY_TOL),
            Err(_) => sources
                .iter()
                .enumerate()
                .all(|(k, _)| fd_partial(model, &state, alpha, sources, gamma, k) * (1.0 - state[v]) >= -PROPERTY_TOL),
        };
        coop.record(row_ok, || {
            format!("t={t:.4}, node {v}: negative off-diagonal Jacobian entry")
        });

        for (s, x) in scaled.iter_mut().zip(&state) {
            *s = eta * x;
        }
        let g_full = model.g_row(&state, alpha, sources, gamma);
        let g_scaled = model.g_row(&scaled, alpha, sources, gamma);
        subhom.record(g_scaled >= eta * g_full - PROPERTY_TOL, || {
            format!(
                "t={t:.4}, node {v}, eta={eta:.6}: g(eta*i)={g_scaled:.9e} < eta*g(i)={:.9e}",
                eta * g_full
            )
        });

        let g0 = model.g_row(&zeros, alpha, sources, gamma);
        anchor_zero.record((g0 - alpha).abs() <= 1e-12, || {
            format!("t={t:.4}, node {v}: g(0)={g0:.12} but alpha={alpha:.12}")
        });

        if !sources.is_empty() {
            let k = rng.gen_range(0..sources.len());
            let mut muted = gamma.to_vec();
            muted[k] = 0.0;
            let d = fd_partial(model, &state, alpha, sources, &muted, k);
            anchor_gamma.record(d.abs() <= 1e-7, || {
                format!(
                    "t={t:.4}, node {v}, source {}: dg/di_u={d:.3e} with gamma=0",
                    sources[k]
                )
            });

            let mut bumped = gamma.to_vec();
            bumped[k] += D;
            let up = model.g_row(&state, alpha, sources, &bumped);
            mono_gamma.record(up >= g_full - PROPERTY_TOL, || {
                format!("t={t:.4}, node {v}: g decreased when gamma_vu increased")
            });
        }

        let h = model.h(&state, v, &snap);
        recovery.record(h >= 0.0, || format!("t={t:.4}, node {v}: h={h}"));

        let g_alpha = model.g_row(&state, alpha + D, sources, gamma);
        mono_alpha.record(g_alpha >= g_full - PROPERTY_TOL, || {
            format!("t={t:.4}, node {v}: g decreased when alpha increased")
        });

        let h_up = match &model.recovery {
            RecoveryFamily::BetaIdentity => snap.beta[v] + D,
            RecoveryFamily::Custom(f) => f.eval(&state, v, snap.beta[v] + D),
        };
        mono_beta.record(h_up >= h - PROPERTY_TOL, || {
            format!("t={t:.4}, node {v}: h decreased when beta increased")
        });

        let mut face = state.clone();
        face[v] = 0.0;
        let low = model.drift_one(&face, v, &snap);
        face[v] = 1.0;
        let high = model.drift_one(&face, v, &snap);
        invariance.record(low >= -PROPERTY_TOL && high <= PROPERTY_TOL, || {
            format!("t={t:.4}, node {v}: drift {low:.3e} at i_v=0, {high:.3e} at i_v=1")
        });
    }

    Ok(PropertyReport {
        model: model.name(),
        checks: vec![
            coop.finish(),
            subhom.finish(),
            anchor_zero.finish(),
            anchor_gamma.finish(),
            recovery.finish(),
            mono_alpha.finish(),
            mono_gamma.finish(),
            mono_beta.finish(),
            invariance.finish(),
        ],
        notes: vec![
            "the strict inequality on D_i(g+h) is checked in its weaker form: nonnegative off-diagonal \
             partials of g plus nonnegative recovery"
                .to_string(),
        ],
    })
}

fn fd_partial(model: &DynamicsModel, state: &[f64], alpha: f64, sources: &[u32], gamma: &[f64], k: usize) -> f64 {
    let u = sources[k] as usize;
    let h = 1e-6 * state[u].abs().max(1.0);
    let mut x = state.to_vec();
    x[u] = state[u] + h;
    let plus = model.g_row(&x, alpha, sources, gamma);
    x[u] = state[u] - h;
    let minus = model.g_row(&x, alpha, sources, gamma);
    (plus - minus) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{erdos_renyi, TemporalGraph};
    use crate::process::ParamProcess;
    use approx::assert_abs_diff_eq;

    #[test]
    fn prod_examples() {
        let state = [0.5, 0.25, 1.0];
        assert_eq!(g_prod(&state, 0.0, &[], &[]), 0.0);
        assert_eq!(g_prod(&state, 0.0, &[2], &[1.0]), 1.0);
        assert_abs_diff_eq!(g_prod(&state, 0.1, &[0, 1], &[0.2, 0.4]), 0.2710, epsilon = 1e-12);
    }

    #[test]
    fn sum_examples() {
        assert_abs_diff_eq!(g_sum(&[0.5], 0.1, &[0], &[0.2]), 0.2, epsilon = 1e-15);
        assert_eq!(g_sum(&[0.5], 0.3, &[], &[]), 0.3);
        let state = [1.0; 11];
        let sources: Vec<u32> = (1..11).collect();
        assert_abs_diff_eq!(g_sum(&state, 0.1, &sources, &[0.5; 10]), 5.1, epsilon = 1e-12);
    }

    #[test]
    fn isolated_node_drift() {
        let g = TemporalGraph::new(ArcSet::empty(1));
        let b = ParamBundle::constant(g, 0.2, 0.5, 0.0).unwrap();
        let d = DynamicsModel::sum().drift_at(&[0.4], &b, 0.0);
        assert_abs_diff_eq!(d[0], -0.08, epsilon = 1e-15);
    }

    #[test]
    fn zero_is_equilibrium_without_pull() {
        let g = erdos_renyi(40, 0.2, 1).unwrap();
        let b = ParamBundle::constant(g, 0.0, 0.3, 0.2).unwrap();
        for m in [DynamicsModel::prod(), DynamicsModel::sum()] {
            assert!(m.drift_at(&[0.0; 40], &b, 3.0).iter().all(|&x| x == 0.0));
            assert!(m.drift_at(&[1.0; 40], &b, 3.0).iter().all(|&x| x <= 0.0));
        }
    }

    #[test]
    fn two_node_jacobian() {
        let g = TemporalGraph::from_arcs(2, [(0, 1), (1, 0)]).unwrap();
        let b = ParamBundle::constant(g, 0.0, 0.2, 0.3).unwrap();
        let snap = b.snapshot(0.0);
        for m in [DynamicsModel::prod(), DynamicsModel::sum()] {
            let j = m.jacobian_at_zero(&snap).unwrap().to_dense();
            assert_eq!(j, DMatrix::from_row_slice(2, 2, &[-0.2, 0.3, 0.3, -0.2]));
            let fd = m.finite_difference_jacobian(&[0.0, 0.0], &snap);
            assert!((fd - &j).amax() < 1e-6);
        }
    }

    #[test]
    fn empty_graph_jacobian_is_diagonal() {
        let b = ParamBundle::constant(TemporalGraph::new(ArcSet::empty(3)), 0.1, 0.5, 0.3).unwrap();
        let j = DynamicsModel::prod()
            .jacobian_at_zero(&b.snapshot(1.0))
            .unwrap()
            .to_dense();
        assert_eq!(j, DMatrix::from_diagonal_element(3, 3, -0.6));
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let g = erdos_renyi(25, 0.2, 3).unwrap();
        let b = ParamBundle::new(
            g,
            ParamProcess::piecewise_uniform(0.0, 0.3, 1).unwrap(),
            ParamProcess::piecewise_uniform(0.2, 0.7, 2).unwrap(),
            ParamProcess::piecewise_uniform(0.0, 0.5, 3).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let models = [
            DynamicsModel::prod(),
            DynamicsModel::sum(),
            DynamicsModel::from_config("custom:squared-mean").unwrap(),
        ];
        for m in &models {
            for _ in 0..10 {
                let snap = b.snapshot(rng.gen::<f64>() * 50.0);
                let state: Vec<f64> = (0..25).map(|_| rng.gen()).collect();
                let j = m.jacobian(&state, &snap).unwrap().to_dense();
                let fd = m.finite_difference_jacobian(&state, &snap);
                assert!((fd - j).amax() < 1e-6, "{}", m.name());
            }
        }
    }

    #[test]
    fn config_strings() {
        assert_eq!(DynamicsModel::from_config("prod").unwrap().name(), "prod");
        assert_eq!(
            DynamicsModel::from_config("custom:squared-mean").unwrap().name(),
            "custom:squared-mean"
        );
        assert!(matches!(
            DynamicsModel::from_config("custom:nope"),
            Err(Error::UnknownModel(_))
        ));
        assert!(matches!(DynamicsModel::from_config("pi"), Err(Error::UnknownModel(_))));
    }

    #[derive(Debug)]
    struct Opaque;

    impl AttackFunction for Opaque {
        fn name(&self) -> &str {
            "opaque"
        }

        fn eval(&self, state: &[f64], alpha: f64, sources: &[u32], gamma: &[f64]) -> f64 {
            g_sum(state, alpha, sources, gamma)
        }
    }

    #[test]
    fn custom_without_partials() {
        let g = TemporalGraph::from_arcs(2, [(0, 1)]).unwrap();
        let b = ParamBundle::constant(g, 0.0, 0.2, 0.3).unwrap();
        let m = DynamicsModel::custom(Arc::new(Opaque));
        assert!(!m.has_partials());
        let snap = b.snapshot(0.0);
        assert!(matches!(m.jacobian_at_zero(&snap), Err(Error::MissingPartials(_))));
        let j = m.jacobian_or_fd(&[0.0, 0.0], &snap).to_dense();
        assert_abs_diff_eq!(j[(1, 0)], 0.3, epsilon = 1e-8);
    }

    #[test]
    fn squared_mean_witness() {
        // one active neighbour, γ = 1: g(ηi) = η²q < ηq for q = (i_u)² > 0
        let m = SquaredMean;
        let state = [0.8, 0.0];
        let q = m.eval(&state, 0.0, &[0], &[1.0]);
        let half = m.eval(&[0.4, 0.0], 0.0, &[0], &[1.0]);
        assert_abs_diff_eq!(half, 0.25 * q, epsilon = 1e-15);
        assert!(half < 0.5 * q);

        let g = erdos_renyi(30, 0.2, 5).unwrap();
        let b = ParamBundle::constant(g, 0.0, 0.1, 0.7).unwrap();
        let report = validate_properties(&DynamicsModel::custom(Arc::new(SquaredMean)), &b, 200, 1, 100.0).unwrap();
        let sub = report.check("subhomogeneity").unwrap();
        assert!(!sub.passed);
        assert!(sub.witness.as_ref().unwrap().contains("eta="));
        assert!(report.check("cooperativity").unwrap().passed);
    }
}
