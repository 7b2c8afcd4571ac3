//! Maximum Lyapunov exponents of time-varying linear systems and the
//! fundamental matrix `U(t, s)`.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::bundle::{ParamBundle, Snapshot};
use crate::error::{Error, Result};
use crate::integrate::{Method, DEFAULT_DT};
use crate::model::{AttackFamily, DynamicsModel, RecoveryFamily};
use crate::process::{mean_value, Index};

/// Largest dimension propagated densely by [`fundamental_matrix`].
pub const FUNDAMENTAL_CAP: usize = 256;
/// Half-width of the band around zero treated as undetermined.
pub const NEAR_ZERO_BAND: f64 = 0.01;

/// `dz/dt = C(t) z`.
pub trait LinearSystem {
    fn dim(&self) -> usize;

    /// `out = C(t) x`.
    fn apply(&mut self, t: f64, x: &[f64], out: &mut [f64]);
}

/// `z_{k+1} = C(k) z_k`.
pub trait DiscreteSystem {
    fn dim(&self) -> usize;

    fn apply(&mut self, k: usize, x: &[f64], out: &mut [f64]);
}

fn dense_matvec(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = m.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// A constant matrix, usable as either a continuous or a discrete system.
#[derive(Clone, Debug)]
pub struct ConstantMatrix(pub DMatrix<f64>);

impl LinearSystem for ConstantMatrix {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&mut self, _t: f64, x: &[f64], out: &mut [f64]) {
        dense_matvec(&self.0, x, out);
    }
}

impl DiscreteSystem for ConstantMatrix {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&mut self, _k: usize, x: &[f64], out: &mut [f64]) {
        dense_matvec(&self.0, x, out);
    }
}

/// Matrices cycled in order: `C(k) = mats[k mod len]`.
#[derive(Clone, Debug)]
pub struct PeriodicSequence(pub Vec<DMatrix<f64>>);

impl DiscreteSystem for PeriodicSequence {
    fn dim(&self) -> usize {
        self.0[0].nrows()
    }

    fn apply(&mut self, k: usize, x: &[f64], out: &mut [f64]) {
        dense_matvec(&self.0[k % self.0.len()], x, out);
    }
}

/// Dense `C(t)` from a closure.
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F: FnMut(f64) -> DMatrix<f64>> FnSystem<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnSystem { dim, f }
    }
}

impl<F: FnMut(f64) -> DMatrix<f64>> LinearSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&mut self, t: f64, x: &[f64], out: &mut [f64]) {
        let m = (self.f)(t);
        dense_matvec(&m, x, out);
    }
}

impl<F: FnMut(usize) -> DMatrix<f64>> DiscreteSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&mut self, k: usize, x: &[f64], out: &mut [f64]) {
        let m = (self.f)(k);
        dense_matvec(&m, x, out);
    }
}

/// The zero-state linearization `C(t) = D_i f(0, y(t))`, optionally
/// restricted to the diagonal blocks of a node partition.
pub struct Linearization<'a> {
    model: &'a DynamicsModel,
    bundle: &'a ParamBundle,
    snap: Snapshot,
    /// When set, arcs between different blocks are dropped.
    block_of: Option<Vec<usize>>,
    analytic: bool,
}

impl<'a> Linearization<'a> {
    pub fn new(model: &'a DynamicsModel, bundle: &'a ParamBundle) -> Self {
        let analytic = matches!(
            (&model.attack, &model.recovery),
            (AttackFamily::Prod | AttackFamily::Sum, RecoveryFamily::BetaIdentity)
        );
        Linearization {
            model,
            bundle,
            snap: bundle.new_snapshot(),
            block_of: None,
            analytic,
        }
    }

    /// Keeps only arcs inside each block (`block_of[v]` is v's block).
    pub fn restricted(mut self, block_of: Vec<usize>) -> Self {
        self.block_of = Some(block_of);
        self
    }
}

impl LinearSystem for Linearization<'_> {
    fn dim(&self) -> usize {
        self.bundle.node_count()
    }

    fn apply(&mut self, t: f64, x: &[f64], out: &mut [f64]) {
        self.bundle.fill(t, &mut self.snap);
        let snap = &self.snap;
        if self.analytic {
            let mut k = 0;
            for v in 0..out.len() {
                let mut acc = -(snap.beta[v] + snap.alpha[v]) * x[v];
                for &u in snap.arcs.in_neighbors(v) {
                    let keep = match &self.block_of {
                        Some(b) => b[u as usize] == b[v],
                        None => true,
                    };
                    if keep {
                        acc += snap.gamma[k] * x[u as usize];
                    }
                    k += 1;
                }
                out[v] = acc;
            }
        } else {
            let zeros = vec![0.0; out.len()];
            let mut jac = self.model.jacobian_or_fd(&zeros, snap);
            if let Some(b) = &self.block_of {
                for ((u, v), w) in jac.arcs.iter().zip(jac.off.iter_mut()) {
                    if b[u] != b[v] {
                        *w = 0.0;
                    }
                }
            }
            jac.matvec(x, out);
        }
    }
}

/// `(I - B(k)) + Γ(k)∘A(k)` sampled at integer times: the discrete-time
/// zero-state linearization.
pub struct DiscreteLinearization<'a> {
    bundle: &'a ParamBundle,
    snap: Snapshot,
}

impl<'a> DiscreteLinearization<'a> {
    pub fn new(bundle: &'a ParamBundle) -> Self {
        DiscreteLinearization {
            bundle,
            snap: bundle.new_snapshot(),
        }
    }
}

impl DiscreteSystem for DiscreteLinearization<'_> {
    fn dim(&self) -> usize {
        self.bundle.node_count()
    }

    fn apply(&mut self, k: usize, x: &[f64], out: &mut [f64]) {
        self.bundle.fill(k as f64, &mut self.snap);
        for (v, o) in out.iter_mut().enumerate() {
            let (sources, gamma) = self.snap.row(v);
            *o = (1.0 - self.snap.beta[v]) * x[v]
                + sources.iter().zip(gamma).map(|(&u, g)| g * x[u as usize]).sum::<f64>();
        }
    }
}

#[derive(Clone, Debug)]
pub struct MleOptions {
    pub horizon: f64,
    pub renorm_every: f64,
    pub dt: f64,
    pub method: Method,
    /// Starting vector; normalized all-ones when `None`.
    pub initial: Option<Vec<f64>>,
}

impl MleOptions {
    pub fn new(horizon: f64) -> Self {
        MleOptions {
            horizon,
            renorm_every: 1.0,
            dt: DEFAULT_DT,
            method: Method::Rk4,
            initial: None,
        }
    }

    pub fn dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn renorm_every(mut self, every: f64) -> Self {
        self.renorm_every = every;
        self
    }

    pub fn initial(mut self, x: Vec<f64>) -> Self {
        self.initial = Some(x);
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralEstimate {
    pub mu: f64,
    pub horizon: f64,
    /// `(t, log-norm increment)` at each renormalization.
    #[serde(skip)]
    pub renorm_log: Vec<(f64, f64)>,
    /// Last-quartile slope is within 10% of `mu`.
    pub converged: bool,
    pub tail_slope: f64,
}

impl SpectralEstimate {
    fn from_log(renorm_log: Vec<(f64, f64)>, horizon: f64) -> Self {
        let mu = renorm_log.iter().map(|(_, d)| d).sum::<f64>() / horizon;
        let cut = 0.75 * horizon;
        let start = renorm_log
            .iter()
            .map(|(t, _)| *t)
            .filter(|t| *t <= cut + 1e-9)
            .fold(0.0, f64::max);
        let tail: Vec<_> = renorm_log.iter().filter(|(t, _)| *t > start + 1e-9).collect();
        let tail_span = tail.last().map_or(0.0, |(t, _)| *t) - start;
        let tail_slope = if tail_span > 0.0 {
            tail.iter().map(|(_, d)| d).sum::<f64>() / tail_span
        } else {
            f64::NAN
        };
        SpectralEstimate {
            mu,
            horizon,
            converged: (tail_slope - mu).abs() <= 0.1 * mu.abs(),
            tail_slope,
            renorm_log,
        }
    }

    /// `t,log_increment` rows.
    pub fn write_renorm_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,log_increment")?;
        for (t, d) in &self.renorm_log {
            writeln!(w, "{},{}", crate::integrate::sig9(*t), crate::integrate::sig9(*d))?;
        }
        Ok(())
    }

    /// `{mu, horizon, converged}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "mu": self.mu, "horizon": self.horizon, "converged": self.converged })
    }
}

struct Stepper {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Stepper {
    fn new(n: usize) -> Self {
        Stepper {
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    fn step(&mut self, sys: &mut dyn LinearSystem, method: Method, t: f64, dt: f64, x: &mut [f64]) {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        match method {
            Method::Euler => {
                sys.apply(t, x, k1);
                for (xi, d) in x.iter_mut().zip(k1.iter()) {
                    *xi += dt * d;
                }
            }
            Method::Rk4 => {
                sys.apply(t, x, k1);
                for ((y, xi), d) in tmp.iter_mut().zip(x.iter()).zip(k1.iter()) {
                    *y = xi + 0.5 * dt * d;
                }
                sys.apply(t + 0.5 * dt, tmp, k2);
                for ((y, xi), d) in tmp.iter_mut().zip(x.iter()).zip(k2.iter()) {
                    *y = xi + 0.5 * dt * d;
                }
                sys.apply(t + 0.5 * dt, tmp, k3);
                for ((y, xi), d) in tmp.iter_mut().zip(x.iter()).zip(k3.iter()) {
                    *y = xi + dt * d;
                }
                sys.apply(t + dt, tmp, k4);
                for (v, xi) in x.iter_mut().enumerate() {
                    *xi += dt / 6.0 * (k1[v] + 2.0 * k2[v] + 2.0 * k3[v] + k4[v]);
                }
            }
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_mle_options(opts: &MleOptions) -> Result<(usize, usize)> {
    if !(opts.dt > 0.0 && opts.renorm_every >= opts.dt) {
        return Err(Error::InvalidArgument("need dt > 0 and renorm_every >= dt".into()));
    }
    if opts.horizon < 10.0 * opts.renorm_every - 1e-9 {
        return Err(Error::InsufficientHorizon {
            have: opts.horizon,
            need: 10.0 * opts.renorm_every,
        });
    }
    let per = (opts.renorm_every / opts.dt).round() as usize;
    let total = (opts.horizon / opts.dt).round() as usize;
    Ok((per, total))
}

/// Top Lyapunov exponent by vector propagation with periodic renormalization.
pub fn mle(system: &mut dyn LinearSystem, opts: &MleOptions) -> Result<SpectralEstimate> {
    let n = system.dim();
    let blocks = vec![0; n];
    Ok(mle_blocks(system, &blocks, 1, opts)?.remove(0))
}

/// Per-block exponents for a system whose matrix is block diagonal under the
/// partition `block_of` (values `0..block_count`). Each block's part of the
/// vector is renormalized independently.
pub fn mle_blocks(
    system: &mut dyn LinearSystem,
    block_of: &[usize],
    block_count: usize,
    opts: &MleOptions,
) -> Result<Vec<SpectralEstimate>> {
    let n = system.dim();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    if block_of.len() != n || block_of.iter().any(|&b| b >= block_count) {
        return Err(Error::InvalidArgument("invalid block partition".into()));
    }
    let (per, total) = check_mle_options(opts)?;
    let mut x = match &opts.initial {
        Some(v) if v.len() == n => v.clone(),
        Some(v) => {
            return Err(Error::InvalidArgument(format!(
                "initial vector has {} entries, system has dimension {n}",
                v.len()
            )))
        }
        None => vec![1.0; n],
    };
    // normalize the start so the estimate does not depend on its scale
    let mut sq = vec![0.0; block_count];
    for (v, &b) in block_of.iter().enumerate() {
        sq[b] += x[v] * x[v];
    }
    if sq.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("initial vector vanishes on a block".into()));
    }
    for (v, &b) in block_of.iter().enumerate() {
        x[v] /= sq[b].sqrt();
    }
    let mut logs: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(total / per + 1); block_count];
    let mut stepper = Stepper::new(n);
    let mut step = 0;
    while step < total {
        let chunk = per.min(total - step);
        for _ in 0..chunk {
            stepper.step(system, opts.method, step as f64 * opts.dt, opts.dt, &mut x);
            step += 1;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        sq.iter_mut().for_each(|s| *s = 0.0);
        for (v, &b) in block_of.iter().enumerate() {
            sq[b] += x[v] * x[v];
        }
        let t = step as f64 * opts.dt;
        for (b, s) in sq.iter().enumerate() {
            let r = s.sqrt();
            if !(r > 0.0) {
                return Err(Error::NonFinite { step });
            }
            logs[b].push((t, r.ln()));
        }
        for (v, &b) in block_of.iter().enumerate() {
            x[v] /= sq[b].sqrt();
        }
    }
    let horizon = total as f64 * opts.dt;
    Ok(logs
        .into_iter()
        .map(|l| SpectralEstimate::from_log(l, horizon))
        .collect())
}

/// `μ_d = (1/K) log ‖C(K-1)⋯C(0) x₀‖` for normalized all-ones `x₀`,
/// renormalizing every step.
pub fn mle_discrete(system: &mut dyn DiscreteSystem, steps: usize) -> Result<f64> {
    if steps < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 steps, got {steps}")));
    }
    let n = system.dim();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut y = vec![0.0; n];
    let mut acc = 0.0;
    for k in 0..steps {
        system.apply(k, &x, &mut y);
        let r = norm(&y);
        if !r.is_finite() || r == 0.0 {
            return Err(Error::NonFinite { step: k });
        }
        acc += r.ln();
        for (a, b) in x.iter_mut().zip(&y) {
            *a = b / r;
        }
    }
    Ok(acc / steps as f64)
}

/// `U(t, s)` by propagating the identity's columns with the given scheme.
pub fn fundamental_matrix(
    system: &mut dyn LinearSystem,
    t: f64,
    s: f64,
    dt: f64,
    method: Method,
) -> Result<DMatrix<f64>> {
    let n = system.dim();
    if n > FUNDAMENTAL_CAP {
        return Err(Error::SizeCap {
            dim: n,
            cap: FUNDAMENTAL_CAP,
        });
    }
    if !(t >= s) || !(dt > 0.0) {
        return Err(Error::InvalidArgument("need t >= s and dt > 0".into()));
    }
    let steps = ((t - s) / dt).round() as usize;
    let mut u = DMatrix::identity(n, n);
    let mut stepper = Stepper::new(n);
    let mut col = vec![0.0; n];
    for c in 0..n {
        col.iter_mut()
            .enumerate()
            .for_each(|(r, x)| *x = if r == c { 1.0 } else { 0.0 });
        for k in 0..steps {
            stepper.step(system, method, s + k as f64 * dt, dt, &mut col);
        }
        if col.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: steps });
        }
        u.column_mut(c).copy_from_slice(&col);
    }
    Ok(u)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    BelowZero,
    NearZero,
    AboveZero,
}

impl Regime {
    pub fn classify(mu: f64) -> Self {
        if mu < -NEAR_ZERO_BAND {
            Regime::BelowZero
        } else if mu > NEAR_ZERO_BAND {
            Regime::AboveZero
        } else {
            Regime::NearZero
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdReport {
    pub mu: f64,
    pub regime: Regime,
    pub estimate: SpectralEstimate,
    /// Set when pull-based attacks make the regime label uninformative.
    pub warning: Option<String>,
}

/// Exponent of the zero-state linearization and its regime.
pub fn threshold_report(model: &DynamicsModel, bundle: &ParamBundle, opts: &MleOptions) -> Result<ThresholdReport> {
    let mut sys = Linearization::new(model, bundle);
    let estimate = mle(&mut sys, opts)?;
    let warning = alpha_mean_warning(bundle, opts.horizon, opts.dt)?;
    Ok(ThresholdReport {
        mu: estimate.mu,
        regime: Regime::classify(estimate.mu),
        estimate,
        warning,
    })
}

fn alpha_mean_warning(bundle: &ParamBundle, horizon: f64, dt: f64) -> Result<Option<String>> {
    if bundle.alpha.support().1 <= 0.0 {
        return Ok(None);
    }
    let n = bundle.node_count();
    let stride = (n / 256).max(1);
    let mut worst: f64 = 0.0;
    for v in (0..n).step_by(stride) {
        worst = worst.max(mean_value(&bundle.alpha, Index::Node(v), 0.0, horizon, dt)?.value);
    }
    Ok((worst > 1e-6).then(|| {
        format!("mean pull-based attack rate reaches {worst:.4}; the origin is not an equilibrium and the regime label is not meaningful")
    }))
}

/// `sup_k λ₁(Γ(t_k)∘A(t_k) - B(t_k))` over the sample times for a symmetric
/// zero-state linearization with α = 0. Errors when a sampled matrix is not symmetric.
pub fn symmetric_lambda1_sup(bundle: &ParamBundle, times: &[f64]) -> Result<f64> {
    let n = bundle.node_count();
    if n > FUNDAMENTAL_CAP * 16 {
        return Err(Error::SizeCap {
            dim: n,
            cap: FUNDAMENTAL_CAP * 16,
        });
    }
    let mut sup = f64::NEG_INFINITY;
    for &t in times {
        let snap = bundle.snapshot(t);
        let mut m = DMatrix::zeros(n, n);
        for v in 0..n {
            m[(v, v)] = -snap.beta[v];
            let (sources, gamma) = snap.row(v);
            for (&u, &g) in sources.iter().zip(gamma) {
                m[(v, u as usize)] = g;
            }
        }
        if (&m - m.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "linearization at t={t} is not symmetric"
            )));
        }
        let eig = SymmetricEigen::new(m);
        sup = sup.max(eig.eigenvalues.max());
    }
    Ok(sup)
}
