//! Time-dependent parameter processes α(t), β(t), Γ(t).
//!
//! Stochastic kinds are random-access: the value at time `t` for a given
//! index is drawn from a ChaCha stream keyed by `(seed, index)` at word
//! position `⌊t / unit_interval⌋`, so no history is stored.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time_floor;

/// Which component of a parameter vector or matrix is being evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Index {
    Global,
    Node(usize),
    /// Entry `(target, source)` of a per-arc matrix, i.e. `γ_vu` with `v = target`.
    Arc {
        target: usize,
        source: usize,
    },
}

impl Index {
    fn stream(self) -> u64 {
        match self {
            Index::Global => 0,
            Index::Node(v) => v as u64 + 1,
            Index::Arc { target, source } => ((target as u64 + 1) << 32) | (source as u64 + 1),
        }
    }

    fn node(self) -> Option<usize> {
        match self {
            Index::Global => None,
            Index::Node(v) => Some(v),
            Index::Arc { target, .. } => Some(target),
        }
    }
}

const BRANCH_STREAM: u64 = u64::MAX;

fn one() -> f64 {
    1.0
}

/// One component of a mixture: a uniform law on `[lo, hi]` chosen with `weight`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureBranch {
    pub weight: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Node subset selected for an indicator mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Members {
    /// `⌊fraction · n⌋` nodes chosen by a seeded shuffle.
    Fraction {
        fraction: f64,
        seed: u64,
    },
    Nodes {
        nodes: Vec<usize>,
    },
}

/// Serializable description of a process; the JSON form is the
/// descriptor accepted on the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessSpec {
    Constant {
        value: f64,
    },
    /// `offset + Σ amplitude · sin(omega · t + phase)`; terms are
    /// `[amplitude, omega, phase]` triples.
    SinusoidalSum {
        offset: f64,
        terms: Vec<[f64; 3]>,
    },
    /// Constant on `[k·u, (k+1)·u)`, with i.i.d. `U([lo, hi])` levels.
    PiecewiseIidUniform {
        lo: f64,
        hi: f64,
        seed: u64,
        #[serde(default = "one")]
        unit_interval: f64,
    },
    /// Piecewise i.i.d. uniform whose range is picked once per realization
    /// (per seed) among the weighted branches.
    Mixture {
        branches: Vec<MixtureBranch>,
        seed: u64,
        #[serde(default = "one")]
        unit_interval: f64,
    },
    /// `inner` on member nodes, zero elsewhere.
    ProductWithIndicator {
        inner: Box<ProcessSpec>,
        members: Members,
    },
}

impl ProcessSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ProcessSpec::Constant { .. } => "constant",
            ProcessSpec::SinusoidalSum { .. } => "sinusoidal_sum",
            ProcessSpec::PiecewiseIidUniform { .. } => "piecewise_iid_uniform",
            ProcessSpec::Mixture { .. } => "mixture",
            ProcessSpec::ProductWithIndicator { .. } => "product_with_indicator",
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self {
            ProcessSpec::Constant { value } if !value.is_finite() => {
                bad(format!("constant must be finite, got {value}"))
            }
            ProcessSpec::SinusoidalSum { offset, terms }
                if !offset.is_finite() || terms.iter().flatten().any(|x| !x.is_finite()) =>
            {
                bad("sinusoid coefficients must be finite".into())
            }
            ProcessSpec::PiecewiseIidUniform {
                lo, hi, unit_interval, ..
            } => {
                if !(lo <= hi) {
                    return bad(format!("empty uniform range [{lo}, {hi}]"));
                }
                if !(*unit_interval > 0.0) {
                    return bad(format!("unit interval must be positive, got {unit_interval}"));
                }
                Ok(())
            }
            ProcessSpec::Mixture {
                branches,
                unit_interval,
                ..
            } => {
                if branches.is_empty() {
                    return bad("mixture needs at least one branch".into());
                }
                if branches.iter().any(|b| !(b.lo <= b.hi) || !(b.weight > 0.0)) {
                    return bad("mixture branches need lo <= hi and positive weight".into());
                }
                if !(*unit_interval > 0.0) {
                    return bad(format!("unit interval must be positive, got {unit_interval}"));
                }
                Ok(())
            }
            ProcessSpec::ProductWithIndicator { inner, members } => {
                if let Members::Fraction { fraction, .. } = members {
                    if !(0.0..=1.0).contains(fraction) {
                        return bad(format!("member fraction must lie in [0,1], got {fraction}"));
                    }
                }
                inner.validate()
            }
            _ => Ok(()),
        }
    }

    fn is_deterministic(&self) -> bool {
        match self {
            ProcessSpec::Constant { .. } | ProcessSpec::SinusoidalSum { .. } => true,
            ProcessSpec::PiecewiseIidUniform { .. } | ProcessSpec::Mixture { .. } => false,
            ProcessSpec::ProductWithIndicator { inner, .. } => inner.is_deterministic(),
        }
    }

    fn reseeded(&self, salt: u64) -> ProcessSpec {
        let mut out = self.clone();
        match &mut out {
            ProcessSpec::PiecewiseIidUniform { seed, .. } | ProcessSpec::Mixture { seed, .. } => {
                *seed = mix_seed(*seed, salt);
            }
            ProcessSpec::ProductWithIndicator { inner, .. } => {
                **inner = inner.reseeded(salt);
            }
            _ => {}
        }
        out
    }
}

/// SplitMix64 finalizer used to derive child seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        ^ salt
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform_draw(seed: u64, stream: u64, interval: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(interval as u128 * 2);
    rng.gen::<f64>()
}

fn seeded_members(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let count = (fraction * n as f64 + 1e-9).floor() as usize;
    let mut mask = vec![false; n];
    for &v in &order[..count.min(n)] {
        mask[v] = true;
    }
    mask
}

/// A parameter process bound (optionally) to a node count.
#[derive(Clone, Debug)]
pub struct ParamProcess {
    spec: ProcessSpec,
    probability: bool,
    dim: Option<usize>,
    mask: Option<Arc<Vec<bool>>>,
    branch: Option<usize>,
}

impl ParamProcess {
    /// Builds a probability-valued process; evaluations are clamped to `[0, 1]`.
    pub fn new(spec: ProcessSpec) -> Result<Self> {
        spec.validate()?;
        let branch = match &spec {
            ProcessSpec::Mixture { branches, seed, .. } => Some(pick_branch(branches, *seed)),
            _ => None,
        };
        Ok(ParamProcess {
            spec,
            probability: true,
            dim: None,
            mask: None,
            branch,
        })
    }

    /// Same as [`ParamProcess::new`] but without clamping to `[0, 1]`.
    pub fn unclamped(spec: ProcessSpec) -> Result<Self> {
        let mut p = Self::new(spec)?;
        p.probability = false;
        Ok(p)
    }

    pub fn constant(value: f64) -> Self {
        Self::new(ProcessSpec::Constant { value }).expect("finite constant")
    }

    /// `offset + Σ a sin(ω t + φ)` from `(a, ω, φ)` triples.
    pub fn sinusoidal(offset: f64, terms: &[(f64, f64, f64)]) -> Self {
        Self::new(ProcessSpec::SinusoidalSum {
            offset,
            terms: terms.iter().map(|&(a, w, p)| [a, w, p]).collect(),
        })
        .expect("finite sinusoid")
    }

    pub fn piecewise_uniform(lo: f64, hi: f64, seed: u64) -> Result<Self> {
        Self::new(ProcessSpec::PiecewiseIidUniform {
            lo,
            hi,
            seed,
            unit_interval: 1.0,
        })
    }

    /// Restricts `self` to a node subset; other nodes evaluate to zero.
    pub fn masked(self, members: Members) -> Result<Self> {
        let probability = self.probability;
        let mut p = Self::new(ProcessSpec::ProductWithIndicator {
            inner: Box::new(self.spec),
            members,
        })?;
        p.probability = probability;
        Ok(p)
    }

    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    pub fn kind_name(&self) -> &'static str {
        self.spec.kind_name()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    /// Binds to `n` nodes: enables index range checks and resolves indicator masks.
    pub fn bind(&self, n: usize) -> Result<Self> {
        let mut out = self.clone();
        out.dim = Some(n);
        out.mask = match &self.spec {
            ProcessSpec::ProductWithIndicator { members, .. } => Some(Arc::new(match members {
                Members::Fraction { fraction, seed } => seeded_members(n, *fraction, *seed),
                Members::Nodes { nodes } => {
                    let mut mask = vec![false; n];
                    for &v in nodes {
                        if v >= n {
                            return Err(Error::IndexOutOfRange { index: v, dim: n });
                        }
                        mask[v] = true;
                    }
                    mask
                }
            })),
            _ => None,
        };
        Ok(out)
    }

    /// Indicator membership, once bound.
    pub fn members(&self) -> Option<&[bool]> {
        self.mask.as_deref().map(Vec::as_slice)
    }

    pub fn is_deterministic(&self) -> bool {
        self.spec.is_deterministic()
    }

    /// True when every index shares the same value at every time.
    pub fn is_uniform(&self) -> bool {
        matches!(
            self.spec,
            ProcessSpec::Constant { .. } | ProcessSpec::SinusoidalSum { .. }
        )
    }

    /// Branch chosen for this realization of a mixture.
    pub fn mixture_branch(&self) -> Option<usize> {
        self.branch
    }

    /// A new realization: stochastic seeds are re-derived from `salt`;
    /// indicator membership is kept.
    pub fn realization(&self, salt: u64) -> Self {
        let spec = self.spec.reseeded(salt);
        let branch = match &spec {
            ProcessSpec::Mixture { branches, seed, .. } => Some(pick_branch(branches, *seed)),
            _ => None,
        };
        ParamProcess {
            spec,
            branch,
            ..self.clone()
        }
    }

    fn check_index(&self, index: Index) -> Result<()> {
        if let Some(n) = self.dim {
            let check = |i: usize| {
                if i >= n {
                    Err(Error::IndexOutOfRange { index: i, dim: n })
                } else {
                    Ok(())
                }
            };
            match index {
                Index::Global => {}
                Index::Node(v) => check(v)?,
                Index::Arc { target, source } => {
                    check(target)?;
                    check(source)?;
                }
            }
        }
        if self.mask.is_none() && matches!(self.spec, ProcessSpec::ProductWithIndicator { .. }) {
            return Err(Error::InvalidArgument(
                "indicator process must be bound to a node count before evaluation".into(),
            ));
        }
        Ok(())
    }

    /// Value at time `t` for `index`.
    pub fn eval(&self, t: f64, index: Index) -> Result<f64> {
        self.check_index(index)?;
        Ok(self.eval_unchecked(t, index))
    }

    /// Value without index validation; callers guarantee the index is in range.
    pub fn eval_unchecked(&self, t: f64, index: Index) -> f64 {
        let raw = eval_spec(&self.spec, self.branch, self.mask.as_deref(), t, index);
        if self.probability {
            raw.clamp(0.0, 1.0)
        } else {
            raw
        }
    }

    /// Fills `out[v]` with the value for node `v`.
    pub fn fill_nodes(&self, t: f64, out: &mut [f64]) {
        if self.is_uniform() {
            let x = self.eval_unchecked(t, Index::Global);
            out.fill(x);
        } else {
            for (v, slot) in out.iter_mut().enumerate() {
                *slot = self.eval_unchecked(t, Index::Node(v));
            }
        }
    }

    /// Identifies the constancy piece containing `t`: evaluations at two
    /// times with equal keys are identical. `None` for continuously varying kinds.
    pub fn piece_key(&self, t: f64) -> Option<u64> {
        spec_piece_key(&self.spec, t)
    }

    /// Inclusive range of attainable values for `index`.
    pub fn support_at(&self, index: Index) -> (f64, f64) {
        let (lo, hi) = support_spec(&self.spec, self.branch, self.mask.as_deref(), index);
        if self.probability {
            (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))
        } else {
            (lo, hi)
        }
    }

    /// Range of attainable values over all indices.
    pub fn support(&self) -> (f64, f64) {
        match (&self.spec, self.mask.as_deref()) {
            (ProcessSpec::ProductWithIndicator { .. }, Some(mask)) => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for v in 0..mask.len() {
                    let (a, b) = self.support_at(Index::Node(v));
                    lo = lo.min(a);
                    hi = hi.max(b);
                }
                if mask.is_empty() {
                    (0.0, 0.0)
                } else {
                    (lo, hi)
                }
            }
            _ => self.support_at(Index::Global),
        }
    }
}

fn spec_piece_key(spec: &ProcessSpec, t: f64) -> Option<u64> {
    match spec {
        ProcessSpec::Constant { .. } => Some(0),
        ProcessSpec::SinusoidalSum { .. } => None,
        ProcessSpec::PiecewiseIidUniform { unit_interval, .. } | ProcessSpec::Mixture { unit_interval, .. } => {
            Some(time_floor(t.max(0.0), *unit_interval))
        }
        ProcessSpec::ProductWithIndicator { inner, .. } => spec_piece_key(inner, t),
    }
}

fn pick_branch(branches: &[MixtureBranch], seed: u64) -> usize {
    let total: f64 = branches.iter().map(|b| b.weight).sum();
    let u = uniform_draw(seed, BRANCH_STREAM, 0) * total;
    let mut acc = 0.0;
    for (k, b) in branches.iter().enumerate() {
        acc += b.weight;
        if u < acc {
            return k;
        }
    }
    branches.len() - 1
}

fn eval_spec(spec: &ProcessSpec, branch: Option<usize>, mask: Option<&Vec<bool>>, t: f64, index: Index) -> f64 {
    match spec {
        ProcessSpec::Constant { value } => *value,
        ProcessSpec::SinusoidalSum { offset, terms } => {
            offset + terms.iter().map(|[a, w, p]| a * (w * t + p).sin()).sum::<f64>()
        }
        ProcessSpec::PiecewiseIidUniform {
            lo,
            hi,
            seed,
            unit_interval,
        } => {
            let k = time_floor(t.max(0.0), *unit_interval);
            lo + (hi - lo) * uniform_draw(*seed, index.stream(), k)
        }
        ProcessSpec::Mixture {
            branches,
            seed,
            unit_interval,
        } => {
            let b = &branches[branch.unwrap_or(0)];
            let k = time_floor(t.max(0.0), *unit_interval);
            b.lo + (b.hi - b.lo) * uniform_draw(*seed, index.stream(), k)
        }
        ProcessSpec::ProductWithIndicator { inner, .. } => {
            let member = match (index.node(), mask) {
                (Some(v), Some(mask)) => mask.get(v).copied().unwrap_or(false),
                _ => false,
            };
            if member {
                eval_spec(inner, branch, None, t, index)
            } else {
                0.0
            }
        }
    }
}

fn support_spec(spec: &ProcessSpec, branch: Option<usize>, mask: Option<&Vec<bool>>, index: Index) -> (f64, f64) {
    match spec {
        ProcessSpec::Constant { value } => (*value, *value),
        ProcessSpec::SinusoidalSum { offset, terms } => {
            let amp: f64 = terms.iter().map(|[a, _, _]| a.abs()).sum();
            (offset - amp, offset + amp)
        }
        ProcessSpec::PiecewiseIidUniform { lo, hi, .. } => (*lo, *hi),
        ProcessSpec::Mixture { branches, .. } => match branch {
            Some(k) => (branches[k].lo, branches[k].hi),
            None => (
                branches.iter().map(|b| b.lo).fold(f64::INFINITY, f64::min),
                branches.iter().map(|b| b.hi).fold(f64::NEG_INFINITY, f64::max),
            ),
        },
        ProcessSpec::ProductWithIndicator { inner, .. } => {
            let member = match (index.node(), mask) {
                (Some(v), Some(mask)) => mask.get(v).copied().unwrap_or(false),
                _ => false,
            };
            if member {
                support_spec(inner, branch, None, index)
            } else {
                (0.0, 0.0)
            }
        }
    }
}

/// Windowed time average and its spread over shifted windows.
#[derive(Clone, Debug, Serialize)]
pub struct MeanEstimate {
    pub value: f64,
    /// `max - min` of the window means over the start sweep.
    pub spread: f64,
    /// `(start, window mean)` for each start in the sweep.
    pub windows: Vec<(f64, f64)>,
}

fn window_mean(p: &ParamProcess, index: Index, start: f64, horizon: f64, dt: f64) -> f64 {
    let steps = (horizon / dt).round().max(1.0) as usize;
    let h = horizon / steps as f64;
    let sum: f64 = (0..steps).map(|k| p.eval_unchecked(start + k as f64 * h, index)).sum();
    sum * h / horizon
}

/// Left-Riemann estimate of `(1/T) ∫_a^{a+T} p(τ) dτ` on a grid of step `dt`,
/// with the spread over windows started at `a + j·T/4`, `j = 0..=4`.
pub fn mean_value(p: &ParamProcess, index: Index, start: f64, horizon: f64, dt: f64) -> Result<MeanEstimate> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    p.check_index(index)?;
    let windows: Vec<(f64, f64)> = (0..=4)
        .map(|j| {
            let a = start + j as f64 * horizon / 4.0;
            (a, window_mean(p, index, a, horizon, dt))
        })
        .collect();
    let (lo, hi) = windows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, m)| {
            (lo.min(m), hi.max(m))
        });
    Ok(MeanEstimate {
        value: windows[0].1,
        spread: hi - lo,
        windows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErgodicityReport {
    /// Window means per realization, one entry per start.
    pub windowed: Vec<Vec<f64>>,
    /// Average of each realization's window means.
    pub realization_means: Vec<f64>,
    /// `max - min` of the realization means.
    pub dispersion: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

/// Heuristic ergodicity falsifier: compares long-run means across
/// independent realizations. FAIL when they disperse beyond `threshold`.
pub fn ergodicity_diagnostic(
    p: &ParamProcess,
    index: Index,
    window: f64,
    starts: &[f64],
    realizations: usize,
    threshold: f64,
    dt: f64,
) -> Result<ErgodicityReport> {
    if !(window > 0.0) {
        return Err(Error::InvalidArgument(format!("window must be positive, got {window}")));
    }
    if starts.is_empty() {
        return Err(Error::InvalidArgument("need at least one window start".into()));
    }
    if !p.is_deterministic() && realizations < 2 {
        return Err(Error::InvalidArgument(
            "stochastic processes need at least two realizations".into(),
        ));
    }
    p.check_index(index)?;
    let realizations = realizations.max(1);
    let windowed: Vec<Vec<f64>> = (0..realizations)
        .map(|r| {
            let real = p.realization(r as u64);
            starts
                .iter()
                .map(|&a| window_mean(&real, index, a, window, dt))
                .collect()
        })
        .collect();
    let realization_means: Vec<f64> = windowed
        .iter()
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    let (lo, hi) = realization_means
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
            (lo.min(m), hi.max(m))
        });
    let dispersion = hi - lo;
    Ok(ErgodicityReport {
        windowed,
        realization_means,
        dispersion,
        threshold,
        verdict: if dispersion > threshold {
            Verdict::Fail
        } else {
            Verdict::Pass
        },
    })
}

/// Grid settings for [`translation_number_search`].
#[derive(Clone, Copy, Debug)]
pub struct TranslationSearch {
    /// Candidate spacing.
    pub step: f64,
    /// Probe times cover `[0, probe_span]`.
    pub probe_span: f64,
    pub probe_step: f64,
}

impl Default for TranslationSearch {
    fn default() -> Self {
        TranslationSearch {
            step: 0.01,
            probe_span: 100.0,
            probe_step: 0.05,
        }
    }
}

/// `sup_t |p(t + ξ) - p(t)|` over the probe grid.
pub fn translation_defect(p: &ParamProcess, index: Index, xi: f64, opts: &TranslationSearch) -> f64 {
    let probes = (opts.probe_span / opts.probe_step).round() as usize;
    (0..=probes)
        .map(|k| {
            let t = k as f64 * opts.probe_step;
            (p.eval_unchecked(t + xi, index) - p.eval_unchecked(t, index)).abs()
        })
        .fold(0.0, f64::max)
}

/// Smallest non-trivial ε-translation number in `(0, span]`, or `None`.
///
/// Candidates on the initial stretch where the defect is still below `epsilon`
/// only because `ξ` is tiny are skipped. Local minima of the defect on the
/// candidate grid are refined by golden-section search.
pub fn translation_number_search(
    p: &ParamProcess,
    index: Index,
    epsilon: f64,
    span: f64,
    opts: &TranslationSearch,
) -> Result<Option<f64>> {
    if !p.is_deterministic() {
        return Err(Error::StochasticProcess(p.kind_name()));
    }
    if !(epsilon > 0.0 && span > 0.0 && opts.step > 0.0) {
        return Err(Error::InvalidArgument("epsilon, span and step must be positive".into()));
    }
    p.check_index(index)?;
    if matches!(p.spec(), ProcessSpec::Constant { .. }) {
        return Ok(Some(opts.step));
    }
    let count = (span / opts.step).floor() as usize;
    let defect = |xi: f64| translation_defect(p, index, xi, opts);
    let mut escaped = false;
    let mut prev = (0.0, 0.0);
    let mut cur = (opts.step, defect(opts.step));
    for k in 2..=count + 1 {
        let xi = k as f64 * opts.step;
        let next = (xi, if k <= count { defect(xi) } else { f64::INFINITY });
        if !escaped {
            if cur.1 >= epsilon {
                escaped = true;
            }
        } else if cur.1 < epsilon {
            return Ok(Some(cur.0));
        } else if cur.1 <= prev.1 && cur.1 <= next.1 {
            let (xi_min, d_min) = golden_minimize(&defect, cur.0 - opts.step, cur.0 + opts.step);
            if d_min < epsilon {
                return Ok(Some(xi_min));
            }
        }
        prev = cur;
        cur = next;
        if k > count {
            break;
        }
    }
    Ok(None)
}

fn golden_minimize(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
        if b - a < 1e-12 {
            break;
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, SQRT_2};

    fn p1_beta() -> ParamProcess {
        ParamProcess::sinusoidal(0.5, &[(0.1, 1.0, 0.0), (0.1, SQRT_2, 0.0)])
    }

    #[test]
    fn sinusoid_at_zero() {
        assert_eq!(p1_beta().eval(0.0, Index::Global).unwrap(), 0.5);
        assert_eq!(ParamProcess::constant(0.3).eval(17.2, Index::Node(4)).unwrap(), 0.3);
    }

    #[test]
    fn piecewise_constant_within_interval() {
        let p = ParamProcess::piecewise_uniform(0.4, 0.7, 42).unwrap();
        let a = p.eval(2.3, Index::Node(3)).unwrap();
        assert_eq!(a, p.eval(2.9, Index::Node(3)).unwrap());
        assert_ne!(a, p.eval(3.1, Index::Node(3)).unwrap());
        assert_ne!(a, p.eval(2.3, Index::Node(4)).unwrap());
        assert!((0.4..=0.7).contains(&a));
    }

    #[test]
    fn bound_index_is_checked() {
        let p = ParamProcess::constant(0.1).bind(3).unwrap();
        assert!(p.eval(0.0, Index::Node(2)).is_ok());
        assert!(matches!(
            p.eval(0.0, Index::Node(3)),
            Err(Error::IndexOutOfRange { index: 3, dim: 3 })
        ));
    }

    #[test]
    fn clamping_and_support() {
        // dips to -0.1 without clamping
        let p = ParamProcess::sinusoidal(0.1, &[(0.1, 3.0, 0.0), (0.1, 3f64.sqrt(), 0.0)]);
        assert_eq!(p.support(), (0.0, 0.30000000000000004));
        for k in 0..2000 {
            let x = p.eval(k as f64 * 0.05, Index::Global).unwrap();
            assert!((0.0..=0.3 + 1e-12).contains(&x));
        }
        let raw = ParamProcess::unclamped(p.spec().clone()).unwrap();
        assert!((raw.support().0 + 0.1).abs() < 1e-12);
    }

    #[test]
    fn indicator_mask() {
        let p = ParamProcess::constant(0.2)
            .masked(Members::Fraction { fraction: 0.5, seed: 3 })
            .unwrap();
        assert!(p.eval(0.0, Index::Node(0)).is_err());
        let p = p.bind(10).unwrap();
        let members = p.members().unwrap().iter().filter(|&&m| m).count();
        assert_eq!(members, 5);
        let total: f64 = (0..10).map(|v| p.eval(1.0, Index::Node(v)).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);

        let q = ParamProcess::constant(0.2)
            .masked(Members::Nodes { nodes: vec![1] })
            .unwrap()
            .bind(3)
            .unwrap();
        assert_eq!(q.support_at(Index::Node(0)), (0.0, 0.0));
        assert_eq!(q.support_at(Index::Node(1)), (0.2, 0.2));
        assert_eq!(q.support(), (0.0, 0.2));
    }

    #[test]
    fn json_descriptors() {
        let p: ProcessSpec = serde_json::from_str(
            r#"{"kind":"sinusoidal_sum","offset":0.5,"terms":[[0.1,1.0,0.0],[0.1,1.4142135,0.0]]}"#,
        )
        .unwrap();
        assert!(matches!(p, ProcessSpec::SinusoidalSum { .. }));
        let q: ProcessSpec =
            serde_json::from_str(r#"{"kind":"piecewise_iid_uniform","lo":0.4,"hi":0.7,"seed":9}"#).unwrap();
        match q {
            ProcessSpec::PiecewiseIidUniform { unit_interval, .. } => assert_eq!(unit_interval, 1.0),
            _ => panic!(),
        }
        let r: ProcessSpec = serde_json::from_str(
            r#"{"kind":"product_with_indicator","inner":{"kind":"constant","value":0.2},"members":{"fraction":0.5,"seed":1}}"#,
        )
        .unwrap();
        assert!(matches!(r, ProcessSpec::ProductWithIndicator { .. }));
        assert!(ParamProcess::new(
            serde_json::from_str(r#"{"kind":"piecewise_iid_uniform","lo":0.7,"hi":0.4,"seed":9}"#).unwrap()
        )
        .is_err());
    }

    #[test]
    fn mean_values() {
        let p = ParamProcess::sinusoidal(0.5, &[(0.1, 1.0, 0.0)]);
        let m = mean_value(&p, Index::Global, 0.0, 1000.0, 0.05).unwrap();
        assert!((m.value - 0.5).abs() < 1e-3);

        let c = ParamProcess::constant(0.37);
        let m = mean_value(&c, Index::Global, 3.0, 7.0, 0.05).unwrap();
        assert!((m.value - 0.37).abs() < 1e-14);
        assert!(m.spread < 1e-14);
        assert!(mean_value(&c, Index::Global, 0.0, 0.0, 0.05).is_err());
    }

    #[test]
    fn piecewise_uniform_mean() {
        // E U([0.4, 0.7]) = 0.55
        let p = ParamProcess::piecewise_uniform(0.4, 0.7, 17).unwrap();
        let m = mean_value(&p, Index::Node(0), 0.0, 10_000.0, 0.05).unwrap();
        assert!((m.value - 0.55).abs() < 0.01, "{}", m.value);
    }

    #[test]
    fn ergodicity_verdicts() {
        let s = p1_beta();
        let r = ergodicity_diagnostic(&s, Index::Global, 500.0, &[0.0, 100.0], 3, 0.02, 0.05).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.dispersion < 1e-15);

        let iid = ParamProcess::piecewise_uniform(0.1, 0.3, 5).unwrap();
        let r = ergodicity_diagnostic(&iid, Index::Node(0), 2000.0, &[0.0, 2000.0], 6, 0.02, 0.05).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);

        assert!(ergodicity_diagnostic(&iid, Index::Node(0), 10.0, &[0.0], 1, 0.02, 0.05).is_err());
    }

    #[test]
    fn mixture_realizations_split() {
        let p = ParamProcess::new(ProcessSpec::Mixture {
            branches: vec![
                MixtureBranch {
                    weight: 0.5,
                    lo: 0.1,
                    hi: 0.2,
                },
                MixtureBranch {
                    weight: 0.5,
                    lo: 0.1,
                    hi: 1.0,
                },
            ],
            seed: 11,
            unit_interval: 1.0,
        })
        .unwrap();
        let r = ergodicity_diagnostic(&p, Index::Node(0), 2000.0, &[0.0], 8, 0.02, 0.05).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        // branch means are 0.15 and 0.55
        for m in &r.realization_means {
            assert!((m - 0.15).abs() < 0.02 || (m - 0.55).abs() < 0.02, "{m}");
        }
        let branches: Vec<_> = (0..8).map(|s| p.realization(s).mixture_branch().unwrap()).collect();
        assert!(branches.contains(&0) && branches.contains(&1));
    }

    #[test]
    fn translation_numbers() {
        let p = ParamProcess::sinusoidal(0.5, &[(0.1, 1.0, 0.0)]);
        let xi = translation_number_search(&p, Index::Global, 1e-6, 10.0, &TranslationSearch::default())
            .unwrap()
            .unwrap();
        assert!((xi - 2.0 * PI).abs() < 1e-4, "{xi}");

        let c = ParamProcess::constant(0.4);
        let opts = TranslationSearch::default();
        assert_eq!(
            translation_number_search(&c, Index::Global, 1e-6, 10.0, &opts).unwrap(),
            Some(0.01)
        );

        let iid = ParamProcess::piecewise_uniform(0.1, 0.3, 1).unwrap();
        assert!(matches!(
            translation_number_search(&iid, Index::Global, 0.1, 10.0, &opts),
            Err(Error::StochasticProcess(_))
        ));
    }

    #[test]
    fn almost_periodic_translation() {
        let p = ParamProcess::sinusoidal(0.3, &[(0.2, PI, 0.0), (0.1, 2.0 * SQRT_2 * PI, 0.0)]);
        let opts = TranslationSearch::default();
        let xi = translation_number_search(&p, Index::Global, 0.01, 100.0, &opts)
            .unwrap()
            .expect("an ε-translation number exists");
        assert!(translation_defect(&p, Index::Global, xi, &opts) < 0.01);
        // no exact period: the defect never vanishes
        assert!(translation_defect(&p, Index::Global, xi, &opts) > 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn piecewise_reproducible_and_in_support(seed in any::<u64>(), t in 0.0f64..1e4, v in 0usize..1000) {
                let p = ParamProcess::piecewise_uniform(0.4, 0.7, seed).unwrap();
                let a = p.eval(t, Index::Node(v)).unwrap();
                let q = ParamProcess::piecewise_uniform(0.4, 0.7, seed).unwrap();
                prop_assert_eq!(a, q.eval(t, Index::Node(v)).unwrap());
                prop_assert!((0.4..=0.7).contains(&a));
            }
        }
    }
}
