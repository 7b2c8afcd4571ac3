//! Fixed-step integration of `i' = f(i, y(t))` on `[0, t_end]`.

use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{ParamBundle, Snapshot};
use crate::error::{Error, Result};
use crate::model::DynamicsModel;

/// Default integration step.
pub const DEFAULT_DT: f64 = 0.05;
/// Largest node count for which full per-node states are kept by default.
pub const FULL_STORAGE_LIMIT: usize = 2000;
/// Tracked nodes when full storage is off.
pub const PROBE_COUNT: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            _ => Err(Error::InvalidArgument(format!(
                "unknown method `{s}` (expected euler or rk4)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Storage {
    /// Full states up to [`FULL_STORAGE_LIMIT`] nodes, probes above.
    Auto,
    Full,
    /// A seeded sample of this many nodes.
    Probes(usize),
    None,
}

#[derive(Clone, Debug)]
pub struct IntegrateOptions {
    pub t_end: f64,
    pub dt: f64,
    pub method: Method,
    pub storage: Storage,
    /// Seed for probe selection.
    pub probe_seed: u64,
}

impl IntegrateOptions {
    pub fn new(t_end: f64) -> Self {
        IntegrateOptions {
            t_end,
            dt: DEFAULT_DT,
            method: Method::Euler,
            storage: Storage::Auto,
            probe_seed: 0,
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

    pub fn storage(mut self, storage: Storage) -> Self {
        self.storage = storage;
        self
    }

    /// Number of steps on the grid.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Replay information attached to a trajectory.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub model: String,
    pub dt: f64,
    pub method: Option<Method>,
    pub seed: Option<u64>,
    pub preset: Option<String>,
    pub initial_fraction: Option<f64>,
}

#[derive(Clone, Debug)]
pub enum StateStore {
    /// Row-major `times × n`.
    Full {
        n: usize,
        values: Vec<f64>,
    },
    /// Row-major `times × nodes.len()`.
    Probes {
        nodes: Vec<usize>,
        values: Vec<f64>,
    },
    None,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: StateStore,
    pub mean_series: Vec<f64>,
    pub final_state: Vec<f64>,
    /// Components pushed back into `[0, 1]` after a step, summed over steps.
    pub clamp_events: usize,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.final_state.len()
    }

    pub fn final_mean(&self) -> f64 {
        *self.mean_series.last().expect("trajectory has at least one point")
    }

    /// Full state at grid index `k`, when stored.
    pub fn state(&self, k: usize) -> Option<&[f64]> {
        match &self.states {
            StateStore::Full { n, values } => values.get(k * n..(k + 1) * n),
            _ => None,
        }
    }

    /// Tracked node ids and their values at grid index `k`.
    pub fn tracked(&self, k: usize) -> Option<(Vec<usize>, &[f64])> {
        match &self.states {
            StateStore::Full { n, values } => Some(((0..*n).collect(), &values[k * n..(k + 1) * n])),
            StateStore::Probes { nodes, values } => {
                let m = nodes.len();
                Some((nodes.clone(), &values[k * m..(k + 1) * m]))
            }
            StateStore::None => None,
        }
    }

    pub fn has_full_states(&self) -> bool {
        matches!(self.states, StateStore::Full { .. })
    }

    /// Fraction of clamped components per step.
    pub fn clamp_rate(&self) -> f64 {
        let steps = self.len().saturating_sub(1).max(1);
        self.clamp_events as f64 / (steps * self.node_count().max(1)) as f64
    }

    /// Writes `t,mean_i[,i_0..]` rows with 9 significant digits.
    pub fn write_csv(&self, mut w: impl Write, per_node: bool) -> std::io::Result<()> {
        let full = per_node.then_some(match &self.states {
            StateStore::Full { n, .. } => Some(*n),
            _ => None,
        });
        let n = full.flatten().unwrap_or(0);
        write!(w, "t,mean_i")?;
        for v in 0..n {
            write!(w, ",i_{v}")?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            write!(w, "{},{}", sig9(self.times[k]), sig9(self.mean_series[k]))?;
            if let Some(s) = (n > 0).then(|| self.state(k)).flatten() {
                for x in s {
                    write!(w, ",{}", sig9(*x))?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Shortest decimal representation of `x` rounded to 9 significant digits.
pub fn sig9(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    format!("{rounded}")
}

fn clamp_unit(x: &mut [f64]) -> usize {
    let mut clamped = 0;
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            clamped += 1;
        } else if *v > 1.0 {
            *v = 1.0;
            clamped += 1;
        }
    }
    clamped
}

struct Recorder {
    store: StateStore,
}

impl Recorder {
    fn new(storage: Storage, n: usize, points: usize, seed: u64) -> Self {
        let storage = match storage {
            Storage::Auto if n <= FULL_STORAGE_LIMIT => Storage::Full,
            Storage::Auto => Storage::Probes(PROBE_COUNT),
            s => s,
        };
        let store = match storage {
            Storage::Full => StateStore::Full {
                n,
                values: Vec::with_capacity(n * points),
            },
            Storage::Probes(m) => {
                let mut nodes: Vec<usize> = (0..n).collect();
                nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                nodes.truncate(m.min(n));
                nodes.sort_unstable();
                StateStore::Probes {
                    values: Vec::with_capacity(nodes.len() * points),
                    nodes,
                }
            }
            _ => StateStore::None,
        };
        Recorder { store }
    }

    fn push(&mut self, state: &[f64]) {
        match &mut self.store {
            StateStore::Full { values, .. } => values.extend_from_slice(state),
            StateStore::Probes { nodes, values } => values.extend(nodes.iter().map(|&v| state[v])),
            StateStore::None => {}
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Integrates from `i0` with left-endpoint parameter sampling (Euler) or
/// stage-time sampling (RK4), clamping to `[0, 1]` after each step.
pub fn integrate(
    model: &DynamicsModel,
    bundle: &ParamBundle,
    i0: &[f64],
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let n = bundle.node_count();
    if i0.len() != n {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} entries, graph has {n} nodes",
            i0.len()
        )));
    }
    if !(opts.dt > 0.0) || !opts.dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {}", opts.dt)));
    }
    if !(opts.t_end >= opts.dt) {
        return Err(Error::InvalidArgument(format!(
            "t_end {} must be at least dt {}",
            opts.t_end, opts.dt
        )));
    }
    if i0.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::InvalidArgument("initial state must lie in [0,1]".into()));
    }
    let steps = opts.steps();
    let dt = opts.dt;
    let mut rec = Recorder::new(opts.storage, n, steps + 1, opts.probe_seed);
    let mut times = Vec::with_capacity(steps + 1);
    let mut mean_series = Vec::with_capacity(steps + 1);
    let mut state = i0.to_vec();
    let mut clamp_events = 0;

    times.push(0.0);
    mean_series.push(mean(&state));
    rec.push(&state);

    let mut s0 = bundle.new_snapshot();
    let mut k1 = vec![0.0; n];
    let mut stepper = match opts.method {
        Method::Euler => None,
        Method::Rk4 => Some(Rk4Buffers::new(bundle, n)),
    };
    for step in 0..steps {
        let t = step as f64 * dt;
        match &mut stepper {
            None => {
                bundle.fill(t, &mut s0);
                model.drift(&state, &s0, &mut k1);
                for (x, d) in state.iter_mut().zip(&k1) {
                    *x += dt * d;
                }
            }
            Some(rk) => rk.step(model, bundle, t, dt, &mut state),
        }
        if state.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        clamp_events += clamp_unit(&mut state);
        times.push((step + 1) as f64 * dt);
        mean_series.push(mean(&state));
        rec.push(&state);
    }

    Ok(Trajectory {
        times,
        states: rec.store,
        mean_series,
        final_state: state,
        clamp_events,
        meta: TrajectoryMeta {
            model: model.name(),
            dt,
            method: Some(opts.method),
            ..Default::default()
        },
    })
}

struct Rk4Buffers {
    snaps: [Snapshot; 3],
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4Buffers {
    fn new(bundle: &ParamBundle, n: usize) -> Self {
        Rk4Buffers {
            snaps: [bundle.new_snapshot(), bundle.new_snapshot(), bundle.new_snapshot()],
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    fn step(&mut self, model: &DynamicsModel, bundle: &ParamBundle, t: f64, dt: f64, state: &mut [f64]) {
        let [s0, s1, s2] = &mut self.snaps;
        bundle.fill(t, s0);
        bundle.fill(t + 0.5 * dt, s1);
        bundle.fill(t + dt, s2);
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        model.drift(state, s0, k1);
        for ((y, x), d) in tmp.iter_mut().zip(state.iter()).zip(k1.iter()) {
            *y = x + 0.5 * dt * d;
        }
        model.drift(tmp, s1, k2);
        for ((y, x), d) in tmp.iter_mut().zip(state.iter()).zip(k2.iter()) {
            *y = x + 0.5 * dt * d;
        }
        model.drift(tmp, s1, k3);
        for ((y, x), d) in tmp.iter_mut().zip(state.iter()).zip(k3.iter()) {
            *y = x + dt * d;
        }
        model.drift(tmp, s2, k4);
        for (v, x) in state.iter_mut().enumerate() {
            *x += dt / 6.0 * (k1[v] + 2.0 * k2[v] + 2.0 * k3[v] + k4[v]);
        }
    }
}

/// Exactly `⌊fraction · n⌋` randomly chosen nodes set to 1, the rest 0.
pub fn random_initial(n: usize, fraction: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in [0,1], got {fraction}"
        )));
    }
    let count = ((fraction * n as f64) + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut state = vec![0.0; n];
    for &v in &order[..count.min(n)] {
        state[v] = 1.0;
    }
    Ok(state)
}

/// Per-grid-point `max_v |a_v(t) - b_v(t)|`. Falls back to tracked probes when
/// both trajectories track the same node sample.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> Result<Vec<f64>> {
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-9) {
        return Err(Error::GridMismatch);
    }
    let comparable = match (&a.states, &b.states) {
        (StateStore::Full { n, .. }, StateStore::Full { n: m, .. }) => n == m,
        (StateStore::Probes { nodes, .. }, StateStore::Probes { nodes: other, .. }) => nodes == other,
        _ => false,
    };
    if !comparable {
        return Err(Error::MissingStates);
    }
    Ok((0..a.len())
        .map(|k| {
            let (_, x) = a.tracked(k).expect("states present");
            let (_, y) = b.tracked(k).expect("states present");
            x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        })
        .collect())
}
