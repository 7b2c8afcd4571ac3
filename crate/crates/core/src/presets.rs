//! Named parameter sets p1–p11 and the pull-based attack experiment.

use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use serde::Serialize;

use crate::bundle::ParamBundle;
use crate::error::{Error, Result};
use crate::graph::{erdos_renyi, load_edge_list, Perturbation, TemporalGraph};
use crate::integrate::Method;
use crate::model::{DynamicsModel, SquaredMean};
use crate::process::{mix_seed, Members, MixtureBranch, ParamProcess, ProcessSpec};

/// Salts for seeds derived from a run's master seed.
pub mod salt {
    pub const GRAPH: u64 = 1;
    pub const PERTURBATION: u64 = 2;
    pub const ALPHA: u64 = 3;
    pub const BETA: u64 = 4;
    pub const GAMMA: u64 = 5;
    pub const MEMBERS: u64 = 6;
    pub const INITIAL: u64 = 7;
}

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 7;

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];
pub const DESK_NODES: usize = 200;
pub const DESK_ARC_PROBABILITY: f64 = 0.1;
/// Node count of the random graph used for p9–p11 at full scale.
pub const FULL_ER_NODES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::InvalidArgument(format!(
                "unknown scale `{s}` (expected desk or full)"
            ))),
        }
    }
}

/// The reference experiment a preset is meant for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Convergence of trajectories from several initial fractions.
    Attractivity,
    /// Trajectory against the analytic envelopes.
    Bounds,
    /// A configuration expected to break global attractivity.
    Counterexample,
}

#[derive(Clone, Debug)]
pub struct Preset {
    pub name: String,
    pub model: DynamicsModel,
    pub alpha: ParamProcess,
    pub beta: ParamProcess,
    pub gamma: ParamProcess,
    /// Whether the graph churns 2% of its arcs every 10 time units.
    pub perturbed: bool,
    pub fractions: Vec<f64>,
    pub t_end: f64,
    pub kind: ExperimentKind,
    /// Each initial fraction gets its own parameter realization.
    pub per_trajectory_realizations: bool,
    /// Set when the parameters are not fully specified by the source and were reconstructed.
    pub reconstruction: Option<String>,
}

#[derive(Serialize)]
struct Descriptor<'a> {
    name: &'a str,
    model: String,
    alpha: &'a ProcessSpec,
    beta: &'a ProcessSpec,
    gamma: &'a ProcessSpec,
    perturbed: bool,
    fractions: &'a [f64],
    t_end: f64,
    kind: ExperimentKind,
    per_trajectory_realizations: bool,
    reconstruction: &'a Option<String>,
}

fn beta_sines(offset: f64, amp: f64) -> ParamProcess {
    ParamProcess::sinusoidal(offset, &[(amp, 1.0, 0.0), (amp, SQRT_2, 0.0)])
}

fn alpha_sines(offset: f64, amp: f64) -> ParamProcess {
    ParamProcess::sinusoidal(offset, &[(amp, 3.0, 0.0), (amp, 3f64.sqrt(), 0.0)])
}

fn gamma_wave(offset: f64, amp: f64) -> ParamProcess {
    ParamProcess::sinusoidal(offset, &[(amp, PI / 5.0, 0.0)])
}

fn members(fraction: f64, seed: u64) -> Members {
    Members::Fraction {
        fraction,
        seed: mix_seed(seed, salt::MEMBERS),
    }
}

/// β offsets swept by p4.
pub const P4_OFFSETS: [f64; 4] = [0.1, 0.3, 0.5, 0.7];

/// Names accepted by [`Preset::load`].
pub const PRESET_NAMES: [&str; 12] = [
    "p1", "p2", "p3", "p4", "pull", "p5", "p6", "p7", "p8", "p9", "p10", "p11",
];

impl Preset {
    fn base(name: impl Into<String>, alpha: ParamProcess, beta: ParamProcess, gamma: ParamProcess) -> Self {
        Preset {
            name: name.into(),
            model: DynamicsModel::sum(),
            alpha,
            beta,
            gamma,
            perturbed: true,
            fractions: DEFAULT_FRACTIONS.to_vec(),
            t_end: 100.0,
            kind: ExperimentKind::Attractivity,
            per_trajectory_realizations: false,
            reconstruction: None,
        }
    }

    /// Resolves a preset name to its variants. Most presets have one; `p4`
    /// expands to its β sweep, and `p4@0.3` picks a single offset. `pull`
    /// takes an optional member fraction, e.g. `pull@0.25` (default 0.5).
    /// `seed` drives every stochastic parameter and membership draw.
    pub fn load(name: &str, seed: u64) -> Result<Vec<Preset>> {
        let (head, arg) = match name.split_once('@') {
            Some((h, a)) => {
                let x: f64 = a
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad preset argument in `{name}`")))?;
                (h, Some(x))
            }
            None => (name, None),
        };
        let zero = || ParamProcess::constant(0.0);
        let p1_gamma = || gamma_wave(0.1, 0.05);
        let single = |p: Preset| Ok(vec![p]);
        if arg.is_some() && !matches!(head, "p4" | "pull") {
            return Err(Error::InvalidArgument(format!("preset `{head}` takes no argument")));
        }
        match head {
            "p1" => single(Preset::base("p1", zero(), beta_sines(0.5, 0.1), p1_gamma())),
            "p2" => single(Preset::base("p2", zero(), beta_sines(0.4, 0.1), p1_gamma())),
            "p3" => single(Preset::base("p3", zero(), beta_sines(0.1, 0.1), p1_gamma())),
            "p4" => {
                let offsets: Vec<f64> = match arg {
                    Some(x) => vec![x],
                    None => P4_OFFSETS.to_vec(),
                };
                Ok(offsets
                    .into_iter()
                    .map(|off| {
                        let mut p =
                            Preset::base(format!("p4@{off}"), zero(), beta_sines(off, 0.1), gamma_wave(0.7, 0.3));
                        p.reconstruction = Some(format!(
                            "beta = 0.1 sin t + 0.1 sin(sqrt2 t) + {off}; the beta family is unspecified in the source"
                        ));
                        p
                    })
                    .collect())
            }
            "pull" => {
                let fraction = arg.unwrap_or(0.5);
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(Error::InvalidArgument(format!(
                        "member fraction {fraction} outside [0,1]"
                    )));
                }
                let alpha = alpha_sines(0.2, 0.1).masked(members(fraction, seed))?;
                single(Preset::base(
                    format!("pull@{fraction}"),
                    alpha,
                    beta_sines(0.4, 0.1),
                    p1_gamma(),
                ))
            }
            "p5" => {
                let alpha = alpha_sines(0.5, 0.05).masked(members(0.5, seed))?;
                let mut p = Preset::base("p5", alpha, beta_sines(0.5, 0.05), gamma_wave(0.5, 0.1));
                p.kind = ExperimentKind::Bounds;
                single(p)
            }
            "p6" => {
                let mut p = Preset::base("p6", zero(), beta_sines(0.4, 0.1), gamma_wave(0.5, 0.1));
                p.kind = ExperimentKind::Bounds;
                single(p)
            }
            "p7" => {
                let alpha = ParamProcess::piecewise_uniform(0.1, 0.3, mix_seed(seed, salt::ALPHA))?
                    .masked(members(0.5, seed))?;
                let beta = ParamProcess::piecewise_uniform(0.4, 0.7, mix_seed(seed, salt::BETA))?;
                let mut p = Preset::base("p7", alpha, beta, ParamProcess::constant(0.1));
                p.kind = ExperimentKind::Bounds;
                single(p)
            }
            "p8" => {
                let beta = ParamProcess::piecewise_uniform(0.4, 0.7, mix_seed(seed, salt::BETA))?;
                let mut p = Preset::base("p8", zero(), beta, ParamProcess::constant(0.1));
                p.kind = ExperimentKind::Bounds;
                single(p)
            }
            "p9" | "p10" => {
                let alpha = if head == "p9" {
                    zero()
                } else {
                    alpha_sines(0.1, 0.1).masked(members(0.2, seed))?
                };
                let mut p = Preset::base(head, alpha, beta_sines(0.1, 0.05), gamma_wave(0.7, 0.1));
                p.model = DynamicsModel::custom(std::sync::Arc::new(SquaredMean));
                p.perturbed = false;
                p.kind = ExperimentKind::Counterexample;
                single(p)
            }
            "p11" => {
                let beta = ParamProcess::new(ProcessSpec::Mixture {
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
                    seed: mix_seed(seed, salt::BETA),
                    unit_interval: 1.0,
                })?;
                let mut p = Preset::base("p11", zero(), beta, ParamProcess::constant(0.3));
                p.perturbed = false;
                p.kind = ExperimentKind::Counterexample;
                p.per_trajectory_realizations = true;
                single(p)
            }
            _ => Err(Error::InvalidArgument(format!(
                "unknown preset `{name}` (known: {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    /// Loads a preset that must have exactly one variant.
    pub fn single(name: &str, seed: u64) -> Result<Preset> {
        let mut v = Self::load(name, seed)?;
        if v.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "preset `{name}` has {} variants; pick one with `{name}@<value>`",
                v.len()
            )));
        }
        Ok(v.remove(0))
    }

    /// Stable JSON description of everything that determines the preset.
    pub fn descriptor(&self) -> serde_json::Value {
        serde_json::to_value(Descriptor {
            name: &self.name,
            model: self.model.name(),
            alpha: self.alpha.spec(),
            beta: self.beta.spec(),
            gamma: self.gamma.spec(),
            perturbed: self.perturbed,
            fractions: &self.fractions,
            t_end: self.t_end,
            kind: self.kind,
            per_trajectory_realizations: self.per_trajectory_realizations,
            reconstruction: &self.reconstruction,
        })
        .expect("descriptor serializes")
    }

    /// The static base graph for `scale`. Full scale for p1–p8 needs the
    /// Gnutella05 edge list at `file`; p9–p11 use ER(1000, 0.1).
    pub fn base_graph(&self, scale: Scale, seed: u64, file: Option<&Path>) -> Result<TemporalGraph> {
        let graph_seed = mix_seed(seed, salt::GRAPH);
        match (scale, file) {
            (_, Some(path)) => Ok(load_edge_list(path)?.0),
            (Scale::Desk, None) => erdos_renyi(DESK_NODES, DESK_ARC_PROBABILITY, graph_seed),
            (Scale::Full, None) if self.kind == ExperimentKind::Counterexample => {
                erdos_renyi(FULL_ER_NODES, DESK_ARC_PROBABILITY, graph_seed)
            }
            (Scale::Full, None) => Err(Error::InvalidArgument(format!(
                "full-scale {} needs the Gnutella05 edge list (p2p-Gnutella05.txt); pass it with --graph",
                self.name
            ))),
        }
    }

    /// Applies this preset's churn schedule to `graph`.
    pub fn temporal_graph(&self, graph: &TemporalGraph, seed: u64) -> Result<TemporalGraph> {
        graph.with_perturbation(
            self.perturbed
                .then(|| Perturbation::standard(mix_seed(seed, salt::PERTURBATION))),
        )
    }

    /// Bundle of this preset's parameters on `graph` (used as given).
    pub fn bundle(&self, graph: TemporalGraph) -> Result<ParamBundle> {
        ParamBundle::new(graph, self.alpha.clone(), self.beta.clone(), self.gamma.clone())
    }

    /// Integration scheme for this preset's experiment. Bound experiments
    /// compare against closed-form envelopes of the exact flow, which a
    /// first-order step can cross at coarse `dt`, so they use RK4.
    pub fn default_method(&self) -> Method {
        match self.kind {
            ExperimentKind::Bounds => Method::Rk4,
            _ => Method::Euler,
        }
    }

    /// One bundle per trajectory: clones of `bundle`, or independent
    /// parameter realizations when the preset asks for them.
    pub fn trajectory_bundles(&self, bundle: &ParamBundle, count: usize) -> Vec<ParamBundle> {
        (0..count)
            .map(|k| {
                if self.per_trajectory_realizations {
                    bundle.realization(k as u64)
                } else {
                    bundle.clone()
                }
            })
            .collect()
    }

    /// Desk-scale bundle: ER(200, 0.1) with the preset's churn schedule.
    pub fn desk_bundle(&self, seed: u64) -> Result<ParamBundle> {
        let g = self.base_graph(Scale::Desk, seed, None)?;
        self.bundle(self.temporal_graph(&g, seed)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::Index;

    #[test]
    fn all_presets_load() {
        for name in PRESET_NAMES {
            let v = Preset::load(name, 1).unwrap();
            assert_eq!(v.len(), if name == "p4" { 4 } else { 1 });
        }
        assert!(Preset::load("p12", 1).is_err());
        assert!(Preset::load("p1@2", 1).is_err());
        assert!(Preset::single("p4", 1).is_err());
        assert_eq!(Preset::single("p4@0.3", 1).unwrap().name, "p4@0.3");
        assert!(Preset::single("p4", 1).unwrap_err().to_string().contains("variants"));
    }

    #[test]
    fn supports_stay_in_declared_ranges() {
        let p1 = Preset::single("p1", 0).unwrap();
        assert_eq!(p1.beta.eval(0.0, Index::Global).unwrap(), 0.5);
        let (lo, hi) = p1.beta.support();
        assert!((lo - 0.3).abs() < 1e-12 && (hi - 0.7).abs() < 1e-12);
        for name in PRESET_NAMES {
            for p in Preset::load(name, 3).unwrap() {
                let b = p.desk_bundle(3).unwrap();
                for proc in [&b.alpha, &b.beta, &b.gamma] {
                    let (lo, hi) = proc.support();
                    assert!(0.0 <= lo && hi <= 1.0);
                    for k in 0..200 {
                        let t = k as f64 * 0.37;
                        for v in [0, 17, 199] {
                            let x = proc.eval(t, Index::Node(v)).unwrap();
                            assert!(lo <= x && x <= hi, "{} {x} not in [{lo},{hi}]", p.name);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn full_scale_requires_file_for_gnutella_presets() {
        let p = Preset::single("p1", 0).unwrap();
        assert!(p.base_graph(Scale::Full, 0, None).is_err());
        let p9 = Preset::single("p9", 0).unwrap();
        assert_eq!(p9.base_graph(Scale::Full, 0, None).unwrap().node_count(), 1000);
    }

    #[test]
    fn descriptors_differ() {
        let a = Preset::single("p1", 0).unwrap().descriptor();
        let b = Preset::single("p2", 0).unwrap().descriptor();
        assert_ne!(a, b);
        assert_eq!(a, Preset::single("p1", 0).unwrap().descriptor());
    }
}
