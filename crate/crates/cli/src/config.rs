use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use cyberdyn::graph::{erdos_renyi, load_edge_list, Perturbation};
use cyberdyn::presets::{salt, Preset, Scale, DEFAULT_FRACTIONS, DEFAULT_SEED};
use cyberdyn::process::mix_seed;
use cyberdyn::{ArcSet, DynamicsModel, Method, ParamBundle, ParamProcess, ProcessSpec, TemporalGraph};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Options shared by every subcommand. Each flag may also be set in the
/// `--config` JSON file under the same name (dashes become underscores);
/// flags win over the file.
#[derive(Args, Debug, Default)]
pub struct Opts {
    /// JSON file mirroring these flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// SNAP-style edge list ("from to" per line, '#' comments).
    #[arg(long, global = true, value_name = "FILE")]
    pub graph: Option<PathBuf>,
    /// Directed Erdős–Rényi graph.
    #[arg(long, global = true, value_name = "N,P,SEED")]
    pub er: Option<String>,
    /// Built-in graph: empty:N, cycle:N, complete:N or arcs:0>1,1>0,...
    #[arg(long, global = true, value_name = "SPEC")]
    pub builtin: Option<String>,
    /// Attack function family: prod, sum or custom:squared-mean.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Parameter preset (p1..p11, pull, p4@offset, pull@fraction).
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Graph scale for presets: desk or full.
    #[arg(long, global = true)]
    pub scale: Option<String>,
    /// Initial infected fractions, one trajectory each
    #[arg(long, global = true, value_delimiter = ',', value_name = "F,F,...")]
    pub fractions: Option<Vec<f64>>,
    /// Simulation horizon (default 100)
    #[arg(long, global = true)]
    pub t_end: Option<f64>,
    /// Step size (default 0.05)
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Master seed (default 7)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Integration scheme: euler or rk4.
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// α(t): a constant or a JSON process descriptor.
    #[arg(long, global = true)]
    pub alpha: Option<String>,
    /// β(t): a constant or a JSON process descriptor.
    #[arg(long, global = true)]
    pub beta: Option<String>,
    /// γ(t): a constant or a JSON process descriptor.
    #[arg(long, global = true)]
    pub gamma: Option<String>,
    /// Churn 2% of the arcs every 10 time units.
    #[arg(long, global = true)]
    pub perturb: bool,
    /// Also write SVG charts.
    #[arg(long, global = true)]
    pub svg: bool,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Store and write every node's state, not just ⟨i(t)⟩.
    #[arg(long, global = true)]
    pub full_states: bool,
    /// Samples per property check.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Horizon of the exponent estimate.
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// Attractivity tolerance on the final pairwise distance.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    graph: Option<PathBuf>,
    er: Option<ErValue>,
    builtin: Option<String>,
    model: Option<String>,
    preset: Option<String>,
    scale: Option<String>,
    fractions: Option<Vec<f64>>,
    t_end: Option<f64>,
    dt: Option<f64>,
    seed: Option<u64>,
    method: Option<String>,
    alpha: Option<Value>,
    beta: Option<Value>,
    gamma: Option<Value>,
    perturb: Option<bool>,
    svg: Option<bool>,
    out: Option<PathBuf>,
    full_states: Option<bool>,
    samples: Option<usize>,
    horizon: Option<f64>,
    tolerance: Option<f64>,
}

#[derive(Deserialize, Debug)]
#[serde(untagged)]
enum ErValue {
    Text(String),
    Fields { n: usize, p: f64, seed: u64 },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ErSpec {
    pub n: usize,
    pub p: f64,
    pub seed: u64,
}

impl FromStr for ErSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [n, p, seed] = parts[..] else {
            bail!("--er expects N,P,SEED, got `{s}`");
        };
        Ok(ErSpec {
            n: n.parse().with_context(|| format!("bad node count `{n}`"))?,
            p: p.parse().with_context(|| format!("bad arc probability `{p}`"))?,
            seed: seed.parse().with_context(|| format!("bad seed `{seed}`"))?,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSource {
    File { path: PathBuf },
    Er(ErSpec),
    Builtin { spec: String },
    Preset,
}

/// Fully validated run configuration.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub graph: GraphSource,
    pub model: Option<String>,
    pub preset: Option<String>,
    pub scale: Scale,
    pub fractions: Option<Vec<f64>>,
    pub t_end: Option<f64>,
    pub dt: f64,
    pub seed: u64,
    pub method: Option<Method>,
    pub alpha: Option<ProcessSpec>,
    pub beta: Option<ProcessSpec>,
    pub gamma: Option<ProcessSpec>,
    pub perturb: bool,
    pub svg: bool,
    pub out: PathBuf,
    pub full_states: bool,
    pub samples: usize,
    pub horizon: Option<f64>,
    pub tolerance: f64,
}

fn parse_process(text: &str) -> Result<ProcessSpec> {
    if let Ok(x) = text.trim().parse::<f64>() {
        return Ok(ProcessSpec::Constant { value: x });
    }
    serde_json::from_str(text).with_context(|| format!("`{text}` is neither a number nor a process descriptor"))
}

fn process_value(v: Value) -> Result<ProcessSpec> {
    match v {
        Value::Number(n) => Ok(ProcessSpec::Constant {
            value: n.as_f64().expect("finite JSON number"),
        }),
        other => serde_json::from_value(other).context("invalid process descriptor"),
    }
}

impl RunConfig {
    pub fn resolve(opts: Opts) -> Result<RunConfig> {
        let file = match &opts.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str::<FileConfig>(&text)
                    .with_context(|| format!("invalid config {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let er = match (opts.er, file.er) {
            (Some(s), _) => Some(s.parse::<ErSpec>()?),
            (None, Some(ErValue::Text(s))) => Some(s.parse::<ErSpec>()?),
            (None, Some(ErValue::Fields { n, p, seed })) => Some(ErSpec { n, p, seed }),
            (None, None) => None,
        };
        let graph_path = opts.graph.or(file.graph);
        let builtin = opts.builtin.or(file.builtin);
        let sources = [graph_path.is_some(), er.is_some(), builtin.is_some()];
        if sources.iter().filter(|&&s| s).count() > 1 {
            bail!("give at most one of --graph, --er and --builtin");
        }
        let graph = match (graph_path, er, builtin) {
            (Some(path), _, _) => GraphSource::File { path },
            (_, Some(e), _) => GraphSource::Er(e),
            (_, _, Some(spec)) => GraphSource::Builtin { spec },
            _ => GraphSource::Preset,
        };

        let process = |flag: Option<String>, value: Option<Value>, name: &str| -> Result<Option<ProcessSpec>> {
            match (flag, value) {
                (Some(text), _) => parse_process(&text).map(Some),
                (None, Some(v)) => process_value(v).map(Some),
                (None, None) => Ok(None),
            }
            .with_context(|| format!("bad {name}"))
        };
        let alpha = process(opts.alpha, file.alpha, "alpha")?;
        let beta = process(opts.beta, file.beta, "beta")?;
        let gamma = process(opts.gamma, file.gamma, "gamma")?;
        let preset = opts.preset.or(file.preset);
        if preset.is_some() && (alpha.is_some() || beta.is_some() || gamma.is_some()) {
            bail!("--alpha/--beta/--gamma cannot be combined with --preset");
        }
        if let Some(name) = &preset {
            Preset::load(name, 0)?;
        }
        let model = opts.model.or(file.model);
        if let Some(m) = &model {
            DynamicsModel::from_config(m)?;
        }
        let scale = match opts.scale.or(file.scale) {
            Some(s) => s.parse::<Scale>()?,
            None => Scale::Desk,
        };
        let method = opts.method.or(file.method).map(|m| m.parse::<Method>()).transpose()?;
        let fractions = opts.fractions.or(file.fractions);
        if let Some(fs) = &fractions {
            if fs.is_empty() || fs.iter().any(|f| !(0.0..=1.0).contains(f)) {
                bail!("fractions must be a non-empty list of values in [0,1]");
            }
        }
        let positive = |x: Option<f64>, name: &str| -> Result<Option<f64>> {
            match x {
                Some(v) if !(v > 0.0 && v.is_finite()) => bail!("{name} must be positive, got {v}"),
                other => Ok(other),
            }
        };
        let t_end = positive(opts.t_end.or(file.t_end), "t_end")?;
        let dt = positive(opts.dt.or(file.dt), "dt")?.unwrap_or(cyberdyn::integrate::DEFAULT_DT);
        let horizon = positive(opts.horizon.or(file.horizon), "horizon")?;
        let tolerance = positive(opts.tolerance.or(file.tolerance), "tolerance")?.unwrap_or(1e-3);
        let samples = opts.samples.or(file.samples).unwrap_or(1000);
        if samples == 0 {
            bail!("samples must be at least 1");
        }
        Ok(RunConfig {
            graph,
            model,
            preset,
            scale,
            fractions,
            t_end,
            dt,
            seed: opts.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            method,
            alpha,
            beta,
            gamma,
            perturb: opts.perturb || file.perturb.unwrap_or(false),
            svg: opts.svg || file.svg.unwrap_or(false),
            out: opts.out.or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            full_states: opts.full_states || file.full_states.unwrap_or(false),
            samples,
            horizon,
            tolerance,
        })
    }

    /// Preset variants named by the config (several for plain `p4`).
    pub fn preset_variants(&self) -> Result<Vec<Preset>> {
        match &self.preset {
            Some(name) => Ok(Preset::load(name, self.seed)?),
            None => Ok(Vec::new()),
        }
    }
}

/// Everything a command needs to run.
pub struct Setup {
    pub preset: Option<Preset>,
    pub model: DynamicsModel,
    pub bundle: ParamBundle,
    pub fractions: Vec<f64>,
    pub t_end: f64,
    pub graph_info: Value,
}

fn builtin_graph(spec: &str) -> Result<ArcSet> {
    let (kind, arg) = spec
        .split_once(':')
        .ok_or_else(|| anyhow!("builtin graph `{spec}` needs KIND:ARG"))?;
    let count = || -> Result<usize> {
        let n: usize = arg.parse().with_context(|| format!("bad node count in `{spec}`"))?;
        if n == 0 {
            bail!("builtin graph needs at least one node");
        }
        Ok(n)
    };
    let arcs = match kind {
        "empty" => return Ok(ArcSet::empty(count()?)),
        "cycle" => {
            let n = count()?;
            if n < 2 {
                return Ok(ArcSet::empty(n));
            }
            ArcSet::from_arcs(n, (0..n).map(|k| (k, (k + 1) % n)))?
        }
        "complete" => {
            let n = count()?;
            ArcSet::from_arcs(
                n,
                (0..n).flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b))),
            )?
        }
        "arcs" => {
            let pairs: Vec<(usize, usize)> = arg
                .split(',')
                .map(|p| -> Result<(usize, usize)> {
                    let (a, b) = p
                        .split_once('>')
                        .ok_or_else(|| anyhow!("arc `{p}` should look like U>V"))?;
                    Ok((a.trim().parse()?, b.trim().parse()?))
                })
                .collect::<Result<_>>()?;
            let n = pairs.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
            ArcSet::from_arcs(n, pairs)?
        }
        _ => bail!("unknown builtin graph kind `{kind}` (empty, cycle, complete, arcs)"),
    };
    Ok(arcs)
}

/// Builds the graph, parameters and model for `preset` (or the explicit
/// parameters when `None`).
pub fn setup(cfg: &RunConfig, preset: Option<Preset>) -> Result<Setup> {
    let (base, mut info) = match &cfg.graph {
        GraphSource::File { path } => {
            let (g, report) = load_edge_list(path)?;
            (g, json!({ "source": "file", "path": path, "load_report": report }))
        }
        GraphSource::Er(e) => (
            erdos_renyi(e.n, e.p, e.seed)?,
            json!({ "source": "er", "n": e.n, "p": e.p, "seed": e.seed }),
        ),
        GraphSource::Builtin { spec } => (
            TemporalGraph::new(builtin_graph(spec)?),
            json!({ "source": "builtin", "spec": spec }),
        ),
        GraphSource::Preset => match &preset {
            Some(p) => {
                let g = p.base_graph(cfg.scale, cfg.seed, None)?;
                (
                    g,
                    json!({ "source": "preset", "scale": cfg.scale, "seed": mix_seed(cfg.seed, salt::GRAPH) }),
                )
            }
            None => bail!("no graph given: use --graph, --er, --builtin or --preset"),
        },
    };
    let graph = match &preset {
        Some(p) => p.temporal_graph(&base, cfg.seed)?,
        None => base.with_perturbation(
            cfg.perturb
                .then(|| Perturbation::standard(mix_seed(cfg.seed, salt::PERTURBATION))),
        )?,
    };
    info["nodes"] = json!(graph.node_count());
    info["arcs"] = json!(graph.base_arcs().len());
    info["fingerprint"] = json!(format!("{:016x}", graph.base_arcs().fingerprint()));
    info["perturbation"] = serde_json::to_value(graph.perturbation())?;

    let bundle = match &preset {
        Some(p) => p.bundle(graph)?,
        None => {
            let spec = |s: &Option<ProcessSpec>, default: f64| -> Result<ParamProcess> {
                Ok(ParamProcess::new(
                    s.clone().unwrap_or(ProcessSpec::Constant { value: default }),
                )?)
            };
            ParamBundle::new(
                graph,
                spec(&cfg.alpha, 0.0)?,
                spec(&cfg.beta, 0.5)?,
                spec(&cfg.gamma, 0.1)?,
            )?
        }
    };
    let model = match (&cfg.model, &preset) {
        (Some(m), _) => DynamicsModel::from_config(m)?,
        (None, Some(p)) => p.model.clone(),
        (None, None) => DynamicsModel::sum(),
    };
    let fractions = cfg
        .fractions
        .clone()
        .or_else(|| preset.as_ref().map(|p| p.fractions.clone()))
        .unwrap_or_else(|| DEFAULT_FRACTIONS.to_vec());
    let t_end = cfg.t_end.or(preset.as_ref().map(|p| p.t_end)).unwrap_or(100.0);
    Ok(Setup {
        preset,
        model,
        bundle,
        fractions,
        t_end,
        graph_info: info,
    })
}

/// The single preset a non-reproduce command runs with, if any.
pub fn single_setup(cfg: &RunConfig) -> Result<Setup> {
    let preset = match &cfg.preset {
        Some(name) => Some(Preset::single(name, cfg.seed)?),
        None => None,
    };
    setup(cfg, preset)
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}
