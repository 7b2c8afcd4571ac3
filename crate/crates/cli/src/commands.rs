use std::fmt;
use std::io::Write;

use anyhow::{Context, Result};
use cyberdyn::analysis::{attractivity_experiment_with, bound_envelope, sandwich_check, BoundConfig};
use cyberdyn::integrate::{integrate, random_initial, sig9, IntegrateOptions, Storage, Trajectory};
use cyberdyn::model::validate_properties;
use cyberdyn::presets::ExperimentKind;
use cyberdyn::process::mix_seed;
use cyberdyn::spectral::{threshold_report, MleOptions};
use cyberdyn::{scc_classification, AttractivityConfig, Method, Verdict};
use serde_json::{json, Value};

use crate::config::{setup, single_setup, RunConfig, Setup};
use crate::output::{initial_seeds, metadata, Outputs};
use crate::svg::{line_chart, Series};

/// Marks errors caused by the user's configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(e: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(ConfigError(format!("{e:#}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 1,
            Outcome::Inconclusive => 2,
        }
    }

    fn worst(self, other: Outcome) -> Outcome {
        if other.exit_code() > self.exit_code() {
            other
        } else {
            self
        }
    }
}

impl From<Verdict> for Outcome {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Attractive => Outcome::Pass,
            Verdict::NotAttractive => Outcome::Fail,
            Verdict::Inconclusive => Outcome::Inconclusive,
        }
    }
}

fn load(cfg: &RunConfig) -> Result<Setup> {
    single_setup(cfg).map_err(config_error)
}

fn method_for(cfg: &RunConfig, setup: &Setup, fallback: Method) -> Method {
    cfg.method
        .or_else(|| setup.preset.as_ref().map(|p| p.default_method()))
        .unwrap_or(fallback)
}

fn label(setup: &Setup) -> String {
    setup
        .preset
        .as_ref()
        .map_or_else(|| "custom".to_string(), |p| p.name.clone())
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let mut setup = load(cfg)?;
    let fraction = match &cfg.fractions {
        Some(fs) if fs.len() == 1 => fs[0],
        Some(_) => {
            return Err(config_error(anyhow::anyhow!(
                "simulate takes a single initial fraction"
            )))
        }
        None => 0.5,
    };
    setup.fractions = vec![fraction];
    let n = setup.bundle.node_count();
    let i0 = random_initial(n, fraction, mix_seed(cfg.seed, 0))?;
    let method = method_for(cfg, &setup, Method::Euler);
    let storage = if cfg.full_states { Storage::Full } else { Storage::None };
    let opts = IntegrateOptions::new(setup.t_end)
        .dt(cfg.dt)
        .method(method)
        .storage(storage);
    let mut tr = integrate(&setup.model, &setup.bundle, &i0, &opts)?;
    tr.meta.seed = Some(cfg.seed);
    tr.meta.preset = setup.preset.as_ref().map(|p| p.name.clone());
    tr.meta.initial_fraction = Some(fraction);

    let mut out = Outputs::new(&cfg.out)?;
    out.write_with("trajectory.csv", |w| tr.write_csv(w, cfg.full_states))?;
    if cfg.svg {
        let chart = line_chart(
            &format!("{} from <i(0)> = {fraction}", label(&setup)),
            "t",
            "<i(t)>",
            &[Series::new(format!("f={fraction}"), &tr.times, &tr.mean_series)],
        );
        out.write("trajectory.svg", chart)?;
    }
    let extra = json!({ "method": method, "clamp_events": tr.clamp_events, "final_mean": tr.final_mean() });
    out.write_json("metadata.json", &metadata("simulate", cfg, &setup, extra))?;
    println!("final <i> = {}", sig9(tr.final_mean()));
    Ok(Outcome::Pass)
}

fn write_mean_csv(trajectories: &[Trajectory], w: &mut Vec<u8>) -> std::io::Result<()> {
    write!(w, "t")?;
    for tr in trajectories {
        write!(w, ",mean_{}", tr.meta.initial_fraction.unwrap_or(f64::NAN))?;
    }
    writeln!(w)?;
    for (k, t) in trajectories[0].times.iter().enumerate() {
        write!(w, "{}", sig9(*t))?;
        for tr in trajectories {
            write!(w, ",{}", sig9(tr.mean_series[k]))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn run_attractivity(cfg: &RunConfig, setup: &Setup, out: &mut Outputs, svg: bool) -> Result<(Outcome, Value)> {
    let method = method_for(cfg, setup, Method::Euler);
    let acfg = AttractivityConfig::new(&setup.fractions, setup.t_end)
        .dt(cfg.dt)
        .method(method)
        .tolerance(cfg.tolerance)
        .seed(cfg.seed)
        .id(label(setup));
    let bundles = match &setup.preset {
        Some(p) => p.trajectory_bundles(&setup.bundle, acfg.fractions.len()),
        None => vec![setup.bundle.clone(); acfg.fractions.len()],
    };
    let run = attractivity_experiment_with(&setup.model, &bundles, &acfg).map_err(|e| match e {
        cyberdyn::Error::InvalidArgument(_) => config_error(e.into()),
        other => other.into(),
    })?;
    out.write_json("attractivity.json", &run.verdict)?;
    out.write_with("trajectories.csv", |w| write_mean_csv(&run.trajectories, w))?;
    if svg {
        let series: Vec<Series> = run
            .trajectories
            .iter()
            .map(|t| {
                Series::new(
                    format!("<i(0)> = {}", t.meta.initial_fraction.unwrap_or(0.0)),
                    &t.times,
                    &t.mean_series,
                )
            })
            .collect();
        out.write("attractivity.svg", line_chart(&label(setup), "t", "<i(t)>", &series))?;
    }
    let v = &run.verdict;
    println!(
        "{}: verdict {} (max final distance {:.3e}, limit {})",
        v.id,
        serde_json::to_value(v.verdict)?.as_str().unwrap_or_default(),
        v.max_final_distance,
        serde_json::to_value(v.limit_kind)?.as_str().unwrap_or_default()
    );
    Ok((v.verdict.into(), serde_json::to_value(v)?))
}

pub fn attractivity(cfg: &RunConfig) -> Result<Outcome> {
    let setup = load(cfg)?;
    let mut out = Outputs::new(&cfg.out)?;
    let (outcome, summary) = run_attractivity(cfg, &setup, &mut out, cfg.svg)?;
    out.write_json(
        "metadata.json",
        &metadata("attractivity", cfg, &setup, json!({ "verdict": summary["verdict"] })),
    )?;
    Ok(outcome)
}

/// Nodes whose individual envelopes go into the envelope CSV.
const ENVELOPE_NODES: usize = 5;

fn run_bounds(cfg: &RunConfig, setup: &Setup, out: &mut Outputs, svg: bool) -> Result<(Outcome, Value)> {
    let method = method_for(cfg, setup, Method::Rk4);
    let n = setup.bundle.node_count();
    let opts = IntegrateOptions::new(setup.t_end)
        .dt(cfg.dt)
        .method(method)
        .storage(Storage::Full);
    let nodes: Vec<usize> = (0..n.min(ENVELOPE_NODES)).collect();
    let mut reports = Vec::new();
    let mut series = Vec::new();
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let mut times = Vec::new();
    let mut violations = 0;
    for (f, seed) in initial_seeds(&setup.fractions, cfg.seed) {
        let i0 = random_initial(n, f, seed)?;
        let env = bound_envelope(
            &setup.model,
            &setup.bundle,
            &BoundConfig::from_initial(&i0, setup.t_end),
        )?;
        let tr = integrate(&setup.model, &setup.bundle, &i0, &opts)?;
        let report = sandwich_check(&tr, &env)?;
        violations += report.violations;
        let (lower, upper): (Vec<f64>, Vec<f64>) = tr.times.iter().map(|&t| env.mean_bounds(t)).unzip();
        out.write_with(&format!("envelope_{f}.csv"), |w| env.write_csv(&tr.times, &nodes, w))?;
        series.push(Series::new(format!("<i> f={f}"), &tr.times, &tr.mean_series));
        series.push(Series::new(format!("lower f={f}"), &tr.times, &lower).dashed());
        series.push(Series::new(format!("upper f={f}"), &tr.times, &upper).dashed());
        columns.push((format!("mean_{f}"), tr.mean_series.clone()));
        columns.push((format!("lower_{f}"), lower));
        columns.push((format!("upper_{f}"), upper));
        reports.push(json!({
            "fraction": f,
            "seed": seed,
            "sandwich": report,
            "lower_limit_zero": env.nodes.iter().all(|c| c.b_lower == 0.0),
            "coefficients": env.nodes,
        }));
        times = tr.times.clone();
    }
    out.write_with("bounds.csv", |w| {
        write!(w, "t")?;
        for (name, _) in &columns {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for (k, t) in times.iter().enumerate() {
            write!(w, "{}", sig9(*t))?;
            for (_, values) in &columns {
                write!(w, ",{}", sig9(values[k]))?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    let summary = json!({ "id": label(setup), "method": method, "violations": violations, "runs": reports });
    out.write_json("bounds.json", &summary)?;
    if svg {
        out.write("bounds.svg", line_chart(&label(setup), "t", "<i(t)>", &series))?;
    }
    println!("{}: {} sandwich violations", label(setup), violations);
    let outcome = if violations == 0 { Outcome::Pass } else { Outcome::Fail };
    Ok((outcome, json!({ "violations": violations })))
}

pub fn bounds(cfg: &RunConfig) -> Result<Outcome> {
    let setup = load(cfg)?;
    let mut out = Outputs::new(&cfg.out)?;
    let (outcome, summary) = run_bounds(cfg, &setup, &mut out, cfg.svg)?;
    out.write_json("metadata.json", &metadata("bounds", cfg, &setup, summary))?;
    Ok(outcome)
}

fn mle_options(cfg: &RunConfig, setup: &Setup) -> MleOptions {
    let mut opts = MleOptions::new(cfg.horizon.unwrap_or(setup.t_end)).dt(cfg.dt);
    if let Some(m) = cfg.method {
        opts = opts.method(m);
    }
    opts
}

pub fn mle(cfg: &RunConfig) -> Result<Outcome> {
    let setup = load(cfg)?;
    let opts = mle_options(cfg, &setup);
    let report = threshold_report(&setup.model, &setup.bundle, &opts).map_err(|e| match e {
        cyberdyn::Error::InsufficientHorizon { .. } => config_error(e.into()),
        other => other.into(),
    })?;
    let mut out = Outputs::new(&cfg.out)?;
    let summary = json!({
        "mu": report.mu,
        "regime": report.regime,
        "converged": report.estimate.converged,
        "tail_slope": report.estimate.tail_slope,
        "horizon": report.estimate.horizon,
        "warning": report.warning,
    });
    out.write_json("mle.json", &summary)?;
    out.write_with("renorm.csv", |w| report.estimate.write_renorm_csv(w))?;
    out.write_json(
        "metadata.json",
        &metadata("mle", cfg, &setup, json!({ "method": opts.method })),
    )?;
    if let Some(w) = &report.warning {
        log::warn!("{w}");
    }
    println!(
        "mu = {} ({})",
        sig9(report.mu),
        summary["regime"].as_str().unwrap_or_default()
    );
    Ok(Outcome::Pass)
}

pub fn scc(cfg: &RunConfig) -> Result<Outcome> {
    let setup = load(cfg)?;
    let opts = mle_options(cfg, &setup);
    let report = scc_classification(&setup.model, &setup.bundle, setup.t_end, &opts).map_err(|e| match e {
        cyberdyn::Error::InsufficientHorizon { .. } => config_error(e.into()),
        other => other.into(),
    })?;
    let mut out = Outputs::new(&cfg.out)?;
    out.write_json("scc.json", &report)?;
    out.write_json(
        "metadata.json",
        &metadata("scc", cfg, &setup, json!({ "components": report.components.len() })),
    )?;
    for c in &report.components {
        println!(
            "component {} ({} nodes, upstream {:?}): mu = {:.4}, {}",
            c.index,
            c.nodes.len(),
            c.upstream,
            c.mu,
            serde_json::to_value(c.label)?.as_str().unwrap_or_default()
        );
    }
    Ok(Outcome::Pass)
}

pub fn properties(cfg: &RunConfig) -> Result<Outcome> {
    let setup = load(cfg)?;
    let report = validate_properties(&setup.model, &setup.bundle, cfg.samples, cfg.seed, setup.t_end)?;
    let mut out = Outputs::new(&cfg.out)?;
    out.write_json("properties.json", &report)?;
    out.write_json(
        "metadata.json",
        &metadata("properties", cfg, &setup, json!({ "samples": cfg.samples })),
    )?;
    for c in &report.checks {
        match &c.witness {
            None => println!("{:<22} pass ({} samples)", c.name, c.samples),
            Some(w) => println!("{:<22} FAIL: {w}", c.name),
        }
    }
    Ok(if report.all_passed() {
        Outcome::Pass
    } else {
        Outcome::Fail
    })
}

/// Runs each variant's reference experiment into `<out>/<variant>/`. The outcome
/// is whether the run shows the behaviour the preset is meant to exhibit.
pub fn reproduce(cfg: &RunConfig) -> Result<Outcome> {
    if cfg.preset.is_none() {
        return Err(config_error(anyhow::anyhow!("reproduce needs --preset")));
    }
    let variants = cfg.preset_variants().map_err(config_error)?;
    let mut root = Outputs::new(&cfg.out)?;
    let mut overall = Outcome::Pass;
    let mut summary = Vec::new();
    for preset in variants {
        let name = preset.name.clone();
        let kind = preset.kind;
        let setup = setup(cfg, Some(preset)).map_err(config_error)?;
        let mut out = Outputs::new(&root.dir().join(&name)).with_context(|| format!("output for {name}"))?;
        let (raw, result) = match kind {
            ExperimentKind::Bounds => run_bounds(cfg, &setup, &mut out, true)?,
            ExperimentKind::Attractivity | ExperimentKind::Counterexample => {
                run_attractivity(cfg, &setup, &mut out, true)?
            }
        };
        let outcome = match (kind, raw) {
            (ExperimentKind::Counterexample, Outcome::Fail) => Outcome::Pass,
            (ExperimentKind::Counterexample, Outcome::Pass) => Outcome::Fail,
            (_, o) => o,
        };
        let expected = match kind {
            ExperimentKind::Attractivity => "attractive",
            ExperimentKind::Bounds => "no sandwich violations",
            ExperimentKind::Counterexample => "not_attractive",
        };
        out.write_json(
            "metadata.json",
            &metadata(
                "reproduce",
                cfg,
                &setup,
                json!({ "expected": expected, "result": result }),
            ),
        )?;
        summary.push(json!({
            "preset": name,
            "kind": kind,
            "expected": expected,
            "reproduced": outcome == Outcome::Pass,
            "result": result,
            "files": out.files(),
        }));
        overall = overall.worst(outcome);
    }
    root.write_json("reproduce.json", &summary)?;
    Ok(overall)
}
