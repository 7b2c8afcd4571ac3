mod commands;
mod config;
mod output;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{config_error, ConfigError, Outcome};
use config::{Opts, RunConfig};

/// Simulate and analyze cyber attack-defense dynamics on time-varying networks.
///
/// Exit codes: 0 pass, 1 fail (not attractive, bound violations, failed
/// property, runtime error), 2 inconclusive verdict or invalid configuration.
#[derive(Parser, Debug)]
#[command(name = "cyberdyn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Integrate one trajectory and write trajectory.csv.
    Simulate,
    /// Run one trajectory per initial fraction and judge global attractivity.
    Attractivity,
    /// Compare trajectories with the analytic lower/upper envelopes.
    Bounds,
    /// Estimate the maximum Lyapunov exponent of the zero-state linearization.
    Mle,
    /// Classify the strongly connected components of the mean attack graph.
    Scc,
    /// Sample the structural properties of the model.
    Properties,
    /// Rerun a preset's reference experiment.
    Reproduce,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var("CYBERDYN_THREADS") {
        let threads: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| anyhow::anyhow!("CYBERDYN_THREADS must be a positive integer, got `{raw}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    init_threads().map_err(config_error)?;
    let cfg = RunConfig::resolve(cli.opts).map_err(config_error)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Attractivity => commands::attractivity(&cfg),
        Command::Bounds => commands::bounds(&cfg),
        Command::Mle => commands::mle(&cfg),
        Command::Scc => commands::scc(&cfg),
        Command::Properties => commands::properties(&cfg),
        Command::Reproduce => commands::reproduce(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            let code = if e.downcast_ref::<ConfigError>().is_some() {
                2
            } else {
                1
            };
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
