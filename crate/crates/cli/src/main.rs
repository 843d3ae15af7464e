use std::path::PathBuf;
use std::process::ExitCode;

use anl_cli::{cmd_audit, cmd_fit_gam, cmd_report, cmd_run, cmd_synth, exit_code, Config, Global, RunArgs};
use anyhow::Context;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "anl", version, about = "Adaptive probabilistic load forecasting")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic series as CSV.
    Synth {
        /// Output CSV (default: data.path).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the GAM of each series and write it as JSON.
    FitGam {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run strategies over every series.
    Run {
        /// Comma-separated strategy names (default: the configured list).
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra reliability filter at a time of day, `HH:MM`; repeatable.
        #[arg(long = "reliability-time")]
        reliability_times: Vec<String>,
    },
    /// Compare finished runs.
    Report {
        /// Manifests or directories holding them.
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Check the update logs of finished runs for lookahead.
    Audit {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<Config> {
    let path = path.ok_or_else(|| anl_core::Error::Config("--config is required for this command".into()))?;
    Config::load(path).with_context(|| format!("config {}", path.display()))
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let global = Global { seed: cli.seed, jobs: cli.jobs, force: cli.force };
    match cli.command {
        Command::Synth { out } => {
            let cfg = load_config(cli.config.as_ref())?;
            let path = cmd_synth(&cfg, &global, out.as_deref())?;
            println!("{}", path.display());
        }
        Command::FitGam { out } => {
            let cfg = load_config(cli.config.as_ref())?;
            for p in cmd_fit_gam(&cfg, &global, out.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::Run { strategies, out, reliability_times } => {
            let cfg = load_config(cli.config.as_ref())?;
            let args = RunArgs { strategies, out, reliability_times };
            for p in cmd_run(&cfg, &global, &args)? {
                println!("{}", p.display());
            }
        }
        Command::Report { manifests, out } => {
            for p in cmd_report(&manifests, &out, &global)? {
                println!("{}", p.display());
            }
        }
        Command::Audit { manifests } => {
            cmd_audit(&manifests)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ANL_LOG", "warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
