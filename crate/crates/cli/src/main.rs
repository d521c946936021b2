use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use steerid_cli::config::ExperimentConfig;
use steerid_cli::error::CliResult;
use steerid_cli::pipeline::{cmd_evaluate, cmd_fit, cmd_generate, cmd_report, Method};

/// System-identification pipeline for vehicle steering dynamics.
#[derive(Parser)]
#[command(name = "steerid", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override: shifts dataset seeds (generate) or replaces the
    /// training seed (fit).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured datasets and write CSV records.
    Generate(Common),
    /// Fit one identification method on the training split.
    Fit {
        /// One of: lti, gp, encoder.
        #[arg(long)]
        method: String,
        #[command(flatten)]
        common: Common,
    },
    /// Free-run all fitted models on the test split and write the report.
    Evaluate(Common),
    /// Print the NRMSE report as percentages.
    Report(Common),
}

fn resolve(common: &Common) -> CliResult<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate(common) => {
            let (cfg, out) = resolve(common)?;
            cmd_generate(&cfg, &out, common.seed.unwrap_or(0))
        }
        Command::Fit { method, common } => {
            let method = Method::parse(method)?;
            let (cfg, out) = resolve(common)?;
            cmd_fit(method, &cfg, &out, common.seed)
        }
        Command::Evaluate(common) => {
            let (cfg, out) = resolve(common)?;
            cmd_evaluate(&cfg, &out)
        }
        Command::Report(common) => {
            let (_, out) = resolve(common)?;
            print!("{}", cmd_report(&out)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("steerid: {e}");
            e.exit_code()
        }
    }
}
