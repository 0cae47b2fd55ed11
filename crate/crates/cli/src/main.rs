//! `adex` binary: parse the command line, load the subcommand's TOML
//! config, run it, print a one-line JSON summary on success or a one-line
//! JSON error on standard error otherwise.
//!
//! Exit codes: 0 ok, 1 usage, 2 data error, 3 internal error.
//! Set `ADEX_LOG` (error|warn|info|debug|trace) for progress logging.

use std::path::PathBuf;

use adex_cli::error::CliError;
use adex_cli::{commands, config, help, serve};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adex",
    version,
    about = "Adaptive experimentation engine: simulate, serve, estimate, target, audit.",
    after_long_help = "Each subcommand reads a TOML config (--config), writes its artifacts \
into --out atomically, and prints a one-line JSON summary. Errors appear as one JSON line on \
stderr with exit codes 1 (usage), 2 (data), 3 (internal). Set ADEX_LOG=info for progress logs."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// `--config`, `--seed`, `--out` for subcommands with a run seed.
#[derive(Args)]
struct SeededArgs {
    /// TOML run configuration
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the config's seed
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (created if needed)
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

/// `--config`, `--out` for subcommands that are seedless given their inputs.
#[derive(Args)]
struct PlainArgs {
    /// TOML run configuration
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (created if needed)
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic population and run it through a design
    #[command(after_long_help = help::simulate_help())]
    Simulate(SeededArgs),
    /// Serve live assignments over HTTP
    #[command(after_long_help = help::serve_help())]
    Serve(SeededArgs),
    /// Estimate treatment contrasts from a collected dataset
    #[command(after_long_help = help::estimate_help())]
    Estimate(PlainArgs),
    /// Learn a treatment-assignment policy and report its value
    #[command(after_long_help = help::policy_help())]
    Policy(PlainArgs),
    /// Targeting-operator curve and rate of targeting gain
    #[command(after_long_help = help::rate_help())]
    Rate(SeededArgs),
    /// Re-estimate contrasts across a grid of response weightings
    #[command(after_long_help = help::sweep_help())]
    Sweep(PlainArgs),
    /// Replicated simulations measuring confidence-interval coverage
    #[command(after_long_help = help::coverage_help())]
    Coverage(SeededArgs),
}

fn main() {
    let code = match run() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.stderr_line());
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn run() -> Result<(), CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };

    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADEX_LOG", "off"))
        .format_timestamp(None)
        .try_init()
        .ok();

    let summary = match cli.command {
        Command::Simulate(args) => {
            commands::cmd_simulate(config::load_config(&args.config)?, args.seed, &args.out)?
        }
        Command::Serve(args) => {
            return serve::run_serve(config::load_config(&args.config)?, args.seed, &args.out);
        }
        Command::Estimate(args) => {
            commands::cmd_estimate(config::load_config(&args.config)?, &args.out)?
        }
        Command::Policy(args) => {
            commands::cmd_policy(config::load_config(&args.config)?, &args.out)?
        }
        Command::Rate(args) => {
            commands::cmd_rate(config::load_config(&args.config)?, args.seed, &args.out)?
        }
        Command::Sweep(args) => {
            commands::cmd_sweep(config::load_config(&args.config)?, &args.out)?
        }
        Command::Coverage(args) => {
            commands::cmd_coverage(config::load_config(&args.config)?, args.seed, &args.out)?
        }
    };
    println!("{summary}");
    Ok(())
}
