use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bctm::cli;
use bctm::error::Error;

/// Cure-fraction survival modeling for interval-censored data.
#[derive(Parser)]
#[command(name = "bctm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the transformation cure model to a dataset.
    Fit(FitArgs),
    /// Run a Monte-Carlo simulation study from a scenario file.
    Simulate(SimulateArgs),
    /// Descriptive per-group summary of a dataset.
    Summary(SummaryArgs),
    /// Export fitted population survival curves (delimited data + SVG).
    Curves(CurvesArgs),
    /// Turnbull NPMLE support intervals, masses and survival steps.
    Npmle(NpmleArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Dataset file (delimited text with header).
    #[arg(long)]
    data: PathBuf,
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured number of baseline segments.
    #[arg(long = "B")]
    b: Option<usize>,
    /// Fit every B in an inclusive range, e.g. `1..6`.
    #[arg(long = "sweep-B", value_parser = parse_range)]
    sweep_b: Option<(usize, usize)>,
    /// Comma-separated alpha grid for a profile-likelihood scan.
    #[arg(long = "profile-alpha-grid", value_parser = parse_grid)]
    profile_alpha_grid: Option<std::vec::Vec<f64>>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Report output path (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Report output path (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummaryArgs {
    #[arg(long)]
    data: PathBuf,
    /// Column to group by.
    #[arg(long)]
    group: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Summary table output path (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurvesArgs {
    /// Fit report produced by `bctm fit --out` (JSON).
    #[arg(long)]
    fit: PathBuf,
    /// Covariate profiles file (TOML).
    #[arg(long)]
    profiles: PathBuf,
    /// Output prefix for curve data files and the SVG figure.
    #[arg(long, default_value = "curves")]
    out: PathBuf,
}

#[derive(Args)]
struct NpmleArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report output path (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| format!("expected `lo..hi`, got '{s}'"))?;
    let lo = lo.trim().parse::<usize>().map_err(|e| e.to_string())?;
    let hi = hi.trim().trim_start_matches('=').parse::<usize>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Fit(args) => {
            cli::cmd_fit(&cli::FitOptions {
                data: args.data,
                config: args.config,
                b_override: args.b,
                sweep_b: args.sweep_b,
                profile_alpha_grid: args.profile_alpha_grid,
                seed_override: args.seed,
                out: args.out,
            })?;
        }
        Command::Simulate(args) => {
            cli::cmd_simulate(&args.scenario, args.out.as_deref())?;
        }
        Command::Summary(args) => {
            cli::cmd_summary(&args.data, &args.group, args.config.as_deref(), args.out.as_deref())?;
        }
        Command::Curves(args) => {
            cli::cmd_curves(&args.fit, &args.profiles, &args.out)?;
        }
        Command::Npmle(args) => {
            cli::cmd_npmle(&args.data, args.config.as_deref(), args.out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
