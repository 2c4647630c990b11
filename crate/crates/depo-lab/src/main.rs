//! Command-line front end: parses flags, merges them over an optional JSON
//! config, dispatches to the library's command functions, and maps errors
//! to stable exit codes (0 pass, 1 failed check, 2 config or I/O trouble).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use depo_lab::cli::{
    cmd_certify, cmd_couple, cmd_regen, cmd_simulate, cmd_solve, cmd_verify, exit_code_for,
    ExperimentConfig, Overrides,
};
use depo_lab::Error;

#[derive(Parser)]
#[command(
    name = "depo-lab",
    version,
    about = "Dependent deposition on graphs: simulate, solve, and verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph description file.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Driver: `uniform`, `lazy-walk`, `arc-walk`, `layer:<k>:<rho>`,
    /// or an inline JSON spec.
    #[arg(long)]
    driver: Option<String>,
    /// Exploration depth for exact solves.
    #[arg(long)]
    depth_bound: Option<i64>,
    /// Root seed (required here or in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Steps per trajectory / lags per coupling curve.
    #[arg(long)]
    horizon: Option<u64>,
    /// Independent replicas or sample pairs.
    #[arg(long)]
    replicas: Option<usize>,
    /// Regeneration cycles for `regen`.
    #[arg(long)]
    cycles: Option<u64>,
    /// Worker threads; falls back to DEPO_LAB_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let overrides = Overrides {
            graph: self.graph.clone(),
            driver: self.driver.clone(),
            depth_bound: self.depth_bound,
            seed: self.seed,
            horizon: self.horizon,
            replicas: self.replicas,
            cycles: self.cycles,
            threads: self.threads,
            out: self.out.clone(),
        };
        ExperimentConfig::from_sources(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample trajectories and write one CSV per replica.
    Simulate(RunArgs),
    /// Solve the invariant distribution exactly and report the growth rate.
    Solve(RunArgs),
    /// Estimate the invariant distribution by regeneration cycles.
    Regen(RunArgs),
    /// Measure coupling decay against the certified curve.
    Couple(RunArgs),
    /// Run the full verification battery and report per-check verdicts.
    Verify(RunArgs),
    /// Build and export the communication certificate.
    Certify(RunArgs),
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Simulate(args) => {
            let manifest = cmd_simulate(&args.config()?)?;
            println!("wrote {} artifacts", manifest.artifacts.len());
            Ok(true)
        }
        Command::Solve(args) => {
            let manifest = cmd_solve(&args.config()?)?;
            println!("wrote {} artifacts", manifest.artifacts.len());
            Ok(true)
        }
        Command::Regen(args) => {
            let manifest = cmd_regen(&args.config()?)?;
            println!("wrote {} artifacts", manifest.artifacts.len());
            Ok(true)
        }
        Command::Couple(args) => {
            let manifest = cmd_couple(&args.config()?)?;
            println!("wrote {} artifacts", manifest.artifacts.len());
            Ok(true)
        }
        Command::Verify(args) => {
            let (_, report) = cmd_verify(&args.config()?)?;
            for check in &report.checks {
                println!(
                    "{}: {}",
                    check.name,
                    if check.pass { "pass" } else { "FAIL" }
                );
            }
            Ok(report.all_pass)
        }
        Command::Certify(args) => {
            let manifest = cmd_certify(&args.config()?)?;
            println!("wrote {} artifacts", manifest.artifacts.len());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            if matches!(err, Error::StateCapExceeded(_)) {
                eprintln!("hint: the state space is too large to enumerate; try `regen`");
            }
            ExitCode::from(exit_code_for(&err) as u8)
        }
    }
}
