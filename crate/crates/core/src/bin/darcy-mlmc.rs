use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use darcy_mlmc::experiment::{self, Command, ExperimentConfig};

/// Multilevel Monte Carlo studies for Darcy flow with random layered
/// permeability.
#[derive(Parser, Debug)]
#[command(name = "darcy-mlmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Bias and level variance against a reference solution.
    Convergence(RunArgs),
    /// Level variance with standard and coarse grid variate coupling.
    CgvCompare(RunArgs),
    /// Solver cost per unknown over a range of grid sizes.
    SolverBench(RunArgs),
    /// Adaptive MLMC and/or plain Monte Carlo for each tolerance.
    Mlmc(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `sampling.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default: $DARCY_MLMC_OUT, then ./darcy-mlmc-out).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(command: Command, args: &RunArgs) -> darcy_mlmc::Result<()> {
    let mut config = ExperimentConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        config.sampling.seed = seed;
    }
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| darcy_mlmc::Error::InvalidArgument(e.to_string()))?;
    }
    let out_dir = experiment::resolve_out_dir(args.out.as_deref());
    let output = experiment::run(command, &config)?;
    for p in experiment::write_outputs(&out_dir, &output)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::Convergence(a) => (Command::Convergence, a),
        Cmd::CgvCompare(a) => (Command::CgvCompare, a),
        Cmd::SolverBench(a) => (Command::SolverBench, a),
        Cmd::Mlmc(a) => (Command::Mlmc, a),
    };
    match run(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                darcy_mlmc::Error::Config { .. } => eprintln!("error: {}: {e}", args.config.display()),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(match e {
                darcy_mlmc::Error::Config { .. } | darcy_mlmc::Error::NonStationary => 2,
                _ => 1,
            })
        }
    }
}
