//! The difftraffic binary: forward simulation, gradient verification,
//! benchmarking, state estimation, and control optimization over scenario
//! files. Exit code 0 on success, 1 on simulation or optimization failure,
//! 2 on bad input.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use difftraffic_cli::bench::{self, BenchFamily};
use difftraffic_cli::control::cmd_control;
use difftraffic_cli::estimate::cmd_estimate;
use difftraffic_cli::gradcheck::{cmd_gradcheck, GradcheckOptions};
use difftraffic_cli::io;
use difftraffic_cli::simulate::{cmd_simulate, SimulateOptions};
use difftraffic_core::ConversionMode;

#[derive(Parser)]
#[command(name = "difftraffic", version, about = "Differentiable hybrid traffic simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario forward and write its state history and run report.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's macro-micro conversion mode.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Check reverse-sweep gradients against central finite differences.
    Gradcheck {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// Input dimensions sampled per block.
        #[arg(long, default_value_t = 24)]
        trials: usize,
        /// Finite-difference half-width.
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Write the JSON verdict to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure forward, reverse-sweep, and finite-difference costs.
    Bench {
        #[arg(long, value_enum, default_value_t = Family::All)]
        family: Family,
        /// Timing samples per measured phase.
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Use small configurations and skip the full-scale assertions.
        #[arg(long)]
        quick: bool,
        /// Write JSON tables into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a scenario's initial macro cells to observed final cells.
    Estimate {
        #[arg(long)]
        scenario: PathBuf,
        /// Estimation problem file.
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the problem's randomization seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Optimize a pace-car or signal control schedule.
    Control {
        #[arg(long)]
        scenario: PathBuf,
        /// Control problem file.
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Det,
    Stoch,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Timing,
    Sweep,
    All,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { scenario, steps, out, seed, mode } => {
            let opts = SimulateOptions {
                seed,
                mode: mode.map(|m| match m {
                    Mode::Det => ConversionMode::Deterministic,
                    Mode::Stoch => ConversionMode::Stochastic,
                }),
            };
            cmd_simulate(&scenario, steps, &out, &opts)?;
        }
        Command::Gradcheck { scenario, steps, trials, h, tolerance, seed, threads, out } => {
            let opts = GradcheckOptions { steps, trials, h, tolerance, seed, threads, out };
            cmd_gradcheck(&scenario, &opts)?;
        }
        Command::Bench { family, repeats, quick, out } => {
            let family = match family {
                Family::Timing => BenchFamily::Timing,
                Family::Sweep => BenchFamily::Sweep,
                Family::All => BenchFamily::All,
            };
            bench::cmd_bench(family, quick, repeats, out.as_deref())?;
        }
        Command::Estimate { scenario, problem, out, seed } => {
            cmd_estimate(&scenario, &problem, &out, seed)?;
        }
        Command::Control { scenario, problem, out } => {
            cmd_control(&scenario, &problem, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(io::exit_code(&err))
        }
    }
}
