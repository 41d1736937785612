//! Command-line front end: loads scenario configs, runs experiments, and
//! writes deterministic artifacts.
//!
//! Exit codes: 0 success, 2 config parse/validation error, 3 solver
//! failure, 4 inequality-gate failure in strict mode.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use viscowave::runner::{run_scenario, sweep, RunOptions, RunOutcome};
use viscowave::scenario::{ExperimentKind, Scenario};
use viscowave::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_GATE: u8 = 4;

#[derive(Parser)]
#[command(name = "viscowave", version, about = "Spectral simulator for the viscoelastic wave equation with memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Fail (exit 4) when any monitored inequality gate fails.
    #[arg(long, global = true)]
    strict: bool,
    /// Output directory for artifacts; omit to print the summary only.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for initial-data perturbation sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment a scenario file describes.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Run every matching scenario file, in parallel.
    Sweep {
        configs: Vec<PathBuf>,
        /// Worker threads (defaults to the number of cores).
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Certify the kernel conditions (NEC1)/(nece) for a scenario's kernel.
    CertifyKernel {
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Compute the equilibrium set and convergence observables.
    Equilibria {
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, opts } => run_one(&config, None, &opts),
        Command::CertifyKernel { config, opts } => {
            run_one(&config, Some(ExperimentKind::KernelCertify), &opts)
        }
        Command::Equilibria { config, opts } => {
            run_one(&config, Some(ExperimentKind::Equilibria), &opts)
        }
        Command::Sweep {
            configs,
            jobs,
            opts,
        } => run_sweep(&configs, jobs, &opts),
    }
}

fn load(path: &PathBuf, force_kind: Option<ExperimentKind>) -> Result<Scenario, Error> {
    let mut sc = Scenario::from_path(path)?;
    if let Some(kind) = force_kind {
        sc.experiment = kind;
    }
    Ok(sc)
}

fn run_one(path: &PathBuf, force_kind: Option<ExperimentKind>, opts: &CommonOpts) -> ExitCode {
    let sc = match load(path, force_kind) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let run_opts = RunOptions {
        strict: opts.strict,
        seed: opts.seed,
    };
    match run_scenario(&sc, &run_opts) {
        Ok(outcome) => ExitCode::from(emit(path, &outcome, opts)),
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            ExitCode::from(solver_exit(&e))
        }
    }
}

fn run_sweep(paths: &[PathBuf], jobs: Option<usize>, opts: &CommonOpts) -> ExitCode {
    if paths.is_empty() {
        eprintln!("sweep: no scenario files given");
        return ExitCode::from(EXIT_CONFIG);
    }
    if let Some(n) = jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("sweep: {e}");
        }
    }
    let run_opts = RunOptions {
        strict: opts.strict,
        seed: opts.seed,
    };
    let mut worst: u8 = 0;
    for (path, result) in sweep(paths, &run_opts) {
        let code = match result {
            Ok(outcome) => {
                let sub_opts = CommonOpts {
                    strict: opts.strict,
                    out: opts
                        .out
                        .as_ref()
                        .map(|root| root.join(path.file_stem().unwrap_or_default())),
                    seed: opts.seed,
                };
                emit(&path, &outcome, &sub_opts)
            }
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                solver_exit(&e)
            }
        };
        worst = worst.max(code);
    }
    ExitCode::from(worst)
}

fn emit(path: &PathBuf, outcome: &RunOutcome, opts: &CommonOpts) -> u8 {
    print!("{}", outcome.summary_text());
    if let Some(dir) = &opts.out {
        if let Err(e) = outcome.write_to(dir) {
            eprintln!("{}: {e}", path.display());
            return EXIT_SOLVER;
        }
    }
    if opts.strict && !outcome.all_pass() {
        eprintln!("{}: inequality gate failed in strict mode", path.display());
        return EXIT_GATE;
    }
    0
}

/// Config-shaped failures exit 2, everything else is a solver failure (3).
fn solver_exit(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_)
        | Error::Io(_)
        | Error::InvalidDomain(_)
        | Error::InvalidKernel(_)
        | Error::InvalidNonlinearity(_) => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    }
}
