use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use superstat_cli::{run, Command, RunConfig};

/// Default worker count when `--threads` is absent.
const THREADS_ENV: &str = "SUPERSTAT_THREADS";

const EXIT_ERROR: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "solver", version, about = "Asymptotic and simulated errors for superstatistical two-cloud classification")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Theory (and optionally simulation) along an alpha grid.
    SweepAlpha(Flags),
    /// Separability threshold for one or more variance laws.
    Separability(Flags),
    /// Bayes-optimal error along an alpha grid.
    Bayes(Flags),
    /// Finite-size ERM simulations only.
    Simulate(Flags),
    /// Random-label training loss and test MSE.
    RandomLabels(Flags),
    /// Test error over a ridge grid at fixed alpha.
    OptimalLambda(Flags),
}

#[derive(clap::Args, Debug)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Cmd {
    fn split(self) -> (Command, Flags) {
        match self {
            Cmd::SweepAlpha(f) => (Command::SweepAlpha, f),
            Cmd::Separability(f) => (Command::Separability, f),
            Cmd::Bayes(f) => (Command::Bayes, f),
            Cmd::Simulate(f) => (Command::Simulate, f),
            Cmd::RandomLabels(f) => (Command::RandomLabels, f),
            Cmd::OptimalLambda(f) => (Command::OptimalLambda, f),
        }
    }
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, String> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got {s:?}")),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (command, flags) = cli.command.split();
    match execute(command, flags) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("solver: some grid points did not converge (see the converged column)");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(msg) => {
            eprintln!("solver: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn execute(command: Command, flags: Flags) -> Result<bool, String> {
    let path = flags.config.ok_or("--config <path> is required")?;
    let mut cfg = RunConfig::load(&path).map_err(|e| e.to_string())?;
    if cfg.command != command {
        return Err(format!(
            "config is for `{}` but `{}` was requested",
            cfg.command.name(),
            command.name()
        ));
    }
    if let Some(out) = flags.out {
        cfg.output = Some(out);
    }
    if let Some(seed) = flags.seed {
        cfg.solver.seed = seed;
        cfg.experiment.seed = seed;
    }
    if let Some(n) = threads(flags.threads)? {
        if n == 0 {
            return Err("thread count must be at least 1".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    let outcome = run(&cfg).map_err(|e| e.to_string())?;
    match &cfg.output {
        Some(p) => outcome.table.write_csv(p).map_err(|e| e.to_string())?,
        None => print!("{}", outcome.table.to_csv_string()),
    }
    if let Some(s) = &outcome.summary {
        eprintln!("{s}");
    }
    Ok(outcome.all_converged)
}
