use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stratsel::dynamics::DynamicsMode;
use stratsel_cli::{CliError, CliResult, GridSpec};

const DEFAULT_SEED: u64 = 0x5EED;

#[derive(Parser)]
#[command(name = "stratsel", version, about = "Equilibrium effort under noisy threshold selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Br,
    Fp,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the unconstrained and demographic-parity equilibria.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the demographic-parity solve.
        #[arg(long)]
        skip_dp: bool,
    },
    /// Solve over a grid of α or reward values and write CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the sweep file's grid: lo:hi:count[:log] or a comma list.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Dropout thresholds and best-response extremes over a reward grid.
    Dropout {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run best-response or fictitious-play dynamics from zero effort.
    Dynamics {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check analytic results against Monte Carlo and grid oracles.
    Verify {
        /// Configurations to check; a built-in suite when omitted.
        #[arg(long)]
        config: Vec<PathBuf>,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn emit(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Solve { config, out, skip_dp } => {
            let config = stratsel_cli::load_config(&config)?;
            emit(&stratsel_cli::solve_json(&config, !skip_dp)?, out.as_deref())
        }
        Command::Sweep { config, out, grid } => {
            let spec = stratsel_cli::load_sweep(&config)?;
            let grid = grid.as_deref().map(GridSpec::parse).transpose()?;
            emit(&stratsel_cli::sweep_csv(&spec, grid.as_ref())?, out.as_deref())
        }
        Command::Dropout { config, grid, out } => {
            let config = stratsel_cli::load_config(&config)?;
            emit(&stratsel_cli::dropout_csv(&config, &GridSpec::parse(&grid)?)?, out.as_deref())
        }
        Command::Dynamics { config, mode, steps, tol, out } => {
            let config = stratsel_cli::load_config(&config)?;
            let mode = match mode {
                Mode::Br => DynamicsMode::Br,
                Mode::Fp => DynamicsMode::Fp,
            };
            emit(&stratsel_cli::dynamics_csv(&config, mode, steps, tol)?, out.as_deref())
        }
        Command::Verify { config, samples, seed } => {
            let suite = if config.is_empty() {
                stratsel_cli::default_suite()
            } else {
                config
                    .iter()
                    .map(|p| Ok((p.display().to_string(), stratsel_cli::load_config(p)?)))
                    .collect::<CliResult<Vec<_>>>()?
            };
            let (table, ok, failed) = stratsel_cli::verify(&suite, samples, seed)?;
            print!("{table}");
            if ok {
                Ok(())
            } else {
                let names: Vec<String> = failed.iter().map(|c| c.name.clone()).collect();
                Err(CliError::Compute(format!("{} check(s) failed: {}", names.len(), names.join(", "))))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("SSL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("ignoring SSL_THREADS: {e}");
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stratsel: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
