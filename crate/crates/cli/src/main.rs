use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uqsindy_cli::{
    run_baseline, run_diagnostics, run_fit, run_predict, run_prior_demo, run_simulate, CliError,
    Overrides,
};

/// Bayesian sparse identification of nonlinear dynamics.
#[derive(Parser)]
#[command(name = "uqsindy", version, about)]
struct Cli {
    /// Output directory, overriding the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override for the sampler (and generator noise).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Chain-count override for the sampler.
    #[arg(long, global = true)]
    chains: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate benchmark data: clean and noisy CSVs plus provenance.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run Bayesian inference and write the coefficient report and draws.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Posterior predictive bands over a time grid, from a draws file.
    Predict {
        #[arg(long)]
        config: PathBuf,
        /// Draws CSV written by `fit`.
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        t_start: f64,
        #[arg(long)]
        t_end: f64,
        #[arg(long)]
        n_points: usize,
    },
    /// Point-estimate comparison: finite differences + STLSQ.
    Baseline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sparse linear-regression prior comparison.
    PriorDemo {
        #[arg(long)]
        config: PathBuf,
    },
    /// Convergence table for an existing draws file.
    Diagnostics {
        #[arg(long)]
        draws: PathBuf,
    },
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        chains: cli.chains,
    };
    let out = cli.out.as_deref();
    match cli.command {
        Command::Simulate { config } => {
            run_simulate(&config, out, overrides)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit { config } => {
            let outcome = run_fit(&config, out, overrides)?;
            eprintln!(
                "fit complete: max split-rhat {:.4}, divergence fraction {:.4} -> {}",
                outcome.max_split_rhat,
                outcome.divergence_fraction,
                outcome.results_path.display()
            );
            if outcome.gate_ok {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("diagnostics gate failed (split-rhat > 1.05 or divergences > 1%)");
                Ok(ExitCode::from(3))
            }
        }
        Command::Predict {
            config,
            draws,
            t_start,
            t_end,
            n_points,
        } => {
            let path = run_predict(&config, &draws, t_start, t_end, n_points, out, overrides)?;
            eprintln!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Baseline { config } => {
            let path = run_baseline(&config, out, overrides)?;
            eprintln!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::PriorDemo { config } => {
            let path = run_prior_demo(&config, out, overrides)?;
            eprintln!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Diagnostics { draws } => {
            let ok = run_diagnostics(&draws)?;
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
