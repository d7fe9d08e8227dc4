mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use homjp::qseq::VariantKind;
use homjp::iph::HazardEstimator;

use crate::io::CliError;

#[derive(Parser, Debug)]
#[command(name = "homjp", version, about = "Uniformized approximations of inhomogeneous jump processes")]
struct Cli {
    /// Write the CSV result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// JSON model file.
    #[arg(long)]
    pub model: PathBuf,

    /// Cap the inhomogeneity at n / max|S_ii| unless the model sets a cap.
    #[arg(long)]
    pub auto_cap: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Transition matrix P_n(s, t) of the uniformized chain.
    Transition {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: f64,
        #[arg(long, default_value_t = 0.0)]
        s: f64,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value = "tilde")]
        variant: VariantKind,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Seed for the arrival grid of the conditional variant.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Absorption density and distribution function as an Erlang mixture.
    IphDensity {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: f64,
        /// Number of mixture components.
        #[arg(long)]
        trunc: usize,
        /// Evaluation grid start:stop:step.
        #[arg(long)]
        grid: String,
        #[arg(long, default_value = "tilde")]
        variant: VariantKind,
        /// Also write the mixture as JSON.
        #[arg(long)]
        mixture: Option<PathBuf>,
    },
    /// Density estimate from a sample through its cumulative hazard.
    HazardFit {
        /// One positive value per line, optional header.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        n: f64,
        #[arg(long, default_value = "nelson-aalen")]
        estimator: HazardEstimator,
        /// Number of mixture components; defaults to cover the sample range.
        #[arg(long)]
        trunc: Option<usize>,
        /// Evaluation grid; defaults to 200 steps over the sample range.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Infinite-horizon ruin probability over a capital grid.
    Ruin {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: f64,
        /// Number of blocks kept.
        #[arg(long)]
        trunc: usize,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        nu: f64,
        #[arg(long)]
        u_grid: String,
        /// Monte Carlo replications for the reference column.
        #[arg(long)]
        mc: Option<usize>,
        #[arg(long, default_value_t = 2000)]
        horizon_claims: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Multivariate reward density on a grid.
    MphDensity {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: f64,
        /// Largest number of visits kept.
        #[arg(long)]
        trunc: usize,
        #[arg(long)]
        grid_x: String,
        #[arg(long)]
        grid_y: Option<String>,
        #[arg(long)]
        grid_z: Option<String>,
        #[arg(long, default_value = "tilde")]
        variant: VariantKind,
    },
    /// Quantiles of the normalized grid discrepancy.
    RateExperiment {
        /// Comma-separated rates.
        #[arg(long, value_delimiter = ',')]
        n: Vec<f64>,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sup-norm error of a nonrandom variant against the product integral.
    ErrorScan {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',')]
        n: Vec<f64>,
        #[arg(long = "T")]
        t_max: f64,
        #[arg(long, default_value_t = 10)]
        cells: usize,
        #[arg(long, default_value = "tilde")]
        variant: VariantKind,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let result = match cli.command {
        Command::Transition { model, n, s, t, variant, tol, seed } => {
            commands::transition(&model, n, s, t, variant, tol, seed)?
        }
        Command::IphDensity { model, n, trunc, grid, variant, mixture } => {
            commands::iph_density(&model, n, trunc, &grid, variant, mixture.as_deref())?
        }
        Command::HazardFit { data, n, estimator, trunc, grid } => {
            commands::hazard_fit(&data, n, estimator, trunc, grid.as_deref())?
        }
        Command::Ruin { model, n, trunc, rho, nu, u_grid, mc, horizon_claims, seed, tol } => {
            commands::ruin(&model, n, trunc, rho, nu, &u_grid, mc, horizon_claims, seed, tol)?
        }
        Command::MphDensity { model, n, trunc, grid_x, grid_y, grid_z, variant } => {
            let grids: Vec<&str> = [Some(grid_x.as_str()), grid_y.as_deref(), grid_z.as_deref()]
                .into_iter()
                .flatten()
                .collect();
            commands::mph_density(&model, n, trunc, &grids, variant)?
        }
        Command::RateExperiment { n, eps, reps, seed } => commands::rate_experiment(&n, eps, reps, seed)?,
        Command::ErrorScan { model, n, t_max, cells, variant, tol } => {
            commands::error_scan(&model, &n, t_max, cells, variant, tol)?
        }
    };
    for line in &result.meta {
        eprintln!("# {line}");
    }
    io::emit(&result.csv, cli.out.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
