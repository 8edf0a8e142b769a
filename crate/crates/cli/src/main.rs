//! `dvlab` command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod inputs;
mod output;
mod reproduce;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dvlab::Tolerances;

use output::Format;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DVLAB_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "dvlab", version, about = "Occupation large deviations and linear response for finite jump processes")]
struct Cli {
    /// Override the identity tolerance shared by the solvers.
    #[arg(long, global = true, value_name = "TOL")]
    tol: Option<f64>,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Write the result to this file instead of stdout. Relative paths are
    /// resolved against $DVLAB_OUT_DIR when it is set.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stationary law of a model.
    Stationary { model: PathBuf },
    /// Potential V_μ that makes μ stationary under the tilted rates.
    Potential {
        model: PathBuf,
        /// Distribution file, or `rho` / `uniform`.
        mu: String,
    },
    /// Activities, rate functional, entropy production, free energy and relative entropy at μ.
    Rate { model: PathBuf, mu: String },
    /// Time trace of the functionals along the master equation.
    Evolve {
        model: PathBuf,
        mu: String,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Monotonicity verdict for I(μ_t).
    Scan {
        model: PathBuf,
        mu: String,
        #[command(flatten)]
        grid: GridArgs,
        /// Sign tolerance for dI/dt; defaults to a scale-aware value.
        #[arg(long)]
        tol_sign: Option<f64>,
    },
    /// Sector certificate for normal linear response.
    Sector { model: PathBuf },
    /// Susceptibility χ_GB(t) on a time grid.
    Chi {
        model: PathBuf,
        /// Observable G: comma-separated values, a single broadcast value, or a file.
        #[arg(long, visible_alias = "G", allow_hyphen_values = true)]
        g: String,
        /// Perturbing potential B, same syntax as --g.
        #[arg(long, visible_alias = "B", allow_hyphen_values = true)]
        b: String,
        /// `start:stop:count` or a comma-separated list of times.
        #[arg(long, default_value = "0:5:51")]
        t_grid: String,
    },
    /// Scaled cumulant generating function with a Legendre duality check.
    Scgf {
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        f: String,
        /// Barycentric grid resolution; chosen from the state count when omitted.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Monte Carlo occupation fractions compared with ρ.
    Sample {
        model: PathBuf,
        /// Horizon T of each trajectory.
        #[arg(long, visible_alias = "T")]
        horizon: f64,
        /// Number of trajectories.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Initial distribution; ρ when omitted.
        #[arg(long)]
        from: Option<String>,
    },
    /// Regenerate a reference experiment and check its verdict.
    Reproduce {
        #[arg(value_enum)]
        target: reproduce::Target,
        /// Directory for the emitted CSV files; defaults to $DVLAB_OUT_DIR or `.`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Also write a gnuplot script next to the data.
        #[arg(long)]
        gnuplot: bool,
    },
}

#[derive(Debug, Clone, clap::Args)]
struct GridArgs {
    /// Final time; 30 relaxation times when omitted.
    #[arg(long)]
    t_max: Option<f64>,
    /// Number of geometrically spaced sample times after t = 0.
    #[arg(long, default_value_t = 400)]
    points: usize,
}

#[derive(Debug)]
pub enum CliError {
    Core(dvlab::Error),
    Io(String),
    Usage(String),
    /// A reproduction finished but its expected verdict did not hold.
    Check(String),
}

impl From<dvlab::Error> for CliError {
    fn from(e: dvlab::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Io(_) => "E_IO",
            CliError::Usage(_) => "E_USAGE",
            CliError::Check(_) => "E_CHECK",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Core(_) | CliError::Check(_) => 2,
            CliError::Io(_) | CliError::Usage(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) | CliError::Usage(m) | CliError::Check(m) => f.write_str(m),
        }
    }
}

pub struct Context {
    pub tolerances: Tolerances,
    pub format: Format,
}

fn resolve_out(path: PathBuf) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() => PathBuf::from(dir).join(path),
        _ => path,
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut tolerances = Tolerances::default();
    if let Some(t) = cli.tol {
        if !(t > 0.0) || !t.is_finite() {
            return Err(CliError::Usage(format!("--tol must be positive and finite, got {t}")));
        }
        tolerances = tolerances.with_identity(t);
    }
    let ctx = Context {
        tolerances,
        format: cli.format,
    };
    let out = match cli.command {
        Command::Stationary { model } => commands::stationary(&ctx, &model)?,
        Command::Potential { model, mu } => commands::potential(&ctx, &model, &mu)?,
        Command::Rate { model, mu } => commands::rate(&ctx, &model, &mu)?,
        Command::Evolve { model, mu, grid } => commands::evolve(&ctx, &model, &mu, grid.t_max, grid.points)?,
        Command::Scan {
            model,
            mu,
            grid,
            tol_sign,
        } => commands::scan(&ctx, &model, &mu, grid.t_max, grid.points, tol_sign)?,
        Command::Sector { model } => commands::sector(&ctx, &model)?,
        Command::Chi { model, g, b, t_grid } => commands::chi(&ctx, &model, &g, &b, &t_grid)?,
        Command::Scgf { model, f, resolution } => commands::scgf(&ctx, &model, &f, resolution)?,
        Command::Sample {
            model,
            horizon,
            n,
            seed,
            from,
        } => commands::sample(&ctx, &model, horizon, n, seed, from.as_deref())?,
        Command::Reproduce {
            target,
            out_dir,
            gnuplot,
        } => {
            let dir = out_dir
                .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            reproduce::run(&ctx, target, &dir, gnuplot)?
        }
    };
    let text = out.render(ctx.format)?;
    match cli.out {
        Some(path) => {
            let path = resolve_out(path);
            std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            log::info!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code())
        }
    }
}
