use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wavecoef::config::ScenarioConfig;
use wavecoef::diagnostics::AdjointHook;
use wavecoef_cli::{
    adjoint_test, generate_data, load_config, solve, CliError, Overrides, EXIT_FAILURE, EXIT_NOT_CONVERGED,
};

/// Wave-speed coefficient reconstruction with multi-bang and total-variation
/// regularization.
#[derive(Parser, Debug)]
#[command(name = "wavecoef", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override the noise seed from the config
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the iteration limit from the config
    #[arg(long, global = true)]
    max_iter: Option<usize>,

    /// Override the residual tolerance from the config
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the state equation at the exact coefficient and write noisy observations
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the coefficient from observations written by generate-data
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print every n-th residual check (0 disables progress output)
        #[arg(long, default_value_t = 10)]
        progress_every: usize,
    },
    /// Check the adjoint identity, the Taylor remainder and the gradient
    AdjointTest {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        resolution: Resolution,
        /// Deliberately perturb the adjoint (the report must fail)
        #[arg(long, hide = true)]
        corrupt_adjoint: bool,
    },
    /// Print a built-in scenario as TOML
    Preset {
        /// transmission or reflection
        name: String,
    },
}

#[derive(Args, Debug)]
struct Resolution {
    /// Mesh nodes in x (requires --ny and --steps)
    #[arg(long, requires_all = ["ny", "steps"])]
    nx: Option<usize>,
    /// Mesh nodes in y
    #[arg(long, requires_all = ["nx", "steps"])]
    ny: Option<usize>,
    /// Time steps
    #[arg(long, requires_all = ["nx", "ny"])]
    steps: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        max_iter: cli.max_iter,
        tol: cli.tol,
    };
    match cli.command {
        Command::GenerateData { config, out } => {
            let cfg = load_config(&config, &overrides)?;
            let files = generate_data(&cfg, &out)?;
            println!("wrote {}", files.observations.display());
            println!("wrote {}", files.clean.display());
            println!("wrote {}", files.exact_csv.display());
            println!("wrote {}", files.exact_vtk.display());
            Ok(0)
        }
        Command::Solve {
            config,
            data,
            out,
            progress_every,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let check = cfg.solver.check_every;
            let result = solve(&cfg, &data, &out, |r| {
                if progress_every > 0 && (r.iteration / check) % progress_every == 0 {
                    eprintln!(
                        "{:>7}  objective {:.6e}  residuals {:.3e} {:.3e} {:.3e}  sum {:.3e}",
                        r.iteration, r.objective, r.primal, r.observation, r.dual, r.sum
                    );
                }
            })?;
            let s = &result.summary;
            println!(
                "{} after {} iterations ({:.1} s); {:.1}% of control values at a level",
                if s.converged { "converged" } else { "not converged" },
                s.iterations,
                s.wall_time_s,
                100.0 * s.fraction_at_levels
            );
            println!("results in {}", out.display());
            Ok(if s.converged { 0 } else { EXIT_NOT_CONVERGED })
        }
        Command::AdjointTest {
            config,
            resolution,
            corrupt_adjoint,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let res = match (resolution.nx, resolution.ny, resolution.steps) {
                (Some(nx), Some(ny), Some(steps)) => Some((nx, ny, steps)),
                _ => None,
            };
            let hook = if corrupt_adjoint {
                AdjointHook::Corrupted
            } else {
                AdjointHook::Exact
            };
            let report = adjoint_test(&cfg, res, hook)?;
            println!("{report}");
            Ok(if report.passed() { 0 } else { EXIT_FAILURE })
        }
        Command::Preset { name } => {
            let mut cfg = ScenarioConfig::preset(&name)
                .ok_or_else(|| CliError::Validation(format!("unknown preset '{name}'")))?;
            overrides.apply(&mut cfg);
            print!("{}", cfg.to_toml());
            Ok(0)
        }
    }
}
