use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lhfi_cli::commands::{
    cmd_fit, cmd_ingest, cmd_pilot, cmd_report, cmd_validate, FitOptions, IngestOptions, PilotOptions, ReportArgs, ReportKind, Suite,
    ValidateOptions,
};
use lhfi_cli::config::{thread_count, THREADS_ENV};
use lhfi_cli::error::{EXIT_OK, EXIT_VALIDATION};
use lhfi_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "lhfi", version, about = "Spatial latent health factor models: ingest, fit, report, validate")]
struct Cli {
    /// Worker threads; falls back to LHFI_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset from a CSV table.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Transform spec (reversed metrics, year, anchor).
        #[arg(long)]
        transform: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Short anchor-free base-model run listing anchor candidates.
    Pilot {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5_000)]
        iterations: usize,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long, default_value_t = 2)]
        chains: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        candidates: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model and write posterior samples.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Continue an interrupted run from its checkpoints.
        #[arg(long)]
        resume: bool,
        #[arg(long, hide = true)]
        max_sweeps: Option<usize>,
    },
    /// Posterior analyses of a finished fit.
    Report {
        /// Fit output directory (or its samples directory).
        #[arg(long)]
        samples: PathBuf,
        #[arg(value_enum)]
        what: ReportKind,
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        pair: Option<Vec<String>>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reference value for P(beta[T] > ref).
        #[arg(long, default_value_t = 0.0)]
        reference: f64,
        /// Countries in the dominance table.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Run a validation suite; exits 3 when it fails.
    Validate {
        #[arg(value_enum)]
        suite: Suite,
        #[arg(long)]
        inject_typo: Option<String>,
        /// Replicas (geweke), sweeps (oracle) or draws (units).
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<i32> {
    let env = std::env::var(THREADS_ENV).ok();
    if let Some(n) = thread_count(cli.threads, env.as_deref())? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Ingest { csv, schema, transform, out } => {
            cmd_ingest(&IngestOptions { csv, schema, transform, out })?;
        }
        Command::Pilot {
            dataset,
            config,
            iterations,
            burn_in,
            chains,
            seed,
            candidates,
            out,
        } => {
            cmd_pilot(&PilotOptions {
                dataset,
                config,
                iterations,
                burn_in,
                chains,
                seed,
                candidates,
                out,
            })?;
        }
        Command::Fit {
            dataset,
            config,
            seed,
            chains,
            out,
            resume,
            max_sweeps,
        } => {
            cmd_fit(&FitOptions {
                dataset,
                config,
                seed,
                chains,
                out,
                resume,
                max_sweeps,
            })?;
        }
        Command::Report {
            samples,
            what,
            pair,
            dataset,
            out,
            reference,
            top,
        } => {
            if pair.is_some() && what != ReportKind::Dominance {
                return Err(CliError::Usage("--pair applies to the dominance report".into()));
            }
            let mut args = ReportArgs::new(samples, what);
            args.pair = pair.map(|p| (p[0].clone(), p[1].clone()));
            args.dataset = dataset;
            args.out = out;
            args.effect_reference = reference;
            args.dominance_top = top;
            cmd_report(&args)?;
        }
        Command::Validate {
            suite,
            inject_typo,
            budget,
            seed,
            out,
        } => {
            let report = cmd_validate(&ValidateOptions {
                suite,
                inject_typo,
                budget,
                seed,
                out,
            })?;
            if !report.passed {
                for f in &report.failures {
                    eprintln!("failed: {f}");
                }
                return Ok(EXIT_VALIDATION);
            }
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
