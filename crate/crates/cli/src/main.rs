//! `penkf` — run filtering twin experiments and the covariance-recovery
//! study from JSON configs, writing deterministic CSV results.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for I/O errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use penkf::error::Error;
use penkf::experiment::{
    run_experiment, run_variance_recovery, ExperimentConfig, VarianceRecoveryConfig,
};

#[derive(Parser)]
#[command(
    name = "penkf",
    about = "Possibilistic ensemble Kalman filtering experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a twin experiment described by a JSON config file.
    Run(RunArgs),
    /// Compare sample-covariance and max-det covariance recovery on
    /// inverse-Wishart draws.
    VarianceRecovery(VarianceRecoveryArgs),
    /// Validate a config file and print its resolved form.
    Validate {
        /// Path to the experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Path to the experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's repeat count.
    #[arg(long)]
    repeats: Option<usize>,
    /// Output CSV path; a `<out>.meta.json` sidecar records the resolved
    /// config and seed.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads over repeats (0 = all cores). Results do not depend
    /// on this.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct VarianceRecoveryArgs {
    /// State dimension n.
    #[arg(long)]
    dim: usize,
    /// Comma-separated sample sizes, each at least n.
    #[arg(long, value_delimiter = ',', required = true)]
    sample_sizes: Vec<usize>,
    /// Independent trials per sample size.
    #[arg(long)]
    trials: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => {
            let mut cfg = ExperimentConfig::from_json_file(&args.config)?;
            if let Some(seed) = args.seed {
                cfg.master_seed = seed;
            }
            if let Some(repeats) = args.repeats {
                cfg.repeats = repeats;
            }
            run_experiment(&cfg, args.threads, &args.out)?;
            eprintln!("wrote {}", args.out.display());
            Ok(())
        }
        Command::VarianceRecovery(args) => {
            let cfg = VarianceRecoveryConfig {
                dim: args.dim,
                sample_sizes: args.sample_sizes,
                trials: args.trials,
                master_seed: args.seed,
            };
            run_variance_recovery(&cfg, args.threads, &args.out)?;
            eprintln!("wrote {}", args.out.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_json_file(&config)?;
            let resolved = cfg.resolve()?;
            println!("{}", serde_json::to_string_pretty(resolved.config())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
