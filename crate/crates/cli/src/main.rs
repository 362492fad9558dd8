use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use commands::{exit_code, SweepParam};

/// Mixture GAN experiments on 2D synthetic data.
#[derive(Debug, Parser)]
#[command(name = "mgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root. Overrides MGAN_OUT and `[output].dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds as a comma list, ranges allowed: `1,2,7` or `1..5`.
    #[arg(long)]
    seed: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Param {
    Beta,
    K,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one run per seed; writes metrics.csv, checkpoints and scatter.svg.
    Train(RunArgs),
    /// Train over a list of beta or K values and rank the results.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        param: Param,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
    /// Check the optimality identities on lattice densities.
    Oracle {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write lattice CSV dumps into this directory.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Render a scatter plot from a checkpoint.
    Plot {
        #[arg(long)]
        checkpoint: PathBuf,
        /// SVG file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train(args.config.as_deref(), args.out, args.seed.as_deref()),
        Command::Sweep { run, param, values } => {
            let param = match param {
                Param::Beta => SweepParam::Beta,
                Param::K => SweepParam::K,
            };
            commands::sweep(run.config.as_deref(), run.out, run.seed.as_deref(), param, &values)
        }
        Command::Oracle { config, dump } => commands::oracle(config.as_deref(), dump.as_deref()),
        Command::Plot {
            checkpoint,
            out,
            config,
            seed,
        } => commands::plot(&checkpoint, &out, config.as_deref(), seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
