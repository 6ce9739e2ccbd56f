mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use settings::{BackendArgs, ConfigArgs};

/// Generate plotting code from a natural-language request by exploring
/// several interpretations in parallel and merging the best of them.
#[derive(Debug, Parser)]
#[command(name = "plotsynth", version)]
struct Cli {
    /// More log output; repeat for debug logs.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the pipeline on one request.
    Run {
        /// The visualization request.
        #[arg(long, short)]
        query: String,
        /// Free-text description of the dataset.
        #[arg(long, default_value = "")]
        dataset: String,
        /// Data file copied into the script's working directory. Repeatable.
        #[arg(long = "data")]
        data: Vec<PathBuf>,
        #[arg(long, default_value = "run")]
        task_id: String,
        /// Directory for the record, figures and final script.
        #[arg(long, default_value = "plotsynth-run")]
        out: PathBuf,
    },
    /// Run and score every item of a suite.
    Bench {
        /// Suite file (JSON lines).
        suite: PathBuf,
        #[arg(long, default_value = "plotsynth-bench")]
        out: PathBuf,
        /// Keep items already finished with the same configuration.
        #[arg(long)]
        resume: bool,
        /// Items run concurrently.
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
    /// Run a suite once per k and chart the results.
    Sweep {
        suite: PathBuf,
        /// Comma-separated k values, each in 1..=8.
        #[arg(long, value_delimiter = ',', default_values_t = [2, 3, 4, 5, 6, 7, 8], allow_hyphen_values = true)]
        k_values: Vec<i64>,
        #[arg(long, default_value = "plotsynth-sweep")]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
    /// Print a stored run record.
    Inspect {
        /// Run directory or its record.json.
        path: PathBuf,
    },
    /// Examine a cassette file.
    Cassette {
        #[command(subcommand)]
        action: CassetteAction,
    },
}

#[derive(Debug, Subcommand)]
enum CassetteAction {
    /// Entry counts per role.
    Stats { path: PathBuf },
    /// One line per recorded exchange.
    List { path: PathBuf },
}

/// Exit 2 for anything wrong before a run starts, 1 for a failed run.
pub enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let verbose = cli.verbose > 0;

    let result = match cli.command {
        Command::Run { query, dataset, data, task_id, out } => {
            commands::run(commands::RunArgs { query, dataset, data, task_id, out }, &cli.config, &cli.backend, verbose)
        }
        Command::Bench { suite, out, resume, parallelism } => {
            commands::bench(commands::BenchArgs { suite, out, resume, parallelism }, &cli.config, &cli.backend, verbose)
        }
        Command::Sweep { suite, k_values, out, resume, parallelism } => commands::sweep(
            commands::BenchArgs { suite, out, resume, parallelism },
            &k_values,
            &cli.config,
            &cli.backend,
            verbose,
        ),
        Command::Inspect { path } => commands::inspect(&path),
        Command::Cassette { action: CassetteAction::Stats { path } } => commands::cassette_stats(&path),
        Command::Cassette { action: CassetteAction::List { path } } => commands::cassette_list(&path),
    };

    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
