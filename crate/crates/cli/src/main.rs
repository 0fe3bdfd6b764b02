//! Command-line front end: synthetic data, rule alignment, training,
//! inference and evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. Logs go to stderr.

mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Parser};
use log::{debug, error, info};

use commands::{Command, Context};
use error::{CliError, EXIT_USAGE};
use settings::Overrides;

#[derive(Debug, Parser)]
#[command(name = "vlparse", version, about = "Unsupervised vision-language structure induction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat TOML file of settings; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-sentence parallelism, 0 for one per core
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Continue when a checkpoint's config digest differs from the current one
    #[arg(long, global = true)]
    force: bool,
    /// More log output (repeat for trace)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(flatten)]
    overrides: Overrides,
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("VLPARSE_LOG")
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => Overrides::load(p)?,
        None => Overrides::default(),
    };
    let settings = cli.overrides.clone().over(file).resolve();
    settings.validate()?;
    let digest = settings.digest();
    info!(
        "vlparse {} {}: config digest {} seed {}",
        env!("CARGO_PKG_VERSION"),
        cli.command.name(),
        hex::encode(digest),
        settings.seed
    );
    debug!("settings {settings:?}");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| CliError::usage(format!("worker pool: {e}")))?;
    info!("{} workers", pool.current_num_threads());
    let ctx = Context {
        settings,
        digest,
        config_given: cli.config.is_some(),
        force: cli.force,
    };
    pool.install(|| commands::run(&ctx, &cli.command))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    init_logging(&cli);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.code)
        }
    }
}
