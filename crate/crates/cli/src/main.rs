//! `equicpi` command-line front end.
//!
//! Exit status: 0 on success, 1 for usage or validation errors, 2 for I/O
//! errors. Every command computes all of its outputs before writing any file.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use equicpi::par::Exec;

use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Invalid(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Invalid(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<equicpi::Error> for CliError {
    fn from(e: equicpi::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "equicpi", version, about = "Structure-based compound-protein interaction toolkit")]
struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for per-record stages (1 runs everything sequentially).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print the fully resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Circular fingerprints of every molecule in an SDF file.
    Fingerprint(commands::FingerprintArgs),
    /// Heterogeneous ligand/residue graph of one complex, as JSON.
    BuildGraph(commands::BuildGraphArgs),
    /// Train a model on a labelled manifest and save a checkpoint.
    Train(commands::TrainArgs),
    /// Predict normalized affinities for every manifest record.
    Predict(commands::PredictArgs),
    /// Docking score of every pose in an SDF file.
    ScoreVina(commands::ScoreArgs),
    /// Re-rank docked poses by docking score fused with pose confidence.
    Rerank(commands::RerankArgs),
    /// Cluster-disjoint cross-validation folds with a leakage report.
    Split(commands::SplitArgs),
    /// Regression and screening metrics for a prediction file.
    Eval(commands::EvalArgs),
    /// Random-ranking EF/BEDROC baseline.
    SimulateScreen(commands::SimulateArgs),
}

fn setup_threads(threads: Option<usize>) -> Result<Exec, CliError> {
    match threads {
        None => Ok(Exec::Parallel),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(1) => Ok(Exec::Sequential),
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
            let _ = n;
            Ok(Exec::Parallel)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.print_config {
        cfg.validate()?;
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no subcommand given (see --help)".into()));
    };
    let exec = setup_threads(cli.threads)?;
    let artifacts = match command {
        Command::Fingerprint(a) => commands::fingerprint(a, cfg, exec)?,
        Command::BuildGraph(a) => commands::build_graph(a, cfg, exec)?,
        Command::Train(a) => commands::train(a, cfg, exec)?,
        Command::Predict(a) => commands::predict(a, cfg, exec)?,
        Command::ScoreVina(a) => commands::score_vina(a, cfg, exec)?,
        Command::Rerank(a) => commands::rerank(a, cfg, exec)?,
        Command::Split(a) => commands::split(a, cfg, exec)?,
        Command::Eval(a) => commands::eval(a, cfg)?,
        Command::SimulateScreen(a) => commands::simulate_screen(a, cfg, exec)?,
    };
    output::write_all(&artifacts)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("equicpi: {e}");
            ExitCode::from(e.code())
        }
    }
}
