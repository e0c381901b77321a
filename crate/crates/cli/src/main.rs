//! `spdelab`: command-line front end for the simulation and verification harnesses.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use commands::Outcome;
use config::RunConfig;
use output::{Collector, Header};

pub const SEED_ENV: &str = "SPDELAB_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] spdelab::Error),
    #[error("{0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_solver_failure() => 3,
            CliError::Core(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "spdelab", version, about = "Semi-implicit p-Laplace SPDE simulation and verification harnesses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; the shipped default is used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set model.flux.p=3`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed; defaults to the config value or $SPDELAB_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Path count for the chosen command.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Worker threads, capped at the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Trajectories with per-step energy ledgers.
    Simulate,
    /// A-priori estimates across step refinements.
    Certify,
    /// Paired L¹-distance probe from perturbed initial data.
    Uniqueness,
    /// Coordinate search over a finite control family.
    ControlOpt,
    /// Time-averaged occupation measure with boundedness and test-function profiles.
    Invariant,
    /// Structural assumption checks on the configured model.
    CheckModel,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Certify => "certify",
            Command::Uniqueness => "uniqueness",
            Command::ControlOpt => "control-opt",
            Command::Invariant => "invariant",
            Command::CheckModel => "check-model",
        }
    }

    fn paths_key(self) -> Option<&'static str> {
        match self {
            Command::Simulate => Some("rng.paths"),
            Command::Certify => Some("certify.paths"),
            Command::Uniqueness => Some("uniqueness.paths"),
            Command::ControlOpt => Some("control.optimizer.paths"),
            Command::Invariant | Command::CheckModel => None,
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => config::DEFAULT_CONFIG.to_string(),
    };
    let mut overrides = Vec::new();
    if let Ok(seed) = std::env::var(SEED_ENV) {
        let seed: u64 = seed.trim().parse().map_err(|_| CliError::Config(format!("{SEED_ENV}=`{seed}` is not a u64")))?;
        overrides.push(format!("rng.seed={seed}"));
    }
    overrides.extend(cli.overrides.iter().cloned());
    if let Some(seed) = cli.seed {
        overrides.push(format!("rng.seed={seed}"));
    }
    if let Some(paths) = cli.paths {
        match cli.command.paths_key() {
            Some(key) => overrides.push(format!("{key}={paths}")),
            None => return Err(CliError::Config(format!("--paths does not apply to `{}`", cli.command.name()))),
        }
    }
    if let Some(out) = &cli.out {
        let out = out.to_str().ok_or_else(|| CliError::Config("output path is not valid UTF-8".into()))?;
        overrides.push(format!("output.dir={}", toml::Value::String(out.into())));
    }
    config::load(&text, &overrides)
}

fn configure_threads(requested: Option<usize>) -> Result<(), CliError> {
    let Some(n) = requested else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    let cores = std::thread::available_parallelism().map_or(1, |c| c.get());
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.min(cores))
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    configure_threads(cli.threads)?;
    let cfg = resolve(cli)?;
    let header = Header::new(cli.command.name(), &cfg);
    let mut out = Collector::new(std::path::Path::new(&cfg.output.dir), header, &cfg)?;
    let outcome = match cli.command {
        Command::Simulate => commands::simulate(&cfg, &mut out)?,
        Command::Certify => commands::certify(&cfg, &mut out)?,
        Command::Uniqueness => commands::uniqueness(&cfg, &mut out)?,
        Command::ControlOpt => commands::control_opt(&cfg, &mut out)?,
        Command::Invariant => commands::invariant(&cfg, &mut out)?,
        Command::CheckModel => {
            let (outcome, text) = commands::check_model(&cfg, &mut out)?;
            print!("{text}");
            outcome
        }
    };
    for p in out.written() {
        eprintln!("wrote {}", p.display());
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(msg)) => {
            eprintln!("partial run: {msg}");
            ExitCode::from(4)
        }
        Ok(Outcome::Rejected(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
