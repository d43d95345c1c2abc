//! `hartree` — runs one experiment from a TOML configuration and writes CSV /
//! snapshot outputs plus a checksummed manifest into an output directory.

mod config;
mod manifest;
mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use hartree_core::propagator::Outcome;
use serde_json::Value;

use config::{ConfigErrors, ExperimentConfig, Subcommand};
use manifest::{Manifest, Output, MANIFEST};
use run::{RunInputs, RunResult};

/// Exit codes by category.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const NUMERICAL: u8 = 3;
    pub const IO: u8 = 4;
    /// The run finished but the flow hit an event (blow-up, abort).
    pub const EVENT: u8 = 10;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n{0}")]
    Config(#[from] ConfigErrors),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(#[from] hartree_core::Error),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => exit::CONFIG,
            CliError::Numerical(hartree_core::Error::Io(_)) | CliError::Io(..) => exit::IO,
            CliError::Numerical(_) => exit::NUMERICAL,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hartree", version, about = "Hartree-equation numerical laboratory")]
struct Cli {
    /// Experiment to run; must match `subcommand` in the configuration.
    #[arg(value_enum)]
    command: Subcommand,
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (relative paths resolve against $HARTREE_OUT_ROOT when set).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Cap on data-parallel workers; the numerics run single-threaded.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// linearize: ground-state snapshot (q.bin); its directory's manifest
    /// supplies the model when no --config is given.
    #[arg(long)]
    groundstate: Option<PathBuf>,
    /// Replace an earlier run's output directory.
    #[arg(long)]
    overwrite: bool,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    if let Some(path) = &cli.config {
        let cfg = config::parse(&read_text(path)?)?;
        if cfg.subcommand != cli.command {
            return Err(CliError::Usage(format!(
                "{} declares subcommand `{}` but `{}` was requested",
                path.display(),
                cfg.subcommand.name(),
                cli.command.name()
            )));
        }
        return Ok(cfg);
    }
    // linearize can reuse the configuration echoed by the ground-state run
    if let (Subcommand::Linearize, Some(gs)) = (cli.command, &cli.groundstate) {
        let path = gs.parent().unwrap_or(Path::new(".")).join(MANIFEST);
        let text = read_text(&path)?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", path.display())))?;
        let echo = v["config"]
            .as_str()
            .ok_or_else(|| CliError::Usage(format!("{}: manifest has no config echo", path.display())))?;
        let mut cfg = config::parse(echo)?;
        cfg.subcommand = Subcommand::Linearize;
        cfg.out = None;
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(ConfigErrors(errs).into());
        }
        return Ok(cfg);
    }
    Err(CliError::Usage("--config FILE is required".into()))
}

fn output_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("hartree-out").join(cfg.subcommand.name()));
    match std::env::var_os("HARTREE_OUT_ROOT") {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

fn outcome_code(o: &Outcome) -> u8 {
    match o {
        Outcome::Completed => exit::OK,
        Outcome::BlowupDetected { .. } | Outcome::Aborted { .. } => exit::EVENT,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(exit::CONFIG);
    }
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.code());
        }
    };
    let dir = output_dir(&cli, &cfg);
    let mut out = match Output::create(&dir, cli.overwrite) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.code());
        }
    };
    let inputs = RunInputs { groundstate: cli.groundstate.clone() };
    let result = run::run(&cfg, &inputs, &mut out);
    let (outcome, summary, error, code) = match result {
        Ok(RunResult { outcome, summary }) => {
            let code = outcome_code(&outcome);
            (serde_json::to_value(&outcome).unwrap_or(Value::Null), summary, None, code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            (Value::String("failed".into()), Value::Null, Some(e.to_string()), e.code())
        }
    };
    let echo = config::serialize(&cfg);
    let m = Manifest {
        tool: "hartree",
        version: env!("CARGO_PKG_VERSION"),
        core_version: hartree_core::VERSION,
        subcommand: cfg.subcommand.name(),
        config_sha256: manifest::sha256_hex(echo.as_bytes()),
        config: echo,
        seed: cfg.seed,
        threads: cli.threads,
        outcome,
        exit_code: code as i32,
        wall_time_s: started.elapsed().as_secs_f64(),
        summary,
        error,
        files: out.files().to_vec(),
    };
    if let Err(e) = m.write(out.dir()) {
        eprintln!("error: {e}");
        return ExitCode::from(exit::IO);
    }
    println!("wrote {} files and {} to {}", out.files().len(), MANIFEST, out.dir().display());
    ExitCode::from(code)
}
