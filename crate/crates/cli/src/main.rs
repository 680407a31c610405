// SPDX-License-Identifier: Apache-2.0

//! `stormsim` command line.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 config error, 3 a check
//! failed under `--check`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stormsim::experiments::{self, Artifact, GridAxis, Params, ScenarioConfig, BUILTINS};
use stormsim::Error;

#[derive(Parser)]
#[command(name = "stormsim", version, about = "Retry-storm simulator for a two-tier service tandem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a JSON scenario file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a built-in experiment.
    Builtin {
        name: String,
        /// Built-in parameter as key=value; repeatable.
        #[arg(long = "param", short = 'p')]
        params: Vec<String>,
        /// File of key=value lines (`#` starts a comment); `--param` wins.
        #[arg(long)]
        params_file: Option<PathBuf>,
        /// Print the built-in's scenario config as JSON and exit.
        #[arg(long)]
        emit_config: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario over the cartesian product of grid axes.
    Sweep {
        config: PathBuf,
        /// Axis as dotted.path=v1,v2,...; repeatable.
        #[arg(long, required = true)]
        grid: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// List built-in experiments.
    List,
}

#[derive(Args)]
struct Common {
    /// Overrides the scenario seeds with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for CSV, summary and provenance files.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Parallel runs (0 = all cores).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Exit with status 3 if any built-in check fails.
    #[arg(long)]
    check: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Summary,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Json(_) | Error::Domain(_) | Error::MissingBaseline(_) => {
                Failure::Config(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut config = ScenarioConfig::from_json(&text)?;
    if let Some(s) = seed {
        config.seeds = vec![s];
    }
    Ok(config)
}

fn read_params_file(path: &PathBuf) -> Result<Vec<String>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn emit(artifact: &Artifact, common: &Common) -> Result<ExitCode, Failure> {
    match common.format {
        Format::Csv => {
            let written = artifact.write(&common.out_dir).map_err(|e| Failure::Runtime(e.to_string()))?;
            for path in written {
                println!("{}", path.display());
            }
        }
        Format::Summary => print!("{}", artifact.summary_text()),
    }
    if common.check && !artifact.all_checks_pass() {
        for c in artifact.checks.iter().filter(|c| !c.passed) {
            eprintln!("check failed: {}: {}", c.name, c.detail);
        }
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn execute(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Run { config, common } => {
            let config = load(&config, common.seed)?;
            let (_, artifact) = experiments::run_config(&config, common.jobs)?;
            emit(&artifact, &common)
        }
        Command::Builtin { name, params, params_file, emit_config, common } => {
            let mut pairs = match &params_file {
                Some(path) => read_params_file(path)?,
                None => Vec::new(),
            };
            pairs.extend(params);
            let mut params = Params::parse(&pairs)?;
            if let Some(s) = common.seed {
                params = params.set("seed", s);
            }
            if emit_config {
                println!("{}", experiments::builtin_config(&name, &params)?.to_json());
                return Ok(ExitCode::SUCCESS);
            }
            let artifact = experiments::run_builtin(&name, &params, common.jobs)?;
            emit(&artifact, &common)
        }
        Command::Sweep { config, grid, common } => {
            let config = load(&config, common.seed)?;
            let axes = grid.iter().map(|g| GridAxis::parse(g)).collect::<Result<Vec<_>, _>>()?;
            let artifact = experiments::sweep(&config, &axes, common.jobs)?;
            emit(&artifact, &common)
        }
        Command::List => {
            for b in BUILTINS {
                println!("{b}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
