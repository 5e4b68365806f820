//! `spectral-q`: generate synthetic batches, train adaptive spectral-filter
//! Q-learners and baselines, evaluate them and report on what they learned.
//!
//! Every command writes plain JSON/CSV files under `--out`, all at once and
//! only on success. Exit codes: 0 success, 2 configuration error, 3 data
//! error, 4 numeric failure, 1 I/O failure while writing.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Invocation;
use crate::config::{ConfigSources, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "spectral-q", version, about = "Adaptive spectral-filter batch Q-learning workbench")]
pub struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Experiment preset: a1-performance or a2-interpretability.
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
    /// Run seed; beats every other seed source.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads for `compare` (default: available cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override a config field, e.g. `--set learner.q=0.8`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Add a wall-clock column to `compare` (makes its output run-dependent).
    #[arg(long, global = true)]
    pub timing: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an environment, its ground truth and train/test batches.
    Gen,
    /// Train `method` on a dataset directory.
    Train {
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
    },
    /// Score a model on a dataset, against an environment's ground truth if given.
    Eval {
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        env: Option<PathBuf>,
    },
    /// Contribution proportions, clipped weights and top-k reward curves.
    Report {
        /// Repeatable; clipped weights are pooled over all models.
        #[arg(long, value_name = "PATH")]
        model: Vec<PathBuf>,
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        env: Option<PathBuf>,
    },
    /// Methods x seeds comparison table with mean/sd summary rows.
    Compare,
}

impl Cli {
    pub fn sources(&self) -> ConfigSources {
        ConfigSources {
            preset: self.preset.clone(),
            file: self.config.clone(),
            overrides: self.set.clone(),
            seed: self.seed,
            env_seed: None,
        }
        .from_process_env()
    }

    /// Paths from flags, falling back to the config's `paths` section.
    pub fn invocation(&self, cfg: &RunConfig) -> CliResult<Invocation> {
        let jobs = match self.jobs {
            Some(0) => return Err(CliError::config("--jobs must be at least 1")),
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        let p = &cfg.paths;
        let (dataset, models, env) = match &self.command {
            Command::Gen | Command::Compare => (None, Vec::new(), None),
            Command::Train { dataset } => (dataset.clone(), Vec::new(), None),
            Command::Eval { model, dataset, env } => (dataset.clone(), model.iter().cloned().collect(), env.clone()),
            Command::Report { model, dataset, env } => (dataset.clone(), model.clone(), env.clone()),
        };
        Ok(Invocation {
            out: self.out.clone().or_else(|| p.out.clone()),
            dataset: dataset.or_else(|| p.dataset.clone()),
            models: if models.is_empty() { p.model.clone() } else { models },
            env: env.or_else(|| p.env.clone()),
            jobs,
            timing: self.timing,
        })
    }
}

/// Resolves the configuration, runs the command and commits its outputs.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let cfg = config::resolve(&cli.sources())?;
    let inv = cli.invocation(&cfg)?;
    let outputs = match cli.command {
        Command::Gen => commands::gen(&cfg, &inv)?,
        Command::Train { .. } => commands::train_cmd(&cfg, &inv)?,
        Command::Eval { .. } => commands::eval(&cfg, &inv)?,
        Command::Report { .. } => commands::report(&cfg, &inv)?,
        Command::Compare => commands::compare(&cfg, &inv)?,
    };
    outputs.commit()
}

/// Entry point shared by the binary: parses `args`, runs, prints the written
/// paths (or a JSON error record on stderr) and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
