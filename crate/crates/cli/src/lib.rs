//! Command-line front end for the preference-optimisation workflow.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::RunOptions;
use crate::config::{Overrides, RunConfig, QA_ENDPOINT_ENV};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "xmodal-pref", version, about = "Cross-modal preference optimisation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for metric and factual evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also write per-pair CSV tables (eval).
    #[arg(long, global = true)]
    pub csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Subsample, split and build preference triples.
    BuildPrefs,
    /// Train the policy on the built triples.
    Train,
    /// Decode held-out prompts with the trained policy.
    Generate,
    /// Score generations against held-out references.
    Eval,
    /// QA-based factual consistency of generated captions.
    Factual,
    /// Length bias of generations.
    Bias,
}

impl Cli {
    fn load_config(&self) -> Result<RunConfig, CliError> {
        let overrides = Overrides {
            seed: self.seed,
            out_dir: self.out.clone(),
            qa_endpoint: std::env::var(QA_ENDPOINT_ENV).ok().filter(|s| !s.is_empty()),
        };
        match &self.config {
            Some(path) => RunConfig::load(path, &overrides),
            None => Err(CliError::Input("--config <path> is required".into())),
        }
    }

    /// Runs the selected command and returns the artifacts it wrote.
    pub fn execute(&self) -> Result<Vec<PathBuf>, CliError> {
        if self.jobs == 0 {
            return Err(CliError::Input("--jobs must be >= 1".into()));
        }
        let cfg = self.load_config()?;
        let opts = RunOptions {
            jobs: self.jobs,
            csv: self.csv,
        };
        match self.command {
            Command::BuildPrefs => commands::cmd_build_prefs(&cfg, &opts),
            Command::Train => commands::cmd_train(&cfg, &opts),
            Command::Generate => commands::cmd_generate(&cfg, &opts),
            Command::Eval => commands::cmd_eval(&cfg, &opts),
            Command::Factual => commands::cmd_factual(&cfg, &opts),
            Command::Bias => commands::cmd_bias(&cfg, &opts),
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.execute() {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
