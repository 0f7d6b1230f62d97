//! Command-line driver for the lattice solvers: configuration, reports and
//! trajectory files.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::Parser;

use crate::commands::{run, Command};
use crate::config::{read_file, FileConfig, Overrides, RunConfig, Sign};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "dsmp", version, about = "Lattice solvers and maximum-principle checks for controlled doubly stochastic systems")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Named problem; see the README for the list.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Time steps N (at most 18).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Picard and fixed-point relaxation in (0, 1].
    #[arg(long)]
    pub damping: Option<f64>,
    /// Picard tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Penalty parameter for `ekeland`.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sign of the linear-quadratic control formula.
    #[arg(long, value_enum)]
    pub sign: Option<Sign>,
    /// CSV output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report path; standard output when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl Cli {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };
        RunConfig::resolve(
            file,
            Overrides {
                preset: self.preset.clone(),
                config: self.config.clone(),
                steps: self.steps,
                damping: self.damping,
                tol: self.tol,
                epsilon: self.epsilon,
                seed: self.seed,
                sign: self.sign,
                out: self.out.clone(),
                report: self.report.clone(),
            },
        )
    }
}

fn write(path: &PathBuf, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.resolve()?;
    let outcome = run(cli.command, &cfg)?;
    let mut text = serde_json::to_string_pretty(&outcome.report).map_err(|e| CliError::config(e.to_string()))?;
    text.push('\n');
    match &cfg.report {
        Some(p) => write(p, &text)?,
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::config(format!("cannot write report: {e}")))?,
    }
    if let (Some(p), Some(csv)) = (&cfg.out, &outcome.csv) {
        write(p, csv)?;
    }
    match outcome.failure {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

/// Parses `args`, runs the command and returns the exit status. Errors go
/// to standard error as one line of JSON.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            eprintln!("{}", CliError::config(e.to_string().trim_end()).to_json());
            return 1;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
