// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod run;
mod summary;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("{0}")]
    Core(#[from] dualvqe_core::Error),
    #[error("{0}")]
    Aborted(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Core(dualvqe_core::Error::Numeric(_)) | CliError::Aborted(_) => 3,
            CliError::Core(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}

pub fn io_err(context: impl std::fmt::Display) -> impl Fn(std::io::Error) -> CliError {
    move |e| CliError::Io(format!("{context}: {e}"))
}

#[derive(Parser)]
#[command(name = "dualvqe", version, about = "Dual-VQE, VQE and MPS pretraining experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config and summarize the outputs.
    Run { config: PathBuf },
    /// Aggregate the per-seed traces in a run directory.
    Summarize {
        dir: PathBuf,
        /// Ground energy to compare against; defaults to the one in manifest.txt.
        #[arg(long, allow_hyphen_values = true)]
        oracle: Option<f64>,
    },
    /// Print the ground energy of `tfi:N` or a Pauli-sum file.
    Oracle { hamiltonian: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => run::run(&config),
        Command::Summarize { dir, oracle } => summary::summarize_dir(&dir, oracle).map(|report| print!("{}", report.to_text())),
        Command::Oracle { hamiltonian } => oracle(&hamiltonian),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn oracle(source: &str) -> Result<(), CliError> {
    let h = config::HamiltonianSource::parse(source, std::path::Path::new("."))?.load()?;
    println!("λ_min = {:.7}", h.min_eigenvalue()?);
    Ok(())
}
