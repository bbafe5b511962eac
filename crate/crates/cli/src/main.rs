//! `balancelab`: generate surrogate data, balance it, train and evaluate
//! classifiers, check the formal claims, and run experiment grids.
//!
//! Exit status: 0 success, 1 runtime failure, 2 usage error, 3 a
//! verification ran but its expected outcome was not observed.

mod commands;
mod config;
mod grid;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "balancelab", version, about = "Joint data balancing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// experiment configuration (TOML)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// replicate seed; overrides the config's replicate list
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// parallel grid cells
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    workers: usize,
    /// overwrite existing outputs
    #[arg(long, global = true)]
    force: bool,
    /// output directory (default: the config's output_dir)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write training and test datasets for every replicate.
    Gen,
    /// Balance a dataset with the config's [balance] section.
    Balance { data: PathBuf },
    /// Train a model on a dataset.
    Train { data: PathBuf },
    /// Score a trained model on one or more datasets.
    Eval {
        model: PathBuf,
        #[arg(required = true)]
        data: Vec<PathBuf>,
    },
    /// Run a named verification and report whether its expectation held.
    Verify {
        id: String,
        /// points per axis for grid scans
        #[arg(long, value_name = "N")]
        grid: Option<usize>,
    },
    /// Run the balance x MMD strength x replicate grid.
    Grid,
}

/// Error caused by invalid input rather than a failure while running.
#[derive(Debug)]
pub struct Usage(String);

impl Usage {
    pub fn new(msg: impl Into<String>) -> Self {
        Usage(msg.into())
    }
}

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
