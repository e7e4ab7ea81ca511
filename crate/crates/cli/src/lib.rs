//! The `qvol` command-line front end.
//!
//! Every command is a pure function of the config file, the input files and
//! the seed: worker count only changes how fast the answer arrives. Exit
//! codes are 0 on success, 2 for invalid input (bad config, bad data, bad
//! arguments), 3 for numerical failures and 1 when an output cannot be
//! written.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "qvol", version, about = "Classical and quantum HMMs for stochastic volatility")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Primary output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides [experiment].seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Trial count (overrides [experiment].trials).
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate the configured DGP to a CSV file.
    Simulate,
    /// Fit a model to a data file; writes the model and a report.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// cir, nonparam or qhmm (overrides [fit].kind).
        #[arg(long)]
        kind: Option<String>,
        /// Report path; `<out stem>.report.json` by default.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Likelihood-ratio experiment: per-trial CSV plus histogram JSON.
    Llr {
        /// Histogram path; `<out stem>.hist.json` by default.
        #[arg(long)]
        hist: Option<PathBuf>,
    },
    /// Causal-break test on a QHMM.
    MarkovTest {
        /// Model file; a random ansatz from [markov].random otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated symbols, e.g. 1,1.
        #[arg(long)]
        prefix_a: Option<String>,
        #[arg(long)]
        prefix_b: Option<String>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Hankel matrix and numerical rank of a stored model.
    Hankel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Non-asymptotic KL bounds.
    Bounds {
        /// Model whose Monte-Carlo KL to the DGP is used when the config
        /// gives no estimate.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub msg: String,
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Validation, msg: msg.into() }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Numerical, msg: msg.into() }
    }

    pub fn output(msg: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Output, msg: msg.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Validation => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Output => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

impl From<qvol::Error> for CliError {
    fn from(e: qvol::Error) -> Self {
        if e.is_validation() {
            Self::validation(e.to_string())
        } else {
            Self::numerical(e.to_string())
        }
    }
}

/// Runs a parsed command on a pool of `--workers` threads.
pub fn run(cli: &Cli, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.global.workers {
        if w == 0 {
            return Err(CliError::validation("--workers must be at least 1"));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| CliError::output(format!("cannot start worker pool: {e}")))?;
    pool.install(|| commands::dispatch(cli, stdout))
}

/// Parses `args` (program name first), runs, and returns the exit code.
/// Diagnostics go to `stderr`.
pub fn main_with<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return 2;
            }
            let _ = write!(stdout, "{}", e.render());
            return 0;
        }
    };
    match run(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
