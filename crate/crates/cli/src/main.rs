//! `u2detect`: batch front end for the coefficient-conformance pipeline.
//!
//! Subcommands mirror the pipeline stages:
//!
//! ```text
//! u2detect simulate  --manifest run.json --out traces/
//! u2detect induce    --template bergman --dot net.dot
//! u2detect mine      --manifest run.json --out mined/ traces/*.logged.csv
//! u2detect calibrate --manifest run.json --train mined/train_*.json \
//!                    --test mined/test_*.json --out calibration.json
//! u2detect detect    --manifest run.json --calibration calibration.json \
//!                    --out verdicts.jsonl traces/*.logged.csv
//! u2detect report    --run rundir/ --out report/
//! ```
//!
//! Exit codes: 0 success, 1 runtime/numerical failure, 2 usage/validation
//! failure. Verbosity via the `U2DETECT_LOG` environment variable
//! (`error`..`trace`). Every subcommand validates its inputs before
//! writing any output file.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// A failure with its process exit class.
pub enum CmdError {
    /// Bad usage or invalid inputs: exit 2.
    Usage(anyhow::Error),
    /// Runtime or numerical failure: exit 1.
    Runtime(anyhow::Error),
}

impl CmdError {
    fn exit_code(&self) -> u8 {
        match self {
            CmdError::Usage(_) => 2,
            CmdError::Runtime(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            CmdError::Usage(e) | CmdError::Runtime(e) => e,
        }
    }
}

pub type CmdResult = Result<(), CmdError>;

pub fn usage<E: Into<anyhow::Error>>(e: E) -> CmdError {
    CmdError::Usage(e.into())
}

pub fn runtime<E: Into<anyhow::Error>>(e: E) -> CmdError {
    CmdError::Runtime(e.into())
}

#[derive(Parser)]
#[command(
    name = "u2detect",
    version,
    about = "Mine physical ODE coefficients from control-loop traces and flag non-conformal behavior"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Run manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Override the manifest's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker-thread cap for scenario-level parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every scenario in the manifest into paired trace CSVs.
    Simulate {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Output directory for `<name>.logged.csv` / `<name>.truth.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the network structure induced from a template; optionally
    /// emit a DOT graph.
    Induce {
        /// `bergman` or a path to a template JSON.
        #[arg(long)]
        template: String,
        /// Write a Graphviz DOT file here.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Mine coefficients from trace CSVs into per-trace result JSONs.
    Mine {
        #[command(flatten)]
        common: CommonRunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Trace CSV files (the logged views).
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Build the conformal calibration from mined train/test results.
    Calibrate {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Mining-result JSONs of the train set.
        #[arg(long, required = true, num_args = 1..)]
        train: Vec<PathBuf>,
        /// Mining-result JSONs of the held-out test set.
        #[arg(long, required = true, num_args = 1..)]
        test: Vec<PathBuf>,
        /// Output calibration JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine each trace and check it against a calibration; emits verdict
    /// JSON lines and a human summary table.
    Detect {
        #[command(flatten)]
        common: CommonRunArgs,
        #[arg(long)]
        calibration: PathBuf,
        /// Output JSONL file.
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Render a completed run directory into a markdown report plus
    /// plot-ready CSVs.
    Report {
        /// Run directory (simulate/detect outputs).
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Simulate { common, out } => commands::simulate::run(&common, &out),
        Command::Induce { template, dot } => commands::induce::run(&template, dot.as_deref()),
        Command::Mine { common, out, traces } => commands::mine::run(&common, &out, &traces),
        Command::Calibrate {
            common,
            train,
            test,
            out,
        } => commands::calibrate::run(&common, &train, &test, &out),
        Command::Detect {
            common,
            calibration,
            out,
            traces,
        } => commands::detect::run(&common, &calibration, &out, &traces),
        Command::Report { run, out } => commands::report::run(&run, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("U2DETECT_LOG")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error());
            ExitCode::from(e.exit_code())
        }
    }
}
