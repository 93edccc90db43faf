use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybrid_core::canonical::to_canonical_json;
use hybrid_sim::compare::{compare, CompareError};
use hybrid_sim::runner::run;
use hybrid_sim::scenario::{ResolvedScenario, Scenario};
use hybrid_sim::trace::{gen_trace, Profile};
use hybrid_sim::verify::verify_export;

#[derive(Parser)]
#[command(
    name = "hybrid-sim",
    version,
    about = "Deterministic contract enforcement scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write report.json plus history and chain exports.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a generated trace as JSON.
    GenTrace {
        /// happy-path, silent-seller, late-payer, greedy-buyer or random:N
        #[arg(long)]
        profile: Profile,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay an exported history or chain and report the first divergence.
    Verify { file: PathBuf },
    /// Run two scenarios over the same trace and diff their reports.
    Compare { a: PathBuf, b: PathBuf },
}

/// Exit 1: a run or verification failed. Exit 2: the inputs are defective.
enum Failure {
    Runtime(String),
    Config(String),
}

impl Failure {
    fn exit(self) -> ExitCode {
        match self {
            Failure::Runtime(m) => {
                eprintln!("error: {m}");
                ExitCode::from(1)
            }
            Failure::Config(m) => {
                eprintln!("configuration error: {m}");
                ExitCode::from(2)
            }
        }
    }
}

fn load(path: &Path) -> Result<ResolvedScenario, Failure> {
    Scenario::load(path)
        .and_then(|s| s.resolve())
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { scenario, out } => {
            let resolved = load(&scenario)?;
            let output = run(&resolved).map_err(|e| Failure::Runtime(e.to_string()))?;
            output
                .write_to(&out)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
            print!("{}", output.report.table());
        }
        Command::GenTrace { profile, seed } => {
            println!("{}", to_canonical_json(&gen_trace(profile, seed)));
        }
        Command::Verify { file } => {
            let text = std::fs::read_to_string(&file)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?;
            let verified = verify_export(&text)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?;
            println!("ok: {} with {} records", verified.kind, verified.records);
        }
        Command::Compare { a, b } => {
            let (a, b) = (load(&a)?, load(&b)?);
            let comparison = compare(&a, &b).map_err(|e| match e {
                CompareError::TraceMismatch { .. } => Failure::Config(e.to_string()),
                CompareError::Run(e) => Failure::Runtime(e.to_string()),
            })?;
            print!("{}", comparison.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.exit(),
    }
}
