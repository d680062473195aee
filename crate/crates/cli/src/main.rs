//! Batch front door: validates a JSON scenario, runs it, and emits CSV/JSON
//! artifacts plus a manifest of content hashes. No interactive mode; all
//! output is meant for files and pipes.

mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nslog_core::Error;

#[derive(Parser)]
#[command(name = "nslog", disable_version_flag = true)]
struct Cli {
    /// Cap on the worker thread count (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run one scenario described by a JSON config file.
    Run { config: PathBuf },
    /// List the built-in divergence-free initial-data families.
    Families,
    /// Run the cross-module invariant battery and print it as CSV.
    /// Exits 4 if any row fails.
    Suite {
        /// Restrict to one module's checks.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Print the version line.
    Version,
}

/// Config problems exit 2, rejected gates 3, numerical breakdowns 4.
fn exit_code_for(e: &Error) -> u8 {
    let mut root = e;
    while let Error::Stage { source, .. } = root {
        root = source;
    }
    match root {
        Error::GateFailed { .. } | Error::SplitInfeasible { .. } => 3,
        Error::NonContraction { .. }
        | Error::MaxIter { .. }
        | Error::StepUnderflow { .. }
        | Error::CflViolation { .. }
        | Error::Quadrature(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("--threads must be at least 1");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outcome = match cli.verb {
        Verb::Run { config } => scenario::run_scenario(&config),
        Verb::Families => scenario::list_families(),
        Verb::Suite { filter } => scenario::print_suite(filter.as_deref()),
        Verb::Version => {
            println!("nslog {}", env!("CARGO_PKG_VERSION"));
            Ok(0)
        }
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            match e.stage() {
                Some(tag) => eprintln!("error at stage `{tag}`: {e}"),
                None => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code_for(&e))
        }
    }
}
