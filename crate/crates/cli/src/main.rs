use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srgeo_cli::{CliError, Outcome};

#[derive(Parser)]
#[command(name = "srgeo", version, about = "Sub-Riemannian geodesics by penalty continuation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in problems.
    ListProblems {
        #[arg(long)]
        json: bool,
    },
    /// Continuation solve of a drift-free problem.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `$SRGEO_OUTPUT_ROOT/<problem>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimum-energy control problem with drift.
    DriftSolve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check a finished run directory.
    Diagnose {
        #[arg(long)]
        results: PathBuf,
    },
}

/// Prints to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn report(result: Result<Outcome, CliError>) -> ExitCode {
    match result {
        Ok(o) => {
            emit(&o.summary);
            if let Some(dir) = o.out_dir {
                emit(&format!("output: {}", dir.display()));
            }
            ExitCode::from(o.exit_code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::ListProblems { json } => {
            emit(&srgeo_cli::list_problems(json));
            ExitCode::SUCCESS
        }
        Command::Solve { config, out } => report(srgeo_cli::solve(&config, out.as_deref())),
        Command::DriftSolve { config, out } => report(srgeo_cli::drift_solve(&config, out.as_deref())),
        Command::Diagnose { results } => report(srgeo_cli::diagnose(&results)),
    }
}
