use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use linflow::scenario::{self, CliError};

/// Relaxed linear-growth energies, resolvents and gradient flows on grids.
#[derive(Parser)]
#[command(name = "linflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (or a bundled scenario by name).
    Run { config: String },
    /// Summarize a run directory and write plot-ready `.dat` files.
    Report { dir: PathBuf },
    /// List the bundled scenarios.
    ListScenarios,
    /// Check a scenario file without running it.
    Validate { config: String },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            let (s, text) = scenario::load(&config)?;
            let outcome = scenario::run(&s, &text, &scenario::output_root())?.into_result()?;
            println!("{}", outcome.dir.display());
            for f in &outcome.files {
                println!("  {f}");
            }
        }
        Command::Report { dir } => print!("{}", scenario::report(&dir)?),
        Command::ListScenarios => {
            for (name, description) in scenario::bundled() {
                println!("{name:<20} {description}");
            }
        }
        Command::Validate { config } => {
            let (s, _) = scenario::load(&config)?;
            println!("{}: ok ({} job)", s.name, s.job.name());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("linflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
