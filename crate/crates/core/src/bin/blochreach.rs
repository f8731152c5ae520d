//! Command-line driver: estimate reachable/controllability sets from a config
//! file, report per-stage tables, export point clouds, and run built-in
//! self-checks.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation failure, 3 runtime
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use blochreach::config::RunConfig;
use blochreach::{run, store, validate, Error};

#[derive(Parser)]
#[command(
    name = "blochreach",
    version,
    about = "Reachable- and controllability-set estimation for a driven two-level open quantum system"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the estimation described by a config file and print the run id.
    Estimate {
        /// Path to the TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Worker threads for node batches (default: config value; 0 = all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Recompute even if the run directory already holds results.
        #[arg(long)]
        force: bool,
        /// Override the base seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the per-stage table of a completed run.
    Report {
        /// Run id printed by `estimate`.
        #[arg(long)]
        run: String,
        /// Results root directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Emit CSV instead of an aligned text table.
        #[arg(long)]
        csv: bool,
    },
    /// Write the member point cloud of one stage as CSV and print its path.
    ExportPoints {
        /// Run id printed by `estimate`.
        #[arg(long)]
        run: String,
        /// Stage index (see `report`).
        #[arg(long)]
        stage: usize,
        /// Results root directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Run the built-in oracle suite and report pass/fail per check.
    Validate,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_)
        | Error::Parse { .. }
        | Error::InvalidParams(_)
        | Error::InvalidControl(_)
        | Error::UnknownRun(_)
        | Error::UnknownStage(_) => 2,
        _ => 3,
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Estimate {
            config,
            workers,
            force,
            seed,
        } => {
            let run_config = RunConfig::from_path(&config)?;
            let outcome = run::execute(&run_config, workers, force, seed)?;
            if outcome.reused {
                eprintln!(
                    "reusing completed run in {} (pass --force to recompute)",
                    outcome.dir.display()
                );
            } else {
                eprintln!(
                    "completed {} stages in {:.1?}; results in {}",
                    outcome.summary.stages.len(),
                    outcome.wall,
                    outcome.dir.display()
                );
            }
            for line in store::render_report_text(&outcome.summary).lines() {
                eprintln!("{line}");
            }
            println!("{}", outcome.run_id);
            Ok(())
        }
        Command::Report { run, out, csv } => {
            let summary = store::load_summary(&out, &run)?;
            if csv {
                print!("{}", store::render_report_csv(&summary));
            } else {
                print!("{}", store::render_report_text(&summary));
            }
            Ok(())
        }
        Command::ExportPoints { run, stage, out } => {
            let path = store::export_points(&out, &run, stage)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Validate => {
            let checks = validate::run_all();
            let mut failed = 0;
            for check in &checks {
                let status = if check.passed { "PASS" } else { "FAIL" };
                println!("{status} {}: {}", check.name, check.detail);
                if !check.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(Error::InvalidState(format!(
                    "{failed} of {} checks failed",
                    checks.len()
                )));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let is_validate = matches!(cli.command, Command::Validate);
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if is_validate {
                ExitCode::from(2)
            } else {
                ExitCode::from(exit_code_for(&err))
            }
        }
    }
}
