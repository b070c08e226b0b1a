use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use imoca_cli::run::{run_spec, RunOptions};
use imoca_cli::spec::{ExperimentSpec, OUTPUT_ROOT_VAR};
use imoca_cli::summarize::summarize_dir;
use imoca_cli::{selftest, CliError};
use log::{error, info};

#[derive(Parser)]
#[command(
    name = "imoca",
    version,
    about = "Continuous-fidelity multi-objective BO experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (problem, method, seed) listed in a spec file.
    Run {
        spec: PathBuf,
        /// Rerun even when a complete trace already exists.
        #[arg(long)]
        force: bool,
        /// Worker threads (default: logical cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate the traces in a directory into cost-binned tables.
    Summarize { dir: PathBuf },
    /// Check the numerics against independent oracles.
    Selftest,
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { spec, force, jobs } => {
            let parsed = ExperimentSpec::read(&spec)?;
            let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from);
            let out = parsed.output_dir(&spec, root.as_deref());
            let report = run_spec(&parsed, &out, &RunOptions { force, jobs })?;
            info!(
                "{} executed, {} skipped, {} failed -> {}",
                report.executed,
                report.skipped,
                report.failed.len(),
                out.display()
            );
            if !report.failed.is_empty() {
                return Err(CliError::RunsFailed(report.failed).into());
            }
        }
        Command::Summarize { dir } => {
            for p in summarize_dir(&dir)? {
                println!("{}", p.display());
            }
        }
        Command::Selftest => {
            let ok = selftest::run_checks(
                &selftest::checks(Default::default()),
                &mut std::io::stdout(),
            );
            if !ok {
                anyhow::bail!("self-test failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
