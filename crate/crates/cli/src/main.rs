use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use stefan_core::Error;
use stefan_sim::{run_from_file, ExperimentError};

/// Runs one experiment of the stochastic Stefan simulator.
#[derive(Parser, Debug)]
#[command(name = "stefan-sim", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for path-parallel estimators.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Output directory; overrides STEFAN_SIM_OUTPUT and the config.
    #[arg(long, env = "STEFAN_SIM_OUTPUT")]
    output: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn fail(err: ExperimentError) -> ExitCode {
    eprintln!("{}", err.record());
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        return fail(ExperimentError::new(
            "cli",
            Error::ConfigRule {
                rule: "threads_positive",
                message: "--threads must be at least 1".into(),
            },
        ));
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        return fail(ExperimentError::new("cli", Error::InvalidParameter(e.to_string())));
    }
    match run_from_file(&cli.config, cli.output, cli.seed) {
        Ok(summary) if summary.failed_checks.is_empty() => {
            println!("{}", summary.output_dir.display());
            ExitCode::SUCCESS
        }
        Ok(summary) => fail(ExperimentError::new(
            "opcheck",
            Error::InvalidParameter(format!("failed checks: {}", summary.failed_checks.join(", "))),
        )),
        Err(e) => fail(e),
    }
}
