use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use homog::config::{parse_config, ExperimentKind};
use homog::experiment::run_experiment;
use homog::HomogError;

#[derive(Parser)]
#[command(name = "homog", about = "Numerics laboratory for time-dependent random conductance models", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file
    Run {
        config: PathBuf,
        /// override the worker count from the config
        #[arg(long)]
        threads: Option<usize>,
        /// override the output directory from the config
        #[arg(long)]
        out: Option<PathBuf>,
        /// shift every derived seed for a disjoint replication
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Parse and validate a config file without running anything
    Validate { config: PathBuf },
    /// List the available experiment kinds
    ListExperiments,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, HomogError> {
    match cli.command {
        Command::Run { config, threads, out, seed_offset } => {
            let mut cfg = parse_config(&config)?;
            if let Some(threads) = threads {
                cfg.threads = threads;
            }
            if let Some(out) = out {
                cfg.output = out;
            }
            cfg.validate()?;
            let report = run_experiment(&cfg, seed_offset)?;
            println!(
                "{}: {} ({} steps, {:.2} s) -> {}",
                cfg.experiment.name(),
                if report.passed { "pass" } else { "FAIL" },
                report.total_steps,
                report.wall_seconds,
                report.summary_path.display()
            );
            Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Validate { config } => {
            let cfg = parse_config(&config)?;
            println!("{}", cfg.echo()?);
            Ok(ExitCode::SUCCESS)
        }
        Command::ListExperiments => {
            for kind in ExperimentKind::ALL {
                println!("{}", kind.name());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
