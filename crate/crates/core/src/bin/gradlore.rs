use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gradlore::experiments::{exit_code, run_experiment, summarize, ExperimentConfig};
use gradlore::Result;

#[derive(Parser)]
#[command(name = "gradlore", version, about = "Gradient-informed training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides `run.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print headline comparisons from an output directory.
    Summarize { dir: PathBuf },
}

fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Run { config, jobs, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if let Some(n) = jobs {
                if n == 0 {
                    return Err(gradlore::Error::Config("--jobs must be at least 1".into()));
                }
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| gradlore::Error::Config(e.to_string()))?;
            }
            run_experiment(&cfg)
        }
        Command::Summarize { dir } => summarize(&dir),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
