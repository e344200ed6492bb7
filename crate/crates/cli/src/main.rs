use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use fogsim::experiment::{self, merge_results, ExperimentConfig};
use fogsim::Error;

/// Fog replica-placement simulator.
#[derive(Parser)]
#[command(name = "fogsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map the config's traces onto each topology and write visit CSVs.
    Ingest {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every (topology, policy) pair of an experiment.
    Run {
        config: PathBuf,
        /// Output directory [default: out/<experiment name>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Sweep points simulated concurrently.
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// Merge results.csv files (or run directories) into a Markdown table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn out_dir(out: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    out.unwrap_or_else(|| Path::new("out").join(&config.name))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Ingest { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let dir = out_dir(out, &config);
            for path in experiment::ingest(&config, &dir)? {
                println!("{}", path.display());
            }
        }
        Command::Run {
            config,
            out,
            seed,
            jobs,
        } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let dir = out_dir(out, &config);
            let started = Instant::now();
            let results = experiment::run_experiment(&config, jobs)?;
            experiment::write_outputs(&config, &results, &dir)?;
            log::info!("finished in {:.2?}", started.elapsed());
            for r in &results {
                println!(
                    "{:<16} {:<20} availability {:>7.2}%  excess {:>8.2}%  memory {:>9.0} B",
                    r.topology,
                    r.policy,
                    r.report.availability * 100.0,
                    r.report.excess_ratio * 100.0,
                    r.report.memory_avg
                );
            }
            println!("results written to {}", dir.display());
        }
        Command::Report { inputs, out } => {
            let mut files = Vec::new();
            for input in inputs {
                let path = if input.is_dir() { input.join("results.csv") } else { input };
                let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                let label = path
                    .parent()
                    .and_then(Path::file_name)
                    .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
                files.push((label, file));
            }
            let table = merge_results(files)?;
            match out {
                Some(path) => fs::write(&path, table).map_err(|e| Error::io(&path, e))?,
                None => print!("{table}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
