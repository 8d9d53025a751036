use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bench::error::{BenchError, Result};
use bench::inspect::{self, AtView};
use bench::results::{self, to_csv_string};
use bench::runner::{self, RESULTS_FILE};
use bench::sweep::{self, Grid};
use bench::{ExperimentConfig, Split};
use clap::{Parser, Subcommand};
use graphkit::{load_graph, GraphFormat};
use graphtx::pe::PeKind;

#[derive(Parser)]
#[command(name = "graphtx", version, about = "Train, evaluate and inspect graph Transformer variants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write results, manifest and checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved run on one split and append the result.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Print the positional encoding of each graph as CSV.
    Encode {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        pe: String,
        #[arg(long, default_value_t = 4)]
        size: usize,
    },
    /// Print masks, distances, proximity views or kernels as CSV.
    Inspect {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        at: String,
    },
    /// Run a variant x size grid and print the median test metric table.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        /// Directory for the combined results CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = ExperimentConfig::from_toml_str(&read(&config)?)?;
            let run = runner::run_experiment(&cfg)?;
            runner::save_run(&out, &cfg, &run)?;
            print!("{}", to_csv_string(&run.records));
        }
        Command::Eval { checkpoint, split } => {
            let split: Split = split.parse()?;
            let rec = runner::eval_saved(&checkpoint, split)?;
            results::append_csv(&checkpoint.join(RESULTS_FILE), std::slice::from_ref(&rec))?;
            print!("{}", to_csv_string(&[rec]));
        }
        Command::Encode { graph, pe, size } => {
            let kind: PeKind = pe.parse().map_err(|e: graphtx::ModelError| BenchError::config("pe", e.to_string()))?;
            let data = load_graph(&graph, GraphFormat::Json)?;
            print!("{}", inspect::encode(&data, kind, size)?);
        }
        Command::Inspect { graph, at } => {
            let view: AtView = at.parse()?;
            let data = load_graph(&graph, GraphFormat::Json)?;
            print!("{}", inspect::inspect(&data, view)?);
        }
        Command::Sweep { grid, out } => {
            let grid = Grid::from_toml_str(&read(&grid)?)?;
            let (records, table) = sweep::run_grid(&grid)?;
            if let Some(dir) = out {
                results::append_csv(&dir.join(RESULTS_FILE), &records)?;
            }
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
