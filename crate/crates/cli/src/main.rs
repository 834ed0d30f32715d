//! `rim`: build-index, retrieve, train, evaluate and ablate from one JSON config.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rim_core::experiment::{
    ablate_command, build_index_command, evaluate_command, retrieve_command, train_command, Experiment,
    ExperimentConfig,
};
use rim_core::{Result, RimError};

#[derive(Parser)]
#[command(name = "rim", version, about = "Retrieval & interaction machine for tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set train.k=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the inverted index over the retrieval pool.
    BuildIndex {
        #[command(flatten)]
        common: Common,
    },
    /// Retrieve neighbors and print them as JSON lines.
    Retrieve {
        #[command(flatten)]
        common: Common,
        /// CSV of targets with the dataset's columns (default: train and test rows).
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Cross-check every BM25 result against exhaustive scoring.
        #[arg(long)]
        oracle: bool,
        /// Write the JSON lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint plus per-epoch log.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test split and write a report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: the run's model.bin).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the ablation matrix and print a comparison table.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
}

fn prepare(common: &Common) -> Result<Experiment> {
    Experiment::prepare(ExperimentConfig::load(&common.config, &common.overrides)?)
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(RimError::Data(format!("writing output: {e}"))),
        _ => Ok(()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| RimError::Data(e.to_string()))?;
    emit(&(text + "\n"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildIndex { common } => print_json(&build_index_command(&prepare(&common)?)?),
        Command::Retrieve {
            common,
            targets,
            oracle,
            out,
        } => {
            let exp = prepare(&common)?;
            let mut sink: Box<dyn Write> = match &out {
                Some(p) => {
                    Box::new(BufWriter::new(File::create(p).map_err(|e| {
                        RimError::Data(format!("cannot create {}: {e}", p.display()))
                    })?))
                }
                None => Box::new(BufWriter::new(io::stdout().lock())),
            };
            let summary = retrieve_command(&exp, targets.as_deref(), oracle, &mut sink)?;
            match sink.flush() {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => return Err(RimError::Data(e.to_string())),
                _ => {}
            }
            drop(sink);
            let text = serde_json::to_string(&summary).map_err(|e| RimError::Data(e.to_string()))?;
            eprintln!("{text}");
            Ok(())
        }
        Command::Train { common } => print_json(&train_command(&prepare(&common)?)?),
        Command::Evaluate { common, checkpoint } => {
            print_json(&evaluate_command(&prepare(&common)?, checkpoint.as_deref())?)
        }
        Command::Ablate { common } => {
            let exp = prepare(&common)?;
            let report = ablate_command(&exp)?;
            emit(&report.table())?;
            eprintln!(
                "ablation: {} runs in {:.1}s, written to {}",
                report.rows.len(),
                report.total_seconds,
                exp.artifact("ablation.json").display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
