//! Batch command-line surface for the factual-probing workbench.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use factprobe::cli;
use factprobe::eval::ReportFormat;

#[derive(Parser)]
#[command(name = "factprobe", about = "Factual-probing workbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate inputs and write normalized per-relation splits.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a statistical baseline (method class-prior or naive-bayes).
    FitBaseline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Train prompts or fine-tune a model per the manifest method.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Predict and report without training (manual or trigger-file prompts).
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Build the easy/hard partition from prediction dumps.
    Partition {
        /// Artifact directories of the defining runs.
        #[arg(long, num_args = 1.., required = true)]
        dirs: Vec<PathBuf>,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Side-by-side predictions and pairwise agreement across runs.
    Compare {
        #[arg(long, num_args = 2.., required = true)]
        dirs: Vec<PathBuf>,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate a combined report from artifact directories.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        dirs: Vec<PathBuf>,
        /// Optional partition file adding easy/hard columns.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long, default_value = "tsv")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn check_method(
    manifest: &PathBuf,
    allowed: impl Fn(cli::Method) -> bool,
    what: &str,
) -> factprobe::Result<()> {
    let m = cli::load_manifest(manifest)?;
    if !allowed(m.method) {
        return Err(factprobe::Error::Manifest(format!(
            "method {} is not valid for {what}",
            m.method.name()
        )));
    }
    Ok(())
}

fn emit(text: String, out: Option<PathBuf>) -> factprobe::Result<()> {
    match out {
        Some(path) => std::fs::write(&path, text)
            .map_err(|e| factprobe::Error::io(&path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(command: Command) -> factprobe::Result<()> {
    match command {
        Command::Ingest { manifest, out } => cli::ingest(manifest, out),
        Command::FitBaseline {
            manifest,
            out,
            seed,
            jobs,
        } => {
            check_method(
                &manifest,
                |m| matches!(m, cli::Method::ClassPrior | cli::Method::NaiveBayes),
                "fit-baseline",
            )?;
            cli::run(manifest, out, seed, jobs)
        }
        Command::Train {
            manifest,
            out,
            seed,
            jobs,
        } => {
            check_method(&manifest, |m| m.trains(), "train")?;
            cli::run(manifest, out, seed, jobs)
        }
        Command::Evaluate {
            manifest,
            out,
            seed,
            jobs,
        } => {
            check_method(
                &manifest,
                |m| matches!(m, cli::Method::Manual | cli::Method::TriggerFile),
                "evaluate",
            )?;
            cli::run(manifest, out, seed, jobs)
        }
        Command::Partition { dirs, out } => cli::partition(&dirs, out).map(|_| ()),
        Command::Compare { dirs, out } => {
            let table = cli::compare(&dirs)?;
            emit(table, out)
        }
        Command::Report {
            dirs,
            partition,
            format,
            out,
        } => {
            let fmt = match format.as_str() {
                "tsv" => ReportFormat::Tsv,
                "markdown" | "md" => ReportFormat::Markdown,
                other => {
                    return Err(factprobe::Error::Argument(format!(
                        "unknown report format {other:?}"
                    )))
                }
            };
            let doc = cli::report(&dirs, partition.as_deref(), fmt)?;
            emit(doc, out)
        }
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match dispatch(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
