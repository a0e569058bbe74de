use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use icmix::data::Split;
use icmix::harness::{self, DatasetSpec, GradcheckSpec, TrainConfig};
use icmix::model::Checkpoint;
use icmix::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(
    name = "icmix",
    version,
    about = "Infinite Class Mixup training and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON config; writes metrics.csv, checkpoint.bin and report.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-1 accuracy and cross-entropy of a checkpoint on a test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset section of a config, inline JSON or a file path.
        #[arg(long)]
        dataset: String,
    },
    /// Feature-norm and score-difference curves along input interpolations.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
        /// Seed for picking one test image per class.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference and closed-form gradient checks of every loss.
    Gradcheck {
        /// Number of random instances.
        #[arg(long, default_value_t = 100)]
        seeds: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::CorruptFile { .. } | Error::Format(_) => EXIT_IO,
        Error::NonFinite { .. } | Error::CheckFailed(_) | Error::EmptyReduction => EXIT_NUMERIC,
        _ => EXIT_VALIDATION,
    }
}

fn load_test_split(checkpoint: &Checkpoint, dataset: &str) -> Result<icmix::data::Dataset, Error> {
    let spec = DatasetSpec::from_arg(dataset)?;
    let mut test = spec.load_split(Split::Test)?;
    if let Some(st) = &checkpoint.standardizer {
        st.apply(&mut test.images)?;
    }
    Ok(test)
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Train { config, out } => {
            let cfg = TrainConfig::from_file(&config)?;
            harness::train::check_output_dir(&out)?;
            let outcome = harness::train(&cfg)?;
            harness::write_outputs(&out, &outcome)?;
            println!(
                "final test accuracy {:.4} ({} epochs), outputs in {}",
                outcome.report.final_test_accuracy,
                cfg.train.epochs,
                out.display()
            );
        }
        Command::Eval {
            checkpoint,
            dataset,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let test = load_test_split(&ck, &dataset)?;
            let metrics = harness::evaluate(&ck.params, &test)?;
            println!("{}", serde_json::to_string(&metrics)?);
        }
        Command::Analyze {
            checkpoint,
            dataset,
            step,
            out,
            seed,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let test = load_test_split(&ck, &dataset)?;
            let table = harness::analyze_interpolation(&ck.params, &test, step, seed)?;
            std::fs::write(&out, table.to_csv()).map_err(|e| Error::Io {
                path: out.display().to_string(),
                source: e,
            })?;
            println!("{} rows written to {}", table.rows.len(), out.display());
        }
        Command::Gradcheck { seeds, tol } => {
            if !(tol > 0.0) {
                return Err(Error::Validation(vec![format!(
                    "--tol must be > 0 (got {tol})"
                )]));
            }
            let spec = GradcheckSpec {
                instances: seeds,
                tolerance: tol,
                ..Default::default()
            };
            let report = harness::gradcheck(&spec)?;
            print!("{}", report.to_csv());
            if !report.passed() {
                let n = report.failures().count();
                return Err(Error::CheckFailed(format!(
                    "{n} of {} checks exceeded tolerance",
                    report.rows.len()
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
