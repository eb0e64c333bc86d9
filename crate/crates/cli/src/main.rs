//! Command-line driver: dataset generation, training, experiment sweeps,
//! and plot-data export.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 I/O error,
//! 4 validation error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::ExperimentArgs;
use config::Settings;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Validation(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Validation(m) => write!(f, "validation error: {m}"),
        }
    }
}

impl From<rfml_core::Error> for CliError {
    fn from(e: rfml_core::Error) -> Self {
        match e {
            rfml_core::Error::Io(inner) => CliError::Io(inner.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Validation(_) => 4,
        }
    }
}

/// Simulation lab for sign-gradient jamming of raw-IQ modulation
/// classifiers under receiver effects.
#[derive(Parser)]
#[command(name = "rfml", version, about)]
struct Cli {
    /// Cap worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Flat `key = value` config file with [dataset]/[model]/[train]/
    /// [experiment] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one setting, e.g. --set experiment.seed=7 (repeatable;
    /// applied after the config file).
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SeedArg {
    /// Seed override for this run (equivalent to setting the relevant
    /// section's seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a balanced synthetic dataset and write it to disk.
    GenDataset {
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
        /// Window length in complex samples (128, 256, or 512).
        #[arg(long)]
        input_size: Option<usize>,
        /// Examples per (class, SNR) cell.
        #[arg(long)]
        examples_per_cell: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train the classifier on a dataset; writes the model plus history and
    /// accuracy-vs-SNR tables next to it.
    Train {
        /// Input dataset path.
        #[arg(long)]
        dataset: PathBuf,
        /// Output model path.
        #[arg(long)]
        out: PathBuf,
        /// Epoch cap.
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Minibatch size.
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Run a named experiment sweep and write its records CSV + manifest.
    Experiment {
        /// One of: direct-access, input-size, logit-sweep, mutation,
        /// self-protect, freq-offset, time-offset.
        name: String,
        /// Trained model path (repeat for input-size).
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// Dataset path (repeat for input-size; paired with --model order).
        #[arg(long = "dataset")]
        datasets: Vec<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out_dir: PathBuf,
        /// Trials per grid point.
        #[arg(long)]
        trials: Option<usize>,
        /// Source scheme for per-example studies (logit-sweep, mutation).
        #[arg(long)]
        scheme: Option<String>,
        /// Held-out example index within the chosen scheme.
        #[arg(long, default_value_t = 0)]
        example_index: usize,
        /// Attack intensity for the mutation study.
        #[arg(long, default_value_t = 10.0)]
        es_ej: f64,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Aggregate a records CSV into tidy per-figure series.
    Plotdata {
        /// Which experiment produced the CSV.
        #[arg(long)]
        experiment: String,
        /// Input records CSV.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for the aggregated series.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure {threads} threads: {e}")))?;
    }

    let mut settings = Settings::default();
    if let Some(path) = &cli.config {
        settings.apply_file(path)?;
    }
    for assignment in &cli.overrides {
        settings.apply_override(assignment)?;
    }

    match cli.command {
        Command::GenDataset {
            out,
            input_size,
            examples_per_cell,
            seed,
        } => {
            if let Some(v) = input_size {
                settings.dataset.input_size = v;
            }
            if let Some(v) = examples_per_cell {
                settings.dataset.examples_per_class_per_snr = v;
            }
            if let Some(v) = seed.seed {
                settings.dataset.seed = v;
            }
            commands::gen_dataset(&settings, &out)
        }
        Command::Train {
            dataset,
            out,
            max_epochs,
            batch_size,
            seed,
        } => {
            if let Some(v) = max_epochs {
                settings.train.max_epochs = v;
            }
            if let Some(v) = batch_size {
                settings.train.batch_size = v;
            }
            if let Some(v) = seed.seed {
                settings.train.seed = v;
            }
            commands::train(&settings, &dataset, &out)
        }
        Command::Experiment {
            name,
            models,
            datasets,
            out_dir,
            trials,
            scheme,
            example_index,
            es_ej,
            seed,
        } => {
            if let Some(v) = trials {
                settings.experiment.trials_per_point = Some(v);
            }
            if let Some(v) = seed.seed {
                settings.experiment.seed = Some(v);
            }
            commands::experiment(
                &settings,
                &ExperimentArgs {
                    name,
                    models,
                    datasets,
                    out_dir,
                    scheme,
                    example_index,
                    attack_es_ej_db: es_ej,
                },
            )
        }
        Command::Plotdata {
            experiment,
            input,
            out_dir,
        } => commands::plotdata(&experiment, &input, &out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
