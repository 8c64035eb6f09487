//! `odas`: synthesize corpora, train, detect action starts, evaluate and
//! verify gradients.
//!
//! Exit codes: 0 success, 2 bad input, 3 numerical failure (divergence or a
//! failed gradient check).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use odas_core::experiment::Threshold;
use odas_core::training::Methods;

mod commands;

use commands::Failure;

#[derive(Debug, Parser)]
#[command(name = "odas", version, about = "Online detection of action starts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the reference experiment configuration.
    Config {
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus into <out>/train and <out>/test.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a detector on a corpus directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Corpus directory (annotations.json + features/).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of adaptive, tc, gan; empty or "none" trains a
        /// plain classifier.
        #[arg(long, default_value = "all")]
        methods: Methods,
        /// Per-iteration loss CSV [default: <out>.losses.csv].
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Stream a corpus through the detector and write predictions CSV.
    Detect {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint; required unless --random-guess.
        #[arg(long, required_unless_present = "random_guess")]
        model: Option<PathBuf>,
        /// Corpus directory to detect on.
        #[arg(long)]
        streams: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// "auto" searches the config grid on --train-split, or a value in [0, 1].
        #[arg(long, default_value = "auto")]
        threshold: Threshold,
        /// Window stride in frames [default: model.stride from the config].
        #[arg(long)]
        stride: Option<usize>,
        /// Corpus directory used by the automatic threshold search.
        #[arg(long)]
        train_split: Option<PathBuf>,
        /// Score windows with uniform random class probabilities.
        #[arg(long)]
        random_guess: bool,
    },
    /// Evaluate predictions against ground truth.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// annotations.json of the evaluated split.
        #[arg(long)]
        ground_truth: PathBuf,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
        /// Precision/recall curves CSV.
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Supplies the class count and evaluation defaults.
        #[arg(long, required_unless_present = "num_classes")]
        config: Option<PathBuf>,
        #[arg(long)]
        num_classes: Option<usize>,
        /// Comma-separated offset thresholds in seconds [default: 1,2,...,10].
        #[arg(long, value_delimiter = ',')]
        offsets: Option<Vec<f64>>,
        /// AP depth, the recall fraction in (0, 1] [default: 1].
        #[arg(long)]
        depth: Option<f64>,
    },
    /// Train and evaluate every method subset over several seeds.
    Ablation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Report JSON path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of every loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds to check.
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Corrupt the analytic gradient at this flat parameter index.
        #[arg(long, hide = true)]
        inject_fault: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Config { out } => commands::config(out.as_deref()),
        Command::Synth { config, out } => commands::synth(&config, &out),
        Command::Train {
            config,
            data,
            out,
            methods,
            loss_log,
        } => commands::train(&config, &data, &out, methods, loss_log.as_deref()),
        Command::Detect {
            config,
            model,
            streams,
            out,
            threshold,
            stride,
            train_split,
            random_guess,
        } => commands::detect(commands::DetectArgs {
            config: &config,
            model: if random_guess { None } else { model.as_deref() },
            streams: &streams,
            out: &out,
            threshold,
            stride,
            train_split: train_split.as_deref(),
        }),
        Command::Evaluate {
            predictions,
            ground_truth,
            out,
            curves,
            config,
            num_classes,
            offsets,
            depth,
        } => commands::evaluate(commands::EvaluateArgs {
            predictions: &predictions,
            ground_truth: &ground_truth,
            out: &out,
            curves: curves.as_deref(),
            config: config.as_deref(),
            num_classes,
            offsets,
            depth,
        }),
        Command::Ablation { config, seeds, out } => commands::ablation(&config, seeds, out.as_deref()),
        Command::Gradcheck {
            seed,
            count,
            step,
            tolerance,
            inject_fault,
        } => commands::gradcheck(seed, count, step, tolerance, inject_fault),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
