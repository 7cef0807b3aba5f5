mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "adbn",
    version,
    about = "Adaptive DBN training, evaluation, detection and heatmaps"
)]
struct Cli {
    /// Worker threads (default: all cores). 1 gives the canonical bit-exact path.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pre-train and fine-tune a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Per-class accuracy, ROC curves and AUC on a labelled dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory with labels.csv and images/.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find bounding boxes; writes JSON lines.
    Detect(DetectArgs),
    /// Relevance heatmap of one image for one class.
    Heatmap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Class name, e.g. "Mass".
        #[arg(long)]
        class: String,
        /// Output prefix; `.pgm` and `.ppm` are appended.
        #[arg(long)]
        out: PathBuf,
        /// Gate relevance with hidden probabilities instead of binary codes.
        #[arg(long)]
        continuous: bool,
    },
    /// Write a synthetic labelled dataset with bounding boxes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        /// Images in a separate `test` set; 0 writes only `train`.
        #[arg(long, default_value_t = 500)]
        test: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 9)]
        classes: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    /// A PGM image or a directory of them (searched non-recursively).
    #[arg(long)]
    input: PathBuf,
    /// Run config supplying detection settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    t1: Option<f64>,
    #[arg(long)]
    t2: Option<f64>,
    #[arg(long)]
    regions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write boxes here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ground-truth bbox CSV; prints a per-class detection report.
    #[arg(long)]
    bbox: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// CSV path for the detection report (requires --bbox).
    #[arg(long)]
    report: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train { config } => commands::train(&config),
        Command::Eval { model, data, out } => commands::eval(&model, &data, &out),
        Command::Detect(args) => commands::detect(&commands::DetectRequest {
            model: args.model,
            input: args.input,
            config: args.config,
            t1: args.t1,
            t2: args.t2,
            regions: args.regions,
            seed: args.seed,
            out: args.out,
            bbox: args.bbox,
            iou: args.iou,
            report: args.report,
        }),
        Command::Heatmap {
            model,
            image,
            class,
            out,
            continuous,
        } => commands::heatmap(&model, &image, &class, &out, !continuous),
        Command::Synth {
            out,
            train,
            test,
            seed,
            classes,
            size,
        } => commands::synth(&out, train, test, seed, classes, size),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
