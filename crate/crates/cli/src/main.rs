use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mitoslice_cli::commands::{
    cmd_ablate, cmd_evaluate, cmd_predict, cmd_report, cmd_split, cmd_synth, cmd_train,
};
use mitoslice_cli::{CliError, ExperimentConfig, Overrides};

/// Experiment pipeline for normal-vs-atypical mitotic figure classification:
/// synthetic data, stratified k-fold training, fold-ensemble inference and
/// challenge-style evaluation.
#[derive(Parser)]
#[command(name = "mitoslice", version, about)]
struct Cli {
    /// Experiment config JSON (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the working directory for artifacts.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Markdown,
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic desk-scale dataset with a manifest.
    Synth {
        /// Number of samples.
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Fraction of atypical (AMF) samples.
        #[arg(long, default_value_t = 0.2)]
        amf_fraction: f64,
        /// Output dataset directory.
        #[arg(long, default_value = "data/synthetic")]
        out: PathBuf,
    },
    /// Assign samples to stratified folds and write folds.csv.
    Split {
        /// Override the fold count.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train one checkpoint per fold.
    Train {
        /// Override the epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the batch size.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Override the peak learning rate.
        #[arg(long)]
        lr_max: Option<f64>,
        /// Override the center-crop ratio.
        #[arg(long)]
        crop_ratio: Option<f64>,
    },
    /// Run the fold ensemble over a manifest and write predictions.csv.
    Predict {
        /// Manifest to predict on (defaults to data.manifest).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output CSV path (defaults to <work_dir>/predictions.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the center-crop ratio.
        #[arg(long)]
        crop_ratio: Option<f64>,
        /// Override the decision threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Compute per-domain and per-fold metrics from a prediction CSV.
    Evaluate {
        /// Prediction CSV (defaults to <work_dir>/predictions.csv).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Train each crop-ratio arm on shared folds and emit the comparison.
    Ablate {
        /// Comma-separated crop ratios; the first is the baseline arm.
        #[arg(long, value_delimiter = ',', required = true)]
        ratios: Vec<f64>,
        /// Override the epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the batch size.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Override the peak learning rate.
        #[arg(long)]
        lr_max: Option<f64>,
    },
    /// Re-render a metrics artifact as markdown, json or csv.
    Report {
        /// metrics.json or ablation_report.json.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: ReportFormat,
        /// Output path (defaults next to the input).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = Overrides {
        seed: cli.seed,
        work_dir: cli.work_dir.clone(),
        ..Overrides::default()
    };
    match &cli.command {
        Command::Split { k } => overrides.k = *k,
        Command::Train {
            epochs,
            batch_size,
            lr_max,
            crop_ratio,
        } => {
            overrides.epochs = *epochs;
            overrides.batch_size = *batch_size;
            overrides.lr_max = *lr_max;
            overrides.crop_ratio = *crop_ratio;
        }
        Command::Predict {
            crop_ratio,
            threshold,
            ..
        } => {
            overrides.crop_ratio = *crop_ratio;
            overrides.threshold = *threshold;
        }
        Command::Ablate {
            epochs,
            batch_size,
            lr_max,
            ..
        } => {
            overrides.epochs = *epochs;
            overrides.batch_size = *batch_size;
            overrides.lr_max = *lr_max;
        }
        _ => {}
    }
    let config = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;

    match cli.command {
        Command::Synth {
            n,
            amf_fraction,
            out,
        } => {
            cmd_synth(&config, n, amf_fraction, &out)?;
        }
        Command::Split { .. } => {
            cmd_split(&config)?;
        }
        Command::Train { .. } => {
            cmd_train(&config)?;
        }
        Command::Predict { manifest, out, .. } => {
            cmd_predict(&config, manifest.as_deref(), out.as_deref())?;
        }
        Command::Evaluate { predictions } => {
            cmd_evaluate(&config, predictions.as_deref())?;
        }
        Command::Ablate { ratios, .. } => {
            cmd_ablate(&config, &ratios)?;
        }
        Command::Report { input, format, out } => {
            let format = match format {
                ReportFormat::Markdown => "markdown",
                ReportFormat::Json => "json",
                ReportFormat::Csv => "csv",
            };
            cmd_report(&input, format, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
