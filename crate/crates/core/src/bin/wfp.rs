use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use wfp_core::commands::{
    self, CommandError, CurveOptions, DefendOptions, EvaluateOptions, ExtractOptions, SynthOptions, TrainOptions,
};
use wfp_core::defense::DefenseConfig;
use wfp_core::metrics::Setting;
use wfp_core::model::Variant;
use wfp_core::synthgen::Separability;
use wfp_core::training::TrainingConfig;

/// Website-fingerprinting attack workbench.
#[derive(Parser)]
#[command(name = "wfp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace corpus.
    Synth {
        #[arg(long)]
        sites: usize,
        #[arg(long)]
        traces: usize,
        #[arg(long, default_value_t = 0)]
        unmon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "easy")]
        separability: Separability,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract features, split, standardize, and save a processed dataset.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        n_mon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        unmon_train: usize,
        #[arg(long, default_value_t = 0)]
        unmon_test: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model variant.
    Train(TrainArgs),
    /// Score the test partition with one checkpoint or the two-model ensemble.
    Evaluate {
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        #[arg(long, default_value = "closed")]
        setting: Setting,
        #[arg(long)]
        report: PathBuf,
        /// Prediction CSV; defaults to the report path with a `.predictions.csv` extension.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Open-world TPR/FPR over a list of confidence thresholds.
    Curve {
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        thresholds: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the constant-rate padding defense to a corpus.
    Defend {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0.04)]
        rho_out: f64,
        #[arg(long, default_value_t = 0.012)]
        rho_in: f64,
        #[arg(long, default_value_t = 100)]
        pad_multiple: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overhead_report: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, required_unless_present = "time_ckpt")]
    dir_ckpt: Option<PathBuf>,
    #[arg(long)]
    time_ckpt: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    variant: Variant,
    #[arg(long)]
    out: PathBuf,
    /// History JSON; defaults to the checkpoint path with a `.history.json` extension.
    #[arg(long)]
    history: Option<PathBuf>,
    /// JSON object overriding fields of the default architecture.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    decay_patience: Option<usize>,
    #[arg(long)]
    stop_patience: Option<usize>,
    #[arg(long)]
    min_lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn training_config(&self) -> TrainingConfig {
        let d = TrainingConfig::default();
        TrainingConfig {
            initial_lr: self.lr.unwrap_or(d.initial_lr),
            decay_factor: self.decay_factor.unwrap_or(d.decay_factor),
            decay_patience: self.decay_patience.unwrap_or(d.decay_patience),
            stop_patience: self.stop_patience.unwrap_or(d.stop_patience),
            min_lr: self.min_lr.unwrap_or(d.min_lr),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            seed: self.seed,
        }
    }
}

fn run(command: Command) -> Result<(), CommandError> {
    match command {
        Command::Synth {
            sites,
            traces,
            unmon,
            seed,
            separability,
            out,
        } => commands::synth(&SynthOptions {
            sites,
            traces,
            unmon,
            seed,
            separability,
            out,
        }),
        Command::Extract {
            corpus,
            n_mon,
            seed,
            unmon_train,
            unmon_test,
            out,
        } => commands::extract(&ExtractOptions {
            corpus,
            n_mon,
            seed,
            unmon_train,
            unmon_test,
            out,
        })
        .map(drop),
        Command::Train(args) => {
            let training = args.training_config();
            if let Err(e) = training.validate() {
                return Err(CommandError::Usage(e.to_string()));
            }
            commands::train(&TrainOptions {
                dataset: args.dataset,
                variant: args.variant,
                out: args.out,
                training,
                model_config: args.model_config,
                history: args.history,
            })
            .map(drop)
        }
        Command::Evaluate {
            models,
            threshold,
            setting,
            report,
            predictions,
        } => commands::evaluate(&EvaluateOptions {
            dataset: models.dataset,
            dir_ckpt: models.dir_ckpt,
            time_ckpt: models.time_ckpt,
            threshold,
            setting,
            report,
            predictions,
        })
        .map(drop),
        Command::Curve {
            models,
            thresholds,
            out,
        } => commands::curve(&CurveOptions {
            dataset: models.dataset,
            dir_ckpt: models.dir_ckpt,
            time_ckpt: models.time_ckpt,
            thresholds,
            out,
        })
        .map(drop),
        Command::Defend {
            corpus,
            rho_out,
            rho_in,
            pad_multiple,
            out,
            overhead_report,
        } => commands::defend(&DefendOptions {
            corpus,
            config: DefenseConfig {
                rho_out,
                rho_in,
                pad_multiple,
            },
            out,
            overhead_report,
        })
        .map(drop),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CommandError::Usage(msg)) => Cli::command()
            .error(clap::error::ErrorKind::ArgumentConflict, msg)
            .exit(),
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
