//! Batch CLI wiring the pipeline end to end from one config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use eta_fuse::config::RunConfig;
use eta_fuse::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(
    name = "eta-fuse",
    about = "Travel-time estimation pipeline: synthetic data, feature engineering, CNN and GBDT training, validation-weighted fusion",
    disable_version_flag = true
)]
struct Cli {
    /// Run configuration file (flat `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic trips, road network, and weather files.
    Synth,
    /// Build leakage-safe tree features for both splits (trains the
    /// transfer-source network if its model file is missing).
    Featurize,
    /// Train every configured CNN variant.
    TrainNn,
    /// Train every configured GBDT preset on the persisted features.
    TrainGbdt,
    /// Fit the two-stage ensemble weights on validation predictions.
    FitEnsemble,
    /// Re-apply saved models to the validation split.
    Predict,
    /// Write metrics.csv and report.txt (always includes the baseline row).
    Evaluate,
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let Some(path) = &cli.config else {
        return Err(PipelineError::Invalid(
            "--config <path> is required".to_string(),
        ));
    };
    let mut cfg = RunConfig::from_file(path).map_err(|e| match e {
        eta_fuse::config::ConfigError::Io { path, source } => PipelineError::Path { path, source },
        other => PipelineError::Invalid(other.to_string()),
    })?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Synth => pipeline::run_synth(&cfg),
        Command::Featurize => {
            let data = pipeline::load_data(&cfg)?;
            pipeline::run_featurize(&cfg, &data)
        }
        Command::TrainNn => {
            let data = pipeline::load_data(&cfg)?;
            pipeline::run_train_nn(&cfg, &data)
        }
        Command::TrainGbdt => pipeline::run_train_gbdt(&cfg),
        Command::FitEnsemble => pipeline::run_fit_ensemble(&cfg),
        Command::Predict => {
            let data = pipeline::load_data(&cfg)?;
            pipeline::run_predict(&cfg, &data)
        }
        Command::Evaluate => pipeline::run_evaluate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // unknown flag or malformed invocation: usage text, exit 1
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
