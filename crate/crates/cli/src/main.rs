use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use numstr_cli::commands;
use numstr_cli::config::ExperimentConfig;
use numstr_core::error::Error;
use numstr_core::eval::ReportFormat;
use numstr_core::fusion::{FusionConfig, Pipeline};
use numstr_core::modelzoo::ClassifierKind;

/// Segmentation-free handwritten numeral string recognition.
#[derive(Parser)]
#[command(name = "numstr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic touching-string dataset splits.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one classifier (length, c1, c2, c3, c1110).
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        kind: String,
    },
    /// Evaluate recognition pipelines on the test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Pipeline name (dynamic, end-to-end, end-to-end-l) or "all"
        /// for every pipeline listed in the config.
        #[arg(long, default_value = "all")]
        pipeline: String,
        /// Format written to stdout (markdown, csv, json); all three are
        /// also written as files.
        #[arg(long, default_value = "json")]
        format: String,
    },
    /// Classify one image file.
    Predict {
        /// Directory holding the trained .nstr model files.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "dynamic")]
        pipeline: String,
        #[arg(long, default_value_t = 0.95)]
        threshold: f32,
        /// Ink convention of the input image: auto, dark (dark ink on
        /// light background), or light.
        #[arg(long, default_value = "auto")]
        ink: String,
    },
}

fn run(cli: Cli) -> numstr_core::Result<String> {
    match cli.command {
        Command::Generate { config, seed } => {
            let cfg = ExperimentConfig::load(&config, seed)?;
            let value = commands::cmd_generate(&cfg)?;
            Ok(serde_json::to_string_pretty(&value)?)
        }
        Command::Train { config, seed, kind } => {
            let cfg = ExperimentConfig::load(&config, seed)?;
            let kind = ClassifierKind::parse(&kind)?;
            let value = commands::cmd_train(&cfg, kind)?;
            Ok(serde_json::to_string_pretty(&value)?)
        }
        Command::Eval {
            config,
            seed,
            pipeline,
            format,
        } => {
            let cfg = ExperimentConfig::load(&config, seed)?;
            let pipelines: Vec<Pipeline> = if pipeline == "all" {
                cfg.pipelines
                    .iter()
                    .map(|p| Pipeline::parse(p))
                    .collect::<numstr_core::Result<_>>()?
            } else {
                vec![Pipeline::parse(&pipeline)?]
            };
            let format = ReportFormat::parse(&format)?;
            commands::cmd_eval(&cfg, &pipelines, format)
        }
        Command::Predict {
            models,
            image,
            pipeline,
            threshold,
            ink,
        } => {
            let pipeline = Pipeline::parse(&pipeline)?;
            let fusion = FusionConfig {
                threshold,
                ..FusionConfig::default()
            };
            let value = commands::cmd_predict(&models, &image, pipeline, &fusion, &ink)?;
            Ok(serde_json::to_string_pretty(&value)?)
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Usage(_) => 2,
        Error::Format { .. } | Error::Io(_) => 3,
        Error::Training { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(output) => {
            println!("{output}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
