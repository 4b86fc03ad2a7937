mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use duosent_core::data::CsvSchema;
use duosent_core::Variant;

/// Batch experiments for the dual-encoder sentiment model.
#[derive(Parser, Debug)]
#[command(name = "duosent", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand. Flags override the config file,
/// which overrides built-in defaults.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config with optional `model`, `train`, `data` and `ablation` sections.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling, dropout and synthetic data.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Clean, label and tokenize a review CSV; write records, statistics and an integrity report.
    Preprocess {
        input: PathBuf,
        #[arg(long, value_parser = parse_schema, default_value = "generic")]
        schema: CsvSchema,
        /// Exit successfully even when the integrity check finds violations.
        #[arg(long)]
        allow_dirty: bool,
    },
    /// Generate a synthetic labeled corpus.
    Synth {
        #[arg(long, value_name = "N")]
        count: Option<usize>,
        #[arg(long, value_name = "N")]
        vocab: Option<usize>,
    },
    /// Train one variant and score it on the held-out split.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a saved checkpoint.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Score every record instead of the held-out split.
        #[arg(long)]
        all_records: bool,
    },
    /// Retrain every ablation variant from scratch and tabulate them.
    Ablate {
        /// Record file; overrides `data.records`.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every block and the full loss.
    Gradcheck {
        /// Fail when any relative error reaches this value (default: per-component tolerances).
        #[arg(long, value_name = "FLOAT")]
        threshold: Option<f64>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Record file; overrides `data.records`.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
}

fn parse_schema(s: &str) -> Result<CsvSchema, String> {
    s.parse().map_err(|e: duosent_core::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: duosent_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
