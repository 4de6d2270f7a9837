//! `fscil`: command-line driver for few-shot class-incremental runs over
//! embedding archives.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fscil_core::classifier::HeadKind;
use fscil_core::metrics::ReportFormat;
use fscil_core::ErrorKind;

use crate::commands::{head_kind, report_format, ToleranceBreach};
use crate::config::ConfigError;

#[derive(Debug, Parser)]
#[command(name = "fscil", version, about = "Few-shot class-incremental classification over embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic embedding archive.
    Synth(SynthArgs),
    /// Run the full session protocol and write reports.
    Run(RunArgs),
    /// Final-session accuracy over a grid of N (ways) and K (shots).
    Sweep(SweepArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Re-render a JSON report.
    Report(ReportArgs),
    /// Check an archive and its manifest.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub per_class: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `random-unit` or `orthogonal`.
    #[arg(long, default_value = "random-unit")]
    pub center_rule: String,
    /// Pairwise cosine bound of the random-unit rule.
    #[arg(long, default_value_t = 0.5)]
    pub max_cosine: f64,
    /// Classes in session 0; every class when omitted.
    #[arg(long)]
    pub base_classes: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub way: usize,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = head_kind)]
    pub classifier: Option<HeadKind>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    #[arg(long)]
    pub n_way: Option<usize>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub base_epochs: Option<usize>,
    #[arg(long)]
    pub incremental_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub logit_scale: Option<f64>,
    #[arg(long)]
    pub sigma_init: Option<f64>,
    /// Report formats to write: table, csv, json.
    #[arg(long, value_delimiter = ',', value_parser = report_format)]
    pub format: Vec<ReportFormat>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub k_list: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random instances (configurations with --sigma-zero).
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub max_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub max_classes: usize,
    #[arg(long, default_value_t = 8)]
    pub max_batch: usize,
    #[arg(long)]
    pub step: Option<f64>,
    /// Check that sigma = 0 reduces to the deterministic head instead.
    #[arg(long)]
    pub sigma_zero: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, default_value = "table", value_parser = report_format)]
    pub format: ReportFormat,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub archive: PathBuf,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_IO: u8 = 3;

fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<fscil_core::Error>() {
            let code = match e.kind() {
                ErrorKind::Validation => EXIT_VALIDATION,
                ErrorKind::Runtime => EXIT_RUNTIME,
                ErrorKind::Io => EXIT_IO,
            };
            return (code, e.class_name());
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return (EXIT_VALIDATION, "ConfigError");
        }
        if cause.downcast_ref::<ToleranceBreach>().is_some() {
            return (EXIT_RUNTIME, "ToleranceError");
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (EXIT_IO, "IoError");
        }
    }
    (EXIT_RUNTIME, "RuntimeError")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Run(a) => commands::run(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Report(a) => commands::report(a),
        Command::Validate(a) => commands::validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, class) = classify(&e);
            eprintln!("error[{class}]: {e:#}");
            ExitCode::from(code)
        }
    }
}
