mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use compslu::error::Error;

/// Compositional spoken sequence labeling: generate data, train, decode, score.
#[derive(Parser, Debug)]
#[command(name = "compslu", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic speech corpus.
    GenData(GenDataArgs),
    /// Train one of the four systems on a corpus.
    Train(TrainArgs),
    /// Run a trained system over a corpus split and dump predictions.
    Decode(DecodeArgs),
    /// Score a prediction dump against a corpus split.
    Evaluate(ScoreArgs),
    /// Error quadrants and likelihood-error correlation of a prediction dump.
    Analyze(ScoreArgs),
    /// Repeat the command recorded in a run manifest.
    Rerun {
        /// Path to a manifest.json written by an earlier run.
        manifest: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct Output {
    /// Output directory [default: $COMPSLU_OUTPUT_ROOT/<command>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "COMPSLU_OUTPUT_ROOT", default_value = "runs", hide_env_values = true)]
    pub output_root: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Corpus configuration file (key = value lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set noise=1.0.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// compositional, compositional-direct, direct or cascaded.
    pub system: String,
    /// Corpus directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Experiment configuration file (key = value lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set alpha=0.5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Checkpoint file or training output directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// beam, gold-transcript or inject:<path> (prediction dump or id<TAB>transcript lines).
    #[arg(long, default_value = "beam")]
    pub mode: String,
    #[arg(long)]
    pub beam_size: Option<usize>,
    #[arg(long)]
    pub length_penalty: Option<f64>,
    /// Decoding threads [default: available parallelism].
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Prediction dump written by decode.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub output: Output,
}

/// Exit status for each failure class.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 3,
        Error::Config(_) | Error::Parse(_) => 4,
        Error::Data(_)
        | Error::Validation(_)
        | Error::Alignment(_)
        | Error::Vocabulary(_)
        | Error::Length(_)
        | Error::Dimension(_)
        | Error::Index(_) => 5,
        Error::Checkpoint(_) => 6,
        Error::UndefinedCorrelation(_) => 7,
    }
}

pub const USAGE_EXIT: u8 = 2;

fn error_line(kind: &str, code: u8, message: &str) -> String {
    serde_json::json!({ "error": kind, "exit_code": code, "message": message }).to_string()
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let message = first.trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", USAGE_EXIT, message));
            return ExitCode::from(USAGE_EXIT);
        }
    };
    match commands::run(cli.command, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_line(e.kind(), code, &e.to_string()));
            ExitCode::from(code)
        }
    }
}
