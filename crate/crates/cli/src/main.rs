//! `ulmv`: preprocessing, training, evaluation and audit commands.
//!
//! Exit status is 0 on success, 2 when the inputs or arguments are at fault
//! and 1 for internal failures (including failed audits).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ulmv_core::data::Grouping;

#[derive(Parser)]
#[command(name = "ulmv", version, about = "Lightweight vision-Mamba tile classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-class tile set with manifest and normalization.
    Synth(SynthArgs),
    /// Tile, filter and resize images under INPUT/{case,control} and split them.
    Preprocess(PreprocessArgs),
    /// Train a model on a preprocessed data directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Print the trainable parameter count.
    CountParams(CountArgs),
    /// Compare every backward rule and the full model against finite differences.
    Gradcheck(GradcheckArgs),
    /// Time sequential against parallel selective scans.
    ScanBench(BenchArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

#[derive(Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub tile: usize,
    #[arg(long, default_value_t = 224)]
    pub resize: usize,
    /// WHITE,SATURATION,MIN_TISSUE
    #[arg(long, default_value = "220,0.04,0.25")]
    pub roi_thresholds: String,
    /// TRAIN,VAL,TEST
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub ratios: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "source", value_parser = parse_grouping)]
    pub grouping: Grouping,
}

fn parse_grouping(s: &str) -> Result<Grouping, String> {
    s.parse::<Grouping>().map_err(|e| e.to_string())
}

#[derive(Args)]
pub struct TrainArgs {
    /// key=value file applied on top of the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory holding manifest.csv and normalization.txt.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = ulmv_core::eval::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Where the report and predictions go; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CountArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Per-module rows.
    #[arg(long)]
    pub breakdown: bool,
    /// Search the configuration grid for the count closest to the published one.
    #[arg(long)]
    pub calibrate: bool,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes the results as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Scales one op's backward rule by FACTOR (OP=FACTOR); for testing the check itself.
    #[arg(long, hide = true)]
    pub perturb: Option<String>,
    /// Skip the end-to-end model check.
    #[arg(long)]
    pub ops_only: bool,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "64,256,1024,4096")]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub d_inner: usize,
    #[arg(long, default_value_t = 16)]
    pub d_state: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    ulmv_core::parallel::init_from_env();
    let result = std::panic::catch_unwind(|| match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::CountParams(a) => commands::count_params(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::ScanBench(a) => commands::scan_bench(&a),
    });
    match result {
        Ok(Ok(code)) => code,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
        Err(_) => ExitCode::from(1),
    }
}
