mod bench;
mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "pace", version, about = "Photonic field prediction: data, training, evaluation and reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample devices, solve them with the FDFD oracle and write a dataset.
    Generate(GenerateArgs),
    /// Train a model (or cascade) on a dataset.
    Train(TrainArgs),
    /// Mean N-MSE of a checkpoint on one split.
    Eval(EvalArgs),
    /// Radial energy spectrum of a field.
    Spectrum(SpectrumArgs),
    /// Time FDFD solves against model forwards.
    Bench(BenchArgs),
    /// Render a training report (and optionally a spectrum) as PNG plus tidy CSV.
    ExportPlots(PlotArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Generation config JSON, or a preset name (desk_mmi, etched_mmi_3x3,
    /// etched_mmi_5x5, metaline_3x3).
    #[arg(long, default_value = "desk_mmi")]
    pub config: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of devices; each contributes one record per input port.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Store channels as f32 instead of f64.
    #[arg(long)]
    pub f32: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Architecture JSON (`{"single": {...}}` or `{"cascade": {...}}`).
    #[arg(long)]
    pub model_config: PathBuf,
    /// Training config JSON; omitted fields take their defaults.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Frozen stage-I checkpoint; trains stage II of the cascade only.
    #[arg(long)]
    pub stage1: Option<PathBuf>,
    /// Continue from `<out>/last.ckpt` if present.
    #[arg(long)]
    pub resume: bool,
    /// Stop once this many epochs are complete.
    #[arg(long)]
    pub halt_after: Option<usize>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Summary JSON output.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Per-sample CSV output (`id,nmse`).
    #[arg(long)]
    pub per_sample: Option<PathBuf>,
}

#[derive(Args)]
pub struct SpectrumArgs {
    /// Record blob file; its target field is analysed.
    #[arg(long, conflicts_with_all = ["checkpoint", "sample"])]
    pub field: Option<PathBuf>,
    /// Checkpoint whose prediction is analysed (needs --data and --sample).
    #[arg(long, requires_all = ["data", "sample"])]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Record id within --data.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Spectrum CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Grid as MxN; repeat for a sweep.
    #[arg(long = "grid", default_value = "32x64")]
    pub grids: Vec<String>,
    /// Single-stage model config JSON; a 4-block PACE model when omitted.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Directory for bench.csv and bench.md; stdout only when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// Spectrum CSV written by `pace spectrum`.
    #[arg(long)]
    pub spectrum: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Spectrum(a) => commands::spectrum(a),
        Command::Bench(a) => bench::run(a),
        Command::ExportPlots(a) => plot::export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
