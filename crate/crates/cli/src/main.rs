//! `canonvo` command-line interface.

mod commands;
mod parse;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "canonvo",
    version,
    about = "Direct photometric visual odometry and keyframe relocalization with appearance normalization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run visual odometry on one condition and write the report, trajectory
    /// and keyframe map.
    Vo(VoArgs),
    /// Relocalize one condition against a stored keyframe map.
    Reloc(RelocArgs),
    /// Write `clamp(a·I + b)` copies of a condition as new conditions.
    MakeAffine(MakeAffineArgs),
    /// Render a synthetic desk dataset under several illumination conditions.
    RenderSynthetic(RenderArgs),
    /// Evaluate an estimated trajectory against ground truth.
    Eval(EvalArgs),
    /// Write error-versus-distance plot data for an estimated trajectory.
    ExportPlotData(PlotArgs),
}

#[derive(Args)]
struct SequenceArgs {
    /// Dataset root directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Condition subdirectory to read.
    #[arg(long, default_value = "static")]
    condition: String,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    sequence: SequenceArgs,
    /// identity | affine:A,B | affine:meta | external:DIR
    #[arg(long, default_value = "identity")]
    transform: String,
    /// Canonical condition name, used to locate external transform output.
    #[arg(long, default_value = "static")]
    canonical: String,
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the report files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VoArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Where to write the keyframe map (default: <out>/map).
    #[arg(long)]
    map: Option<PathBuf>,
}

#[derive(Args)]
struct RelocArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Keyframe map written by `vo`.
    #[arg(long)]
    map: PathBuf,
    /// Starting pose `tx,ty,tz,qx,qy,qz,qw` (default: first ground-truth pose).
    #[arg(long, allow_hyphen_values = true)]
    initial_pose: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// a = 1, b = 0
    Clone,
    /// a = 1.5, b = 0.1
    Light,
    /// a = 0.8, b = -0.2
    Dark,
}

#[derive(Args)]
struct MakeAffineArgs {
    /// Dataset root directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Source condition.
    #[arg(long, default_value = "static")]
    condition: String,
    /// Named presets to generate; all three when neither this nor --affine is given.
    #[arg(long = "preset", value_enum)]
    presets: Vec<Preset>,
    /// Custom condition `NAME=A,B`; may be repeated.
    #[arg(long = "affine", allow_hyphen_values = true)]
    custom: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthCondition {
    /// Fixed scene lighting.
    Static,
    /// Fast global gain/offset flicker around the static appearance.
    Flicker,
    /// Slowly drifting bright global affine change.
    Bright,
    /// A point light circling the scene.
    LocalLight,
    /// A light mounted on the camera.
    Flashlight,
}

#[derive(Args)]
struct RenderArgs {
    /// Dataset root to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "static,flicker,bright")]
    conditions: Vec<SynthCondition>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    sequence: SequenceArgs,
    /// `frames.csv` from a report, or a trajectory file (every pose counts as tracked).
    #[arg(long)]
    estimate: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    estimate: EstimateArgs,
    /// Output directory for summary.csv and frames.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    estimate: EstimateArgs,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Vo(args) => commands::vo(&args),
        Command::Reloc(args) => commands::reloc(&args),
        Command::MakeAffine(args) => commands::make_affine(&args),
        Command::RenderSynthetic(args) => commands::render_synthetic(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::ExportPlotData(args) => commands::export_plot_data(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
