use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use canonvo::keyframe::{load_map, save_map};
use canonvo::pipeline::dataset::{read_trajectory, write_trajectory};
use canonvo::pipeline::eval::{self, read_frames_csv};
use canonvo::pipeline::{
    export_report, generate_affine_conditions, run_relocalization, run_vo, write_dataset, Dataset, DatasetError,
    EvaluationReport, FrameRecord, FrameSource, PipelineConfig, PipelineError, RunMetadata, Sequence,
};
use canonvo::synthetic::{render_named, IlluminationCondition, SceneSpec};

use crate::{parse, EstimateArgs, EvalArgs, MakeAffineArgs, PlotArgs, Preset, RelocArgs, RenderArgs, RunArgs, SequenceArgs, SynthCondition, VoArgs};

/// A failed command: bad inputs exit with 1, anything else with 2.
pub enum Failure {
    Input(String),
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Internal(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

fn input(e: impl fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

fn internal(e: impl fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

fn dataset_failure(e: DatasetError) -> Failure {
    match e {
        DatasetError::Io { .. } => internal(e),
        _ => input(e),
    }
}

type Outcome = Result<(), Failure>;

fn config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        Some(p) => PipelineConfig::load(p).map_err(input),
        None => Ok(PipelineConfig::default()),
    }
}

fn open(args: &SequenceArgs, cfg: &PipelineConfig) -> Result<Sequence, Failure> {
    Dataset::open(&args.dataset)
        .map_err(input)?
        .sequence(&args.condition, &cfg.stereo)
        .map_err(input)
}

fn print_summary(report: &EvaluationReport) {
    let e = &report.evaluation;
    let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} / {} [{}]: tracked {}/{} ({:.1}%), trans err {}% dist, rot err {} deg/m",
        report.meta.sequence,
        report.meta.condition,
        report.meta.transform,
        e.frames_tracked,
        e.frames_total,
        e.tracked_pct(),
        fmt(e.avg_trans_err_pct),
        fmt(e.avg_rot_err_deg_per_m)
    );
}

fn write_outputs(report: &EvaluationReport, out: &Path) -> Outcome {
    export_report(report, out).map_err(internal)?;
    let traj: Vec<_> = report.frames.iter().map(|f| (f.timestamp, f.pose)).collect();
    write_trajectory(&out.join("trajectory.txt"), &traj).map_err(internal)
}

fn prepare(run: &RunArgs) -> Result<(PipelineConfig, Sequence, canonvo::AppearanceTransform), Failure> {
    let cfg = config(run.config.as_deref())?;
    let seq = open(&run.sequence, &cfg)?;
    let transform = parse::transform(&run.transform, &seq, &run.canonical).map_err(Failure::Input)?;
    Ok((cfg, seq, transform))
}

pub fn vo(args: &VoArgs) -> Outcome {
    let (cfg, seq, transform) = prepare(&args.run)?;
    let (report, map) = run_vo(&seq, &transform, &cfg)?;
    write_outputs(&report, &args.run.out)?;
    let map_dir = args.map.clone().unwrap_or_else(|| args.run.out.join("map"));
    save_map(&map, &map_dir).map_err(internal)?;
    print_summary(&report);
    println!("{} keyframes written to {}", map.len(), map_dir.display());
    Ok(())
}

pub fn reloc(args: &RelocArgs) -> Outcome {
    let (cfg, seq, transform) = prepare(&args.run)?;
    let map = load_map(&args.map).map_err(input)?;
    let initial = args
        .initial_pose
        .as_deref()
        .map(parse::pose)
        .transpose()
        .map_err(Failure::Input)?;
    let report = run_relocalization(&seq, &transform, &map, initial, &cfg)?;
    write_outputs(&report, &args.run.out)?;
    print_summary(&report);
    Ok(())
}

pub fn make_affine(args: &MakeAffineArgs) -> Outcome {
    let mut params: Vec<(String, f64, f64)> = args
        .presets
        .iter()
        .map(|p| match p {
            Preset::Clone => ("clone".to_string(), 1.0, 0.0),
            Preset::Light => ("light".to_string(), 1.5, 0.1),
            Preset::Dark => ("dark".to_string(), 0.8, -0.2),
        })
        .collect();
    for c in &args.custom {
        params.push(parse::affine_condition(c).map_err(Failure::Input)?);
    }
    if params.is_empty() {
        params = vec![
            ("clone".to_string(), 1.0, 0.0),
            ("light".to_string(), 1.5, 0.1),
            ("dark".to_string(), 0.8, -0.2),
        ];
    }
    if let Some((name, ..)) = params.iter().find(|(name, ..)| *name == args.condition) {
        return Err(input(format!("condition {name:?} would overwrite its own source")));
    }
    let written = generate_affine_conditions(&args.dataset, &args.condition, &params).map_err(dataset_failure)?;
    for dir in written {
        println!("wrote {}", dir.display());
    }
    Ok(())
}

pub fn render_synthetic(args: &RenderArgs) -> Outcome {
    if args.frames < 2 {
        return Err(input("at least 2 frames are needed"));
    }
    if args.conditions.is_empty() {
        return Err(input("no conditions requested"));
    }
    let spec = SceneSpec::desk(args.frames, args.seed);
    let mut sequences = Vec::new();
    for c in &args.conditions {
        let (cond, name) = match c {
            SynthCondition::Static => (IlluminationCondition::Static, "static"),
            SynthCondition::Flicker => (IlluminationCondition::flicker(), "flicker"),
            SynthCondition::Bright => (IlluminationCondition::bright_drift(), "bright"),
            SynthCondition::LocalLight => (IlluminationCondition::circling_light(), "local-light"),
            SynthCondition::Flashlight => (IlluminationCondition::flashlight(), "flashlight"),
        };
        if sequences.iter().any(|s: &canonvo::RenderedSequence| s.name == name) {
            continue;
        }
        sequences.push(render_named(&spec, &cond, name).map_err(input)?);
        println!("rendered {name}");
    }
    write_dataset(&args.out, &sequences).map_err(dataset_failure)?;
    println!("dataset written to {}", args.out.display());
    Ok(())
}

fn estimate_report(args: &EstimateArgs) -> Result<EvaluationReport, Failure> {
    let seq = open(&args.sequence, &PipelineConfig::default())?;
    let path: &PathBuf = &args.estimate;
    let frames = if path.extension().is_some_and(|e| e == "csv") {
        read_frames_csv(path).map_err(input)?
    } else {
        read_trajectory(path)
            .map_err(input)?
            .into_iter()
            .map(|(timestamp, pose)| FrameRecord {
                timestamp,
                pose,
                tracked: true,
                keyframe_id: None,
            })
            .collect()
    };
    let meta = RunMetadata {
        sequence: seq.sequence_name().to_string(),
        condition: seq.condition().to_string(),
        transform: format!(
            "estimate:{}",
            path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
        ),
        config_hash: String::new(),
    };
    EvaluationReport::new(meta, frames, seq.ground_truth()).map_err(input)
}

pub fn eval(args: &EvalArgs) -> Outcome {
    let report = estimate_report(&args.estimate)?;
    fs::create_dir_all(&args.out).map_err(internal)?;
    export_report(&report, &args.out).map_err(internal)?;
    print_summary(&report);
    Ok(())
}

pub fn export_plot_data(args: &PlotArgs) -> Outcome {
    let report = estimate_report(&args.estimate)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(internal)?;
    }
    eval::export_plot_data(&report, &args.out).map_err(internal)?;
    println!("plot data written to {}", args.out.display());
    Ok(())
}
