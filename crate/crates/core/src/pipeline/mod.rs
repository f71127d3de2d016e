//! End-to-end runs: odometry that builds a keyframe map, relocalization
//! against a stored map, and their evaluation.

pub mod config;
pub mod dataset;
pub mod eval;

use thiserror::Error;

pub use config::{ConfigError, PipelineConfig, RunConfig, StereoConfig};
pub use dataset::{
    generate_affine_conditions, write_dataset, Calibration, Dataset, DatasetError, Frame, FrameSource, RenderedSource,
    Sequence,
};
pub use eval::{evaluate, export_report, EvalError, Evaluation, EvaluationReport, FrameRecord, RunMetadata};

use crate::appearance::{AppearanceTransform, TransformError};
use crate::keyframe::{nearest_keyframe_with_hysteresis, should_create_keyframe, Keyframe, KeyframeMap, MapError};
use crate::se3::Pose;
use crate::tracker::{track_frame, TrackError, TrackStatus};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("appearance transform failed: {0}")]
    Transform(#[from] TransformError),
    #[error("keyframe map: {0}")]
    Map(#[from] MapError),
    #[error("tracking failed: {0}")]
    Track(#[from] TrackError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

impl PipelineError {
    /// True when the failure stems from bad inputs rather than from the run.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, PipelineError::Track(TrackError::NonFiniteCost))
    }
}

/// World-from-camera prediction assuming the last inter-frame motion repeats.
fn predict(prev: &Pose, prev2: &Pose) -> Pose {
    *prev * (prev2.inverse() * *prev)
}

struct Step {
    pose: Pose,
    tracked: bool,
}

/// Tracks `img` against `kf` from the world-from-camera prediction `pred`.
fn track_step(kf: &Keyframe, img: &crate::imaging::ImageBuffer, pred: &Pose, cfg: &PipelineConfig) -> Result<Step, PipelineError> {
    let init = pred.inverse() * kf.pose;
    let result = track_frame(kf, img, &init, &cfg.tracker)?;
    let pose = kf.pose * result.pose.inverse();
    let jump = (pred.inverse() * pose).translation().norm();
    let tracked = result.status != TrackStatus::Lost
        && jump < cfg.run.max_step_thresholds * cfg.keyframes.translation_m;
    Ok(if tracked {
        Step { pose, tracked }
    } else {
        Step {
            pose: *pred,
            tracked: false,
        }
    })
}

fn metadata(source: &dyn FrameSource, transform: &AppearanceTransform, cfg: &PipelineConfig) -> RunMetadata {
    RunMetadata {
        sequence: source.sequence_name().to_string(),
        condition: source.condition().to_string(),
        transform: transform.to_string(),
        config_hash: cfg.hash(),
    }
}

/// Visual odometry over `source`, starting from the first ground-truth pose.
///
/// Keyframes and live frames both pass through `transform`. A new keyframe
/// is created when the pose leaves the active keyframe's thresholds, and
/// also when a frame is lost, at the predicted pose.
pub fn run_vo(
    source: &dyn FrameSource,
    transform: &AppearanceTransform,
    cfg: &PipelineConfig,
) -> Result<(EvaluationReport, KeyframeMap), PipelineError> {
    run_vo_with(source, transform, cfg, &mut |_| {})
}

/// [`run_vo`] with a hook that may edit each keyframe right after it is
/// created, e.g. to inject controlled corruption.
pub fn run_vo_with(
    source: &dyn FrameSource,
    transform: &AppearanceTransform,
    cfg: &PipelineConfig,
    prepare: &mut dyn FnMut(&mut Keyframe),
) -> Result<(EvaluationReport, KeyframeMap), PipelineError> {
    cfg.validate()?;
    let n = source.len();
    if n == 0 {
        return Err(DatasetError::Empty(source.condition().to_string()).into());
    }
    let k = *source.intrinsics();
    let gt = source.ground_truth();
    let mut map = KeyframeMap::new(cfg.keyframes, cfg.tracker.keyframe_params(source.depth_scale()));
    let mut frames = Vec::with_capacity(n);

    let first = source.load(0)?;
    let img = transform.apply(&first.image, &first.frame_id)?;
    let mut active = map.insert(gt[0], &first.frame_id, &img, &first.depth, &k)?.id;
    prepare(map.last_mut().expect("just inserted"));
    frames.push(FrameRecord {
        timestamp: first.timestamp,
        pose: gt[0],
        tracked: true,
        keyframe_id: Some(active),
    });
    let (mut prev2, mut prev) = (gt[0], gt[0]);

    for i in 1..n {
        let frame = source.load(i)?;
        let img = transform.apply(&frame.image, &frame.frame_id)?;
        let pred = predict(&prev, &prev2);
        let kf = map.get(active).expect("active keyframe exists");
        let step = track_step(kf, &img, &pred, cfg)?;
        let tracked_against = active;
        if !step.tracked || should_create_keyframe(kf, &step.pose, &cfg.keyframes) {
            active = map.insert(step.pose, &frame.frame_id, &img, &frame.depth, &k)?.id;
            prepare(map.last_mut().expect("just inserted"));
        }
        frames.push(FrameRecord {
            timestamp: frame.timestamp,
            pose: step.pose,
            tracked: step.tracked,
            keyframe_id: step.tracked.then_some(tracked_against),
        });
        prev2 = prev;
        prev = step.pose;
    }
    let report = EvaluationReport::new(metadata(source, transform, cfg), frames, gt)?;
    Ok((report, map))
}

/// Tracks every frame of `source` against the nearest keyframe of a fixed
/// map, starting from `initial_pose` (the first ground-truth pose when
/// `None`). Only the live frames pass through `transform`; the map is
/// read-only.
pub fn run_relocalization(
    source: &dyn FrameSource,
    transform: &AppearanceTransform,
    map: &KeyframeMap,
    initial_pose: Option<Pose>,
    cfg: &PipelineConfig,
) -> Result<EvaluationReport, PipelineError> {
    cfg.validate()?;
    if map.is_empty() {
        return Err(MapError::EmptyMap.into());
    }
    if let Some(k) = map.intrinsics() {
        if k != source.intrinsics() {
            return Err(MapError::IntrinsicsMismatch {
                expected: *k,
                found: *source.intrinsics(),
            }
            .into());
        }
    }
    let gt = source.ground_truth();
    let margin = cfg.run.hysteresis_fraction * cfg.keyframes.translation_m;
    let mut frames = Vec::with_capacity(source.len());
    let mut current: Option<usize> = None;
    let start = initial_pose.unwrap_or(gt[0]);
    let (mut prev2, mut prev) = (start, start);
    for i in 0..source.len() {
        let frame = source.load(i)?;
        let img = transform.apply(&frame.image, &frame.frame_id)?;
        let pred = predict(&prev, &prev2);
        let kf = nearest_keyframe_with_hysteresis(map, &pred, current, margin)?;
        current = Some(kf.id);
        let step = track_step(kf, &img, &pred, cfg)?;
        frames.push(FrameRecord {
            timestamp: frame.timestamp,
            pose: step.pose,
            tracked: step.tracked,
            keyframe_id: step.tracked.then_some(kf.id),
        });
        prev2 = prev;
        prev = step.pose;
    }
    Ok(EvaluationReport::new(metadata(source, transform, cfg), frames, gt)?)
}
