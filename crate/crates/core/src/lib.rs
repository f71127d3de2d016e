//! Direct photometric visual odometry and keyframe relocalization for RGB-D
//! and stereo streams, with a pluggable appearance-normalization stage.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod appearance;
pub mod camera;
pub mod imaging;
pub mod keyframe;
pub mod pipeline;
pub mod se3;
pub mod synthetic;
pub mod tracker;

pub use appearance::{AffineModel, AppearanceTransform, TransformError};
pub use camera::{CameraError, CameraIntrinsics, StereoModel};
pub use imaging::{DepthMap, DisparityMap, GradientField, ImageBuffer, ImageError, Pyramid};
pub use keyframe::{ColorMode, Keyframe, KeyframeMap, KeyframeParams, KeyframeThresholds, MapError};
pub use pipeline::{
    run_relocalization, run_vo, run_vo_with, Dataset, EvaluationReport, FrameSource, PipelineConfig, PipelineError, RenderedSource,
};
pub use se3::{Pose, Twist};
pub use synthetic::{IlluminationCondition, RenderedSequence, SceneError, SceneSpec};
pub use tracker::{TrackError, TrackResult, TrackStatus, TrackerConfig, TrackingFrame};
