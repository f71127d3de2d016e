//! Direct photometric frame-to-keyframe tracking.
//!
//! The residual at a selected keyframe pixel `u` is
//! `e(u) = I_r(u) − I_t(π(T·π⁻¹(u, D(u))))` with `T` mapping keyframe
//! coordinates into the tracking camera. Poses are refined by Huber-weighted
//! Gauss-Newton over a left-multiplied twist, coarse to fine.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, RowVector6, SymmetricEigen, Vector2, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::imaging::{build_pyramid, ImageBuffer, ImageError, MAX_CHANNELS, DEFAULT_DEPTH_SCALE};
use crate::keyframe::{ColorMode, Keyframe, KeyframeLevel, KeyframeParams};
use crate::se3::{point_pose_jacobian, Pose, Twist};

/// Eigenvalue ratio beyond which the damped normal equations count as singular.
const MAX_CONDITION: f64 = 1e12;
const DAMPING: f64 = 1e-6;
/// Levels with fewer usable pixels than this are skipped.
const MIN_LEVEL_PIXELS: usize = 12;
/// Pixels per parallel work unit; results are concatenated in order, so the
/// outcome does not depend on the thread count.
const CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("no selected pixel warps into the tracking image")]
    NoValidPixels,
    #[error("normal equations are singular (condition {0:e})")]
    SingularNormalEquations(f64),
    #[error("non-finite cost")]
    NonFiniteCost,
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Where the image gradient in the residual Jacobian comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientSource {
    /// Precomputed keyframe gradients at the reference pixel (small-motion
    /// approximation; nothing is recomputed per iteration).
    Keyframe,
    /// Exact gradient of the interpolated tracking image at the warped
    /// location.
    Warped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub pyramid_levels: usize,
    /// Huber threshold on normalized residuals `|e|/σ`.
    pub huber_delta: f64,
    pub max_iterations_per_level: usize,
    pub step_norm_tolerance: f64,
    pub relative_cost_tolerance: f64,
    pub gradient_threshold: f64,
    pub image_noise_sigma: f64,
    /// `σ_z = k·z²`, k in 1/m.
    pub depth_noise_coeff: f64,
    pub min_inlier_ratio: f64,
    pub min_selected_pixels: usize,
    /// A residual is an inlier when `|e|/σ` is at most this.
    pub inlier_threshold: f64,
    pub color: ColorMode,
    pub gradient_source: GradientSource,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            pyramid_levels: 4,
            huber_delta: 0.1,
            max_iterations_per_level: 30,
            step_norm_tolerance: 1e-8,
            relative_cost_tolerance: 1e-6,
            gradient_threshold: 0.02,
            image_noise_sigma: 0.02,
            depth_noise_coeff: 0.0025,
            min_inlier_ratio: 0.25,
            min_selected_pixels: 200,
            inlier_threshold: 2.5,
            color: ColorMode::Gray,
            gradient_source: GradientSource::Keyframe,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        let positive = [
            (self.huber_delta, "huber_delta must be positive"),
            (self.step_norm_tolerance, "step_norm_tolerance must be positive"),
            (self.relative_cost_tolerance, "relative_cost_tolerance must be positive"),
            (self.gradient_threshold, "gradient_threshold must be positive"),
            (self.image_noise_sigma, "image_noise_sigma must be positive"),
            (self.depth_noise_coeff, "depth_noise_coeff must be positive"),
            (self.min_inlier_ratio, "min_inlier_ratio must be positive"),
            (self.inlier_threshold, "inlier_threshold must be positive"),
        ];
        for (value, msg) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(TrackError::InvalidConfig(msg));
            }
        }
        if self.pyramid_levels == 0 {
            return Err(TrackError::InvalidConfig("pyramid_levels must be at least 1"));
        }
        if self.max_iterations_per_level == 0 {
            return Err(TrackError::InvalidConfig("max_iterations_per_level must be at least 1"));
        }
        if self.min_selected_pixels == 0 {
            return Err(TrackError::InvalidConfig("min_selected_pixels must be at least 1"));
        }
        Ok(())
    }

    /// Keyframe preparation settings implied by this configuration.
    pub fn keyframe_params(&self, depth_scale: f64) -> KeyframeParams {
        KeyframeParams {
            pyramid_levels: self.pyramid_levels,
            gradient_threshold: self.gradient_threshold,
            depth_noise_coeff: self.depth_noise_coeff,
            color: self.color,
            depth_scale,
        }
    }

    pub fn default_keyframe_params(&self) -> KeyframeParams {
        self.keyframe_params(DEFAULT_DEPTH_SCALE)
    }

    /// Huber threshold on normalized residuals.
    fn huber_k(&self) -> f64 {
        self.huber_delta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    NonPositiveDepth,
    OutOfBounds,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpedPixel {
    /// Position in the level's selected-pixel list.
    pub source: usize,
    pub pixel: Vector2<f64>,
    /// Point in the tracking camera frame.
    pub point: Vector3<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Warp {
    pub warped: Vec<WarpedPixel>,
    pub dropped: Vec<(usize, DropReason)>,
}

/// Warps a level's selected keyframe pixels into the tracking camera.
pub fn warp_pixels(keyframe: &Keyframe, pose: &Pose, level: usize) -> Warp {
    let lvl = &keyframe.levels[level];
    let mut out = Warp::default();
    for (source, sp) in lvl.pixels.iter().enumerate() {
        match warp_one(&lvl.intrinsics, pose, &sp.point) {
            Ok((pixel, point)) => out.warped.push(WarpedPixel { source, pixel, point }),
            Err(reason) => out.dropped.push((source, reason)),
        }
    }
    out
}

#[inline]
fn warp_one(k: &CameraIntrinsics, pose: &Pose, p: &Vector3<f64>) -> Result<(Vector2<f64>, Vector3<f64>), DropReason> {
    let q = pose.act(p);
    let (pixel, _) = k.project(&q).map_err(|_| DropReason::NonPositiveDepth)?;
    if !k.contains(pixel.x, pixel.y) {
        return Err(DropReason::OutOfBounds);
    }
    Ok((pixel, q))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residual {
    /// Row-major pixel index within the level.
    pub pixel: usize,
    pub channel: usize,
    pub value: f64,
    /// `∂e/∂ξ` for `T ← exp(ξ)·T`.
    pub jacobian: RowVector6<f64>,
    /// `σ_I² + J_D·σ_D²·J_D`.
    pub variance: f64,
    /// In (0, 1]; exactly 1 inside the Huber threshold.
    pub huber_weight: f64,
}

impl Residual {
    #[inline]
    pub fn normalized(&self) -> f64 {
        self.value / self.variance.sqrt()
    }
}

/// Tracking image pyramid in the channels the tracker compares.
#[derive(Clone, Debug)]
pub struct TrackingFrame {
    levels: Vec<ImageBuffer>,
    warped_gradients: bool,
}

impl TrackingFrame {
    /// `img` must already be appearance-transformed.
    pub fn new(img: &ImageBuffer, k: &CameraIntrinsics, cfg: &TrackerConfig) -> Result<Self, TrackError> {
        let img = cfg.color.convert(img);
        let pyramid = build_pyramid(&img, k, cfg.pyramid_levels)?;
        let levels: Vec<ImageBuffer> = pyramid.levels().iter().map(|(i, _)| i.clone()).collect();
        Ok(TrackingFrame {
            levels,
            warped_gradients: cfg.gradient_source == GradientSource::Warped,
        })
    }

    pub fn image(&self, level: usize) -> &ImageBuffer {
        &self.levels[level]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

fn check_compatible(keyframe: &Keyframe, frame: &TrackingFrame, level: usize) -> Result<(), TrackError> {
    let lvl = keyframe.levels.get(level).ok_or(TrackError::InvalidConfig("level outside the keyframe pyramid"))?;
    let img = frame
        .levels
        .get(level)
        .ok_or(TrackError::InvalidConfig("level outside the tracking pyramid"))?;
    if img.width() != lvl.image.width() || img.height() != lvl.image.height() || img.channels() != lvl.image.channels()
    {
        return Err(ImageError::DimensionMismatch(format!(
            "tracking level {level} is {}x{}x{}, keyframe is {}x{}x{}",
            img.width(),
            img.height(),
            img.channels(),
            lvl.image.width(),
            lvl.image.height(),
            lvl.image.channels()
        ))
        .into());
    }
    Ok(())
}

/// Residuals at one pyramid level; dropped pixels contribute nothing.
pub fn compute_residuals(
    keyframe: &Keyframe,
    frame: &TrackingFrame,
    pose: &Pose,
    level: usize,
    cfg: &TrackerConfig,
) -> Result<Vec<Residual>, TrackError> {
    check_compatible(keyframe, frame, level)?;
    let residuals = residuals_unchecked(keyframe, frame, pose, level, cfg);
    if residuals.is_empty() {
        return Err(TrackError::NoValidPixels);
    }
    Ok(residuals)
}

fn residuals_unchecked(
    keyframe: &Keyframe,
    frame: &TrackingFrame,
    pose: &Pose,
    level: usize,
    cfg: &TrackerConfig,
) -> Vec<Residual> {
    let lvl = &keyframe.levels[level];
    let img = &frame.levels[level];
    let warped_grads = frame.warped_gradients;
    let sigma_i2 = cfg.image_noise_sigma * cfg.image_noise_sigma;
    let k_huber = cfg.huber_k();
    let rotation = *pose.rotation();
    lvl.pixels
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut out = Vec::with_capacity(chunk.len() * img.channels());
            for sp in chunk {
                push_pixel_residuals(&mut out, lvl, img, warped_grads, pose, &rotation, sp, sigma_i2, k_huber);
            }
            out
        })
        .collect::<Vec<_>>()
        .concat()
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn push_pixel_residuals(
    out: &mut Vec<Residual>,
    lvl: &KeyframeLevel,
    img: &ImageBuffer,
    warped_grads: bool,
    pose: &Pose,
    rotation: &Matrix3<f64>,
    sp: &crate::keyframe::SelectedPixel,
    sigma_i2: f64,
    k_huber: f64,
) {
    let k = &lvl.intrinsics;
    let Ok((pixel, q)) = warp_one(k, pose, &sp.point) else {
        return;
    };
    let Ok(sampled) = img.sample_bilinear(pixel.x, pixel.y) else {
        return;
    };
    let Ok(j_proj) = k.projection_jacobian(&q) else {
        return;
    };
    let j_pose = j_proj * point_pose_jacobian(pose, &sp.point);
    let j_depth = j_proj * (rotation * sp.ray);
    let (u, v) = (sp.index % lvl.image.width(), sp.index / lvl.image.width());
    let warped: [(f64, f64); MAX_CHANNELS] = if warped_grads {
        match img.bilinear_gradient(pixel.x, pixel.y) {
            Ok(g) => g,
            Err(_) => return,
        }
    } else {
        [(0.0, 0.0); MAX_CHANNELS]
    };
    for c in 0..img.channels() {
        let (gu, gv) = if warped_grads {
            warped[c]
        } else {
            (lvl.gradients.du(u, v, c), lvl.gradients.dv(u, v, c))
        };
        let value = lvl.image.get(u, v, c) - sampled[c];
        let jacobian = -(j_pose.row(0) * gu + j_pose.row(1) * gv);
        let jd = -(j_depth.x * gu + j_depth.y * gv) * sp.depth_sigma;
        let variance = sigma_i2 + jd * jd;
        let r = value.abs() / variance.sqrt();
        out.push(Residual {
            pixel: sp.index,
            channel: c,
            value,
            jacobian,
            variance,
            huber_weight: if r <= k_huber { 1.0 } else { k_huber / r },
        });
    }
}

/// Mean Huber cost of normalized residuals.
fn robust_cost(residuals: &[Residual], k: f64) -> f64 {
    if residuals.is_empty() {
        return f64::INFINITY;
    }
    let total: f64 = residuals
        .iter()
        .map(|r| {
            let a = r.normalized().abs();
            if a <= k {
                0.5 * a * a
            } else {
                k * (a - 0.5 * k)
            }
        })
        .sum();
    total / residuals.len() as f64
}

/// Solves the damped weighted normal equations for the Gauss-Newton step.
fn gauss_newton_step(residuals: &[Residual], rotation_only: bool) -> Result<Vector6<f64>, TrackError> {
    let mut h = Matrix6::<f64>::zeros();
    let mut b = Vector6::<f64>::zeros();
    for r in residuals {
        let w = r.huber_weight / r.variance;
        let jt = r.jacobian.transpose();
        h += jt * r.jacobian * w;
        b += jt * (r.value * w);
    }
    if rotation_only {
        let hr = DMatrix::from_iterator(3, 3, h.fixed_view::<3, 3>(3, 3).iter().copied());
        let br = DVector::from_iterator(3, b.fixed_rows::<3>(3).iter().copied());
        let step = solve_damped(hr, br)?;
        Ok(Vector6::new(0.0, 0.0, 0.0, step[0], step[1], step[2]))
    } else {
        let step = solve_damped(DMatrix::from_iterator(6, 6, h.iter().copied()), DVector::from_iterator(6, b.iter().copied()))?;
        Ok(Vector6::from_iterator(step.iter().copied()))
    }
}

fn solve_damped(mut h: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>, TrackError> {
    let n = h.nrows();
    let lambda = DAMPING * h.trace() / n as f64;
    for i in 0..n {
        h[(i, i)] += lambda;
    }
    if !h.iter().chain(b.iter()).all(|x| x.is_finite()) {
        return Err(TrackError::NonFiniteCost);
    }
    let eig = SymmetricEigen::new(h.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(TrackError::SingularNormalEquations(if lo > 0.0 { hi / lo } else { f64::INFINITY }));
    }
    let chol = h.cholesky().ok_or(TrackError::SingularNormalEquations(hi / lo))?;
    Ok(-chol.solve(&b))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelSolution {
    pub pose: Pose,
    pub cost: f64,
    pub iterations: usize,
    /// False when the iteration cap was reached.
    pub converged: bool,
}

/// Huber IRLS Gauss-Newton at one level. A step that increases the robust
/// cost is halved up to four times; if it still does, the level ends.
pub fn solve_level(
    keyframe: &Keyframe,
    frame: &TrackingFrame,
    initial_pose: &Pose,
    level: usize,
    rotation_only: bool,
    cfg: &TrackerConfig,
) -> Result<LevelSolution, TrackError> {
    let k = cfg.huber_k();
    let mut pose = *initial_pose;
    let mut residuals = compute_residuals(keyframe, frame, &pose, level, cfg)?;
    let mut cost = robust_cost(&residuals, k);
    if !cost.is_finite() {
        return Err(TrackError::NonFiniteCost);
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations_per_level {
        iterations += 1;
        let step = gauss_newton_step(&residuals, rotation_only)?;
        if step.norm() < cfg.step_norm_tolerance {
            converged = true;
            break;
        }
        let mut scale = 1.0;
        let (candidate, cand_residuals, cand_cost) = loop {
            let candidate = Twist(step * scale).exp() * pose;
            let cand_residuals = residuals_unchecked(keyframe, frame, &candidate, level, cfg);
            let cand_cost = robust_cost(&cand_residuals, k);
            if cand_cost.is_nan() {
                return Err(TrackError::NonFiniteCost);
            }
            if cand_cost <= cost || scale < 0.1 {
                break (candidate, cand_residuals, cand_cost);
            }
            scale *= 0.5;
        };
        if !(cand_cost <= cost) {
            converged = true;
            break;
        }
        let decrease = (cost - cand_cost) / cost.max(f64::MIN_POSITIVE);
        pose = candidate;
        residuals = cand_residuals;
        cost = cand_cost;
        if decrease < cfg.relative_cost_tolerance {
            converged = true;
            break;
        }
    }
    Ok(LevelSolution {
        pose,
        cost,
        iterations,
        converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackStatus {
    Converged,
    MaxIterations,
    Lost,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    /// Tracking-from-keyframe.
    pub pose: Pose,
    pub status: TrackStatus,
    pub final_cost: f64,
    pub inlier_ratio: f64,
    /// Indexed by level, 0 = finest.
    pub iterations_per_level: Vec<usize>,
    pub selected_pixels: usize,
}

/// Tracks a prepared frame against a keyframe, coarsest level first. The
/// coarsest level (when there is more than one) only refines rotation.
pub fn track_prepared(keyframe: &Keyframe, frame: &TrackingFrame, initial_pose: &Pose, cfg: &TrackerConfig) -> TrackResult {
    let nlevels = keyframe.levels.len().min(frame.len());
    let selected = keyframe.levels.first().map_or(0, |l| l.pixels.len() * l.image.channels());
    let mut iterations = vec![0; nlevels];
    let lost = |iterations: Vec<usize>, cost: f64, inliers: f64| TrackResult {
        pose: *initial_pose,
        status: TrackStatus::Lost,
        final_cost: cost,
        inlier_ratio: inliers,
        iterations_per_level: iterations,
        selected_pixels: selected,
    };
    if nlevels == 0 || keyframe.levels[0].pixels.len() < cfg.min_selected_pixels {
        return lost(iterations, f64::NAN, 0.0);
    }
    if (0..nlevels).any(|l| check_compatible(keyframe, frame, l).is_err()) {
        return lost(iterations, f64::NAN, 0.0);
    }

    let mut pose = *initial_pose;
    let mut finest_converged = true;
    let mut final_cost = f64::NAN;
    for level in (0..nlevels).rev() {
        if level > 0 && keyframe.levels[level].pixels.len() < MIN_LEVEL_PIXELS {
            continue;
        }
        let rotation_only = nlevels > 1 && level == nlevels - 1;
        match solve_level(keyframe, frame, &pose, level, rotation_only, cfg) {
            Ok(sol) => {
                pose = sol.pose;
                iterations[level] = sol.iterations;
                if level == 0 {
                    finest_converged = sol.converged;
                    final_cost = sol.cost;
                }
            }
            Err(_) => return lost(iterations, f64::NAN, 0.0),
        }
    }

    let residuals = residuals_unchecked(keyframe, frame, &pose, 0, cfg);
    let inliers = residuals
        .iter()
        .filter(|r| r.normalized().abs() <= cfg.inlier_threshold)
        .count();
    let inlier_ratio = inliers as f64 / selected as f64;
    if !final_cost.is_finite() || inlier_ratio < cfg.min_inlier_ratio {
        return lost(iterations, final_cost, inlier_ratio);
    }
    TrackResult {
        pose,
        status: if finest_converged {
            TrackStatus::Converged
        } else {
            TrackStatus::MaxIterations
        },
        final_cost,
        inlier_ratio,
        iterations_per_level: iterations,
        selected_pixels: selected,
    }
}

/// Builds the tracking pyramid for `tracking_img` and tracks it.
pub fn track_frame(
    keyframe: &Keyframe,
    tracking_img: &ImageBuffer,
    initial_pose: &Pose,
    cfg: &TrackerConfig,
) -> Result<TrackResult, TrackError> {
    let frame = TrackingFrame::new(tracking_img, keyframe.intrinsics(), cfg)?;
    Ok(track_prepared(keyframe, &frame, initial_pose, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::DepthMap;
    use crate::keyframe::KeyframeParams;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(80.0, 80.0, 39.5, 29.5, 80, 60).unwrap()
    }

    fn texture(u: f64, v: f64) -> f64 {
        0.35 + 0.12 * (0.45 * u).sin() * (0.38 * v + 0.3).cos() + 0.08 * (0.21 * u - 0.33 * v).sin()
    }

    fn keyframe(cfg: &TrackerConfig) -> Keyframe {
        let img = ImageBuffer::from_fn(80, 60, 1, |u, v, _| texture(u as f64, v as f64));
        let depth = DepthMap::constant(80, 60, 2.0);
        let params = KeyframeParams {
            pyramid_levels: cfg.pyramid_levels,
            ..cfg.default_keyframe_params()
        };
        Keyframe::new(0, Pose::identity(), "000000", &img, &depth, &k(), &params).unwrap()
    }

    fn cfg() -> TrackerConfig {
        TrackerConfig {
            pyramid_levels: 3,
            min_selected_pixels: 50,
            ..Default::default()
        }
    }

    #[test]
    fn identity_warp_is_exact() {
        let cfg = cfg();
        let kf = keyframe(&cfg);
        let warp = warp_pixels(&kf, &Pose::identity(), 0);
        assert!(warp.dropped.is_empty());
        for w in &warp.warped {
            assert!((w.pixel - kf.levels[0].pixels[w.source].pixel).norm() < 1e-9);
        }
    }

    #[test]
    fn forward_motion_pushes_pixels_outward() {
        let cfg = cfg();
        let kf = keyframe(&cfg);
        let toward = Pose::from_translation(Vector3::new(0.0, 0.0, -0.5));
        let warp = warp_pixels(&kf, &toward, 0);
        let kk = k();
        for w in warp.warped.iter().take(50) {
            let src = kf.levels[0].pixels[w.source].pixel;
            let before = (src - Vector2::new(kk.cu, kk.cv)).norm();
            let after = (w.pixel - Vector2::new(kk.cu, kk.cv)).norm();
            assert!(after >= before);
        }
    }

    #[test]
    fn points_behind_camera_are_dropped() {
        let cfg = cfg();
        let kf = keyframe(&cfg);
        let behind = Pose::from_translation(Vector3::new(0.0, 0.0, -3.0));
        let warp = warp_pixels(&kf, &behind, 0);
        assert!(warp.warped.is_empty());
        assert!(warp.dropped.iter().all(|(_, r)| *r == DropReason::NonPositiveDepth));
    }

    #[test]
    fn residual_signs_and_variance() {
        let cfg = cfg();
        let kf = keyframe(&cfg);
        let same = TrackingFrame::new(kf.image(), &k(), &cfg).unwrap();
        let rs = compute_residuals(&kf, &same, &Pose::identity(), 0, &cfg).unwrap();
        assert!(rs.iter().all(|r| r.value == 0.0 && r.huber_weight == 1.0));
        // At the reference pose the depth direction is the viewing ray, which
        // projects to a point, so only image noise remains.
        assert!(rs.iter().all(|r| (r.variance - 0.02 * 0.02).abs() < 1e-15));

        let brighter = TrackingFrame::new(&kf.image().map(|x| x + 0.1), &k(), &cfg).unwrap();
        let rs = compute_residuals(&kf, &brighter, &Pose::identity(), 0, &cfg).unwrap();
        assert!(rs.iter().all(|r| (r.value + 0.1).abs() < 1e-12));
    }

    #[test]
    fn variance_includes_depth_term_off_reference() {
        let cfg = cfg();
        let kf = keyframe(&cfg);
        let frame = TrackingFrame::new(kf.image(), &k(), &cfg).unwrap();
        let pose = Pose::from_translation(Vector3::new(0.05, 0.0, 0.0));
        let rs = compute_residuals(&kf, &frame, &pose, 0, &cfg).unwrap();
        let r = rs[rs.len() / 2];
        let lvl = &kf.levels[0];
        let sp = lvl.pixels.iter().find(|p| p.index == r.pixel).unwrap();
        let q = pose.act(&sp.point);
        let jd = k().projection_jacobian(&q).unwrap() * sp.ray;
        let (u, v) = (r.pixel % 80, r.pixel / 80);
        let g = jd.x * lvl.gradients.du(u, v, 0) + jd.y * lvl.gradients.dv(u, v, 0);
        let expected = 0.02f64.powi(2) + g * g * sp.depth_sigma * sp.depth_sigma;
        assert!((r.variance - expected).abs() < 1e-15);
        assert!(r.variance > 0.02f64.powi(2));
    }

    #[test]
    fn nothing_in_view_is_an_error() {
        let cfg = cfg();
        let kf = keyframe(&cfg);
        let frame = TrackingFrame::new(kf.image(), &k(), &cfg).unwrap();
        let away = Pose::from_translation(Vector3::new(50.0, 0.0, 0.0));
        assert!(matches!(
            compute_residuals(&kf, &frame, &away, 0, &cfg),
            Err(TrackError::NoValidPixels)
        ));
    }

    #[test]
    fn self_tracking_is_exact() {
        let cfg = cfg();
        let kf = keyframe(&cfg);
        let r = track_frame(&kf, kf.image(), &Pose::identity(), &cfg).unwrap();
        assert_eq!(r.status, TrackStatus::Converged);
        assert!((r.pose.translation()).norm() < 1e-9);
        assert!(r.pose.rotation_angle() < 1e-9);
        assert_eq!(r.final_cost, 0.0);
        assert_eq!(r.inlier_ratio, 1.0);
    }

    #[test]
    fn recovers_small_rotation_of_plane() {
        // A fronto-parallel plane under a small rotation about the optical axis.
        let cfg = cfg();
        let kf = keyframe(&cfg);
        let truth = Pose::from_axis_angle(Vector3::z(), 0.01, Vector3::new(0.01, -0.005, 0.0));
        let kk = k();
        let inv = truth.inverse();
        let img = ImageBuffer::from_fn(80, 60, 1, |u, v, _| {
            let ray = kk.backprojection_depth_jacobian(&Vector2::new(u as f64, v as f64)).unwrap();
            // Intersect the tracking ray with the plane z = 2 in keyframe coordinates.
            let origin = inv.act(&Vector3::zeros());
            let dir = inv.rotation() * ray;
            let s = (2.0 - origin.z) / dir.z;
            let p = origin + dir * s;
            texture(kk.fu * p.x / p.z + kk.cu, kk.fv * p.y / p.z + kk.cv)
        });
        let r = track_frame(&kf, &img, &Pose::identity(), &cfg).unwrap();
        assert_ne!(r.status, TrackStatus::Lost);
        assert!((r.pose.translation() - truth.translation()).norm() < 1e-3, "{:?}", r.pose);
        assert!((r.pose.inverse() * truth).rotation_angle() < 1e-3);
    }

    #[test]
    fn unrelated_image_is_lost() {
        let cfg = cfg();
        let kf = keyframe(&cfg);
        let other = ImageBuffer::from_fn(80, 60, 1, |u, v, _| {
            let h = ((u * 7919 + v * 104_729) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40;
            0.1 + 0.8 * (h % 1000) as f64 / 1000.0
        });
        let r = track_frame(&kf, &other, &Pose::identity(), &cfg).unwrap();
        assert_eq!(r.status, TrackStatus::Lost);
        assert_eq!(r.pose, Pose::identity());
    }

    #[test]
    fn too_few_pixels_is_lost() {
        let cfg = TrackerConfig {
            min_selected_pixels: 1_000_000,
            ..cfg()
        };
        let kf = keyframe(&cfg);
        let r = track_frame(&kf, kf.image(), &Pose::identity(), &cfg).unwrap();
        assert_eq!(r.status, TrackStatus::Lost);
    }

    #[test]
    fn config_validation() {
        assert!(TrackerConfig::default().validate().is_ok());
        let bad = TrackerConfig {
            pyramid_levels: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrackerConfig {
            image_noise_sigma: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
