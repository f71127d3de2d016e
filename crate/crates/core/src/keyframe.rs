//! Keyframes, the keyframe map, and map persistence.

use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraIntrinsics};
use crate::imaging::{
    build_pyramid, downsample_depth, gradients, load_depth_png, load_image_png, save_depth_png, save_image_png,
    select_pixels, DepthMap, GradientField, ImageBuffer, ImageError, DEFAULT_DEPTH_SCALE,
};
use crate::se3::Pose;

pub const MAP_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.txt";
const POSE_RECORD_BYTES: usize = 7 * 8;

#[derive(Debug, Error)]
pub enum KeyframeError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("keyframe map is empty")]
    EmptyMap,
    #[error("i/o failure at {path}: {reason}")]
    IoFailure { path: String, reason: String },
    #[error("map format version {found:?} is not supported (expected {MAP_FORMAT_VERSION})")]
    FormatVersionMismatch { found: Option<String> },
    #[error("keyframe intrinsics {found:?} do not match the map's {expected:?}")]
    IntrinsicsMismatch {
        expected: CameraIntrinsics,
        found: CameraIntrinsics,
    },
    #[error(transparent)]
    Keyframe(#[from] KeyframeError),
}

/// Channels the tracker compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    /// Luminance only (one residual per pixel).
    Gray,
    /// Every colour channel contributes its own residual.
    Rgb,
}

impl ColorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ColorMode::Gray => "gray",
            ColorMode::Rgb => "rgb",
        }
    }

    /// Converts an input image to the channels this mode tracks on.
    pub fn convert(&self, img: &ImageBuffer) -> ImageBuffer {
        match self {
            ColorMode::Gray if img.channels() == 3 => img.to_luminance(),
            _ => img.clone(),
        }
    }
}

/// Everything needed to derive a keyframe's per-level data from its
/// full-resolution image and depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyframeParams {
    pub pyramid_levels: usize,
    pub gradient_threshold: f64,
    /// `σ_z = k·z²`.
    pub depth_noise_coeff: f64,
    pub color: ColorMode,
    /// Depth quantization step in meters; keyframe depth is stored on this grid.
    pub depth_scale: f64,
}

impl Default for KeyframeParams {
    fn default() -> Self {
        KeyframeParams {
            pyramid_levels: 4,
            gradient_threshold: 0.02,
            depth_noise_coeff: 0.0025,
            color: ColorMode::Gray,
            depth_scale: DEFAULT_DEPTH_SCALE,
        }
    }
}

/// A reference pixel with valid depth and enough gradient to be tracked.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectedPixel {
    /// Row-major index within the level.
    pub index: usize,
    pub pixel: Vector2<f64>,
    /// Back-projected point in the keyframe camera frame.
    pub point: Vector3<f64>,
    /// `∂point/∂depth`.
    pub ray: Vector3<f64>,
    pub depth_sigma: f64,
}

#[derive(Clone, Debug)]
pub struct KeyframeLevel {
    pub intrinsics: CameraIntrinsics,
    pub image: ImageBuffer,
    pub depth: DepthMap,
    pub gradients: GradientField,
    pub pixels: Vec<SelectedPixel>,
}

#[derive(Clone, Debug)]
pub struct Keyframe {
    pub id: usize,
    /// World-from-keyframe.
    pub pose: Pose,
    pub source_frame: String,
    pub params: KeyframeParams,
    /// Level 0 first.
    pub levels: Vec<KeyframeLevel>,
}

impl Keyframe {
    /// Prepares a keyframe from an already appearance-transformed image.
    /// Image and depth are snapped to their storage grids first so that a
    /// saved and reloaded keyframe is identical to the original.
    pub fn new(
        id: usize,
        pose: Pose,
        source_frame: &str,
        image: &ImageBuffer,
        depth: &DepthMap,
        intrinsics: &CameraIntrinsics,
        params: &KeyframeParams,
    ) -> Result<Keyframe, KeyframeError> {
        intrinsics.validate()?;
        if depth.width() != image.width() || depth.height() != image.height() {
            return Err(ImageError::DimensionMismatch(format!(
                "image {}x{} vs depth {}x{}",
                image.width(),
                image.height(),
                depth.width(),
                depth.height()
            ))
            .into());
        }
        let image = params.color.convert(image).quantized_u16();
        let depth = depth.quantized(params.depth_scale);
        let pyramid = build_pyramid(&image, intrinsics, params.pyramid_levels)?;

        let mut levels = Vec::with_capacity(pyramid.len());
        let mut level_depth = depth;
        for (level, (img, k)) in pyramid.levels().iter().enumerate() {
            if level > 0 {
                level_depth = downsample_depth(&level_depth);
            }
            let grads = gradients(img)?;
            let w = img.width();
            let pixels = select_pixels(&grads, &level_depth, params.gradient_threshold)?
                .into_iter()
                .map(|index| {
                    let pixel = Vector2::new((index % w) as f64, (index / w) as f64);
                    let z = level_depth.get_index(index).expect("selected pixels have depth");
                    let ray = k.backprojection_depth_jacobian(&pixel)?;
                    Ok(SelectedPixel {
                        index,
                        pixel,
                        point: ray * z,
                        ray,
                        depth_sigma: params.depth_noise_coeff * z * z,
                    })
                })
                .collect::<Result<Vec<_>, CameraError>>()?;
            levels.push(KeyframeLevel {
                intrinsics: *k,
                image: img.clone(),
                depth: level_depth.clone(),
                gradients: grads,
                pixels,
            });
        }
        Ok(Keyframe {
            id,
            pose,
            source_frame: source_frame.to_string(),
            params: *params,
            levels,
        })
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.levels[0].intrinsics
    }

    /// Full-resolution tracking image.
    pub fn image(&self) -> &ImageBuffer {
        &self.levels[0].image
    }

    pub fn depth(&self) -> &DepthMap {
        &self.levels[0].depth
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframeThresholds {
    pub translation_m: f64,
    pub rotation_deg: f64,
}

impl Default for KeyframeThresholds {
    fn default() -> Self {
        KeyframeThresholds {
            translation_m: 0.25,
            rotation_deg: 10.0,
        }
    }
}

impl KeyframeThresholds {
    /// Profile for driving-scale sequences.
    pub fn driving() -> Self {
        KeyframeThresholds {
            translation_m: 3.0,
            rotation_deg: 5.0,
        }
    }

    pub fn rotation_rad(&self) -> f64 {
        self.rotation_deg.to_radians()
    }
}

/// True when `current_pose` has moved past either threshold relative to the
/// active keyframe.
pub fn should_create_keyframe(active: &Keyframe, current_pose: &Pose, thresholds: &KeyframeThresholds) -> bool {
    let rel = active.pose.inverse() * *current_pose;
    rel.translation().norm() > thresholds.translation_m || rel.rotation_angle() > thresholds.rotation_rad()
}

/// Append-only list of keyframes with dense ids `0..n`.
#[derive(Clone, Debug)]
pub struct KeyframeMap {
    keyframes: Vec<Keyframe>,
    pub thresholds: KeyframeThresholds,
    pub params: KeyframeParams,
    intrinsics: Option<CameraIntrinsics>,
}

impl KeyframeMap {
    pub fn new(thresholds: KeyframeThresholds, params: KeyframeParams) -> Self {
        KeyframeMap {
            keyframes: Vec::new(),
            thresholds,
            params,
            intrinsics: None,
        }
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn get(&self, id: usize) -> Option<&Keyframe> {
        self.keyframes.get(id)
    }

    pub fn intrinsics(&self) -> Option<&CameraIntrinsics> {
        self.intrinsics.as_ref()
    }

    pub(crate) fn last_mut(&mut self) -> Option<&mut Keyframe> {
        self.keyframes.last_mut()
    }

    /// Prepares and appends a keyframe, assigning the next id.
    pub fn insert(
        &mut self,
        pose: Pose,
        source_frame: &str,
        image: &ImageBuffer,
        depth: &DepthMap,
        intrinsics: &CameraIntrinsics,
    ) -> Result<&Keyframe, MapError> {
        if let Some(k) = &self.intrinsics {
            if k != intrinsics {
                return Err(MapError::IntrinsicsMismatch {
                    expected: *k,
                    found: *intrinsics,
                });
            }
        }
        let kf = Keyframe::new(self.keyframes.len(), pose, source_frame, image, depth, intrinsics, &self.params)?;
        self.intrinsics = Some(*intrinsics);
        self.keyframes.push(kf);
        Ok(self.keyframes.last().expect("just pushed"))
    }
}

/// Keyframe whose position is closest to `pose`'s; ties go to the lower id.
pub fn nearest_keyframe<'a>(map: &'a KeyframeMap, pose: &Pose) -> Result<&'a Keyframe, MapError> {
    let mut best: Option<(&Keyframe, f64)> = None;
    for kf in &map.keyframes {
        let d = (kf.pose.translation() - pose.translation()).norm();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((kf, d));
        }
    }
    best.map(|(kf, _)| kf).ok_or(MapError::EmptyMap)
}

/// Like [`nearest_keyframe`] but keeps `current` unless another keyframe is
/// nearer by more than `margin` meters.
pub fn nearest_keyframe_with_hysteresis<'a>(
    map: &'a KeyframeMap,
    pose: &Pose,
    current: Option<usize>,
    margin: f64,
) -> Result<&'a Keyframe, MapError> {
    let nearest = nearest_keyframe(map, pose)?;
    let Some(cur) = current.and_then(|id| map.get(id)) else {
        return Ok(nearest);
    };
    let dist = |kf: &Keyframe| (kf.pose.translation() - pose.translation()).norm();
    if dist(nearest) < dist(cur) - margin {
        Ok(nearest)
    } else {
        Ok(cur)
    }
}

fn io_failure(path: &Path, reason: impl ToString) -> MapError {
    MapError::IoFailure {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn image_failure(e: ImageError) -> MapError {
    match e {
        ImageError::Io { path, source } => MapError::IoFailure {
            path,
            reason: source.to_string(),
        },
        other => MapError::Keyframe(other.into()),
    }
}

fn file_stem(id: usize) -> String {
    format!("kf_{id:06}")
}

/// Writes the map as a directory: `manifest.txt` plus, per keyframe, a 16-bit
/// image PNG, a 16-bit depth PNG and a 56-byte little-endian pose record
/// (`tx ty tz qx qy qz qw` as f64). The manifest is written last.
pub fn save_map(map: &KeyframeMap, dir: &Path) -> Result<(), MapError> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let p = &map.params;
    let mut manifest = format!(
        "format_version = {MAP_FORMAT_VERSION}\n\
         pose_convention = world_from_keyframe\n\
         translation_threshold_m = {:?}\n\
         rotation_threshold_deg = {:?}\n\
         pyramid_levels = {}\n\
         gradient_threshold = {:?}\n\
         depth_noise_coeff = {:?}\n\
         color = {}\n\
         depth_scale = {:?}\n",
        map.thresholds.translation_m,
        map.thresholds.rotation_deg,
        p.pyramid_levels,
        p.gradient_threshold,
        p.depth_noise_coeff,
        p.color.as_str(),
        p.depth_scale,
    );
    if let Some(k) = &map.intrinsics {
        manifest += &format!(
            "intrinsics = {:?} {:?} {:?} {:?} {} {}\n",
            k.fu, k.fv, k.cu, k.cv, k.width, k.height
        );
    }
    manifest += &format!("keyframe_count = {}\n", map.len());
    for kf in &map.keyframes {
        let stem = file_stem(kf.id);
        save_image_png(kf.image(), &dir.join(format!("{stem}_image.png"))).map_err(image_failure)?;
        save_depth_png(kf.depth(), p.depth_scale, &dir.join(format!("{stem}_depth.png"))).map_err(image_failure)?;
        let mut record = Vec::with_capacity(POSE_RECORD_BYTES);
        let t = kf.pose.translation();
        let q = kf.pose.quaternion_xyzw();
        for x in [t.x, t.y, t.z, q[0], q[1], q[2], q[3]] {
            record.extend_from_slice(&x.to_le_bytes());
        }
        let path = dir.join(format!("{stem}_pose.bin"));
        fs::write(&path, record).map_err(|e| io_failure(&path, e))?;
        manifest += &format!("keyframe.{} = {}\n", kf.id, kf.source_frame);
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| io_failure(&path, e))
}

struct Manifest {
    path: std::path::PathBuf,
    entries: Vec<(String, String)>,
}

impl Manifest {
    fn get(&self, key: &str) -> Result<&str, MapError> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| io_failure(&self.path, format!("manifest is missing {key:?}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, MapError> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| io_failure(&self.path, format!("bad value {raw:?} for {key:?}")))
    }
}

/// Loads a map written by [`save_map`]. Fails without returning a partial
/// map if any file is missing, truncated or from another format version.
pub fn load_map(dir: &Path) -> Result<KeyframeMap, MapError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
    let entries = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let m = Manifest { path, entries };
    let version = m.get("format_version").ok().map(str::to_string);
    if version.as_deref() != Some(&MAP_FORMAT_VERSION.to_string()) {
        return Err(MapError::FormatVersionMismatch { found: version });
    }
    let color = match m.get("color")? {
        "gray" => ColorMode::Gray,
        "rgb" => ColorMode::Rgb,
        other => return Err(io_failure(&m.path, format!("unknown color mode {other:?}"))),
    };
    let params = KeyframeParams {
        pyramid_levels: m.parse("pyramid_levels")?,
        gradient_threshold: m.parse("gradient_threshold")?,
        depth_noise_coeff: m.parse("depth_noise_coeff")?,
        color,
        depth_scale: m.parse("depth_scale")?,
    };
    let thresholds = KeyframeThresholds {
        translation_m: m.parse("translation_threshold_m")?,
        rotation_deg: m.parse("rotation_threshold_deg")?,
    };
    let count: usize = m.parse("keyframe_count")?;
    let mut map = KeyframeMap::new(thresholds, params);
    if count == 0 {
        return Ok(map);
    }
    let fields: Vec<&str> = m.get("intrinsics")?.split_whitespace().collect();
    let bad = || io_failure(&m.path, "malformed intrinsics");
    if fields.len() != 6 {
        return Err(bad());
    }
    let f = |i: usize| fields[i].parse::<f64>().map_err(|_| bad());
    let n = |i: usize| fields[i].parse::<usize>().map_err(|_| bad());
    let k = CameraIntrinsics::new(f(0)?, f(1)?, f(2)?, f(3)?, n(4)?, n(5)?).map_err(KeyframeError::from)?;

    for id in 0..count {
        let stem = file_stem(id);
        let source = m.get(&format!("keyframe.{id}"))?;
        let image = load_image_png(&dir.join(format!("{stem}_image.png"))).map_err(image_failure)?;
        let depth =
            load_depth_png(&dir.join(format!("{stem}_depth.png")), params.depth_scale).map_err(image_failure)?;
        let pose_path = dir.join(format!("{stem}_pose.bin"));
        let bytes = fs::read(&pose_path).map_err(|e| io_failure(&pose_path, e))?;
        if bytes.len() != POSE_RECORD_BYTES {
            return Err(io_failure(
                &pose_path,
                format!("pose record has {} bytes, expected {POSE_RECORD_BYTES}", bytes.len()),
            ));
        }
        let v: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let pose = Pose::from_quaternion_xyzw(Vector3::new(v[0], v[1], v[2]), [v[3], v[4], v[5], v[6]]);
        map.insert(pose, source, &image, &depth, &k)?;
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(60.0, 60.0, 31.5, 23.5, 64, 48).unwrap()
    }

    fn textured(seed: f64) -> ImageBuffer {
        ImageBuffer::from_fn(64, 48, 1, |u, v, _| {
            0.4 + 0.25 * ((u as f64 * 0.7 + seed).sin() * (v as f64 * 0.5 - seed).cos())
        })
    }

    fn test_map(n: usize) -> KeyframeMap {
        let params = KeyframeParams {
            pyramid_levels: 3,
            ..Default::default()
        };
        let mut map = KeyframeMap::new(KeyframeThresholds::default(), params);
        for i in 0..n {
            let pose = Pose::from_axis_angle(
                Vector3::new(0.2, 1.0, 0.1),
                0.1 * i as f64,
                Vector3::new(0.3 * i as f64, -0.1, 0.05 * i as f64),
            );
            let depth = DepthMap::constant(64, 48, 2.0 + 0.3 * i as f64);
            map.insert(pose, &format!("{i:06}"), &textured(i as f64), &depth, &intrinsics())
                .unwrap();
        }
        map
    }

    #[test]
    fn keyframe_levels_are_consistent() {
        let map = test_map(1);
        let kf = &map.keyframes()[0];
        assert_eq!(kf.levels.len(), 3);
        for level in &kf.levels {
            assert_eq!(level.image.width(), level.intrinsics.width);
            assert_eq!(level.depth.width(), level.intrinsics.width);
            assert!(!level.pixels.is_empty());
            for p in &level.pixels {
                assert!(level.depth.get_index(p.index).is_some());
                assert!(p.depth_sigma > 0.0);
            }
        }
    }

    #[test]
    fn creation_thresholds() {
        let map = test_map(1);
        let kf = &map.keyframes()[0];
        let th = KeyframeThresholds::default();
        assert!(!should_create_keyframe(kf, &kf.pose, &th));
        let moved = kf.pose * Pose::from_translation(Vector3::new(0.3, 0.0, 0.0));
        assert!(should_create_keyframe(kf, &moved, &th));
        let turned = kf.pose * Pose::from_axis_angle(Vector3::y(), 12f64.to_radians(), Vector3::zeros());
        assert!(should_create_keyframe(kf, &turned, &th));
        let small = kf.pose * Pose::from_axis_angle(Vector3::y(), 8f64.to_radians(), Vector3::new(0.2, 0.0, 0.0));
        assert!(!should_create_keyframe(kf, &small, &th));
    }

    #[test]
    fn nearest_with_ties_and_empty_map() {
        let empty = KeyframeMap::new(KeyframeThresholds::default(), KeyframeParams::default());
        assert!(matches!(nearest_keyframe(&empty, &Pose::identity()), Err(MapError::EmptyMap)));

        let map = test_map(3);
        assert_eq!(nearest_keyframe(&map, &map.keyframes()[2].pose).unwrap().id, 2);
        let mid = (map.keyframes()[0].pose.translation() + map.keyframes()[1].pose.translation()) * 0.5;
        assert_eq!(nearest_keyframe(&map, &Pose::from_translation(mid)).unwrap().id, 0);
    }

    #[test]
    fn hysteresis_keeps_current_near_boundary() {
        let map = test_map(2);
        let t0 = *map.keyframes()[0].pose.translation();
        let t1 = *map.keyframes()[1].pose.translation();
        // Slightly nearer keyframe 1, by less than the margin.
        let just_past = Pose::from_translation(t0 + (t1 - t0) * 0.503);
        assert_eq!(nearest_keyframe(&map, &just_past).unwrap().id, 1);
        assert_eq!(nearest_keyframe_with_hysteresis(&map, &just_past, Some(0), 0.0025).unwrap().id, 0);
        assert_eq!(nearest_keyframe_with_hysteresis(&map, &just_past, None, 0.0025).unwrap().id, 1);
        let at_one = Pose::from_translation(t1);
        assert_eq!(nearest_keyframe_with_hysteresis(&map, &at_one, Some(0), 0.0025).unwrap().id, 1);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let map = test_map(3);
        save_map(&map, dir.path()).unwrap();
        let back = load_map(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.thresholds, map.thresholds);
        assert_eq!(back.params, map.params);
        for (a, b) in map.keyframes().iter().zip(back.keyframes()) {
            assert_eq!(a.image(), b.image());
            assert_eq!(a.depth(), b.depth());
            assert_eq!(a.source_frame, b.source_frame);
            assert!((a.pose.translation() - b.pose.translation()).amax() < 1e-12);
            assert!((a.pose.rotation() - b.pose.rotation()).amax() < 1e-12);
            assert_eq!(a.levels[1].pixels.len(), b.levels[1].pixels.len());
        }
    }

    #[test]
    fn empty_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let map = KeyframeMap::new(KeyframeThresholds::driving(), KeyframeParams::default());
        save_map(&map, dir.path()).unwrap();
        let back = load_map(dir.path()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.thresholds, KeyframeThresholds::driving());
    }

    #[test]
    fn truncated_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_map(&test_map(2), dir.path()).unwrap();

        let pose = dir.path().join("kf_000001_pose.bin");
        let bytes = fs::read(&pose).unwrap();
        fs::write(&pose, &bytes[..30]).unwrap();
        assert!(matches!(load_map(dir.path()), Err(MapError::IoFailure { .. })));
        fs::write(&pose, &bytes).unwrap();

        let img = dir.path().join("kf_000000_image.png");
        let bytes = fs::read(&img).unwrap();
        fs::write(&img, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_map(dir.path()), Err(MapError::IoFailure { .. })));
        fs::write(&img, &bytes).unwrap();

        let manifest = dir.path().join(MANIFEST);
        fs::write(&manifest, "").unwrap();
        assert!(matches!(load_map(dir.path()), Err(MapError::FormatVersionMismatch { .. })));
        fs::write(&manifest, "format_version = 7\n").unwrap();
        assert!(matches!(load_map(dir.path()), Err(MapError::FormatVersionMismatch { .. })));
    }
}
