//! On-disk dataset layout.
//!
//! ```text
//! <root>/calibration.txt          fu, fv, cu, cv, width, height [, depth_scale, baseline]
//! <root>/groundtruth.txt          timestamp tx ty tz qx qy qz qw
//! <root>/<condition>/rgb/*.png
//! <root>/<condition>/depth/*.png  or  <root>/<condition>/right/*.png (rectified stereo)
//! <root>/<condition>/associations.txt   t_rgb rgb/<f>.png t_depth depth/<f>.png
//! <root>/<condition>/affine.txt   optional, frame_id a b per line
//! ```
//!
//! Without `associations.txt` the frames in `rgb/` are taken in filename
//! order and paired with equally named files, one ground-truth line each.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use super::config::StereoConfig;
use crate::camera::{CameraIntrinsics, StereoModel};
use crate::imaging::{
    block_match_disparity, disparity_to_depth, load_depth_png, load_image_png, save_depth_png, save_image_png,
    DepthMap, ImageBuffer, ImageError, DEFAULT_DEPTH_SCALE,
};
use crate::se3::Pose;
use crate::synthetic::RenderedSequence;

/// Ground truth is matched to frames within this many seconds.
const TIMESTAMP_TOLERANCE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing {0}")]
    Missing(String),
    #[error("{path}:{line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("condition {condition:?} not found; available: {available:?}")]
    UnknownCondition { condition: String, available: Vec<String> },
    #[error("no ground-truth pose within {TIMESTAMP_TOLERANCE} s of frame {frame_id} (t = {timestamp})")]
    NoGroundTruth { frame_id: String, timestamp: f64 },
    #[error("{0} has no frames")]
    Empty(String),
    #[error("i/o failure at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("invalid calibration: {0}")]
    Calibration(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    if !path.exists() {
        return Err(DatasetError::Missing(path.display().to_string()));
    }
    fs::read_to_string(path).map_err(io_err(path))
}

fn malformed(path: &Path, line: usize, reason: impl ToString) -> DatasetError {
    DatasetError::Malformed {
        path: path.display().to_string(),
        line,
        reason: reason.to_string(),
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub intrinsics: CameraIntrinsics,
    /// Meters per stored depth unit.
    pub depth_scale: f64,
    /// Stereo baseline in meters, for datasets with right images.
    pub baseline: Option<f64>,
}

impl Calibration {
    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let text = read_text(path)?;
        let mut values = BTreeMap::new();
        for (n, line) in content_lines(&text) {
            let (k, v) = line.split_once('=').ok_or_else(|| malformed(path, n, "expected key = value"))?;
            let v: f64 = v.trim().parse().map_err(|_| malformed(path, n, "value is not a number"))?;
            values.insert(k.trim().to_string(), v);
        }
        let get = |k: &str| {
            values
                .get(k)
                .copied()
                .ok_or_else(|| DatasetError::Calibration(format!("{} lacks {k:?}", path.display())))
        };
        let dim = |k: &str| -> Result<usize, DatasetError> {
            let v = get(k)?;
            if v.fract() != 0.0 || v < 1.0 {
                return Err(DatasetError::Calibration(format!("{k} must be a positive integer")));
            }
            Ok(v as usize)
        };
        let intrinsics = CameraIntrinsics::new(get("fu")?, get("fv")?, get("cu")?, get("cv")?, dim("width")?, dim("height")?)
            .map_err(|e| DatasetError::Calibration(e.to_string()))?;
        let depth_scale = values.get("depth_scale").copied().unwrap_or(DEFAULT_DEPTH_SCALE);
        if !(depth_scale > 0.0) {
            return Err(DatasetError::Calibration("depth_scale must be positive".into()));
        }
        let baseline = values.get("baseline").copied();
        if baseline.is_some_and(|b| !(b > 0.0)) {
            return Err(DatasetError::Calibration("baseline must be positive".into()));
        }
        Ok(Calibration {
            intrinsics,
            depth_scale,
            baseline,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let k = &self.intrinsics;
        let mut text = format!(
            "fu = {:?}\nfv = {:?}\ncu = {:?}\ncv = {:?}\nwidth = {}\nheight = {}\ndepth_scale = {:?}\n",
            k.fu, k.fv, k.cu, k.cv, k.width, k.height, self.depth_scale
        );
        if let Some(b) = self.baseline {
            text += &format!("baseline = {b:?}\n");
        }
        fs::write(path, text).map_err(io_err(path))
    }
}

/// Reads `timestamp tx ty tz qx qy qz qw` lines.
pub fn read_trajectory(path: &Path) -> Result<Vec<(f64, Pose)>, DatasetError> {
    let text = read_text(path)?;
    let mut out: Vec<(f64, Pose)> = Vec::new();
    for (n, line) in content_lines(&text) {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| malformed(path, n, "expected 8 numbers"))?;
        if v.len() != 8 {
            return Err(malformed(path, n, "expected 8 numbers"));
        }
        if out.last().is_some_and(|(t, _)| v[0] <= *t) {
            return Err(malformed(path, n, "timestamps must increase strictly"));
        }
        let q = [v[4], v[5], v[6], v[7]];
        if q.iter().map(|x| x * x).sum::<f64>() < 1e-12 {
            return Err(malformed(path, n, "zero quaternion"));
        }
        out.push((v[0], Pose::from_quaternion_xyzw(Vector3::new(v[1], v[2], v[3]), q)));
    }
    Ok(out)
}

pub fn format_trajectory(poses: &[(f64, Pose)]) -> String {
    let mut text = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in poses {
        let tr = p.translation();
        let q = p.quaternion_xyzw();
        text += &format!(
            "{t:.6} {:.11e} {:.11e} {:.11e} {:.11e} {:.11e} {:.11e} {:.11e}\n",
            tr.x, tr.y, tr.z, q[0], q[1], q[2], q[3]
        );
    }
    text
}

pub fn write_trajectory(path: &Path, poses: &[(f64, Pose)]) -> Result<(), DatasetError> {
    fs::write(path, format_trajectory(poses)).map_err(io_err(path))
}

/// A frame ready for the tracker.
#[derive(Clone, Debug)]
pub struct Frame {
    pub frame_id: String,
    pub timestamp: f64,
    pub image: ImageBuffer,
    pub depth: DepthMap,
}

/// Random access to the frames of one sequence under one condition.
pub trait FrameSource: Sync {
    fn sequence_name(&self) -> &str;
    fn condition(&self) -> &str;
    fn intrinsics(&self) -> &CameraIntrinsics;
    fn depth_scale(&self) -> f64;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn frame_id(&self, i: usize) -> &str;
    fn timestamp(&self, i: usize) -> f64;
    fn load(&self, i: usize) -> Result<Frame, DatasetError>;
    /// World-from-camera per frame.
    fn ground_truth(&self) -> &[Pose];
    /// Known per-frame `(a, b)` of a global affine illumination change.
    fn affine_params(&self) -> Option<BTreeMap<String, (f64, f64)>>;
}

#[derive(Clone, Debug, PartialEq)]
enum DepthSource {
    Depth(PathBuf),
    Right(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
struct FrameEntry {
    frame_id: String,
    timestamp: f64,
    image: PathBuf,
    depth: DepthSource,
}

/// One condition of an on-disk dataset.
#[derive(Clone, Debug)]
pub struct Sequence {
    name: String,
    condition: String,
    calibration: Calibration,
    stereo: Option<(StereoModel, StereoConfig)>,
    entries: Vec<FrameEntry>,
    ground_truth: Vec<Pose>,
    affine: Option<BTreeMap<String, (f64, f64)>>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub calibration: Calibration,
    pub ground_truth: Vec<(f64, Pose)>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, DatasetError> {
        if !root.is_dir() {
            return Err(DatasetError::Missing(root.display().to_string()));
        }
        let calibration = Calibration::read(&root.join("calibration.txt"))?;
        let ground_truth = read_trajectory(&root.join("groundtruth.txt"))?;
        if ground_truth.is_empty() {
            return Err(DatasetError::Empty(root.join("groundtruth.txt").display().to_string()));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            calibration,
            ground_truth,
        })
    }

    pub fn name(&self) -> String {
        self.root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }

    /// Subdirectories that contain an `rgb/` folder.
    pub fn conditions(&self) -> Vec<String> {
        let mut out: Vec<String> = fs::read_dir(&self.root)
            .into_iter()
            .flatten()
            .flatten()
            .filter(|e| e.path().join("rgb").is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        out.sort();
        out
    }

    pub fn sequence(&self, condition: &str, stereo_cfg: &StereoConfig) -> Result<Sequence, DatasetError> {
        let dir = self.root.join(condition);
        if !dir.join("rgb").is_dir() {
            return Err(DatasetError::UnknownCondition {
                condition: condition.to_string(),
                available: self.conditions(),
            });
        }
        let entries = if dir.join("associations.txt").is_file() {
            read_associations(&dir)?
        } else {
            numbered_frames(&dir, &self.ground_truth)?
        };
        if entries.is_empty() {
            return Err(DatasetError::Empty(dir.display().to_string()));
        }
        let ground_truth = entries
            .iter()
            .map(|e| {
                nearest_pose(&self.ground_truth, e.timestamp).ok_or_else(|| DatasetError::NoGroundTruth {
                    frame_id: e.frame_id.clone(),
                    timestamp: e.timestamp,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let stereo = if entries.iter().any(|e| matches!(e.depth, DepthSource::Right(_))) {
            let baseline = self
                .calibration
                .baseline
                .ok_or_else(|| DatasetError::Calibration("stereo frames need a baseline".into()))?;
            let model = StereoModel::new(self.calibration.intrinsics, baseline)
                .map_err(|e| DatasetError::Calibration(e.to_string()))?;
            Some((model, stereo_cfg.clone()))
        } else {
            None
        };
        let affine_path = dir.join("affine.txt");
        let affine = affine_path.is_file().then(|| read_affine(&affine_path)).transpose()?;
        Ok(Sequence {
            name: self.name(),
            condition: condition.to_string(),
            calibration: self.calibration,
            stereo,
            entries,
            ground_truth,
            affine,
        })
    }
}

fn nearest_pose(gt: &[(f64, Pose)], t: f64) -> Option<Pose> {
    let i = gt.partition_point(|(s, _)| *s < t);
    [i.checked_sub(1), Some(i)]
        .into_iter()
        .flatten()
        .filter_map(|j| gt.get(j))
        .filter(|(s, _)| (s - t).abs() <= TIMESTAMP_TOLERANCE)
        .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
        .map(|(_, p)| *p)
}

fn stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_associations(dir: &Path) -> Result<Vec<FrameEntry>, DatasetError> {
    let path = dir.join("associations.txt");
    let text = read_text(&path)?;
    let mut out: Vec<FrameEntry> = Vec::new();
    let mut seen_rgb = BTreeSet::new();
    let mut seen_depth = BTreeSet::new();
    for (n, line) in content_lines(&text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(malformed(&path, n, "expected: t_rgb rgb_path t_depth depth_path"));
        }
        let timestamp: f64 = f[0].parse().map_err(|_| malformed(&path, n, "bad timestamp"))?;
        f[2].parse::<f64>().map_err(|_| malformed(&path, n, "bad timestamp"))?;
        if out.last().is_some_and(|e| timestamp <= e.timestamp) {
            return Err(malformed(&path, n, "timestamps must increase strictly"));
        }
        if !seen_rgb.insert(f[1].to_string()) || !seen_depth.insert(f[3].to_string()) {
            return Err(malformed(&path, n, "each image and depth file may appear only once"));
        }
        let depth_path = dir.join(f[3]);
        let depth = if f[3].starts_with("right/") {
            DepthSource::Right(depth_path)
        } else {
            DepthSource::Depth(depth_path)
        };
        out.push(FrameEntry {
            frame_id: stem(f[1]),
            timestamp,
            image: dir.join(f[1]),
            depth,
        });
    }
    Ok(out)
}

fn numbered_frames(dir: &Path, gt: &[(f64, Pose)]) -> Result<Vec<FrameEntry>, DatasetError> {
    let rgb = dir.join("rgb");
    let mut names: Vec<String> = fs::read_dir(&rgb)
        .map_err(io_err(&rgb))?
        .flatten()
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    if names.len() != gt.len() {
        return Err(DatasetError::Malformed {
            path: rgb.display().to_string(),
            line: 0,
            reason: format!("{} frames but {} ground-truth poses", names.len(), gt.len()),
        });
    }
    names
        .into_iter()
        .zip(gt)
        .map(|(name, (t, _))| {
            let depth = if dir.join("depth").join(&name).is_file() {
                DepthSource::Depth(dir.join("depth").join(&name))
            } else if dir.join("right").join(&name).is_file() {
                DepthSource::Right(dir.join("right").join(&name))
            } else {
                return Err(DatasetError::Missing(dir.join("depth").join(&name).display().to_string()));
            };
            Ok(FrameEntry {
                frame_id: stem(&name),
                timestamp: *t,
                image: rgb.join(&name),
                depth,
            })
        })
        .collect()
}

pub fn read_affine(path: &Path) -> Result<BTreeMap<String, (f64, f64)>, DatasetError> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    for (n, line) in content_lines(&text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| s.parse::<f64>().map_err(|_| malformed(path, n, "expected: frame_id a b"));
        if f.len() != 3 {
            return Err(malformed(path, n, "expected: frame_id a b"));
        }
        out.insert(f[0].to_string(), (parse(f[1])?, parse(f[2])?));
    }
    Ok(out)
}

fn format_affine(table: &[(String, f64, f64)]) -> String {
    let mut text = String::from("# frame_id a b\n");
    for (id, a, b) in table {
        text += &format!("{id} {a:?} {b:?}\n");
    }
    text
}

impl FrameSource for Sequence {
    fn sequence_name(&self) -> &str {
        &self.name
    }

    fn condition(&self) -> &str {
        &self.condition
    }

    fn intrinsics(&self) -> &CameraIntrinsics {
        &self.calibration.intrinsics
    }

    fn depth_scale(&self) -> f64 {
        self.calibration.depth_scale
    }

    fn len(&self) -> usize {
        self.entries.len()
    }

    fn frame_id(&self, i: usize) -> &str {
        &self.entries[i].frame_id
    }

    fn timestamp(&self, i: usize) -> f64 {
        self.entries[i].timestamp
    }

    fn load(&self, i: usize) -> Result<Frame, DatasetError> {
        let e = &self.entries[i];
        let k = &self.calibration.intrinsics;
        let image = load_image_png(&e.image)?;
        if image.width() != k.width || image.height() != k.height {
            return Err(DatasetError::Calibration(format!(
                "{} is {}x{}, calibration says {}x{}",
                e.image.display(),
                image.width(),
                image.height(),
                k.width,
                k.height
            )));
        }
        let depth = match &e.depth {
            DepthSource::Depth(p) => load_depth_png(p, self.calibration.depth_scale)?,
            DepthSource::Right(p) => {
                let (model, cfg) = self
                    .stereo
                    .as_ref()
                    .ok_or_else(|| DatasetError::Calibration("stereo frames need a baseline".into()))?;
                let right = load_image_png(p)?;
                let disp = block_match_disparity(&image, &right, model, cfg.window, cfg.max_disparity)?;
                disparity_to_depth(&disp, model)
            }
        };
        if depth.width() != image.width() || depth.height() != image.height() {
            return Err(ImageError::DimensionMismatch(format!("depth for frame {} differs in size", e.frame_id)).into());
        }
        Ok(Frame {
            frame_id: e.frame_id.clone(),
            timestamp: e.timestamp,
            image,
            depth,
        })
    }

    fn ground_truth(&self) -> &[Pose] {
        &self.ground_truth
    }

    fn affine_params(&self) -> Option<BTreeMap<String, (f64, f64)>> {
        self.affine.clone()
    }
}

/// In-memory source over a rendered sequence.
pub struct RenderedSource<'a> {
    pub sequence: &'a RenderedSequence,
    ground_truth: Vec<Pose>,
}

impl<'a> RenderedSource<'a> {
    pub fn new(sequence: &'a RenderedSequence) -> Self {
        RenderedSource {
            sequence,
            ground_truth: sequence.frames.iter().map(|f| f.pose).collect(),
        }
    }
}

impl FrameSource for RenderedSource<'_> {
    fn sequence_name(&self) -> &str {
        "synthetic"
    }

    fn condition(&self) -> &str {
        &self.sequence.name
    }

    fn intrinsics(&self) -> &CameraIntrinsics {
        &self.sequence.intrinsics
    }

    fn depth_scale(&self) -> f64 {
        DEFAULT_DEPTH_SCALE
    }

    fn len(&self) -> usize {
        self.sequence.frames.len()
    }

    fn frame_id(&self, i: usize) -> &str {
        &self.sequence.frames[i].frame_id
    }

    fn timestamp(&self, i: usize) -> f64 {
        self.sequence.frames[i].timestamp
    }

    fn load(&self, i: usize) -> Result<Frame, DatasetError> {
        let f = &self.sequence.frames[i];
        Ok(Frame {
            frame_id: f.frame_id.clone(),
            timestamp: f.timestamp,
            image: f.image.clone(),
            depth: f.depth.clone(),
        })
    }

    fn ground_truth(&self) -> &[Pose] {
        &self.ground_truth
    }

    fn affine_params(&self) -> Option<BTreeMap<String, (f64, f64)>> {
        let table = self.sequence.affine.as_ref()?;
        Some(
            self.sequence
                .frames
                .iter()
                .zip(table)
                .map(|(f, ab)| (f.frame_id.clone(), *ab))
                .collect(),
        )
    }
}

/// Writes rendered sequences (sharing one trajectory) as a dataset, one
/// condition directory per sequence.
pub fn write_dataset(root: &Path, sequences: &[RenderedSequence]) -> Result<(), DatasetError> {
    let first = sequences.first().ok_or_else(|| DatasetError::Empty("sequence list".into()))?;
    fs::create_dir_all(root).map_err(io_err(root))?;
    let calibration = Calibration {
        intrinsics: first.intrinsics,
        depth_scale: DEFAULT_DEPTH_SCALE,
        baseline: None,
    };
    calibration.write(&root.join("calibration.txt"))?;
    let gt: Vec<(f64, Pose)> = first.frames.iter().map(|f| (f.timestamp, f.pose)).collect();
    write_trajectory(&root.join("groundtruth.txt"), &gt)?;
    for seq in sequences {
        let dir = root.join(&seq.name);
        for sub in ["rgb", "depth"] {
            fs::create_dir_all(dir.join(sub)).map_err(io_err(&dir))?;
        }
        let mut assoc = String::from("# t_rgb rgb t_depth depth\n");
        for f in &seq.frames {
            let name = format!("{}.png", f.frame_id);
            save_image_png(&f.image, &dir.join("rgb").join(&name))?;
            save_depth_png(&f.depth, DEFAULT_DEPTH_SCALE, &dir.join("depth").join(&name))?;
            assoc += &format!("{t:.6} rgb/{name} {t:.6} depth/{name}\n", t = f.timestamp);
        }
        let path = dir.join("associations.txt");
        fs::write(&path, assoc).map_err(io_err(&path))?;
        if let Some(table) = &seq.affine {
            let rows: Vec<(String, f64, f64)> = seq
                .frames
                .iter()
                .zip(table)
                .map(|(f, (a, b))| (f.frame_id.clone(), *a, *b))
                .collect();
            let path = dir.join("affine.txt");
            fs::write(&path, format_affine(&rows)).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

/// Writes `clamp(a·I + b)` versions of `source` as sibling conditions named
/// by each `(name, a, b)`; depth is copied, right stereo images are
/// transformed like the left ones. Records `(a, b)` per frame in `affine.txt`.
pub fn generate_affine_conditions(
    root: &Path,
    source: &str,
    params: &[(String, f64, f64)],
) -> Result<Vec<PathBuf>, DatasetError> {
    let src = root.join(source);
    if !src.join("rgb").is_dir() {
        return Err(DatasetError::UnknownCondition {
            condition: source.to_string(),
            available: Dataset::open(root).map(|d| d.conditions()).unwrap_or_default(),
        });
    }
    let mut written = Vec::new();
    for (name, a, b) in params {
        let dst = root.join(name);
        let mut ids = Vec::new();
        for sub in ["rgb", "right", "depth"] {
            let from = src.join(sub);
            if !from.is_dir() {
                continue;
            }
            let to = dst.join(sub);
            fs::create_dir_all(&to).map_err(io_err(&to))?;
            let mut files: Vec<PathBuf> = fs::read_dir(&from)
                .map_err(io_err(&from))?
                .flatten()
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "png"))
                .collect();
            files.sort();
            for file in files {
                let target = to.join(file.file_name().expect("listed file"));
                if sub == "depth" {
                    fs::copy(&file, &target).map_err(io_err(&file))?;
                } else {
                    let img = load_image_png(&file)?;
                    save_image_png(&img.map(|x| a * x + b), &target)?;
                    if sub == "rgb" {
                        ids.push(stem(&file.to_string_lossy()));
                    }
                }
            }
        }
        let assoc = src.join("associations.txt");
        if assoc.is_file() {
            fs::copy(&assoc, dst.join("associations.txt")).map_err(io_err(&assoc))?;
        }
        let rows: Vec<(String, f64, f64)> = ids.into_iter().map(|id| (id, *a, *b)).collect();
        let path = dst.join("affine.txt");
        fs::write(&path, format_affine(&rows)).map_err(io_err(&path))?;
        written.push(dst);
    }
    Ok(written)
}
