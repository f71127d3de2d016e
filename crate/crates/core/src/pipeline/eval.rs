//! Trajectory error metrics and CSV reports.
//!
//! Errors are measured over segments between successive tracked frames: for
//! frames `i < j` the relative motion estimate is compared with the
//! ground-truth relative motion, and the averages divide the summed errors by
//! the summed ground-truth segment lengths.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::se3::Pose;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory has {estimated} poses but ground truth has {ground_truth}")]
    LengthMismatch { estimated: usize, ground_truth: usize },
    #[error("i/o failure at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
}

/// Error of the segment ending at this frame, if any.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameError {
    pub trans_err_m: Option<f64>,
    pub rot_err_deg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub frames_total: usize,
    pub frames_tracked: usize,
    /// Percent of traveled distance; `None` with fewer than two tracked
    /// frames or no ground-truth motion between them.
    pub avg_trans_err_pct: Option<f64>,
    pub avg_rot_err_deg_per_m: Option<f64>,
    pub per_frame: Vec<FrameError>,
    /// Cumulative ground-truth path length at each frame.
    pub distance_m: Vec<f64>,
}

impl Evaluation {
    pub fn tracked_pct(&self) -> f64 {
        if self.frames_total == 0 {
            0.0
        } else {
            100.0 * self.frames_tracked as f64 / self.frames_total as f64
        }
    }
}

/// `estimated` and `ground_truth` are world-from-camera per frame.
pub fn evaluate(estimated: &[Pose], ground_truth: &[Pose], tracked: &[bool]) -> Result<Evaluation, EvalError> {
    if estimated.len() != ground_truth.len() || tracked.len() != ground_truth.len() {
        return Err(EvalError::LengthMismatch {
            estimated: estimated.len().min(tracked.len()),
            ground_truth: ground_truth.len(),
        });
    }
    let n = ground_truth.len();
    let mut distance_m = Vec::with_capacity(n);
    let mut acc = 0.0;
    for i in 0..n {
        if i > 0 {
            acc += (ground_truth[i].translation() - ground_truth[i - 1].translation()).norm();
        }
        distance_m.push(acc);
    }

    let mut per_frame = vec![FrameError::default(); n];
    let (mut sum_t, mut sum_r, mut sum_d) = (0.0, 0.0, 0.0);
    let mut last: Option<usize> = None;
    for j in (0..n).filter(|&j| tracked[j]) {
        if let Some(i) = last {
            let rel_est = estimated[i].inverse() * estimated[j];
            let rel_gt = ground_truth[i].inverse() * ground_truth[j];
            let err = rel_gt.inverse() * rel_est;
            let t = err.translation().norm();
            let r = err.rotation_angle().to_degrees();
            per_frame[j] = FrameError {
                trans_err_m: Some(t),
                rot_err_deg: Some(r),
            };
            sum_t += t;
            sum_r += r;
            sum_d += rel_gt.translation().norm();
        }
        last = Some(j);
    }
    let frames_tracked = tracked.iter().filter(|&&t| t).count();
    let (avg_t, avg_r) = if sum_d > 0.0 {
        (Some(100.0 * sum_t / sum_d), Some(sum_r / sum_d))
    } else {
        (None, None)
    };
    Ok(Evaluation {
        frames_total: n,
        frames_tracked,
        avg_trans_err_pct: avg_t,
        avg_rot_err_deg_per_m: avg_r,
        per_frame,
        distance_m,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunMetadata {
    pub sequence: String,
    pub condition: String,
    pub transform: String,
    pub config_hash: String,
}

/// One estimated frame of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub timestamp: f64,
    /// World-from-camera.
    pub pose: Pose,
    pub tracked: bool,
    pub keyframe_id: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub meta: RunMetadata,
    pub frames: Vec<FrameRecord>,
    pub evaluation: Evaluation,
}

impl EvaluationReport {
    pub fn new(meta: RunMetadata, frames: Vec<FrameRecord>, ground_truth: &[Pose]) -> Result<Self, EvalError> {
        let est: Vec<Pose> = frames.iter().map(|f| f.pose).collect();
        let tracked: Vec<bool> = frames.iter().map(|f| f.tracked).collect();
        let evaluation = evaluate(&est, ground_truth, &tracked)?;
        Ok(EvaluationReport { meta, frames, evaluation })
    }
}

pub const SUMMARY_HEADER: &str = "sequence,condition,transform,config_hash,frames_total,frames_tracked,\
frames_tracked_pct,avg_trans_err_pct_dist,avg_rot_err_deg_per_m";
pub const FRAMES_HEADER: &str = "timestamp,tx,ty,tz,qx,qy,qz,qw,trans_err_m,rot_err_deg,tracked,keyframe_id";
pub const PLOT_HEADER: &str = "timestamp,distance_m,trans_err_m,rot_err_deg,tracked";

fn num(x: f64) -> String {
    format!("{x:.11e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Commas would break the single-line CSV layout.
fn field(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

pub fn summary_csv(report: &EvaluationReport) -> String {
    let e = &report.evaluation;
    let m = &report.meta;
    format!(
        "{SUMMARY_HEADER}\n{},{},{},{},{},{},{},{},{}\n",
        field(&m.sequence),
        field(&m.condition),
        field(&m.transform),
        field(&m.config_hash),
        e.frames_total,
        e.frames_tracked,
        num(e.tracked_pct()),
        opt_num(e.avg_trans_err_pct),
        opt_num(e.avg_rot_err_deg_per_m),
    )
}

pub fn frames_csv(report: &EvaluationReport) -> String {
    let mut out = String::from(FRAMES_HEADER);
    out.push('\n');
    for (f, err) in report.frames.iter().zip(&report.evaluation.per_frame) {
        let t = f.pose.translation();
        let q = f.pose.quaternion_xyzw();
        let cols = [
            format!("{:.6}", f.timestamp),
            num(t.x),
            num(t.y),
            num(t.z),
            num(q[0]),
            num(q[1]),
            num(q[2]),
            num(q[3]),
            opt_num(err.trans_err_m),
            opt_num(err.rot_err_deg),
            u8::from(f.tracked).to_string(),
            f.keyframe_id.map(|k| k.to_string()).unwrap_or_default(),
        ];
        out += &cols.join(",");
        out.push('\n');
    }
    out
}

pub fn plot_csv(report: &EvaluationReport) -> String {
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    let e = &report.evaluation;
    for ((f, err), d) in report.frames.iter().zip(&e.per_frame).zip(&e.distance_m) {
        out += &format!(
            "{:.6},{},{},{},{}\n",
            f.timestamp,
            num(*d),
            opt_num(err.trans_err_m),
            opt_num(err.rot_err_deg),
            u8::from(f.tracked)
        );
    }
    out
}

fn write(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `summary.csv` and `frames.csv` into `dir`.
pub fn export_report(report: &EvaluationReport, dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write(&dir.join("summary.csv"), &summary_csv(report))?;
    write(&dir.join("frames.csv"), &frames_csv(report))
}

pub fn export_plot_data(report: &EvaluationReport, path: &Path) -> Result<(), EvalError> {
    write(path, &plot_csv(report))
}

/// Reads the pose columns back from a `frames.csv`.
pub fn read_frames_csv(path: &Path) -> Result<Vec<FrameRecord>, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let bad = |line: usize, reason: &str| EvalError::Parse {
        path: path.display().to_string(),
        line,
        reason: reason.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == FRAMES_HEADER => {}
        _ => return Err(bad(1, "missing or unexpected header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 12 {
            return Err(bad(n, "expected 12 columns"));
        }
        let v: Vec<f64> = cols[..8]
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(n, "pose columns must be numbers"))?;
        let tracked = match cols[10].trim() {
            "1" => true,
            "0" => false,
            _ => return Err(bad(n, "tracked must be 0 or 1")),
        };
        let keyframe_id = match cols[11].trim() {
            "" => None,
            s => Some(s.parse().map_err(|_| bad(n, "keyframe_id must be an integer"))?),
        };
        out.push(FrameRecord {
            timestamp: v[0],
            pose: Pose::from_quaternion_xyzw(Vector3::new(v[1], v[2], v[3]), [v[4], v[5], v[6], v[7]]),
            tracked,
            keyframe_id,
        });
    }
    Ok(out)
}
