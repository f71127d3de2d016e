//! SAD block matching on rectified pairs.

use rayon::prelude::*;

use super::{DepthMap, DisparityMap, ImageBuffer, ImageError, ValueMap};
use crate::camera::StereoModel;

/// Best cost must beat every non-adjacent candidate by this factor.
const UNIQUENESS: f64 = 0.95;
/// Left-right consistency tolerance in pixels.
const LR_TOLERANCE: f64 = 1.0;

/// Per-pixel SAD cost volume indexed `[(v * w + u) * (max_disp + 1) + d]`,
/// where `d` is the left-image disparity. Invalid entries hold `INFINITY`.
struct CostVolume {
    width: usize,
    ndisp: usize,
    costs: Vec<f64>,
}

impl CostVolume {
    #[inline]
    fn at(&self, u: usize, v: usize, d: usize) -> f64 {
        self.costs[(v * self.width + u) * self.ndisp + d]
    }
}

fn cost_volume(left: &ImageBuffer, right: &ImageBuffer, window: usize, max_disp: usize) -> CostVolume {
    let (w, h) = (left.width(), left.height());
    let half = window / 2;
    let ndisp = max_disp + 1;
    let mut costs = vec![f64::INFINITY; w * h * ndisp];
    costs
        .par_chunks_mut(w * ndisp)
        .enumerate()
        .for_each(|(v, row)| {
            if v < half || v + half >= h {
                return;
            }
            for u in half..w.saturating_sub(half) {
                for d in 0..ndisp {
                    if u < half + d {
                        break;
                    }
                    let mut sad = 0.0;
                    for dv in 0..window {
                        let y = v + dv - half;
                        for du in 0..window {
                            let x = u + du - half;
                            sad += (left.get(x, y, 0) - right.get(x - d, y, 0)).abs();
                        }
                    }
                    row[u * ndisp + d] = sad;
                }
            }
        });
    CostVolume { width: w, ndisp, costs }
}

/// Integer winner over `costs(d)` that passes the uniqueness test.
fn winner(costs: impl Fn(usize) -> f64, ndisp: usize) -> Option<usize> {
    let (best, best_cost) = (0..ndisp)
        .map(|d| (d, costs(d)))
        .filter(|(_, c)| c.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    let runner_up = (0..ndisp)
        .filter(|&d| d.abs_diff(best) > 1)
        .map(&costs)
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    (runner_up.is_finite() && best_cost < UNIQUENESS * runner_up).then_some(best)
}

/// Dense disparity from a rectified pair by minimizing the sum of absolute
/// differences over a square window, with parabolic sub-pixel refinement and
/// a left-right consistency check. Colour inputs are matched on luminance.
pub fn block_match_disparity(
    left: &ImageBuffer,
    right: &ImageBuffer,
    stereo: &StereoModel,
    window: usize,
    max_disp: usize,
) -> Result<DisparityMap, ImageError> {
    let (w, h) = (left.width(), left.height());
    if right.width() != w || right.height() != h {
        return Err(ImageError::DimensionMismatch(format!(
            "left {}x{} vs right {}x{}",
            w,
            h,
            right.width(),
            right.height()
        )));
    }
    if stereo.intrinsics.width != w || stereo.intrinsics.height != h {
        return Err(ImageError::DimensionMismatch(format!(
            "images {}x{} vs calibration {}x{}",
            w, h, stereo.intrinsics.width, stereo.intrinsics.height
        )));
    }
    if window < 3 || window.is_multiple_of(2) {
        return Err(ImageError::DimensionMismatch(format!(
            "window must be odd and >= 3, got {window}"
        )));
    }
    let mut out = ValueMap::invalid(w, h);
    if max_disp == 0 {
        return Ok(out);
    }
    let left = left.to_luminance();
    let right = right.to_luminance();
    let vol = cost_volume(&left, &right, window, max_disp);
    let ndisp = vol.ndisp;

    // Right-image disparities reuse the volume: a right pixel u matches left u + d.
    let right_disp: Vec<Option<usize>> = (0..w * h)
        .map(|i| {
            let (u, v) = (i % w, i / w);
            winner(
                |d| if u + d < w { vol.at(u + d, v, d) } else { f64::INFINITY },
                ndisp,
            )
        })
        .collect();

    for v in 0..h {
        for u in 0..w {
            let Some(d) = winner(|d| vol.at(u, v, d), ndisp) else {
                continue;
            };
            let Some(dr) = right_disp[v * w + u - d] else {
                continue;
            };
            let mut refined = d as f64;
            if d > 0 && d + 1 < ndisp {
                let (cm, c0, cp) = (vol.at(u, v, d - 1), vol.at(u, v, d), vol.at(u, v, d + 1));
                let denom = cm - 2.0 * c0 + cp;
                if cm.is_finite() && cp.is_finite() && denom > 0.0 {
                    refined += ((cm - cp) / (2.0 * denom)).clamp(-0.5, 0.5);
                }
            }
            if (refined - dr as f64).abs() <= LR_TOLERANCE {
                out.set(u, v, Some(refined).filter(|x| *x > 0.0));
            }
        }
    }
    Ok(out)
}

/// Converts valid disparities to metric depth via `z = f·b/d`.
pub fn disparity_to_depth(disp: &DisparityMap, stereo: &StereoModel) -> DepthMap {
    let mut out = ValueMap::invalid(disp.width(), disp.height());
    for v in 0..disp.height() {
        for u in 0..disp.width() {
            let z = disp.get(u, v).and_then(|d| stereo.disparity_to_depth(d).ok());
            out.set(u, v, z);
        }
    }
    out
}
