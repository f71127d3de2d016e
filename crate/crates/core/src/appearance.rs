//! Appearance normalization applied to every image before tracking.
//!
//! The same transform is applied to keyframe and live images so that both
//! are compared in a common canonical appearance.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::imaging::{load_image_png, ImageBuffer, ImageError};

const MIN_GAIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("no precomputed frame for {frame_id:?} under {dir}")]
    MissingFrame { frame_id: String, dir: String },
    #[error("affine gain {0} is too close to zero")]
    ZeroGain(f64),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Gain/offset of the forward model `I' = a·I + b`.
#[derive(Clone, Debug, PartialEq)]
pub enum AffineModel {
    Constant { gain: f64, offset: f64 },
    /// Per-frame parameters keyed by frame identifier, for time-varying
    /// illumination whose parameters are known per frame.
    PerFrame(BTreeMap<String, (f64, f64)>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum AppearanceTransform {
    Identity,
    /// Inverts `I' = a·I + b`, i.e. returns `clamp((I' − b)/a, 0, 1)`.
    AffineCorrection(AffineModel),
    /// Looks up an already-transformed image `<dir>/<frame_id>.png`.
    ExternalPrecomputed { dir: PathBuf },
}

impl fmt::Display for AppearanceTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppearanceTransform::Identity => write!(f, "identity"),
            AppearanceTransform::AffineCorrection(AffineModel::Constant { gain, offset }) => {
                write!(f, "affine:{gain},{offset}")
            }
            AppearanceTransform::AffineCorrection(AffineModel::PerFrame(m)) => {
                write!(f, "affine:per-frame({})", m.len())
            }
            AppearanceTransform::ExternalPrecomputed { dir } => write!(f, "external:{}", dir.display()),
        }
    }
}

impl AppearanceTransform {
    pub fn affine(gain: f64, offset: f64) -> Self {
        AppearanceTransform::AffineCorrection(AffineModel::Constant { gain, offset })
    }

    /// Precomputed frames for `condition` mapped to `canonical` under `root`,
    /// laid out as `<root>/<condition>-to-<canonical>/<frame>.png`.
    pub fn external(root: &Path, condition: &str, canonical: &str) -> Self {
        AppearanceTransform::ExternalPrecomputed {
            dir: root.join(format!("{condition}-to-{canonical}")),
        }
    }

    /// Maps `img` (frame `frame_id`) to the canonical appearance. The output
    /// has the same size and channel count as the input.
    pub fn apply(&self, img: &ImageBuffer, frame_id: &str) -> Result<ImageBuffer, TransformError> {
        match self {
            AppearanceTransform::Identity => Ok(img.clone()),
            AppearanceTransform::AffineCorrection(model) => {
                let (gain, offset) = match model {
                    AffineModel::Constant { gain, offset } => (*gain, *offset),
                    AffineModel::PerFrame(table) => {
                        *table.get(frame_id).ok_or_else(|| TransformError::MissingFrame {
                            frame_id: frame_id.to_string(),
                            dir: "<affine parameter table>".to_string(),
                        })?
                    }
                };
                if gain.abs() < MIN_GAIN {
                    return Err(TransformError::ZeroGain(gain));
                }
                Ok(img.map(|x| (x - offset) / gain))
            }
            AppearanceTransform::ExternalPrecomputed { dir } => {
                let path = dir.join(format!("{frame_id}.png"));
                if !path.is_file() {
                    return Err(TransformError::MissingFrame {
                        frame_id: frame_id.to_string(),
                        dir: dir.display().to_string(),
                    });
                }
                let mut out = load_image_png(&path)?.resize_center_crop(img.width(), img.height());
                if out.channels() != img.channels() {
                    out = if img.channels() == 1 {
                        out.to_luminance()
                    } else {
                        ImageBuffer::from_fn(out.width(), out.height(), 3, |u, v, _| out.get(u, v, 0))
                    };
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::save_image_png;
    use proptest::prelude::*;

    fn sample() -> ImageBuffer {
        ImageBuffer::from_fn(12, 8, 3, |u, v, c| 0.1 + 0.04 * u as f64 + 0.02 * v as f64 + 0.01 * c as f64)
    }

    #[test]
    fn identity_is_bit_identical() {
        let img = sample();
        assert_eq!(AppearanceTransform::Identity.apply(&img, "f").unwrap(), img);
    }

    #[test]
    fn inverts_light_and_dark_conditions() {
        let img = sample().map(|x| x * 0.45 + 0.28);
        for (a, b) in [(1.5, 0.1), (0.8, -0.2)] {
            let degraded = img.map(|x| a * x + b);
            let back = AppearanceTransform::affine(a, b).apply(&degraded, "f").unwrap();
            for (x, y) in back.data().iter().zip(img.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_gain_rejected() {
        let err = AppearanceTransform::affine(1e-9, 0.0).apply(&sample(), "f").unwrap_err();
        assert!(matches!(err, TransformError::ZeroGain(_)));
    }

    #[test]
    fn per_frame_lookup() {
        let mut table = BTreeMap::new();
        table.insert("000001".to_string(), (2.0, 0.0));
        let t = AppearanceTransform::AffineCorrection(AffineModel::PerFrame(table));
        let img = ImageBuffer::constant(3, 3, 1, 0.5);
        assert_eq!(t.apply(&img, "000001").unwrap().get(1, 1, 0), 0.25);
        assert!(matches!(t.apply(&img, "000002"), Err(TransformError::MissingFrame { .. })));
    }

    #[test]
    fn external_lookup_resizes_and_reports_missing() {
        let root = tempfile::tempdir().unwrap();
        let t = AppearanceTransform::external(root.path(), "global", "static");
        let AppearanceTransform::ExternalPrecomputed { dir } = &t else { unreachable!() };
        std::fs::create_dir_all(dir).unwrap();
        let stored = ImageBuffer::constant(24, 16, 3, 0.2).quantized_u16();
        save_image_png(&stored, &dir.join("000003.png")).unwrap();

        let live = ImageBuffer::constant(12, 8, 1, 0.9);
        let out = t.apply(&live, "000003").unwrap();
        assert_eq!((out.width(), out.height(), out.channels()), (12, 8, 1));
        assert!((out.get(5, 5, 0) - stored.get(0, 0, 0)).abs() < 1e-12);
        assert!(matches!(t.apply(&live, "000004"), Err(TransformError::MissingFrame { .. })));
    }

    #[test]
    fn restores_photometric_consistency() {
        let base = sample().map(|x| 0.5 * x + 0.1);
        let (a1, b1, a2, b2) = (1.0, 0.0, 1.3, 0.08);
        let i1 = base.map(|x| a1 * x + b1);
        let i2 = base.map(|x| a2 * x + b2);
        let mad = |p: &ImageBuffer, q: &ImageBuffer| {
            p.data().iter().zip(q.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / p.data().len() as f64
        };
        let t1 = AppearanceTransform::affine(a1, b1).apply(&i1, "a").unwrap();
        let t2 = AppearanceTransform::affine(a2, b2).apply(&i2, "b").unwrap();
        assert!(mad(&t1, &t2) <= 1e-3);
        assert!(mad(&i1, &i2) >= b2);
    }

    proptest! {
        #[test]
        fn affine_correction_inverts_forward_model(a in 0.5f64..2.0, b in -0.2f64..0.2,
                                                   ts in proptest::collection::vec(0.0f64..1.0, 16)) {
            // Keep a·x + b inside [0, 1] so the forward model does not clip.
            let (lo, hi) = ((-b / a).max(0.0), ((1.0 - b) / a).min(1.0));
            let xs: Vec<f64> = ts.iter().map(|t| lo + t * (hi - lo)).collect();
            let img = ImageBuffer::new(4, 4, 1, xs.clone()).unwrap();
            let forward: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let degraded = ImageBuffer::new(4, 4, 1, forward).unwrap();
            let back = AppearanceTransform::affine(a, b).apply(&degraded, "f").unwrap();
            for (x, y) in back.data().iter().zip(img.data()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            let again = AppearanceTransform::affine(a, b).apply(&degraded, "f").unwrap();
            prop_assert_eq!(back, again);
        }
    }
}
