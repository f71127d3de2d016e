//! Pinhole camera for RGB-D frames plus the rectified-stereo disparity variant.
//!
//! Integer pixel coordinates address pixel centers, so the image domain is
//! `[0, width − 1] × [0, height − 1]`.

use nalgebra::{Matrix2x3, Vector2, Vector3};
use thiserror::Error;

/// Smallest depth (meters) treated as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-9;
/// Smallest usable disparity (pixels).
pub const MIN_DISPARITY: f64 = 1e-9;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum CameraError {
    #[error("point depth {0} is not positive")]
    NonPositiveDepth(f64),
    #[error("disparity {0} is not positive")]
    NonPositiveDisparity(f64),
    #[error("pixel ({0}, {1}) is outside the image")]
    OutOfBounds(f64, f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fu: f64,
        fv: f64,
        cu: f64,
        cv: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        let k = CameraIntrinsics {
            fu,
            fv,
            cu,
            cv,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fu > 0.0 && self.fv > 0.0) {
            return Err(CameraError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.cu > 0.0 && self.cu < self.width as f64) {
            return Err(CameraError::InvalidIntrinsics("cu outside (0, width)"));
        }
        if !(self.cv > 0.0 && self.cv < self.height as f64) {
            return Err(CameraError::InvalidIntrinsics("cv outside (0, height)"));
        }
        Ok(())
    }

    /// Intrinsics of an image decimated by two with `floor` sizing. Pixel
    /// centers stay aligned: coarse pixel `x` sits at fine coordinate `2x + 0.5`.
    pub fn halved(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fu: self.fu * 0.5,
            fv: self.fv * 0.5,
            cu: (self.cu + 0.5) * 0.5 - 0.5,
            cv: (self.cv + 0.5) * 0.5 - 0.5,
            width: self.width / 2,
            height: self.height / 2,
        }
    }

    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    /// Projects a camera-frame point; returns the pixel and the depth `p_z`.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Result<(Vector2<f64>, f64), CameraError> {
        if p.z <= MIN_DEPTH {
            return Err(CameraError::NonPositiveDepth(p.z));
        }
        let inv_z = 1.0 / p.z;
        Ok((
            Vector2::new(self.fu * p.x * inv_z + self.cu, self.fv * p.y * inv_z + self.cv),
            p.z,
        ))
    }

    #[inline]
    pub fn backproject(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>, CameraError> {
        if depth <= MIN_DEPTH {
            return Err(CameraError::NonPositiveDepth(depth));
        }
        Ok(self.backprojection_depth_jacobian(pixel)? * depth)
    }

    /// `∂project/∂p`, a 2×3 matrix.
    #[inline]
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> Result<Matrix2x3<f64>, CameraError> {
        if p.z <= MIN_DEPTH {
            return Err(CameraError::NonPositiveDepth(p.z));
        }
        let inv_z = 1.0 / p.z;
        let inv_z2 = inv_z * inv_z;
        Ok(Matrix2x3::new(
            self.fu * inv_z,
            0.0,
            -self.fu * p.x * inv_z2,
            0.0,
            self.fv * inv_z,
            -self.fv * p.y * inv_z2,
        ))
    }

    /// `∂backproject/∂depth`: the viewing ray scaled to unit depth.
    #[inline]
    pub fn backprojection_depth_jacobian(&self, pixel: &Vector2<f64>) -> Result<Vector3<f64>, CameraError> {
        if !self.contains(pixel.x, pixel.y) {
            return Err(CameraError::OutOfBounds(pixel.x, pixel.y));
        }
        Ok(Vector3::new(
            (pixel.x - self.cu) / self.fu,
            (pixel.y - self.cv) / self.fv,
            1.0,
        ))
    }
}

/// Rectified stereo pair: left-camera intrinsics and baseline in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoModel {
    pub intrinsics: CameraIntrinsics,
    pub baseline: f64,
}

impl StereoModel {
    pub fn new(intrinsics: CameraIntrinsics, baseline: f64) -> Result<Self, CameraError> {
        intrinsics.validate()?;
        if !(baseline > 0.0) {
            return Err(CameraError::InvalidIntrinsics("baseline must be positive"));
        }
        Ok(StereoModel {
            intrinsics,
            baseline,
        })
    }

    pub fn depth_to_disparity(&self, depth: f64) -> Result<f64, CameraError> {
        if depth <= MIN_DEPTH {
            return Err(CameraError::NonPositiveDepth(depth));
        }
        Ok(self.intrinsics.fu * self.baseline / depth)
    }

    pub fn disparity_to_depth(&self, disparity: f64) -> Result<f64, CameraError> {
        if !(disparity > MIN_DISPARITY) {
            return Err(CameraError::NonPositiveDisparity(disparity));
        }
        Ok(self.intrinsics.fu * self.baseline / disparity)
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<(Vector2<f64>, f64), CameraError> {
        let (px, z) = self.intrinsics.project(p)?;
        Ok((px, self.depth_to_disparity(z)?))
    }

    pub fn backproject(&self, pixel: &Vector2<f64>, disparity: f64) -> Result<Vector3<f64>, CameraError> {
        let depth = self.disparity_to_depth(disparity)?;
        self.intrinsics.backproject(pixel, depth)
    }
}
