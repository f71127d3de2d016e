//! Rigid-body transforms on SE(3).
//!
//! Conventions used throughout the crate:
//! - twists are ordered `(v, ω)`: translational part first, rotational second;
//! - perturbations are applied on the left, `T ← exp(ε)·T`;
//! - rotations are stored as 3×3 matrices; quaternions only appear at the
//!   persistence boundary, in `(x, y, z, w)` order.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix3x6, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};

const SMALL_ANGLE: f64 = 1e-8;
/// Below this angle the cancelling coefficients use truncated series.
const SERIES_ANGLE: f64 = 1e-2;
/// Below this distance from π the rotation axis is recovered from the
/// symmetric part of the rotation matrix.
const NEAR_PI_BRANCH: f64 = 1e-3;
/// Distance from π at which [`LogResult::near_pi`] is raised.
pub const NEAR_PI_FLAG: f64 = 1e-6;
const ORTHONORMAL_DRIFT: f64 = 1e-11;

/// Skew-symmetric matrix such that `skew(a) * b == a.cross(&b)`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Lie-algebra coordinates of a rigid motion, ordered `(v, ω)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn new(v: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Twist(Vector6::new(v.x, v.y, v.z, omega.x, omega.y, omega.z))
    }

    pub fn zero() -> Self {
        Twist(Vector6::zeros())
    }

    pub fn translational(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotational(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn exp(&self) -> Pose {
        exp_se3(self)
    }
}

impl From<Vector6<f64>> for Twist {
    fn from(v: Vector6<f64>) -> Self {
        Twist(v)
    }
}

/// A rigid transform `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.translation;
        let q = self.quaternion_xyzw();
        write!(
            f,
            "Pose(t: [{:.6}, {:.6}, {:.6}], q: [{:.6}, {:.6}, {:.6}, {:.6}])",
            t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        )
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a rotation matrix, re-orthonormalizing it if needed.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
        .renormalized()
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about a unit (or any non-zero) axis by `angle` radians.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let omega = axis.normalize() * angle;
        let rotation = exp_se3(&Twist::new(Vector3::zeros(), omega)).rotation;
        Pose {
            rotation,
            translation,
        }
    }

    /// `q` is `(x, y, z, w)`; it is normalized before use.
    pub fn from_quaternion_xyzw(translation: Vector3<f64>, q: [f64; 4]) -> Self {
        let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[3], q[0], q[1], q[2]));
        Pose {
            rotation: *uq.to_rotation_matrix().matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Unit quaternion `(x, y, z, w)` with non-negative `w`.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = q.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
        .renormalized()
    }

    pub fn act(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn log(&self) -> Twist {
        log_se3(self).twist
    }

    /// Rotation angle in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Largest elementwise deviation of `RᵀR` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    fn renormalized(mut self) -> Pose {
        let gram = self.rotation.transpose() * self.rotation;
        if (gram - Matrix3::identity()).amax() > ORTHONORMAL_DRIFT {
            // One Newton step of the polar decomposition; converges
            // quadratically for the small drifts produced by composition.
            self.rotation = self.rotation * (Matrix3::identity() * 3.0 - gram) * 0.5;
            let gram = self.rotation.transpose() * self.rotation;
            if (gram - Matrix3::identity()).amax() > ORTHONORMAL_DRIFT {
                let svd = self.rotation.svd(true, true);
                let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
                let mut r = u * vt;
                if r.determinant() < 0.0 {
                    let mut u = u;
                    u.column_mut(2).neg_mut();
                    r = u * vt;
                }
                self.rotation = r;
            }
        }
        self
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = 0.5 * vee(&(r - r.transpose())).norm();
    sin.atan2(cos)
}

/// Closed-form exponential map.
pub fn exp_se3(xi: &Twist) -> Pose {
    let v = xi.translational();
    let omega = xi.rotational();
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let half_sin = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * half_sin * half_sin / theta2)
    };
    // (θ − sinθ)/θ³ cancels badly for small θ, so use its series there.
    let c = if theta < SERIES_ANGLE {
        1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
    } else {
        (theta - theta.sin()) / (theta2 * theta)
    };
    let w = skew(&omega);
    let w2 = w * w;
    let rotation = Matrix3::identity() + w * a + w2 * b;
    let left_jacobian = Matrix3::identity() + w * b + w2 * c;
    Pose {
        rotation,
        translation: left_jacobian * v,
    }
}

/// Output of [`log_se3`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogResult {
    pub twist: Twist,
    /// Rotation angle within [`NEAR_PI_FLAG`] of π; the axis sign is then
    /// ambiguous and was resolved arbitrarily.
    pub near_pi: bool,
}

/// Logarithm map; the rotational part has norm in `[0, π]`.
pub fn log_se3(pose: &Pose) -> LogResult {
    let r = &pose.rotation;
    let theta = rotation_angle(r);
    let asym = vee(&(r - r.transpose()));

    let omega = if theta < SMALL_ANGLE {
        asym * (0.5 * (1.0 + theta * theta / 6.0))
    } else if std::f64::consts::PI - theta < NEAR_PI_BRANCH {
        // R + Rᵀ − 2cosθ·I = 2(1 − cosθ)·n·nᵀ
        let cos = theta.cos();
        let nnt = (r + r.transpose() - Matrix3::identity() * (2.0 * cos)) / (2.0 * (1.0 - cos));
        let k = (0..3)
            .max_by(|&i, &j| nnt[(i, i)].total_cmp(&nnt[(j, j)]))
            .unwrap_or(0);
        let mut axis = nnt.column(k).into_owned() / nnt[(k, k)].max(f64::MIN_POSITIVE).sqrt();
        axis.normalize_mut();
        if axis.dot(&asym) < 0.0 {
            axis = -axis;
        }
        axis * theta
    } else {
        asym * (theta / (2.0 * theta.sin()))
    };

    let w = skew(&omega);
    let theta2 = theta * theta;
    let coeff = if theta < SERIES_ANGLE {
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    } else {
        let half_sin = (0.5 * theta).sin();
        (1.0 - theta * theta.sin() / (4.0 * half_sin * half_sin)) / theta2
    };
    let v_inv = Matrix3::identity() - w * 0.5 + w * w * coeff;
    LogResult {
        twist: Twist::new(v_inv * pose.translation, omega),
        near_pi: (std::f64::consts::PI - theta).abs() < NEAR_PI_FLAG,
    }
}

/// Derivative of `act(exp(ε)·P, p)` at `ε = 0`: `[I | −skew(P·p)]`.
pub fn point_pose_jacobian(pose: &Pose, p: &Vector3<f64>) -> Matrix3x6<f64> {
    let q = pose.act(p);
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&q)));
    j
}
