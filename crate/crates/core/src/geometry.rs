//! Rigid-body poses, pinhole projection, pose interpolation, and rotation
//! metrics.
//!
//! Rotations are stored as unit quaternions and converted to matrices on
//! demand, so re-orthonormalization reduces to quaternion renormalization.
//! All operations here are pure; the types are plain values and can be
//! shared freely across threads.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth ({0})")]
    NonPositiveDepth(f64),
    #[error("degenerate time interval: t_i = {t_i}, t_j = {t_j}")]
    DegenerateInterval { t_i: f64, t_j: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// Rigid transform mapping camera-frame points into the parent (world) frame:
/// `p_world = R * p_cam + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    /// Pose from a rotation vector (axis * angle, radians) and translation.
    pub fn from_parts(rotation_vec: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: UnitQuaternion::from_scaled_axis(rotation_vec),
            translation,
        }
    }

    /// Pose from `(tx, ty, tz, qx, qy, qz, qw)`, the on-disk layout.
    pub fn from_tq(t: [f64; 3], q: [f64; 4]) -> Self {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        Pose {
            rotation: UnitQuaternion::from_quaternion(quat),
            translation: Vector3::new(t[0], t[1], t[2]),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self` applied after `other`: the returned transform maps through
    /// `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv_rot = self.rotation.inverse();
        Pose {
            rotation: inv_rot,
            translation: -(inv_rot * self.translation),
        }
    }

    /// Renormalize the quaternion. Composition chains drift at the level of
    /// machine epsilon per product; calling this periodically keeps
    /// `R^T R = I` tight over millions of compositions.
    pub fn renormalize(&mut self) {
        self.rotation.renormalize();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image dimensions must be positive"));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Centered pinhole model: principal point at the middle of the pixel
    /// grid.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        CameraIntrinsics::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    /// Pixel coordinates to calibrated (dimensionless) camera coordinates.
    pub fn calibrate(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }

    /// Calibrated coordinates back to pixel coordinates.
    pub fn to_pixel(&self, calibrated: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * calibrated.x + self.cx,
            self.fy * calibrated.y + self.cy,
        )
    }
}

/// Canonical perspective projection `(X, Y, Z) -> (X/Z, Y/Z)`.
pub fn project(p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    if p.z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    Ok(Vector2::new(p.x / p.z, p.y / p.z))
}

/// Inverse perspective projection: the point at depth `z` on the ray through
/// calibrated coordinates `u`.
pub fn backproject(u: &Vector2<f64>, z: f64) -> Result<Vector3<f64>, GeometryError> {
    if z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    Ok(Vector3::new(u.x * z, u.y * z, z))
}

/// Pose at time `t` between two timestamped poses: linear in translation,
/// constant angular velocity in rotation (linear interpolation of the
/// relative rotation in exponential coordinates).
///
/// Endpoints are reproduced exactly. `t` outside `[t_i, t_j]` extrapolates
/// with the same constant-velocity model. The result is invariant to
/// swapping the two endpoints; only a zero-length interval is rejected.
pub fn interpolate_pose(
    pose_i: &Pose,
    t_i: f64,
    pose_j: &Pose,
    t_j: f64,
    t: f64,
) -> Result<Pose, GeometryError> {
    if t_j == t_i {
        return Err(GeometryError::DegenerateInterval { t_i, t_j });
    }
    let s = (t - t_i) / (t_j - t_i);
    if s == 0.0 {
        return Ok(*pose_i);
    }
    if s == 1.0 {
        return Ok(*pose_j);
    }
    let translation = pose_i.translation + (pose_j.translation - pose_i.translation) * s;
    let relative = pose_i.rotation.inverse() * pose_j.rotation;
    let rotation = pose_i.rotation * UnitQuaternion::from_scaled_axis(relative.scaled_axis() * s);
    Ok(Pose {
        rotation,
        translation,
    })
}

/// Angle of the relative rotation `Ra^T Rb` in degrees, in `[0, 180]`.
///
/// Extracted through atan2 of the relative quaternion, which is exact at
/// both boundaries; the cosine term is additionally clamped to `[-1, 1]` so
/// no roundoff can produce a NaN.
pub fn geodesic_angle_deg(ra: &UnitQuaternion<f64>, rb: &UnitQuaternion<f64>) -> f64 {
    let rel = ra.inverse() * rb;
    let q = rel.quaternion();
    let sin_half = q.imag().norm().min(1.0);
    let cos_half = q.w.abs().clamp(0.0, 1.0);
    (2.0 * sin_half.atan2(cos_half)).to_degrees()
}
