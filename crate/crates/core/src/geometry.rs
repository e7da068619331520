//! Points, cameras and the pinhole projection model.
//!
//! A camera maps a world point `P` to a pixel through
//!
//! ```text
//! c · [u, v, 1]ᵀ = b · [N | e] · [P, 1]ᵀ
//! ```
//!
//! where `b` is the upper-triangular intrinsic matrix ([`CameraIntrinsics`]),
//! `[N | e]` is the world-to-camera rigid transform ([`CameraPose`]) and `c` is
//! the projective depth that is divided out.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on orthonormality and determinant of rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// A point on the image plane, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// `[u, v, 1]`.
    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }

    /// Divides out the last coordinate.
    pub fn from_homogeneous(h: &Vector3<f64>) -> Self {
        Self::new(h.x / h.z, h.y / h.z)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// A point in 3D, in scene length units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// `[x, y, z, 1]`.
    pub fn homogeneous(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.z, 1.0)
    }

    pub fn from_homogeneous(h: &Vector4<f64>) -> Self {
        Self::new(h.x / h.w, h.y / h.w, h.z / h.w)
    }

    pub fn coords(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_coords(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Appends a unit coordinate to a point.
pub trait Homogenize {
    type Output;
    fn homogenize(&self) -> Self::Output;
}

impl Homogenize for PixelPoint {
    type Output = Vector3<f64>;
    fn homogenize(&self) -> Vector3<f64> {
        self.homogeneous()
    }
}

impl Homogenize for WorldPoint {
    type Output = Vector4<f64>;
    fn homogenize(&self) -> Vector4<f64> {
        self.homogeneous()
    }
}

/// Pinhole intrinsics: pixel focal lengths, skew and principal point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub alpha_u: f64,
    pub alpha_v: f64,
    /// Skew between the pixel axes.
    pub gamma: f64,
    pub u0: f64,
    pub v0: f64,
}

impl CameraIntrinsics {
    pub fn new(alpha_u: f64, alpha_v: f64, gamma: f64, u0: f64, v0: f64) -> Result<Self> {
        let k = Self {
            alpha_u,
            alpha_v,
            gamma,
            u0,
            v0,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, no skew.
    pub fn simple(focal: f64, u0: f64, v0: f64) -> Result<Self> {
        Self::new(focal, focal, 0.0, u0, v0)
    }

    pub fn identity() -> Self {
        Self {
            alpha_u: 1.0,
            alpha_v: 1.0,
            gamma: 0.0,
            u0: 0.0,
            v0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_u, self.alpha_v, self.gamma, self.u0, self.v0];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidIntrinsics("non-finite parameter".into()));
        }
        if self.alpha_u <= 0.0 || self.alpha_v <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (alpha_u {}, alpha_v {})",
                self.alpha_u, self.alpha_v
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.alpha_u,
            self.gamma,
            self.u0,
            0.0,
            self.alpha_v,
            self.v0,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Closed-form inverse of the upper-triangular intrinsic matrix.
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let (a, b, g, u0, v0) = (self.alpha_u, self.alpha_v, self.gamma, self.u0, self.v0);
        Matrix3::new(
            1.0 / a,
            -g / (a * b),
            (g * v0 - b * u0) / (a * b),
            0.0,
            1.0 / b,
            -v0 / b,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Reads the five parameters off an upper-triangular matrix with `m[(2,2)] != 0`.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let m = m / m[(2, 2)];
        Self::new(m[(0, 0)], m[(1, 1)], m[(0, 1)], m[(0, 2)], m[(1, 2)])
    }
}

/// Rigid transform from world coordinates to camera coordinates: `X_c = N·X_w + e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if translation.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPose("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Like [`CameraPose::new`], but first snaps the rotation onto SO(3).
    pub fn new_projected(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::new(nearest_rotation(&rotation)?, translation)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, p: &WorldPoint) -> WorldPoint {
        WorldPoint::from_coords(&(self.rotation * p.coords() + self.translation))
    }

    /// Camera centre expressed in world coordinates, `-Nᵀe`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Applies `self` first, then `then`.
    pub fn then(&self, then: &CameraPose) -> CameraPose {
        compose_pose(self, then)
    }

    pub fn inverse(&self) -> CameraPose {
        invert_pose(self)
    }

    /// Largest absolute entry of `self - other`, over rotation and translation.
    pub fn max_abs_diff(&self, other: &CameraPose) -> f64 {
        let r = (self.rotation - other.rotation).amax();
        let t = (self.translation - other.translation).amax();
        r.max(t)
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidPose("non-finite rotation".into()));
    }
    let drift = (r.transpose() * r - Matrix3::identity()).amax();
    if drift > ROTATION_TOLERANCE {
        return Err(Error::InvalidPose(format!(
            "rotation is not orthonormal (max |NᵀN - I| = {drift:e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::InvalidPose(format!("rotation determinant is {det}")));
    }
    Ok(())
}

/// Closest rotation in the Frobenius sense (orthogonal polar factor with `det = +1`).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidPose("non-finite matrix".into()));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::InvalidPose("SVD failed".into())),
    };
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    Ok(u * fix * v_t)
}

/// Cross-product matrix `[e]ₓ`, with `[e]ₓ·v = e × v`.
pub fn skew_symmetric(e: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -e.z, e.y, e.z, 0.0, -e.x, -e.y, e.x, 0.0)
}

/// Projects a world point into a camera.
pub fn project_point(
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    point: &WorldPoint,
) -> Result<PixelPoint> {
    project_homogeneous(intrinsics, pose, &point.homogeneous())
}

/// Projects a homogeneous world point `[X, Y, Z, W]`; any non-zero scaling gives the same pixel.
pub fn project_homogeneous(
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    point: &Vector4<f64>,
) -> Result<PixelPoint> {
    let cam = pose.rotation * point.xyz() + pose.translation * point.w;
    // depth sign must not flip with the homogeneous scale
    let depth = cam.z * point.w.signum();
    if depth <= 0.0 || !depth.is_finite() {
        return Err(Error::PointBehindCamera { depth: cam.z });
    }
    let h = intrinsics.matrix() * cam;
    Ok(PixelPoint::from_homogeneous(&h))
}

/// World → `a` frame → `b` frame.
pub fn compose_pose(a: &CameraPose, b: &CameraPose) -> CameraPose {
    let mut rotation = b.rotation * a.rotation;
    if (rotation.transpose() * rotation - Matrix3::identity()).amax() > ROTATION_TOLERANCE {
        if let Ok(r) = nearest_rotation(&rotation) {
            rotation = r;
        }
    }
    CameraPose {
        rotation,
        translation: b.rotation * a.translation + b.translation,
    }
}

pub fn invert_pose(a: &CameraPose) -> CameraPose {
    let rt = a.rotation.transpose();
    CameraPose {
        rotation: rt,
        translation: -(rt * a.translation),
    }
}

/// Two cameras and the rigid motion from the left camera frame to the right one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub left_intrinsics: CameraIntrinsics,
    pub right_intrinsics: CameraIntrinsics,
    relative_rotation: Matrix3<f64>,
    relative_translation: Vector3<f64>,
}

impl StereoRig {
    pub fn new(
        left_intrinsics: CameraIntrinsics,
        right_intrinsics: CameraIntrinsics,
        relative_rotation: Matrix3<f64>,
        relative_translation: Vector3<f64>,
    ) -> Result<Self> {
        left_intrinsics.validate()?;
        right_intrinsics.validate()?;
        check_rotation(&relative_rotation)?;
        if relative_translation.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPose("non-finite relative translation".into()));
        }
        if relative_translation.norm() == 0.0 {
            return Err(Error::ZeroBaseline);
        }
        Ok(Self {
            left_intrinsics,
            right_intrinsics,
            relative_rotation,
            relative_translation,
        })
    }

    pub fn relative_rotation(&self) -> &Matrix3<f64> {
        &self.relative_rotation
    }

    pub fn relative_translation(&self) -> &Vector3<f64> {
        &self.relative_translation
    }

    /// Pose of the right camera when the left camera frame is the world frame.
    pub fn right_pose(&self) -> CameraPose {
        CameraPose {
            rotation: self.relative_rotation,
            translation: self.relative_translation,
        }
    }

    /// Distance between the optical centres.
    pub fn baseline(&self) -> f64 {
        self.relative_translation.norm()
    }

    /// Projects a point given in the left camera frame into both images.
    pub fn project(&self, p: &WorldPoint) -> Result<(PixelPoint, PixelPoint)> {
        let l = project_point(&self.left_intrinsics, &CameraPose::identity(), p)?;
        let r = project_point(&self.right_intrinsics, &self.right_pose(), p)?;
        Ok((l, r))
    }
}

/// Serialized form of one calibrated camera: intrinsics plus a row-major pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParameters {
    pub alpha_u: f64,
    pub alpha_v: f64,
    pub gamma: f64,
    pub u0: f64,
    pub v0: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl CameraParameters {
    pub fn new(intrinsics: &CameraIntrinsics, pose: &CameraPose) -> Self {
        Self {
            alpha_u: intrinsics.alpha_u,
            alpha_v: intrinsics.alpha_v,
            gamma: intrinsics.gamma,
            u0: intrinsics.u0,
            v0: intrinsics.v0,
            rotation: matrix_to_row_major(pose.rotation()),
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.alpha_u, self.alpha_v, self.gamma, self.u0, self.v0)
    }

    pub fn pose(&self) -> Result<CameraPose> {
        CameraPose::new(
            matrix_from_row_major(&self.rotation),
            Vector3::from(self.translation),
        )
    }
}

pub fn matrix_to_row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[(r, c)];
        }
    }
    out
}

pub fn matrix_from_row_major(v: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(v)
}

/// Rotation about the x axis by `angle` radians.
pub fn rotation_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rotation_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rotation_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation from an axis-angle vector (direction = axis, norm = angle in radians).
pub fn rotation_from_axis_angle(v: &Vector3<f64>) -> Matrix3<f64> {
    nalgebra::Rotation3::from_scaled_axis(*v).into_inner()
}

pub fn axis_angle_from_rotation(r: &Matrix3<f64>) -> Vector3<f64> {
    nalgebra::Rotation3::from_matrix_unchecked(*r).scaled_axis()
}
