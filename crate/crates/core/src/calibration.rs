//! Planar-target calibration and two-view geometry.
//!
//! Intrinsics come from the closed-form absolute-conic solution over per-view
//! board→image homographies, optionally polished by minimizing reprojection
//! error. Per-view extrinsics are read back off each homography. Two calibrated
//! cameras that observed the same board views give the stereo relative pose,
//! and from that the fundamental matrix.

use std::path::Path;

use indexmap::IndexMap;
use log::warn;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    axis_angle_from_rotation, matrix_from_row_major, matrix_to_row_major, nearest_rotation,
    rotation_from_axis_angle, skew_symmetric, CameraIntrinsics, CameraParameters, CameraPose,
    PixelPoint, StereoRig,
};
use crate::least_squares::{levenberg_marquardt, LeastSquaresProblem, LmOptions};

/// Corner correspondences from one image of a planar target lying in `Z = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarObservation {
    pub view_id: String,
    /// Target-plane coordinates.
    pub board_points: Vec<[f64; 2]>,
    #[serde(with = "pixel_pairs")]
    pub image_points: Vec<PixelPoint>,
}

mod pixel_pairs {
    use super::PixelPoint;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(points: &[PixelPoint], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = points.iter().map(|p| [p.u, p.v]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<PixelPoint>, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(pairs.into_iter().map(|[u, v]| PixelPoint::new(u, v)).collect())
    }
}

impl PlanarObservation {
    pub fn validate(&self) -> Result<()> {
        if self.board_points.len() != self.image_points.len() {
            return Err(Error::DimensionMismatch(format!(
                "view {}: {} board points but {} image points",
                self.view_id,
                self.board_points.len(),
                self.image_points.len()
            )));
        }
        if self.board_points.len() < 4 {
            return Err(Error::InsufficientPoints {
                needed: 4,
                got: self.board_points.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CalibrationOptions {
    /// Polish the closed-form estimate by minimizing reprojection error.
    pub refine: bool,
    /// Constrain skew to zero. Lowers the minimum number of views from 3 to 2.
    pub zero_skew: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub intrinsics: CameraIntrinsics,
    /// Board→camera pose per view, in input order.
    pub view_poses: IndexMap<String, CameraPose>,
    /// Root-mean-square reprojection distance over all points, in pixels.
    pub rms_reprojection_error: f64,
    /// False when refinement stopped at its iteration cap.
    pub converged: bool,
}

/// Normalized DLT estimate of the board→image homography.
///
/// The result has unit Frobenius norm and a non-negative bottom-right entry.
pub fn estimate_homography(
    board_points: &[[f64; 2]],
    image_points: &[PixelPoint],
) -> Result<Matrix3<f64>> {
    if board_points.len() != image_points.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} board points but {} image points",
            board_points.len(),
            image_points.len()
        )));
    }
    if board_points.len() < 4 {
        return Err(Error::Degenerate(format!(
            "homography needs at least 4 correspondences, got {}",
            board_points.len()
        )));
    }
    let src: Vec<[f64; 2]> = board_points.to_vec();
    let dst: Vec<[f64; 2]> = image_points.iter().map(|p| [p.u, p.v]).collect();
    let t_src = normalizing_transform(&src)?;
    let t_dst = normalizing_transform(&dst)?;

    let n = src.len();
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let s = t_src * Vector3::new(src[i][0], src[i][1], 1.0);
        let d = t_dst * Vector3::new(dst[i][0], dst[i][1], 1.0);
        let (x, y) = (s.x / s.z, s.y / s.z);
        let (u, v) = (d.x / d.z, d.y / d.z);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let (h, second_smallest) = null_vector(a)?;
    if second_smallest < 1e-10 {
        return Err(Error::Degenerate(
            "correspondences do not determine a unique homography".into(),
        ));
    }
    let hn = Matrix3::from_row_slice(h.as_slice());
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("normalization failed".into()))?;
    let mut hm = t_dst_inv * hn * t_src;
    let norm = hm.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Degenerate("homography vanished".into()));
    }
    hm /= norm;
    if hm[(2, 2)] < 0.0 {
        hm = -hm;
    }
    Ok(hm)
}

/// Unit vector minimizing `‖A·x‖`, plus the second-smallest singular value
/// (relative to the largest) as a rank-deficiency gauge.
fn null_vector(a: DMatrix<f64>) -> Result<(DVector<f64>, f64)> {
    let cols = a.ncols();
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let smallest = order[0];
    let largest = sv[order[order.len() - 1]];
    if largest == 0.0 {
        return Err(Error::Degenerate("all-zero system".into()));
    }
    let second = if cols >= 2 { sv[order[1]] / largest } else { 1.0 };
    Ok((v_t.row(smallest).transpose(), second))
}

/// Centroid to origin, mean distance √2.
fn normalizing_transform(points: &[[f64; 2]]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(Error::Degenerate("points coincide".into()));
    }
    // reject collinear sets: the smaller principal spread vanishes
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = ((p[0] - cx) / mean_dist, (p[1] - cy) / mean_dist);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (sxx, syy, sxy) = (sxx / n, syy / n, sxy / n);
    let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    let minor = 0.5 * (sxx + syy - disc);
    if minor < 1e-12 {
        return Err(Error::Degenerate("points are collinear".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Row `v_ij` of the absolute-conic system for homography columns `i`, `j`.
fn conic_row(h: &Matrix3<f64>, i: usize, j: usize) -> [f64; 6] {
    let hi = h.column(i);
    let hj = h.column(j);
    [
        hi[0] * hj[0],
        hi[0] * hj[1] + hi[1] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ]
}

/// Closed-form intrinsics from two or more homographies.
fn intrinsics_from_homographies(
    homographies: &[Matrix3<f64>],
    zero_skew: bool,
) -> Result<CameraIntrinsics> {
    // condition the system: express every homography in an isotropically
    // scaled image frame, then map the result back
    let scale = homographies
        .iter()
        .map(|h| {
            let hh = h / h[(2, 2)];
            hh[(0, 2)].abs().max(hh[(1, 2)].abs())
        })
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let t = Matrix3::new(1.0 / scale, 0.0, 0.0, 0.0, 1.0 / scale, 0.0, 0.0, 0.0, 1.0);
    let normalized: Vec<Matrix3<f64>> = homographies
        .iter()
        .map(|h| {
            let m = t * h;
            m / m.norm()
        })
        .collect();

    let keep: Vec<usize> = if zero_skew {
        vec![0, 2, 3, 4, 5]
    } else {
        (0..6).collect()
    };
    let equations = 2 * normalized.len();
    let rows = equations.max(keep.len());
    let mut v = DMatrix::<f64>::zeros(rows, keep.len());
    for (k, h) in normalized.iter().enumerate() {
        let v12 = conic_row(h, 0, 1);
        let v11 = conic_row(h, 0, 0);
        let v22 = conic_row(h, 1, 1);
        for (c, &idx) in keep.iter().enumerate() {
            v[(2 * k, c)] = v12[idx];
            v[(2 * k + 1, c)] = v11[idx] - v22[idx];
        }
    }
    let (sol, second) = null_vector(v)?;
    if second < 1e-12 {
        return Err(Error::Degenerate(
            "views do not constrain the intrinsics (too similar orientations?)".into(),
        ));
    }
    let mut b = [0.0; 6];
    for (c, &idx) in keep.iter().enumerate() {
        b[idx] = sol[c];
    }
    if b[0] < 0.0 {
        b.iter_mut().for_each(|x| *x = -*x);
    }
    let [b11, b12, b22, b13, b23, b33] = b;
    let denom = b11 * b22 - b12 * b12;
    if !(b11 > 0.0) || !(denom > 0.0) {
        return Err(Error::Degenerate(
            "image of the absolute conic is not positive definite".into(),
        ));
    }
    let v0 = (b12 * b13 - b11 * b23) / denom;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    if !(lambda / b11 > 0.0) {
        return Err(Error::Degenerate("negative focal length squared".into()));
    }
    let alpha = (lambda / b11).sqrt();
    let beta = (lambda * b11 / denom).sqrt();
    let gamma = if zero_skew {
        0.0
    } else {
        -b12 * alpha * alpha * beta / lambda
    };
    let u0 = gamma * v0 / beta - b13 * alpha * alpha / lambda;
    let normalized_k = Matrix3::new(alpha, gamma, u0, 0.0, beta, v0, 0.0, 0.0, 1.0);
    let t_inv = Matrix3::new(scale, 0.0, 0.0, 0.0, scale, 0.0, 0.0, 0.0, 1.0);
    let mut k = CameraIntrinsics::from_matrix(&(t_inv * normalized_k))?;
    if zero_skew {
        k.gamma = 0.0;
    }
    Ok(k)
}

/// Board→camera pose from a homography and known intrinsics.
pub fn estimate_view_pose(h: &Matrix3<f64>, intrinsics: &CameraIntrinsics) -> Result<CameraPose> {
    let scale = h.norm();
    if scale == 0.0 || !scale.is_finite() || h.determinant().abs() <= 1e-12 * scale.powi(3) {
        return Err(Error::SingularHomography);
    }
    let a = intrinsics.inverse_matrix() * h;
    let a1: Vector3<f64> = a.column(0).into();
    let a2: Vector3<f64> = a.column(1).into();
    let a3: Vector3<f64> = a.column(2).into();
    let (n1, n2) = (a1.norm(), a2.norm());
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::SingularHomography);
    }
    let mut r1 = a1 / n1;
    let mut r2 = a2 / n2;
    let mut t = a3 * (2.0 / (n1 + n2));
    if t.z < 0.0 {
        r1 = -r1;
        r2 = -r2;
        t = -t;
    }
    let r3 = r1.cross(&r2);
    let r = Matrix3::from_columns(&[r1, r2, r3]);
    CameraPose::new(nearest_rotation(&r)?, t)
}

fn board_point(p: &[f64; 2]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], 0.0)
}

fn reprojection_residuals(
    intrinsics: &CameraIntrinsics,
    poses: &[CameraPose],
    observations: &[PlanarObservation],
) -> Vec<f64> {
    let k = intrinsics.matrix();
    let mut out = Vec::new();
    for (pose, obs) in poses.iter().zip(observations) {
        for (b, m) in obs.board_points.iter().zip(&obs.image_points) {
            let cam = pose.rotation() * board_point(b) + pose.translation();
            if cam.z <= 0.0 {
                out.extend([1e6, 1e6]);
                continue;
            }
            let h = k * cam;
            out.push(h.x / h.z - m.u);
            out.push(h.y / h.z - m.v);
        }
    }
    out
}

fn rms(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    let points = residuals.len() / 2;
    (residuals.iter().map(|r| r * r).sum::<f64>() / points as f64).sqrt()
}

struct ReprojectionProblem<'a> {
    observations: &'a [PlanarObservation],
    zero_skew: bool,
}

impl ReprojectionProblem<'_> {
    fn intrinsic_count(&self) -> usize {
        if self.zero_skew {
            4
        } else {
            5
        }
    }

    fn pack(&self, k: &CameraIntrinsics, poses: &[CameraPose]) -> DVector<f64> {
        let mut p = if self.zero_skew {
            vec![k.alpha_u, k.alpha_v, k.u0, k.v0]
        } else {
            vec![k.alpha_u, k.alpha_v, k.gamma, k.u0, k.v0]
        };
        for pose in poses {
            let w = axis_angle_from_rotation(pose.rotation());
            let t = pose.translation();
            p.extend([w.x, w.y, w.z, t.x, t.y, t.z]);
        }
        DVector::from_vec(p)
    }

    /// Unchecked unpack; the optimizer may visit non-physical iterates.
    fn unpack(&self, p: &DVector<f64>) -> (CameraIntrinsics, Vec<CameraPose>) {
        let k = if self.zero_skew {
            CameraIntrinsics {
                alpha_u: p[0],
                alpha_v: p[1],
                gamma: 0.0,
                u0: p[2],
                v0: p[3],
            }
        } else {
            CameraIntrinsics {
                alpha_u: p[0],
                alpha_v: p[1],
                gamma: p[2],
                u0: p[3],
                v0: p[4],
            }
        };
        let base = self.intrinsic_count();
        let poses = (0..self.observations.len())
            .map(|i| {
                let o = base + 6 * i;
                let w = Vector3::new(p[o], p[o + 1], p[o + 2]);
                let t = Vector3::new(p[o + 3], p[o + 4], p[o + 5]);
                CameraPose::new(rotation_from_axis_angle(&w), t)
                    .unwrap_or_else(|_| CameraPose::from_translation(t))
            })
            .collect();
        (k, poses)
    }
}

impl LeastSquaresProblem for ReprojectionProblem<'_> {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64> {
        let (k, poses) = self.unpack(params);
        DVector::from_vec(reprojection_residuals(&k, &poses, self.observations))
    }
}

/// Calibrates one camera from images of a planar target.
pub fn calibrate_intrinsics(
    observations: &[PlanarObservation],
    options: CalibrationOptions,
) -> Result<CalibrationResult> {
    let needed = if options.zero_skew { 2 } else { 3 };
    if observations.len() < needed {
        return Err(Error::InsufficientViews {
            needed,
            got: observations.len(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    for obs in observations {
        obs.validate()?;
        if !seen.insert(obs.view_id.as_str()) {
            return Err(Error::InvalidValue(format!(
                "duplicate view id {}",
                obs.view_id
            )));
        }
    }

    let homographies = observations
        .iter()
        .map(|o| estimate_homography(&o.board_points, &o.image_points))
        .collect::<Result<Vec<_>>>()?;
    let mut intrinsics = intrinsics_from_homographies(&homographies, options.zero_skew)?;
    let mut poses = homographies
        .iter()
        .map(|h| estimate_view_pose(h, &intrinsics))
        .collect::<Result<Vec<_>>>()?;
    let mut residuals = reprojection_residuals(&intrinsics, &poses, observations);
    let mut converged = true;

    if options.refine {
        let problem = ReprojectionProblem {
            observations,
            zero_skew: options.zero_skew,
        };
        let report = levenberg_marquardt(
            &problem,
            problem.pack(&intrinsics, &poses),
            &LmOptions::default(),
        );
        let (k, p) = problem.unpack(&report.params);
        k.validate()?;
        intrinsics = k;
        poses = p
            .iter()
            .map(|pose| CameraPose::new_projected(*pose.rotation(), *pose.translation()))
            .collect::<Result<_>>()?;
        residuals = reprojection_residuals(&intrinsics, &poses, observations);
        converged = report.converged;
        if !converged {
            warn!(
                "calibration refinement stopped after {} iterations without converging; reporting best iterate",
                report.iterations
            );
        }
    }

    Ok(CalibrationResult {
        intrinsics,
        view_poses: observations
            .iter()
            .map(|o| o.view_id.clone())
            .zip(poses)
            .collect(),
        rms_reprojection_error: rms(&residuals),
        converged,
    })
}

/// Motion from the left camera frame to the right one, given both world→camera poses.
pub fn stereo_relative_pose(left: &CameraPose, right: &CameraPose) -> CameraPose {
    let n_rl = right.rotation() * left.rotation().transpose();
    let e_rl = right.translation() - n_rl * left.translation();
    // n_rl is orthonormal to rounding; re-project only if it drifted
    CameraPose::new(n_rl, e_rl)
        .or_else(|_| CameraPose::new_projected(n_rl, e_rl))
        .expect("product of rotations is a rotation")
}

/// Builds a rig from two calibrations that share view ids, averaging the
/// relative pose over every shared view.
pub fn stereo_rig_from_calibrations(
    left: &CalibrationResult,
    right: &CalibrationResult,
) -> Result<StereoRig> {
    let shared: Vec<CameraPose> = left
        .view_poses
        .iter()
        .filter_map(|(id, l)| right.view_poses.get(id).map(|r| stereo_relative_pose(l, r)))
        .collect();
    if shared.is_empty() {
        return Err(Error::EmptyInput("no view ids shared by both calibrations"));
    }
    let n = shared.len() as f64;
    let rotation_sum: Matrix3<f64> = shared.iter().map(|p| *p.rotation()).sum();
    let translation = shared.iter().map(|p| *p.translation()).sum::<Vector3<f64>>() / n;
    let rotation = nearest_rotation(&rotation_sum)?;
    StereoRig::new(left.intrinsics, right.intrinsics, rotation, translation)
}

/// `F = b_r⁻ᵀ·[e]ₓ·N·b_l⁻¹`, scaled to unit Frobenius norm.
pub fn fundamental_matrix(rig: &StereoRig) -> Result<Matrix3<f64>> {
    let e = rig.relative_translation();
    if e.norm() == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    let f = rig.right_intrinsics.inverse_matrix().transpose()
        * skew_symmetric(e)
        * rig.relative_rotation()
        * rig.left_intrinsics.inverse_matrix();
    Ok(f / f.norm())
}

/// On-disk form of a [`CalibrationResult`]. The top-level pose is that of the first view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationFile {
    #[serde(flatten)]
    pub camera: CameraParameters,
    pub rms_reprojection_error: f64,
    pub converged: bool,
    pub views: Vec<ViewPoseRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewPoseRecord {
    pub view_id: String,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&CalibrationResult> for CalibrationFile {
    fn from(r: &CalibrationResult) -> Self {
        let first = r
            .view_poses
            .values()
            .next()
            .copied()
            .unwrap_or_else(CameraPose::identity);
        Self {
            camera: CameraParameters::new(&r.intrinsics, &first),
            rms_reprojection_error: r.rms_reprojection_error,
            converged: r.converged,
            views: r
                .view_poses
                .iter()
                .map(|(id, p)| ViewPoseRecord {
                    view_id: id.clone(),
                    rotation: matrix_to_row_major(p.rotation()),
                    translation: [p.translation().x, p.translation().y, p.translation().z],
                })
                .collect(),
        }
    }
}

impl TryFrom<&CalibrationFile> for CalibrationResult {
    type Error = Error;

    fn try_from(f: &CalibrationFile) -> Result<Self> {
        let view_poses = f
            .views
            .iter()
            .map(|v| {
                CameraPose::new(
                    matrix_from_row_major(&v.rotation),
                    Vector3::from(v.translation),
                )
                .map(|p| (v.view_id.clone(), p))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            intrinsics: f.camera.intrinsics()?,
            view_poses,
            rms_reprojection_error: f.rms_reprojection_error,
            converged: f.converged,
        })
    }
}

/// On-disk form of a [`StereoRig`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StereoRigFile {
    pub left: CameraIntrinsics,
    pub right: CameraIntrinsics,
    pub relative_rotation: [f64; 9],
    pub relative_translation: [f64; 3],
}

impl From<&StereoRig> for StereoRigFile {
    fn from(rig: &StereoRig) -> Self {
        let t = rig.relative_translation();
        Self {
            left: rig.left_intrinsics,
            right: rig.right_intrinsics,
            relative_rotation: matrix_to_row_major(rig.relative_rotation()),
            relative_translation: [t.x, t.y, t.z],
        }
    }
}

impl TryFrom<&StereoRigFile> for StereoRig {
    type Error = Error;

    fn try_from(f: &StereoRigFile) -> Result<Self> {
        StereoRig::new(
            f.left,
            f.right,
            matrix_from_row_major(&f.relative_rotation),
            Vector3::from(f.relative_translation),
        )
    }
}

/// Reads a JSON list of observations, with or without a `meta` header block.
pub fn read_observations(path: &Path) -> Result<Vec<PlanarObservation>> {
    crate::io::read_json_skip_header(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_point, rotation_x, rotation_y, rotation_z, WorldPoint};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    }

    fn apply(h: &Matrix3<f64>, p: &[f64; 2]) -> PixelPoint {
        PixelPoint::from_homogeneous(&(h * Vector3::new(p[0], p[1], 1.0)))
    }

    /// Equal up to scale: compare after normalizing both to unit norm, positive (2,2).
    fn assert_proportional(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) {
        let na = a / (a.norm() * a[(2, 2)].signum());
        let nb = b / (b.norm() * b[(2, 2)].signum());
        assert!((na - nb).amax() < tol, "{na} vs {nb}");
    }

    #[test]
    fn homography_identity() {
        let board = unit_square();
        let img: Vec<_> = board.iter().map(|p| PixelPoint::new(p[0], p[1])).collect();
        let h = estimate_homography(&board, &img).unwrap();
        assert_proportional(&h, &Matrix3::identity(), 1e-12);
        assert_relative_eq!(h.norm(), 1.0, epsilon = 1e-12);
        assert!(h[(2, 2)] >= 0.0);
    }

    #[test]
    fn homography_recovers_known_map() {
        let h0 = Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 1.0));
        let board = unit_square();
        let img: Vec<_> = board.iter().map(|p| apply(&h0, p)).collect();
        let h = estimate_homography(&board, &img).unwrap();
        assert_proportional(&h, &h0, 1e-9);

        let h1 = Matrix3::new(1.2, 0.1, 30.0, -0.05, 0.9, 12.0, 1e-4, -2e-4, 1.0);
        let board: Vec<[f64; 2]> = (0..20)
            .map(|i| [(i % 5) as f64 * 10.0, (i / 5) as f64 * 10.0])
            .collect();
        let img: Vec<_> = board.iter().map(|p| apply(&h1, p)).collect();
        let h = estimate_homography(&board, &img).unwrap();
        assert_proportional(&h, &h1, 1e-9);
    }

    #[test]
    fn homography_rejects_degenerate_input() {
        let board = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        let img: Vec<_> = board.iter().map(|p| PixelPoint::new(p[0], p[1])).collect();
        assert!(matches!(
            estimate_homography(&board, &img),
            Err(Error::Degenerate(_))
        ));
        let board = unit_square()[..3].to_vec();
        let img: Vec<_> = board.iter().map(|p| PixelPoint::new(p[0], p[1])).collect();
        assert!(matches!(
            estimate_homography(&board, &img),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn view_pose_examples() {
        let h = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 5.0));
        let pose = estimate_view_pose(&h, &CameraIntrinsics::identity()).unwrap();
        assert!(pose
            .max_abs_diff(&CameraPose::from_translation(Vector3::new(0.0, 0.0, 5.0)))
            < 1e-9);

        let k = CameraIntrinsics::new(800.0, 780.0, 0.0, 320.0, 240.0).unwrap();
        let pose = estimate_view_pose(&k.matrix(), &k).unwrap();
        assert!(pose
            .max_abs_diff(&CameraPose::from_translation(Vector3::new(0.0, 0.0, 1.0)))
            < 1e-12);

        let singular = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            estimate_view_pose(&singular, &k),
            Err(Error::SingularHomography)
        ));
    }

    #[test]
    fn view_pose_recovers_general_pose_and_fixes_sign() {
        let k = CameraIntrinsics::new(800.0, 780.0, 0.0, 320.0, 240.0).unwrap();
        let r = rotation_x(0.3) * rotation_y(-0.2) * rotation_z(0.1);
        let t = Vector3::new(-0.1, 0.05, 2.0);
        let h = k.matrix() * Matrix3::from_columns(&[r.column(0).into(), r.column(1).into(), t]);
        for scale in [1.0, -3.0] {
            let pose = estimate_view_pose(&(h * scale), &k).unwrap();
            assert!(pose.max_abs_diff(&CameraPose::new(r, t).unwrap()) < 1e-9);
        }
    }

    fn board_grid() -> Vec<[f64; 2]> {
        let mut pts = Vec::new();
        for r in 0..7 {
            for c in 0..9 {
                pts.push([c as f64 * 0.03 - 0.12, r as f64 * 0.03 - 0.09]);
            }
        }
        pts
    }

    fn synthetic_views(k: &CameraIntrinsics, n: usize, noise: f64, seed: u64) -> Vec<PlanarObservation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::Normal::new(0.0, noise.max(1e-300)).unwrap();
        let tilts = [
            (0.35, 0.0, 0.0),
            (0.0, 0.4, 0.1),
            (-0.3, 0.25, -0.2),
            (0.25, -0.35, 0.3),
            (-0.2, -0.3, -0.1),
            (0.4, 0.3, 0.2),
        ];
        (0..n)
            .map(|i| {
                let (a, b, c) = tilts[i % tilts.len()];
                let pose = CameraPose::new(
                    rotation_x(a) * rotation_y(b) * rotation_z(c),
                    Vector3::new(0.01 * i as f64, -0.01, 0.6 + 0.05 * i as f64),
                )
                .unwrap();
                let board = board_grid();
                let image_points = board
                    .iter()
                    .map(|p| {
                        let mut px =
                            project_point(k, &pose, &WorldPoint::new(p[0], p[1], 0.0)).unwrap();
                        if noise > 0.0 {
                            px.u += rng.sample(normal);
                            px.v += rng.sample(normal);
                        }
                        px
                    })
                    .collect();
                PlanarObservation {
                    view_id: format!("view{i}"),
                    board_points: board,
                    image_points,
                }
            })
            .collect()
    }

    #[test]
    fn closed_form_is_exact_on_noiseless_views() {
        let k = CameraIntrinsics::new(800.0, 780.0, 0.0, 320.0, 240.0).unwrap();
        let obs = synthetic_views(&k, 5, 0.0, 0);
        let result = calibrate_intrinsics(&obs, CalibrationOptions::default()).unwrap();
        let est = result.intrinsics;
        for (a, b) in [
            (est.alpha_u, k.alpha_u),
            (est.alpha_v, k.alpha_v),
            (est.u0, k.u0),
            (est.v0, k.v0),
        ] {
            assert!(((a - b) / b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!(est.gamma.abs() < 1e-6 * k.alpha_u);
        assert!(result.rms_reprojection_error < 1e-6);
        assert_eq!(result.view_poses.len(), 5);
    }

    #[test]
    fn view_count_feasibility() {
        let k = CameraIntrinsics::new(800.0, 800.0, 0.0, 320.0, 240.0).unwrap();
        let obs = synthetic_views(&k, 2, 0.0, 0);
        let zero_skew = CalibrationOptions {
            zero_skew: true,
            refine: false,
        };
        let r = calibrate_intrinsics(&obs, zero_skew).unwrap();
        assert!((r.intrinsics.alpha_u - 800.0).abs() < 1e-4);
        assert_eq!(r.intrinsics.gamma, 0.0);
        assert!(matches!(
            calibrate_intrinsics(&obs, CalibrationOptions::default()),
            Err(Error::InsufficientViews { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn refinement_never_increases_error() {
        let k = CameraIntrinsics::new(800.0, 780.0, 0.0, 320.0, 240.0).unwrap();
        for seed in 0..4 {
            let obs = synthetic_views(&k, 5, 0.3, seed);
            let raw = calibrate_intrinsics(&obs, CalibrationOptions::default()).unwrap();
            let refined = calibrate_intrinsics(
                &obs,
                CalibrationOptions {
                    refine: true,
                    zero_skew: false,
                },
            )
            .unwrap();
            assert!(refined.rms_reprojection_error <= raw.rms_reprojection_error);
        }
    }

    #[test]
    fn relative_pose_examples() {
        let id = CameraPose::identity();
        assert_eq!(stereo_relative_pose(&id, &id), id);
        let right = CameraPose::from_translation(Vector3::new(-0.1, 0.0, 0.0));
        let rel = stereo_relative_pose(&id, &right);
        assert!(rel.max_abs_diff(&right) < 1e-15);
    }

    #[test]
    fn relative_pose_matches_frame_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rand_pose = |rng: &mut ChaCha8Rng| {
            let w = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let t = Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            CameraPose::new(rotation_from_axis_angle(&w), t).unwrap()
        };
        let left = rand_pose(&mut rng);
        let right = rand_pose(&mut rng);
        let rel = stereo_relative_pose(&left, &right);
        for _ in 0..100 {
            let p = WorldPoint::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            let via_left = rel.transform(&left.transform(&p));
            let direct = right.transform(&p);
            assert_relative_eq!(via_left.coords(), direct.coords(), epsilon = 1e-10);
        }
    }

    #[test]
    fn fundamental_examples() {
        let k = CameraIntrinsics::identity();
        let rig = StereoRig::new(k, k, Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let f = fundamental_matrix(&rig).unwrap();
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_relative_eq!(f, expected / expected.norm(), epsilon = 1e-15);
    }

    #[test]
    fn calibration_file_round_trip() {
        let k = CameraIntrinsics::new(800.0, 780.0, 0.0, 320.0, 240.0).unwrap();
        let obs = synthetic_views(&k, 3, 0.0, 0);
        let r = calibrate_intrinsics(&obs, CalibrationOptions::default()).unwrap();
        let file = CalibrationFile::from(&r);
        let json = serde_json::to_string(&file).unwrap();
        let back: CalibrationFile = serde_json::from_str(&json).unwrap();
        assert_eq!(CalibrationResult::try_from(&back).unwrap(), r);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["alpha_u", "alpha_v", "gamma", "u0", "v0", "rotation", "translation"] {
            assert!(value.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn observation_json_uses_pairs() {
        let json = r#"[{"view_id": "a", "board_points": [[0,0],[1,0],[1,1],[0,1]],
                        "image_points": [[10,10],[20,10],[20,20],[10,20]]}]"#;
        let obs: Vec<PlanarObservation> = serde_json::from_str(json).unwrap();
        assert_eq!(obs[0].image_points[2], PixelPoint::new(20.0, 20.0));
    }
}
