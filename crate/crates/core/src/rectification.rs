//! Epipolar rectification and image warping.
//!
//! Both cameras are rotated about their optical centres onto a common
//! orientation whose x axis runs along the baseline, and given one shared
//! intrinsic matrix. Corresponding points then lie on the same image row, and
//! the horizontal offset between them is the disparity used for depth.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    matrix_from_row_major, matrix_to_row_major, project_point, CameraIntrinsics, CameraPose,
    PixelPoint, StereoRig, WorldPoint,
};

/// Row-major intensity samples in `[0, 1]`, interleaved when multi-channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidValue(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidValue(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if samples.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height}x{channels} image",
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self::new(width, height, 1, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn get(&self, x: usize, y: usize, channel: usize) -> f64 {
        self.samples[(y * self.width + x) * self.channels + channel]
    }

    /// Single-channel copy (channel mean for colour images).
    pub fn to_gray(&self) -> RasterImage {
        if self.channels == 1 {
            return self.clone();
        }
        let samples = self
            .samples
            .chunks_exact(3)
            .map(|c| (c[0] + c[1] + c[2]) / 3.0)
            .collect();
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            samples,
        }
    }
}

/// Warp output plus a per-pixel flag for samples that came from inside the source.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedImage {
    pub image: RasterImage,
    pub valid: Vec<bool>,
}

/// Rectifying homographies and the shared camera of the rectified pair.
///
/// The rectified left camera sits at the origin of its own frame and the
/// rectified right camera at `(baseline_g, 0, 0)`, both with identity rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectifiedRig {
    pub left_transform: Matrix3<f64>,
    pub right_transform: Matrix3<f64>,
    pub new_intrinsics: CameraIntrinsics,
    pub baseline_g: f64,
    /// Shared pixel focal length used by triangulation.
    pub focal_o: f64,
    /// Rotation from the original left camera frame to the rectified frame.
    pub rotation: Matrix3<f64>,
}

impl RectifiedRig {
    /// A rig whose images are already rectified: identity transforms, `O = α_u`.
    pub fn ideal(intrinsics: CameraIntrinsics, baseline_g: f64) -> Result<Self> {
        Self::new(
            Matrix3::identity(),
            Matrix3::identity(),
            intrinsics,
            baseline_g,
            intrinsics.alpha_u,
            Matrix3::identity(),
        )
    }

    pub fn new(
        left_transform: Matrix3<f64>,
        right_transform: Matrix3<f64>,
        new_intrinsics: CameraIntrinsics,
        baseline_g: f64,
        focal_o: f64,
        rotation: Matrix3<f64>,
    ) -> Result<Self> {
        new_intrinsics.validate()?;
        if !(baseline_g > 0.0) || !baseline_g.is_finite() {
            return Err(Error::ZeroBaseline);
        }
        if !(focal_o > 0.0) || !focal_o.is_finite() {
            return Err(Error::InvalidValue(format!(
                "focal length must be positive, got {focal_o}"
            )));
        }
        for t in [&left_transform, &right_transform] {
            if !is_invertible(t) {
                return Err(Error::SingularTransform);
            }
        }
        // validates orthonormality
        CameraPose::new(rotation, Vector3::zeros())?;
        Ok(Self {
            left_transform,
            right_transform,
            new_intrinsics,
            baseline_g,
            focal_o,
            rotation,
        })
    }

    pub fn left_pose(&self) -> CameraPose {
        CameraPose::identity()
    }

    pub fn right_pose(&self) -> CameraPose {
        CameraPose::from_translation(Vector3::new(-self.baseline_g, 0.0, 0.0))
    }

    /// Projects a point expressed in the rectified left frame into both rectified images.
    pub fn project(&self, p: &WorldPoint) -> Result<(PixelPoint, PixelPoint)> {
        Ok((
            project_point(&self.new_intrinsics, &self.left_pose(), p)?,
            project_point(&self.new_intrinsics, &self.right_pose(), p)?,
        ))
    }

    /// Maps a point from the original left camera frame into the rectified frame.
    pub fn to_rectified_frame(&self, p: &WorldPoint) -> WorldPoint {
        WorldPoint::from_coords(&(self.rotation * p.coords()))
    }
}

fn is_invertible(m: &Matrix3<f64>) -> bool {
    let scale = m.norm();
    scale > 0.0 && scale.is_finite() && m.determinant().abs() > 1e-12 * scale.powi(3)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RectifyOptions {
    /// Shift the shared principal point so the two warped image centres straddle
    /// the centre of a `width × height` frame.
    pub recenter: Option<(usize, usize)>,
}

/// Rectifying homographies for a calibrated rig.
pub fn compute_rectifying_transforms(rig: &StereoRig) -> Result<RectifiedRig> {
    compute_rectifying_transforms_with(rig, &RectifyOptions::default())
}

pub fn compute_rectifying_transforms_with(
    rig: &StereoRig,
    options: &RectifyOptions,
) -> Result<RectifiedRig> {
    let n_rl = rig.relative_rotation();
    let e_rl = rig.relative_translation();
    if e_rl.norm() == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    // optical centres in the left camera frame
    let right_center = -(n_rl.transpose() * e_rl);
    let baseline = right_center.norm();
    let x_axis = right_center / baseline;
    let left_z = Vector3::z();
    let right_z = n_rl.transpose() * Vector3::z();
    let mean_z = left_z + right_z;
    let mut y_axis = mean_z.cross(&x_axis);
    if y_axis.norm() < 1e-12 {
        // viewing direction along the baseline; any perpendicular will do
        y_axis = left_z.cross(&x_axis);
        if y_axis.norm() < 1e-12 {
            y_axis = Vector3::y().cross(&x_axis);
        }
    }
    let y_axis = y_axis.normalize();
    let z_axis = x_axis.cross(&y_axis);
    let rotation = Matrix3::from_rows(&[
        x_axis.transpose(),
        y_axis.transpose(),
        z_axis.transpose(),
    ]);

    let (kl, kr) = (&rig.left_intrinsics, &rig.right_intrinsics);
    let mut new_k = CameraIntrinsics::new(
        (kl.alpha_u * kr.alpha_u).sqrt(),
        (kl.alpha_v * kr.alpha_v).sqrt(),
        0.0,
        0.5 * (kl.u0 + kr.u0),
        0.5 * (kl.v0 + kr.v0),
    )?;

    let homographies = |k: &CameraIntrinsics| {
        let left = k.matrix() * rotation * kl.inverse_matrix();
        let right = k.matrix() * rotation * n_rl.transpose() * kr.inverse_matrix();
        (left, right)
    };
    let (mut left, mut right) = homographies(&new_k);

    if let Some((w, h)) = options.recenter {
        let center = Vector3::new((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, 1.0);
        let pl = PixelPoint::from_homogeneous(&(left * center));
        let pr = PixelPoint::from_homogeneous(&(right * center));
        new_k.u0 += center.x - 0.5 * (pl.u + pr.u);
        new_k.v0 += center.y - 0.5 * (pl.v + pr.v);
        (left, right) = homographies(&new_k);
    }

    RectifiedRig::new(left, right, new_k, baseline, new_k.alpha_u, rotation)
}

/// Resamples `src` under the projective map `h` (source pixel → destination pixel).
///
/// Each destination pixel centre is mapped back through `h⁻¹` and bilinearly
/// interpolated; destinations landing outside `[0, w−1] × [0, h−1]` are zero
/// and flagged invalid.
pub fn warp_image(
    src: &RasterImage,
    h: &Matrix3<f64>,
    out_width: usize,
    out_height: usize,
) -> Result<WarpedImage> {
    if !is_invertible(h) {
        return Err(Error::SingularTransform);
    }
    if out_width == 0 || out_height == 0 {
        return Err(Error::InvalidValue("output dimensions must be positive".into()));
    }
    let inv = h.try_inverse().ok_or(Error::SingularTransform)?;
    let ch = src.channels;
    let (w, hgt) = (src.width, src.height);
    let max_x = (w - 1) as f64;
    let max_y = (hgt - 1) as f64;

    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..out_height)
        .into_par_iter()
        .map(|y| {
            let mut samples = vec![0.0; out_width * ch];
            let mut valid = vec![false; out_width];
            for x in 0..out_width {
                let p = inv * Vector3::new(x as f64, y as f64, 1.0);
                if p.z == 0.0 {
                    continue;
                }
                let (sx, sy) = (p.x / p.z, p.y / p.z);
                if !(sx >= 0.0 && sx <= max_x && sy >= 0.0 && sy <= max_y) {
                    continue;
                }
                valid[x] = true;
                let x0 = (sx.floor() as usize).min(w.saturating_sub(2));
                let y0 = (sy.floor() as usize).min(hgt.saturating_sub(2));
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(hgt - 1);
                let fx = sx - x0 as f64;
                let fy = sy - y0 as f64;
                for c in 0..ch {
                    let s00 = src.get(x0, y0, c);
                    let s10 = src.get(x1, y0, c);
                    let s01 = src.get(x0, y1, c);
                    let s11 = src.get(x1, y1, c);
                    let top = s00 + (s10 - s00) * fx;
                    let bottom = s01 + (s11 - s01) * fx;
                    samples[x * ch + c] = top + (bottom - top) * fy;
                }
            }
            (samples, valid)
        })
        .collect();

    let mut samples = Vec::with_capacity(out_width * out_height * ch);
    let mut valid = Vec::with_capacity(out_width * out_height);
    for (s, v) in rows {
        samples.extend(s);
        valid.extend(v);
    }
    Ok(WarpedImage {
        image: RasterImage::new(out_width, out_height, ch, samples)?,
        valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub mean: f64,
    pub max: f64,
}

/// Distance from `q` to the line `l = (a, b, c)`.
fn line_distance(l: &Vector3<f64>, q: &Vector3<f64>) -> f64 {
    let alg = l.dot(q).abs();
    let norm = (l.x * l.x + l.y * l.y).sqrt();
    if norm == 0.0 {
        if alg == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        alg / norm
    }
}

/// Point-to-epipolar-line distances in pixels, averaged over the two images per pair.
pub fn epipolar_residual(
    f: &Matrix3<f64>,
    pairs: &[(PixelPoint, PixelPoint)],
) -> Result<ResidualStats> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no point pairs"));
    }
    let mut sum = 0.0;
    let mut max = 0.0_f64;
    for (l, r) in pairs {
        let (pl, pr) = (l.homogeneous(), r.homogeneous());
        let in_right = line_distance(&(f * pl), &pr);
        let in_left = line_distance(&(f.transpose() * pr), &pl);
        let d = 0.5 * (in_right + in_left);
        sum += d;
        max = max.max(d);
    }
    Ok(ResidualStats {
        mean: sum / pairs.len() as f64,
        max,
    })
}

/// On-disk form of a [`RectifiedRig`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RectifiedRigFile {
    pub left_transform: [f64; 9],
    pub right_transform: [f64; 9],
    pub new_intrinsics: CameraIntrinsics,
    pub baseline_g: f64,
    pub focal_o: f64,
    pub rotation: [f64; 9],
}

impl From<&RectifiedRig> for RectifiedRigFile {
    fn from(r: &RectifiedRig) -> Self {
        Self {
            left_transform: matrix_to_row_major(&r.left_transform),
            right_transform: matrix_to_row_major(&r.right_transform),
            new_intrinsics: r.new_intrinsics,
            baseline_g: r.baseline_g,
            focal_o: r.focal_o,
            rotation: matrix_to_row_major(&r.rotation),
        }
    }
}

impl TryFrom<&RectifiedRigFile> for RectifiedRig {
    type Error = Error;

    fn try_from(f: &RectifiedRigFile) -> Result<Self> {
        RectifiedRig::new(
            matrix_from_row_major(&f.left_transform),
            matrix_from_row_major(&f.right_transform),
            f.new_intrinsics,
            f.baseline_g,
            f.focal_o,
            matrix_from_row_major(&f.rotation),
        )
    }
}
