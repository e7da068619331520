//! Ground-truth scenes with exactly known geometry.
//!
//! Scenes are textured boxes, planes and checkerboards placed in the frame of
//! an ideal rectified rig: the left camera sits at the origin looking down +z
//! and the right camera at `(G, 0, 0)`. Shading is averaged over a grid of
//! rays per pixel, while the ground-truth disparity and point cloud come from
//! the single ray through each pixel centre.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::PlanarObservation;
use crate::correspondence::{DisparityMap, Landmark};
use crate::error::{Error, Result};
use crate::evaluation::{Axis, ComponentSelection, GroundTruth, ReferencePoint};
use crate::geometry::{
    matrix_from_row_major, matrix_to_row_major, project_point, rotation_x, rotation_y, CameraIntrinsics,
    CameraPose, PixelPoint, WorldPoint,
};
use crate::reconstruction::PointCloud;
use crate::rectification::{RasterImage, RectifiedRig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Spans `[0, L] × [0, W] × [0, H]` in its own frame.
    Box { extents: [f64; 3] },
    /// Textured rectangle `[0, w] × [0, h]` in its own `z = 0` plane.
    Plane { size: [f64; 2] },
    /// Checkerboard in its own `z = 0` plane, centred on the origin.
    Board(BoardSpec),
}

/// Inner-corner grid of a checkerboard target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec {
    pub rows: usize,
    pub cols: usize,
    pub square: f64,
}

impl BoardSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::InvalidValue("a board needs at least 2 rows and 2 columns".into()));
        }
        if !(self.square > 0.0) || !self.square.is_finite() {
            return Err(Error::InvalidValue("board square size must be positive".into()));
        }
        Ok(())
    }

    /// Corner coordinates in the board plane, row by row, centred on the origin.
    pub fn corners(&self) -> Vec<[f64; 2]> {
        let cx = (self.cols - 1) as f64 / 2.0;
        let cy = (self.rows - 1) as f64 / 2.0;
        (0..self.rows)
            .flat_map(|r| {
                (0..self.cols).map(move |c| [(c as f64 - cx) * self.square, (r as f64 - cy) * self.square])
            })
            .collect()
    }
}

/// A solid and its pose: `x_world = R·x_local + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub shape: Shape,
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl SceneObject {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        matrix_from_row_major(&self.rotation)
    }

    pub fn to_world(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * local + Vector3::from(self.translation)
    }

    fn validate(&self) -> Result<()> {
        CameraPose::new(self.rotation_matrix(), Vector3::from(self.translation))
            .map_err(|e| Error::InvalidValue(format!("object {}: {e}", self.name)))?;
        match self.shape {
            Shape::Box { extents } if extents.iter().any(|e| !(*e > 0.0) || !e.is_finite()) => {
                Err(Error::InvalidValue(format!("object {}: box extents must be positive", self.name)))
            }
            Shape::Plane { size } if size.iter().any(|e| !(*e > 0.0) || !e.is_finite()) => {
                Err(Error::InvalidValue(format!("object {}: plane size must be positive", self.name)))
            }
            Shape::Board(b) => b.validate(),
            _ => Ok(()),
        }
    }

    /// Box corners in the object frame, indexed by bits `(x, y, z)`.
    pub fn box_corners(&self) -> Option<[Vector3<f64>; 8]> {
        match self.shape {
            Shape::Box { extents: [l, w, h] } => Some(std::array::from_fn(|i| {
                Vector3::new(
                    if i & 1 == 0 { 0.0 } else { l },
                    if i & 2 == 0 { 0.0 } else { w },
                    if i & 4 == 0 { 0.0 } else { h },
                )
            })),
            _ => None,
        }
    }
}

/// A scene seen by an ideal rectified rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Shared by both cameras; skew must be zero.
    pub intrinsics: CameraIntrinsics,
    pub baseline: f64,
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub texture_seed: u64,
    #[serde(default)]
    pub background: f64,
    /// Shading samples per pixel along each axis; hits use the pixel centre.
    #[serde(default = "default_supersampling")]
    pub supersampling: usize,
}

fn default_supersampling() -> usize {
    1
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidValue("image size must be positive".into()));
        }
        self.intrinsics.validate()?;
        if self.intrinsics.gamma != 0.0 {
            return Err(Error::InvalidIntrinsics("rectified scenes need zero skew".into()));
        }
        if !(self.baseline > 0.0) || !self.baseline.is_finite() {
            return Err(Error::ZeroBaseline);
        }
        if self.supersampling == 0 {
            return Err(Error::InvalidValue("supersampling must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(Error::InvalidValue("background must lie in [0, 1]".into()));
        }
        self.objects.iter().try_for_each(SceneObject::validate)
    }

    pub fn rig(&self) -> Result<RectifiedRig> {
        RectifiedRig::ideal(self.intrinsics, self.baseline)
    }
}

/// The Front Rack of the station (29.155 × 2.34375 × 20.65625) on a black
/// background, seen from about 20 ft by a narrow-field 640×480 rig with a
/// 24-unit baseline.
///
/// The box is yawed so its front and one end face are visible. Its top face
/// lies in a plane through both optical centres, so neither camera sees it.
pub fn front_rack_scene() -> SceneSpec {
    box_scene("Front Rack", [29.155, 2.34375, 20.65625], &BoxView::default())
}

/// Camera placement for [`box_scene`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxView {
    /// Rotation of the box about the vertical axis, degrees.
    pub yaw: f64,
    pub baseline: f64,
    /// Depth of the box centre.
    pub distance: f64,
    /// Shared focal length in pixels.
    pub focal: f64,
}

impl Default for BoxView {
    fn default() -> Self {
        Self {
            yaw: 45.0,
            baseline: 24.0,
            distance: 248.0,
            focal: 2400.0,
        }
    }
}

/// One textured box centred between the cameras of a 640×480 rig.
pub fn box_scene(name: &str, extents: [f64; 3], view: &BoxView) -> SceneSpec {
    // pitching about the baseline keeps the top face edge-on to both cameras,
    // with its edge on pixel row v0 - 60
    let pitch = (60.0 / view.focal).atan();
    let rotation = rotation_x(pitch) * rotation_y(view.yaw.to_radians());
    let w_dir: Vector3<f64> = rotation.column(1).into();
    let rough = Vector3::new(view.baseline / 2.0, 0.0, view.distance);
    let centre = rough + w_dir * (extents[1] / 2.0 - 1e-3 - w_dir.dot(&rough));
    let translation = centre - rotation * Vector3::new(extents[0], extents[1], extents[2]) / 2.0;
    SceneSpec {
        width: 640,
        height: 480,
        intrinsics: CameraIntrinsics::new(view.focal, view.focal, 0.0, 320.0, 240.0)
            .expect("valid intrinsics"),
        baseline: view.baseline,
        objects: vec![SceneObject {
            name: name.into(),
            shape: Shape::Box { extents },
            rotation: matrix_to_row_major(&rotation),
            translation: translation.into(),
        }],
        texture_seed: 7,
        background: 0.0,
        supersampling: 4,
    }
}

/// Corner projections of a board seen from `pose` (board frame → camera frame),
/// optionally with isotropic Gaussian pixel noise.
pub fn project_board(
    board: &BoardSpec,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    view_id: impl Into<String>,
    noise: Option<(f64, u64)>,
) -> Result<PlanarObservation> {
    board.validate()?;
    let board_points = board.corners();
    let mut image_points = board_points
        .iter()
        .map(|p| project_point(intrinsics, pose, &WorldPoint::new(p[0], p[1], 0.0)))
        .collect::<Result<Vec<_>>>()?;
    if let Some((sigma, seed)) = noise {
        let normal = Normal::new(0.0, sigma)
            .map_err(|_| Error::InvalidValue(format!("bad noise level {sigma}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut image_points {
            p.u += normal.sample(&mut rng);
            p.v += normal.sample(&mut rng);
        }
    }
    Ok(PlanarObservation {
        view_id: view_id.into(),
        board_points,
        image_points,
    })
}

/// Board poses spread over a cone of viewing directions, all facing the camera
/// at roughly `distance`.
pub fn calibration_views(count: usize, distance: f64) -> Vec<CameraPose> {
    (0..count)
        .map(|i| {
            let phase = i as f64 * std::f64::consts::TAU / count.max(1) as f64;
            let tilt = 0.35 + 0.1 * (i % 2) as f64;
            let axis = Vector3::new(phase.cos(), phase.sin(), 0.0);
            let rotation = crate::geometry::rotation_from_axis_angle(&(axis * tilt))
                * crate::geometry::rotation_z(0.1 * i as f64);
            let translation = Vector3::new(0.05 * distance * phase.sin(), -0.05 * distance * phase.cos(), distance);
            CameraPose::new_projected(rotation, translation).expect("rotation from axis-angle")
        })
        .collect()
}

/// Ray hit: world point, ray parameter (camera depth along z) and shade.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Hit {
    point: Vector3<f64>,
    depth: f64,
    shade: f64,
}

/// One rendered view and its per-pixel hits.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub image: RasterImage,
    /// World point seen at each pixel, row-major.
    pub hits: Vec<Option<WorldPoint>>,
}

/// Renders the objects through a camera with pose `world → camera`.
pub fn render_view(
    objects: &[SceneObject],
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    width: usize,
    height: usize,
    texture_seed: u64,
    background: f64,
    supersampling: usize,
) -> Result<RenderedView> {
    intrinsics.validate()?;
    objects.iter().try_for_each(SceneObject::validate)?;
    let k_inv = intrinsics.inverse_matrix();
    let r_t = pose.rotation().transpose();
    let centre = pose.center();
    let prepared: Vec<_> = objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let r = o.rotation_matrix();
            let t = Vector3::from(o.translation);
            (i, o, r, r.transpose(), t)
        })
        .collect();

    if supersampling == 0 {
        return Err(Error::InvalidValue("supersampling must be at least 1".into()));
    }
    let trace = |x: f64, y: f64| {
        let dir = r_t * (k_inv * Vector3::new(x, y, 1.0));
        let mut best: Option<Hit> = None;
        for (idx, obj, r, r_t_obj, t) in &prepared {
            let o_local = r_t_obj * (centre - t);
            let d_local = r_t_obj * dir;
            if let Some((s, p_local, face)) = intersect(&obj.shape, &o_local, &d_local) {
                // the camera-frame direction has unit z, so s is the camera depth
                if best.map_or(true, |b| s < b.depth) {
                    best = Some(Hit {
                        point: r * p_local + t,
                        depth: s,
                        shade: surface_shade(&obj.shape, &p_local, face, *idx, texture_seed),
                    });
                }
            }
        }
        best
    };
    let n = supersampling;
    let offsets: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 - 0.5).collect();

    let rows: Vec<Vec<(f64, Option<WorldPoint>)>> = (0..height)
        .into_par_iter()
        .map(|y| {
            (0..width)
                .map(|x| {
                    let (xf, yf) = (x as f64, y as f64);
                    let centre_hit = trace(xf, yf);
                    let shade = if n == 1 {
                        centre_hit.map_or(background, |h| h.shade)
                    } else {
                        let mut sum = 0.0;
                        for dy in &offsets {
                            for dx in &offsets {
                                sum += trace(xf + dx, yf + dy).map_or(background, |h| h.shade);
                            }
                        }
                        sum / (n * n) as f64
                    };
                    (shade, centre_hit.map(|h| WorldPoint::from_coords(&h.point)))
                })
                .collect()
        })
        .collect();

    let mut samples = Vec::with_capacity(width * height);
    let mut hits = Vec::with_capacity(width * height);
    for row in rows {
        for (s, h) in row {
            samples.push(s);
            hits.push(h);
        }
    }
    Ok(RenderedView {
        image: RasterImage::new(width, height, 1, samples)?,
        hits,
    })
}

/// Nearest forward intersection: ray parameter, local point and face id.
fn intersect(shape: &Shape, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>, usize)> {
    match shape {
        Shape::Box { extents } => {
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            let mut face = 0;
            for k in 0..3 {
                if d[k] == 0.0 {
                    if o[k] < 0.0 || o[k] > extents[k] {
                        return None;
                    }
                    continue;
                }
                let a = (0.0 - o[k]) / d[k];
                let b = (extents[k] - o[k]) / d[k];
                let (lo, hi, side) = if a < b { (a, b, 0) } else { (b, a, 1) };
                if lo > t_near {
                    t_near = lo;
                    face = 2 * k + side;
                }
                t_far = t_far.min(hi);
            }
            (t_near <= t_far && t_near > 0.0).then(|| (t_near, o + d * t_near, face))
        }
        Shape::Plane { size } => {
            let s = plane_hit(o, d)?;
            let p = o + d * s;
            (p.x >= 0.0 && p.x <= size[0] && p.y >= 0.0 && p.y <= size[1]).then_some((s, p, 0))
        }
        Shape::Board(b) => {
            let s = plane_hit(o, d)?;
            let p = o + d * s;
            let hx = (b.cols + 1) as f64 * b.square / 2.0;
            let hy = (b.rows + 1) as f64 * b.square / 2.0;
            (p.x.abs() <= hx && p.y.abs() <= hy).then_some((s, p, 0))
        }
    }
}

fn plane_hit(o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    if d.z == 0.0 {
        return None;
    }
    let s = -o.z / d.z;
    (s > 0.0).then_some(s)
}

/// Feature size of the value-noise texture, in scene units.
const TEXTURE_SCALE: f64 = 0.5;

fn surface_shade(shape: &Shape, p: &Vector3<f64>, face: usize, object: usize, seed: u64) -> f64 {
    match shape {
        Shape::Board(b) => {
            let ix = (p.x / b.square + (b.cols + 1) as f64 / 2.0).floor() as i64;
            let iy = (p.y / b.square + (b.rows + 1) as f64 / 2.0).floor() as i64;
            if (ix + iy).rem_euclid(2) == 0 {
                0.9
            } else {
                0.1
            }
        }
        _ => {
            // texture coordinates: the two in-face axes
            let axis = face / 2;
            let (a, b) = match axis {
                0 => (p.y, p.z),
                1 => (p.x, p.z),
                _ => (p.x, p.y),
            };
            let key = seed ^ ((object as u64) << 32) ^ ((face as u64) << 24);
            let (a, b) = (a / TEXTURE_SCALE, b / TEXTURE_SCALE);
            let n = 0.6 * value_noise(a, b, key) + 0.4 * value_noise(2.0 * a, 2.0 * b, key ^ 0x9e37);
            let face_gain = [0.85, 0.9, 1.0, 0.8, 0.95, 0.88][face];
            (0.1 + 0.8 * n) * face_gain
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(ix: i64, iy: i64, key: u64) -> f64 {
    let h = splitmix64(key ^ splitmix64((ix as u64) ^ splitmix64(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1)`.
fn value_noise(x: f64, y: f64, key: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (smooth(x - fx), smooth(y - fy));
    let top = lattice(ix, iy, key) * (1.0 - sx) + lattice(ix + 1, iy, key) * sx;
    let bottom = lattice(ix, iy + 1, key) * (1.0 - sx) + lattice(ix + 1, iy + 1, key) * sx;
    top * (1.0 - sy) + bottom * sy
}

/// A rendered stereo pair with its exact disparity and point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoRender {
    pub left: RasterImage,
    pub right: RasterImage,
    /// Defined wherever the left ray hits a surface, occluded or not in the right view.
    pub disparity: DisparityMap,
    /// One point per left-image hit, row-major, with source pixels.
    pub cloud: PointCloud,
}

pub fn render_stereo_pair(spec: &SceneSpec) -> Result<StereoRender> {
    spec.validate()?;
    let rig = spec.rig()?;
    let render = |pose: &CameraPose| {
        render_view(
            &spec.objects,
            &spec.intrinsics,
            pose,
            spec.width,
            spec.height,
            spec.texture_seed,
            spec.background,
            spec.supersampling,
        )
    };
    let left = render(&rig.left_pose())?;
    let right = render(&rig.right_pose())?;
    let go = rig.baseline_g * rig.focal_o;

    let mut disparity = DisparityMap::empty(spec.width, spec.height);
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for (i, hit) in left.hits.iter().enumerate() {
        if let Some(p) = hit {
            let (x, y) = (i % spec.width, i / spec.width);
            disparity.set(x, y, Some(go / p.z));
            points.push(*p);
            pixels.push(PixelPoint::new(x as f64, y as f64));
        }
    }
    Ok(StereoRender {
        left: left.image,
        right: right.image,
        disparity,
        cloud: PointCloud {
            points,
            colors: None,
            pixels: Some(pixels),
        },
    })
}

fn is_front_facing(obj: &SceneObject, face: usize, camera_centre: &Vector3<f64>) -> bool {
    let Some(corners) = obj.box_corners() else {
        return false;
    };
    let axis = face / 2;
    let mut normal = Vector3::zeros();
    normal[axis] = if face % 2 == 0 { -1.0 } else { 1.0 };
    let on_face = corners[if face % 2 == 0 { 0 } else { 1 << axis }];
    let r = obj.rotation_matrix();
    let n_world = r * normal;
    let p_world = obj.to_world(&on_face);
    n_world.dot(&(camera_centre - p_world)) > 0.0
}

fn corner_visible(obj: &SceneObject, corner: usize, camera_centre: &Vector3<f64>) -> bool {
    (0..3).any(|axis| {
        let face = 2 * axis + usize::from(corner & (1 << axis) != 0);
        is_front_facing(obj, face, camera_centre)
    })
}

/// Landmark name of a box corner.
pub fn corner_name(object: &str, corner: usize) -> String {
    let slug: String = object
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    format!("{slug}_c{corner}")
}

/// Exact left/right projections of every box corner visible in both views
/// and inside both images.
pub fn visible_corner_landmarks(spec: &SceneSpec) -> Result<Vec<Landmark>> {
    let rig = spec.rig()?;
    let right_centre = rig.right_pose().center();
    let inside = |p: &PixelPoint| {
        p.u >= 0.0 && p.v >= 0.0 && p.u <= (spec.width - 1) as f64 && p.v <= (spec.height - 1) as f64
    };
    let mut out = Vec::new();
    for obj in &spec.objects {
        let Some(corners) = obj.box_corners() else {
            continue;
        };
        for (i, c) in corners.iter().enumerate() {
            if !corner_visible(obj, i, &Vector3::zeros()) || !corner_visible(obj, i, &right_centre) {
                continue;
            }
            let (l, r) = rig.project(&WorldPoint::from_coords(&obj.to_world(c)))?;
            if inside(&l) && inside(&r) {
                out.push(Landmark {
                    name: corner_name(&obj.name, i),
                    u_l: l.u,
                    v_l: l.v,
                    u_r: r.u,
                    v_r: r.v,
                });
            }
        }
    }
    Ok(out)
}

/// Corner coordinates of the first box, in that box's own frame.
///
/// Measuring in this frame reads the box extents off its L, W and H axes.
pub fn reference_corners(spec: &SceneSpec) -> Vec<ReferencePoint> {
    spec.objects
        .iter()
        .find_map(|o| o.box_corners().map(|c| (o, c)))
        .map(|(obj, corners)| {
            corners
                .iter()
                .enumerate()
                .map(|(i, c)| ReferencePoint {
                    name: corner_name(&obj.name, i),
                    x: c.x,
                    y: c.y,
                    z: c.z,
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Pixel-polygon selection of each box: the convex hull of its projected
/// corners in the left image.
pub fn box_selections(spec: &SceneSpec) -> Result<Vec<(String, ComponentSelection)>> {
    let mut out = Vec::new();
    for obj in &spec.objects {
        let Some(corners) = obj.box_corners() else {
            continue;
        };
        let pts = corners
            .iter()
            .map(|c| {
                project_point(
                    &spec.intrinsics,
                    &CameraPose::identity(),
                    &WorldPoint::from_coords(&obj.to_world(c)),
                )
                .map(|p| [p.u, p.v])
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((
            obj.name.clone(),
            ComponentSelection::PixelPolygon {
                pixel_polygon: convex_hull(pts),
            },
        ));
    }
    Ok(out)
}

/// Ground-truth L, W, H of every box.
pub fn box_ground_truth(spec: &SceneSpec) -> Vec<GroundTruth> {
    spec.objects
        .iter()
        .filter_map(|o| match o.shape {
            Shape::Box { extents } => Some(Axis::ALL.map(|axis| GroundTruth {
                object: o.name.clone(),
                axis,
                actual: extents[axis.index()],
            })),
            _ => None,
        })
        .flatten()
        .collect()
}

/// Andrew's monotone chain, counter-clockwise in image coordinates.
fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{calibrate_intrinsics, CalibrationOptions};
    use crate::evaluation::{align_similarity, measure_dimension, measure_points};
    use crate::reconstruction::{cloud_from_disparity, triangulate_rectified};

    fn plane_scene(z: f64) -> SceneSpec {
        SceneSpec {
            width: 64,
            height: 48,
            intrinsics: CameraIntrinsics::new(50.0, 50.0, 0.0, 32.0, 24.0).unwrap(),
            baseline: 0.5,
            objects: vec![SceneObject {
                name: "wall".into(),
                shape: Shape::Plane { size: [100.0, 100.0] },
                rotation: matrix_to_row_major(&Matrix3::identity()),
                translation: [-50.0, -50.0, z],
            }],
            texture_seed: 1,
            background: 0.0,
            supersampling: 1,
        }
    }

    #[test]
    fn centred_board_hits_principal_point() {
        let k = CameraIntrinsics::new(800.0, 780.0, 0.0, 320.0, 240.0).unwrap();
        let board = BoardSpec { rows: 7, cols: 9, square: 0.03 };
        let pose = CameraPose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let obs = project_board(&board, &k, &pose, "v", None).unwrap();
        let centre = obs.image_points[3 * 9 + 4];
        assert!((centre.u - 320.0).abs() < 1e-12 && (centre.v - 240.0).abs() < 1e-12);
        let behind = CameraPose::from_translation(Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(
            project_board(&board, &k, &behind, "v", None),
            Err(Error::PointBehindCamera { .. })
        ));
    }

    #[test]
    fn noisy_boards_are_seeded() {
        let k = CameraIntrinsics::simple(800.0, 320.0, 240.0).unwrap();
        let board = BoardSpec { rows: 5, cols: 6, square: 0.03 };
        let pose = CameraPose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let a = project_board(&board, &k, &pose, "v", Some((0.1, 4))).unwrap();
        let b = project_board(&board, &k, &pose, "v", Some((0.1, 4))).unwrap();
        let c = project_board(&board, &k, &pose, "v", Some((0.1, 5))).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_boards_calibrate() {
        let k = CameraIntrinsics::new(820.0, 810.0, 0.0, 318.0, 242.0).unwrap();
        let board = BoardSpec { rows: 7, cols: 9, square: 0.03 };
        let obs: Vec<_> = calibration_views(5, 0.6)
            .iter()
            .enumerate()
            .map(|(i, p)| project_board(&board, &k, p, format!("v{i}"), None).unwrap())
            .collect();
        let res = calibrate_intrinsics(&obs, CalibrationOptions { refine: true, zero_skew: false }).unwrap();
        for (a, b) in [
            (res.intrinsics.alpha_u, k.alpha_u),
            (res.intrinsics.alpha_v, k.alpha_v),
            (res.intrinsics.u0, k.u0),
            (res.intrinsics.v0, k.v0),
        ] {
            assert!((a - b).abs() / b < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn fronto_parallel_plane_has_constant_disparity() {
        let spec = plane_scene(0.5 * 50.0 / 8.0);
        let render = render_stereo_pair(&spec).unwrap();
        assert_eq!(render.disparity.valid_count(), 64 * 48);
        for (_, _, d) in render.disparity.iter_valid() {
            assert!((d - 8.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_scene_is_blank() {
        let mut spec = plane_scene(1.0);
        spec.objects.clear();
        let r = render_stereo_pair(&spec).unwrap();
        assert!(r.left.samples().iter().all(|&s| s == 0.0));
        assert!(r.right.samples().iter().all(|&s| s == 0.0));
        assert!(r.cloud.is_empty());
        assert_eq!(r.disparity.valid_count(), 0);
    }

    #[test]
    fn ground_truth_triangulates_back() {
        let spec = front_rack_scene();
        let render = render_stereo_pair(&spec).unwrap();
        let rig = spec.rig().unwrap();
        let back = cloud_from_disparity(&render.disparity, &rig);
        assert_eq!(back.len(), render.cloud.len());
        for (a, b) in back.points.iter().zip(&render.cloud.points) {
            assert!((a.coords() - b.coords()).amax() < 1e-9);
        }
        let p = render.cloud.pixels.as_ref().unwrap()[0];
        let d = render.disparity.get(p.u as usize, p.v as usize).unwrap();
        assert!(triangulate_rectified(p.u, p.v, p.u - d, &rig).is_ok());
    }

    #[test]
    fn front_rack_fits_both_images() {
        let spec = front_rack_scene();
        let rig = spec.rig().unwrap();
        let obj = &spec.objects[0];
        for c in obj.box_corners().unwrap() {
            let (l, r) = rig.project(&WorldPoint::from_coords(&obj.to_world(&c))).unwrap();
            for p in [l, r] {
                assert!(p.u > 10.0 && p.u < 630.0 && p.v > 10.0 && p.v < 470.0, "{p:?}");
            }
        }
        let landmarks = visible_corner_landmarks(&spec).unwrap();
        assert!(landmarks.len() >= 4);
        for l in &landmarks {
            assert!((l.v_l - l.v_r).abs() < 1e-9);
        }
    }

    #[test]
    fn ground_truth_cloud_measures_the_box() {
        let spec = front_rack_scene();
        let render = render_stereo_pair(&spec).unwrap();
        let rig = spec.rig().unwrap();
        let reference = reference_corners(&spec);
        let landmarks = visible_corner_landmarks(&spec).unwrap();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for l in &landmarks {
            src.push(triangulate_rectified(l.u_l, l.v_l, l.u_r, &rig).unwrap());
            let r = reference.iter().find(|r| r.name == l.name).unwrap();
            dst.push(WorldPoint::new(r.x, r.y, r.z));
        }
        let fit = align_similarity(&src, &dst).unwrap();
        assert!((fit.scale - 1.0).abs() < 1e-9);

        // corners give the extents exactly
        let corners: Vec<_> = reference.iter().map(|r| WorldPoint::new(r.x, r.y, r.z)).collect();
        assert_eq!(measure_points(&corners).unwrap(), [29.155, 2.34375, 20.65625]);

        // pixel-centre sampling loses at most about a pixel footprint per extent
        let footprint = 248.0 / spec.intrinsics.alpha_u;
        let aligned = fit.apply_cloud(&render.cloud);
        let selection = &box_selections(&spec).unwrap()[0].1;
        let dims = measure_dimension(&aligned, selection).unwrap();
        for (m, a) in dims.iter().zip([29.155, 2.34375, 20.65625]) {
            assert!(m <= &(a + 1e-6) && a - m < 1.5 * footprint, "{m} vs {a}");
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = front_rack_scene();
        assert_eq!(render_stereo_pair(&spec).unwrap(), render_stereo_pair(&spec).unwrap());
    }

    #[test]
    fn scene_spec_json_round_trip() {
        let spec = front_rack_scene();
        let text = serde_json::to_string(&spec).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let mut bad = spec;
        bad.intrinsics.gamma = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hull_of_square_with_interior_point() {
        let hull = convex_hull(vec![[0.0, 0.0], [1.0, 0.0], [0.5, 0.5], [1.0, 1.0], [0.0, 1.0]]);
        assert_eq!(hull.len(), 4);
    }
}
