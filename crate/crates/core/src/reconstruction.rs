//! Triangulation of rectified correspondences, point clouds and surface meshes.
//!
//! For a rectified pair with baseline `G`, shared focal length `O`, rectified
//! intrinsics `(α_u, α_v, u0, v0)` and a correspondence `(x_l, y_l) ↔ (x_r, y_l)`:
//!
//! ```text
//! X = G·O·(x_l − u0) / (α_u·(x_l − x_r))
//! Y = G·O·(y_l − v0) / (α_v·(x_l − x_r))
//! Z = G·O / (x_l − x_r)
//! ```
//!
//! Dense clouds are meshed by a Delaunay triangulation of the points' source
//! pixels, lifted back to 3D, with long edges cut at depth discontinuities.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use delaunator::{next_halfedge, Point, EMPTY};
use nalgebra::{Matrix3, Vector3};
use robust::Coord;

use crate::correspondence::{DisparityMap, Landmark};
use crate::error::{Error, Result};
use crate::geometry::{PixelPoint, WorldPoint};
use crate::io::{self, Header};
use crate::rectification::{RasterImage, RectifiedRig};

/// 3D points with optional colour and the left-image pixel each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<WorldPoint>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub pixels: Option<Vec<PixelPoint>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<WorldPoint>) -> Self {
        Self {
            points,
            colors: None,
            pixels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidValue("point cloud has non-finite coordinates".into()));
        }
        let n = self.points.len();
        if self.colors.as_ref().is_some_and(|c| c.len() != n)
            || self.pixels.as_ref().is_some_and(|p| p.len() != n)
        {
            return Err(Error::DimensionMismatch(
                "per-point attributes do not match the point count".into(),
            ));
        }
        Ok(())
    }

    /// Applies `f` to every point, keeping attributes.
    pub fn map_points(&self, f: impl Fn(&WorldPoint) -> WorldPoint) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            colors: self.colors.clone(),
            pixels: self.pixels.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<WorldPoint>,
    pub triangles: Vec<[usize; 3]>,
}

/// Space point of a rectified correspondence.
pub fn triangulate_rectified(x_l: f64, y_l: f64, x_r: f64, rig: &RectifiedRig) -> Result<WorldPoint> {
    let disparity = x_l - x_r;
    if !(disparity > 0.0) {
        return Err(Error::NonPositiveDisparity(disparity));
    }
    let k = &rig.new_intrinsics;
    let go = rig.baseline_g * rig.focal_o;
    Ok(WorldPoint::new(
        go * (x_l - k.u0) / (k.alpha_u * disparity),
        go * (y_l - k.v0) / (k.alpha_v * disparity),
        go / disparity,
    ))
}

/// One point per valid pixel with positive disparity, in row-major order.
pub fn cloud_from_disparity(map: &DisparityMap, rig: &RectifiedRig) -> PointCloud {
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for (x, y, d) in map.iter_valid() {
        if d <= 0.0 {
            continue;
        }
        let (xf, yf) = (x as f64, y as f64);
        if let Ok(p) = triangulate_rectified(xf, yf, xf - d, rig) {
            points.push(p);
            pixels.push(PixelPoint::new(xf, yf));
        }
    }
    PointCloud {
        points,
        colors: None,
        pixels: Some(pixels),
    }
}

/// Like [`cloud_from_disparity`], colouring each point from the rectified left image.
pub fn cloud_from_disparity_colored(
    map: &DisparityMap,
    rig: &RectifiedRig,
    left: &RasterImage,
) -> Result<PointCloud> {
    if left.width() != map.width() || left.height() != map.height() {
        return Err(Error::DimensionMismatch(
            "colour image does not match the disparity map".into(),
        ));
    }
    let mut cloud = cloud_from_disparity(map, rig);
    let colors = cloud
        .pixels
        .as_ref()
        .expect("dense clouds carry pixels")
        .iter()
        .map(|p| {
            let (x, y) = (p.u as usize, p.v as usize);
            if left.channels() == 3 {
                [0, 1, 2].map(|c| io::quantize(left.get(x, y, c)))
            } else {
                [io::quantize(left.get(x, y, 0)); 3]
            }
        })
        .collect();
    cloud.colors = Some(colors);
    Ok(cloud)
}

/// Triangulates hand-picked landmark pairs, in input order.
pub fn triangulate_landmarks(
    landmarks: &[Landmark],
    rig: &RectifiedRig,
) -> Result<Vec<(String, WorldPoint)>> {
    landmarks
        .iter()
        .map(|l| triangulate_rectified(l.u_l, l.v_l, l.u_r, rig).map(|p| (l.name.clone(), p)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshOptions {
    /// Triangles with an edge longer than this multiple of the median edge are dropped.
    pub edge_factor: f64,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self { edge_factor: 5.0 }
    }
}

/// 2.5D Delaunay surface over the cloud, with default options.
pub fn mesh_from_cloud(cloud: &PointCloud) -> Result<SurfaceMesh> {
    mesh_from_cloud_with(cloud, &MeshOptions::default()).map(|(mesh, _)| mesh)
}

/// Returns the mesh and the edge-length threshold that was applied.
pub fn mesh_from_cloud_with(cloud: &PointCloud, options: &MeshOptions) -> Result<(SurfaceMesh, f64)> {
    cloud.validate()?;
    if cloud.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: cloud.len(),
        });
    }
    let planar = match &cloud.pixels {
        Some(px) => px.iter().map(|p| [p.u, p.v]).collect(),
        None => project_to_dominant_plane(&cloud.points),
    };

    // first occurrence wins for coincident 2D positions
    let mut seen = HashMap::new();
    let mut keep = Vec::new();
    for (i, p) in planar.iter().enumerate() {
        if seen.insert((p[0].to_bits(), p[1].to_bits()), i).is_none() {
            keep.push(i);
        }
    }
    let points: Vec<Point> = keep
        .iter()
        .map(|&i| Point {
            x: planar[i][0],
            y: planar[i][1],
        })
        .collect();
    let mut tri = delaunator::triangulate(&points);
    if tri.triangles.is_empty() {
        return Err(Error::Collinear);
    }
    // delaunator indexes into `points`; relabel to cloud indices before tie-breaking
    for v in tri.triangles.iter_mut() {
        *v = keep[*v];
    }
    break_cocircular_ties(&mut tri.triangles, &mut tri.halfedges, &planar);

    let triangles: Vec<[usize; 3]> = tri
        .triangles
        .chunks_exact(3)
        .map(|t| [t[0], t[1], t[2]])
        .collect();

    let length = |a: usize, b: usize| (cloud.points[a].coords() - cloud.points[b].coords()).norm();
    let mut edges: Vec<f64> = Vec::new();
    for (e, &h) in tri.halfedges.iter().enumerate() {
        // each undirected edge once
        if h == EMPTY || e < h {
            let a = tri.triangles[e];
            let b = tri.triangles[next_halfedge(e)];
            edges.push(length(a, b));
        }
    }
    edges.sort_by(f64::total_cmp);
    let median = if edges.len() % 2 == 1 {
        edges[edges.len() / 2]
    } else {
        0.5 * (edges[edges.len() / 2 - 1] + edges[edges.len() / 2])
    };
    let threshold = options.edge_factor * median;

    let triangles = triangles
        .into_iter()
        .filter(|t| {
            let [a, b, c] = *t;
            let longest = length(a, b).max(length(b, c)).max(length(c, a));
            longest <= threshold && triangle_area(cloud, t) >= 1e-12
        })
        .collect();
    Ok((
        SurfaceMesh {
            vertices: cloud.points.clone(),
            triangles,
        },
        threshold,
    ))
}

fn triangle_area(cloud: &PointCloud, t: &[usize; 3]) -> f64 {
    let a = cloud.points[t[0]].coords();
    let b = cloud.points[t[1]].coords();
    let c = cloud.points[t[2]].coords();
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Coordinates in the plane spanned by the two largest principal directions.
fn project_to_dominant_plane(points: &[WorldPoint]) -> Vec<[f64; 2]> {
    let n = points.len() as f64;
    let centroid = points.iter().map(|p| p.coords()).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords() - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let e1: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    let e2: Vector3<f64> = eig.eigenvectors.column(order[1]).into();
    points
        .iter()
        .map(|p| {
            let d = p.coords() - centroid;
            [d.dot(&e1), d.dot(&e2)]
        })
        .collect()
}

fn coord(p: &[f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Flips every interior edge whose quad is exactly cocircular and whose other
/// diagonal has the lexicographically smaller vertex pair.
fn break_cocircular_ties(triangles: &mut [usize], halfedges: &mut [usize], planar: &[[f64; 2]]) {
    for _ in 0..64 {
        let mut flipped = false;
        for a in 0..halfedges.len() {
            let b = halfedges[a];
            if b == EMPTY || b < a {
                continue;
            }
            let a0 = a - a % 3;
            let b0 = b - b % 3;
            let al = a0 + (a + 1) % 3;
            let ar = a0 + (a + 2) % 3;
            let bl = b0 + (b + 2) % 3;
            let (pr, pl, p0, p1) = (triangles[a], triangles[al], triangles[ar], triangles[bl]);
            let orient = robust::orient2d(coord(&planar[p0]), coord(&planar[pr]), coord(&planar[pl]));
            let inside = robust::incircle(
                coord(&planar[p0]),
                coord(&planar[pr]),
                coord(&planar[pl]),
                coord(&planar[p1]),
            ) * orient.signum();
            let flip = inside > 0.0 || (inside == 0.0 && ordered(p0, p1) < ordered(pr, pl));
            if !flip {
                continue;
            }
            // the flip is only legal when the quad is strictly convex
            let s1 = robust::orient2d(coord(&planar[p0]), coord(&planar[p1]), coord(&planar[pr]));
            let s2 = robust::orient2d(coord(&planar[p0]), coord(&planar[p1]), coord(&planar[pl]));
            if s1 == 0.0 || s2 == 0.0 || s1.signum() == s2.signum() {
                continue;
            }
            triangles[a] = p1;
            triangles[b] = p0;
            let hbl = halfedges[bl];
            let har = halfedges[ar];
            link(halfedges, a, hbl);
            link(halfedges, b, har);
            link(halfedges, ar, bl);
            flipped = true;
        }
        if !flipped {
            break;
        }
    }
}

fn link(halfedges: &mut [usize], a: usize, b: usize) {
    halfedges[a] = b;
    if b != EMPTY {
        halfedges[b] = a;
    }
}

/// ASCII PLY. Vertices carry `x y z`, then `red green blue` and `u v` when present.
pub fn encode_ply(cloud: &PointCloud, triangles: Option<&[[usize; 3]]>, header: &Header) -> String {
    let mut out = String::from("ply\nformat ascii 1.0\n");
    for line in header.lines("comment ") {
        out.push_str(&line);
        out.push('\n');
    }
    let _ = writeln!(out, "element vertex {}", cloud.points.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.colors.is_some() {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if cloud.pixels.is_some() {
        out.push_str("property double u\nproperty double v\n");
    }
    if let Some(t) = triangles {
        let _ = writeln!(out, "element face {}", t.len());
        out.push_str("property list uchar int vertex_indices\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(c) = &cloud.colors {
            let _ = write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2]);
        }
        if let Some(px) = &cloud.pixels {
            let _ = write!(out, " {} {}", px[i].u, px[i].v);
        }
        out.push('\n');
    }
    if let Some(t) = triangles {
        for f in t {
            let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
        }
    }
    out
}

pub fn write_cloud_ply(path: &Path, cloud: &PointCloud, header: &Header) -> Result<()> {
    io::write_bytes(path, encode_ply(cloud, None, header).as_bytes())
}

pub fn write_mesh_ply(path: &Path, mesh: &SurfaceMesh, header: &Header) -> Result<()> {
    let cloud = PointCloud::from_points(mesh.vertices.clone());
    io::write_bytes(path, encode_ply(&cloud, Some(&mesh.triangles), header).as_bytes())
}

pub fn write_mesh_obj(path: &Path, mesh: &SurfaceMesh, header: &Header) -> Result<()> {
    let mut out = String::new();
    for line in header.lines("# ") {
        out.push_str(&line);
        out.push('\n');
    }
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    io::write_bytes(path, out.as_bytes())
}

/// Reads an ASCII PLY written by this crate (or any ASCII PLY with `x y z` vertices).
pub fn read_ply(path: &Path) -> Result<(PointCloud, Vec<[usize; 3]>)> {
    let text = io::read_to_string(path)?;
    parse_ply(&text).map_err(|m| Error::parse(path, m))
}

fn parse_ply(text: &str) -> std::result::Result<(PointCloud, Vec<[usize; 3]>), String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing ply magic".into());
    }
    let mut vertex_count = 0;
    let mut face_count = 0;
    let mut props: Vec<String> = Vec::new();
    let mut current = "";
    loop {
        let line = lines.next().ok_or("unterminated header")?.trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err("only ascii PLY is supported".into());
                }
            }
            Some("element") => {
                let name = tok.next().ok_or("element without name")?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or("element without count")?;
                match name {
                    "vertex" => {
                        vertex_count = count;
                        current = "vertex";
                    }
                    "face" => {
                        face_count = count;
                        current = "face";
                    }
                    other => return Err(format!("unsupported element {other}")),
                }
            }
            Some("property") if current == "vertex" => {
                let name = line.split_whitespace().last().ok_or("bad property")?;
                props.push(name.to_string());
            }
            Some("end_header") => break,
            _ => {}
        }
    }
    let index = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (index("x"), index("y"), index("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err("vertices need x, y and z".into()),
    };
    let rgb = match (index("red"), index("green"), index("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let uv = index("u").zip(index("v"));

    let mut cloud = PointCloud {
        points: Vec::with_capacity(vertex_count),
        colors: rgb.map(|_| Vec::with_capacity(vertex_count)),
        pixels: uv.map(|_| Vec::with_capacity(vertex_count)),
    };
    for i in 0..vertex_count {
        let line = lines.next().ok_or(format!("missing vertex {i}"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format!("bad vertex {i}"))?;
        if vals.len() != props.len() {
            return Err(format!("vertex {i} has {} values", vals.len()));
        }
        cloud.points.push(WorldPoint::new(vals[ix], vals[iy], vals[iz]));
        if let (Some(c), Some(idx)) = (cloud.colors.as_mut(), rgb) {
            c.push(idx.map(|k| vals[k] as u8));
        }
        if let (Some(p), Some((iu, iv))) = (cloud.pixels.as_mut(), uv) {
            p.push(PixelPoint::new(vals[iu], vals[iv]));
        }
    }
    let mut faces = Vec::with_capacity(face_count);
    for i in 0..face_count {
        let line = lines.next().ok_or(format!("missing face {i}"))?;
        let vals: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format!("bad face {i}"))?;
        if vals.len() != 4 || vals[0] != 3 {
            return Err(format!("face {i} is not a triangle"));
        }
        if vals[1..].iter().any(|&v| v >= vertex_count) {
            return Err(format!("face {i} indexes past the vertex list"));
        }
        faces.push([vals[1], vals[2], vals[3]]);
    }
    Ok((cloud, faces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn rig(g: f64, o: f64, k: CameraIntrinsics) -> RectifiedRig {
        RectifiedRig::new(
            Matrix3::identity(),
            Matrix3::identity(),
            k,
            g,
            o,
            Matrix3::identity(),
        )
        .unwrap()
    }

    #[test]
    fn triangulation_examples() {
        let k = CameraIntrinsics::new(1000.0, 1000.0, 0.0, 320.0, 240.0).unwrap();
        let r = rig(0.2, 1000.0, k);
        let p = triangulate_rectified(320.0, 240.0, 280.0, &r).unwrap();
        assert_eq!(p, WorldPoint::new(0.0, 0.0, 5.0));

        let k = CameraIntrinsics::new(1000.0, 1000.0, 0.0, 0.0, 0.0).unwrap();
        let r = rig(0.2, 1000.0, k);
        let p = triangulate_rectified(100.0, 50.0, 60.0, &r).unwrap();
        assert_relative_eq!(p.x, 0.5, epsilon = 1e-15);
        assert_relative_eq!(p.y, 0.25, epsilon = 1e-15);
        assert_relative_eq!(p.z, 5.0, epsilon = 1e-15);

        assert!(matches!(
            triangulate_rectified(10.0, 0.0, 10.0, &r),
            Err(Error::NonPositiveDisparity(_))
        ));
        assert!(triangulate_rectified(10.0, 0.0, 11.0, &r).is_err());
    }

    #[test]
    fn constant_disparity_gives_a_plane() {
        let k = CameraIntrinsics::new(500.0, 500.0, 0.0, 20.0, 15.0).unwrap();
        let r = rig(0.1, 500.0, k);
        let mut map = DisparityMap::empty(40, 30);
        for y in 0..30 {
            for x in 0..40 {
                map.set(x, y, Some(8.0));
            }
        }
        let cloud = cloud_from_disparity(&map, &r);
        assert_eq!(cloud.len(), 1200);
        for p in &cloud.points {
            assert!((p.z - 0.1 * 500.0 / 8.0).abs() < 1e-9);
        }
        assert!(cloud_from_disparity(&DisparityMap::empty(5, 5), &r).is_empty());
    }

    fn grid_cloud(w: usize, h: usize) -> PointCloud {
        let mut points = Vec::new();
        let mut pixels = Vec::new();
        for y in 0..h {
            for x in 0..w {
                points.push(WorldPoint::new(x as f64 * 0.01, y as f64 * 0.01, 2.0));
                pixels.push(PixelPoint::new(x as f64, y as f64));
            }
        }
        PointCloud {
            points,
            colors: None,
            pixels: Some(pixels),
        }
    }

    #[test]
    fn mesh_examples() {
        let tri = PointCloud::from_points(vec![
            WorldPoint::new(0.0, 0.0, 1.0),
            WorldPoint::new(1.0, 0.0, 1.0),
            WorldPoint::new(0.0, 1.0, 1.0),
        ]);
        assert_eq!(mesh_from_cloud(&tri).unwrap().triangles.len(), 1);

        let square = PointCloud::from_points(vec![
            WorldPoint::new(0.0, 0.0, 0.0),
            WorldPoint::new(1.0, 0.0, 0.0),
            WorldPoint::new(1.0, 1.0, 0.0),
            WorldPoint::new(0.0, 1.0, 0.0),
        ]);
        let mesh = mesh_from_cloud(&square).unwrap();
        assert_eq!(mesh.triangles.len(), 2);
        for t in &mesh.triangles {
            assert!(t.contains(&0) && t.contains(&2), "{t:?}");
        }

        for (w, h) in [(2, 2), (5, 4), (17, 9)] {
            let mesh = mesh_from_cloud(&grid_cloud(w, h)).unwrap();
            assert_eq!(mesh.triangles.len(), 2 * (w - 1) * (h - 1));
        }
    }

    #[test]
    fn grid_diagonals_follow_tie_break() {
        let w = 6;
        let mesh = mesh_from_cloud(&grid_cloud(w, 5)).unwrap();
        for t in &mesh.triangles {
            let min = *t.iter().min().unwrap();
            let (x, y) = (min % w, min / w);
            // each cell is split along its (top-left, bottom-right) diagonal
            assert!(t.contains(&((y + 1) * w + x + 1)), "{t:?}");
        }
    }

    #[test]
    fn mesh_errors() {
        let two = PointCloud::from_points(vec![WorldPoint::default(); 2]);
        assert!(matches!(
            mesh_from_cloud(&two),
            Err(Error::InsufficientPoints { .. })
        ));
        let line = PointCloud::from_points(
            (0..5).map(|i| WorldPoint::new(i as f64, 2.0 * i as f64, 0.0)).collect(),
        );
        assert!(matches!(mesh_from_cloud(&line), Err(Error::Collinear)));
    }

    #[test]
    fn long_edges_are_cut_at_discontinuities() {
        let mut cloud = grid_cloud(10, 10);
        // right half jumps far back
        for (p, px) in cloud.points.iter_mut().zip(cloud.pixels.as_ref().unwrap()) {
            if px.u >= 5.0 {
                p.z += 10.0;
            }
        }
        let (mesh, threshold) = mesh_from_cloud_with(&cloud, &MeshOptions::default()).unwrap();
        assert_eq!(mesh.triangles.len(), 2 * 4 * 9 * 2);
        let mut edges = HashSet::new();
        for t in &mesh.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                edges.insert(ordered(a, b));
                let d = (mesh.vertices[a].coords() - mesh.vertices[b].coords()).norm();
                assert!(d <= threshold);
            }
            assert!(triangle_area(&cloud, t) >= 1e-12);
        }
        let unique: HashSet<_> = mesh.triangles.iter().map(|t| {
            let mut s = *t;
            s.sort();
            s
        }).collect();
        assert_eq!(unique.len(), mesh.triangles.len());
    }

    #[test]
    fn ply_round_trip() {
        let mut cloud = grid_cloud(3, 2);
        cloud.colors = Some(vec![[1, 2, 3]; 6]);
        cloud.points[1].x = 0.1 + 0.2;
        let text = encode_ply(&cloud, Some(&[[0, 1, 3]]), &Header::new("t"));
        let (back, faces) = parse_ply(&text).unwrap();
        assert_eq!(back, cloud);
        assert_eq!(faces, vec![[0, 1, 3]]);
    }

    #[test]
    fn obj_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        let mesh = SurfaceMesh {
            vertices: vec![WorldPoint::new(0.0, 0.0, 1.0); 3],
            triangles: vec![[0, 1, 2]],
        };
        write_mesh_obj(&path, &mesh, &Header::new("mesh")).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert!(text.lines().any(|l| l == "f 1 2 3"));
    }

    proptest! {
        #[test]
        fn depth_decreases_with_disparity(d in 0.5f64..200.0, step in 0.01f64..10.0) {
            let k = CameraIntrinsics::new(800.0, 800.0, 0.0, 320.0, 240.0).unwrap();
            let r = rig(0.15, 800.0, k);
            let near = triangulate_rectified(400.0, 200.0, 400.0 - d - step, &r).unwrap();
            let far = triangulate_rectified(400.0, 200.0, 400.0 - d, &r).unwrap();
            prop_assert!(near.z < far.z);
        }

        #[test]
        fn baseline_scales_coordinates(s in 0.1f64..10.0, xl in 0.0f64..640.0, yl in 0.0f64..480.0, d in 1.0f64..100.0) {
            let k = CameraIntrinsics::new(700.0, 710.0, 0.0, 320.0, 240.0).unwrap();
            let a = triangulate_rectified(xl, yl, xl - d, &rig(0.2, 700.0, k)).unwrap();
            let b = triangulate_rectified(xl, yl, xl - d, &rig(0.2 * s, 700.0, k)).unwrap();
            prop_assert!((b.coords() - a.coords() * s).amax() <= 1e-12 * (1.0 + b.coords().amax()));
        }
    }
}
