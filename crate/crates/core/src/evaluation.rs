//! Alignment to a reference frame, dimension measurement and error statistics.
//!
//! A reconstruction lives in its own frame with arbitrary origin, rotation and
//! scale. [`align_similarity`] fits the similarity transform taking landmark
//! points onto their reference positions. [`measure_dimension`] then reads
//! length, width and height off the axis-aligned bounding box of a selected
//! component, and [`percent_error`] scores them against ground truth.

use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{matrix_from_row_major, matrix_to_row_major, CameraPose, WorldPoint};
use crate::io::{self, Header};
use crate::reconstruction::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    L,
    W,
    H,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::L, Axis::W, Axis::H];

    /// Bounding-box axis: L along x, W along y, H along z.
    pub fn index(self) -> usize {
        match self {
            Axis::L => 0,
            Axis::W => 1,
            Axis::H => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::L => "L",
            Axis::W => "W",
            Axis::H => "H",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "L" | "l" => Ok(Axis::L),
            "W" | "w" => Ok(Axis::W),
            "H" | "h" => Ok(Axis::H),
            other => Err(Error::InvalidValue(format!("unknown axis {other:?}"))),
        }
    }
}

/// One scored dimension of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub object_name: String,
    pub axis: Axis,
    pub actual: f64,
    pub measured: f64,
    pub percent_error: f64,
}

impl MeasurementRecord {
    pub fn new(object_name: impl Into<String>, axis: Axis, actual: f64, measured: f64) -> Result<Self> {
        Ok(Self {
            object_name: object_name.into(),
            axis,
            actual,
            measured,
            percent_error: percent_error(actual, measured)?,
        })
    }
}

/// `|measured − actual| / actual × 100`, unrounded.
///
/// A zero-length feature measured as zero scores 0%.
///
/// ```
/// # use photogram::evaluation::percent_error;
/// let e = percent_error(1.125, 1.193).unwrap();
/// assert_eq!(format!("{e:.2}"), "6.04");
/// assert_eq!(percent_error(0.0, 0.0).unwrap(), 0.0);
/// assert!(percent_error(0.0, 0.5).is_err());
/// ```
pub fn percent_error(actual: f64, measured: f64) -> Result<f64> {
    if !(actual >= 0.0) || !(measured >= 0.0) || !actual.is_finite() || !measured.is_finite() {
        return Err(Error::InvalidValue(format!(
            "lengths must be finite and non-negative, got actual={actual} measured={measured}"
        )));
    }
    if actual == 0.0 {
        return if measured == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::UndefinedError { measured })
        };
    }
    Ok((measured - actual).abs() / actual * 100.0)
}

/// `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &WorldPoint) -> WorldPoint {
        WorldPoint::from_coords(&(self.scale * self.rotation * p.coords() + self.translation))
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_points(|p| self.apply(p))
    }

    /// Root-mean-square distance between transformed `source` and `target`.
    pub fn rms_residual(&self, source: &[WorldPoint], target: &[WorldPoint]) -> f64 {
        if source.is_empty() {
            return 0.0;
        }
        let sum: f64 = source
            .iter()
            .zip(target)
            .map(|(s, t)| (self.apply(s).coords() - t.coords()).norm_squared())
            .sum();
        (sum / source.len() as f64).sqrt()
    }
}

/// Serialized [`SimilarityTransform`] with a row-major rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityFile {
    pub scale: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    /// RMS landmark residual after alignment.
    #[serde(default)]
    pub rms_residual: f64,
}

impl SimilarityFile {
    pub fn new(t: &SimilarityTransform, rms_residual: f64) -> Self {
        Self {
            scale: t.scale,
            rotation: matrix_to_row_major(&t.rotation),
            translation: t.translation.into(),
            rms_residual,
        }
    }
}

impl TryFrom<&SimilarityFile> for SimilarityTransform {
    type Error = Error;

    fn try_from(f: &SimilarityFile) -> Result<Self> {
        if !(f.scale > 0.0) || !f.scale.is_finite() {
            return Err(Error::InvalidValue(format!("similarity scale must be positive, got {}", f.scale)));
        }
        let rotation = matrix_from_row_major(&f.rotation);
        CameraPose::new(rotation, Vector3::from(f.translation))?;
        Ok(Self {
            scale: f.scale,
            rotation,
            translation: Vector3::from(f.translation),
        })
    }
}

/// Least-squares similarity taking `source` onto `target` (Umeyama's closed form).
pub fn align_similarity(source: &[WorldPoint], target: &[WorldPoint]) -> Result<SimilarityTransform> {
    if source.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} source points but {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: source.len(),
        });
    }
    let n = source.len() as f64;
    let mu_s = source.iter().map(|p| p.coords()).sum::<Vector3<f64>>() / n;
    let mu_t = target.iter().map(|p| p.coords()).sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s.coords() - mu_s;
        let dt = t.coords() - mu_t;
        cov += dt * ds.transpose();
        scatter += ds * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let spread = scatter.symmetric_eigen().eigenvalues;
    let mut ev = [spread[0], spread[1], spread[2]];
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate("alignment points are collinear or coincident".into()));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V");
    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // reflection; flip the weakest direction (singular values are sorted descending)
        signs[2] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&signs) * v_t;
    let scale = svd.singular_values.dot(&signs) / var_s;
    if !(scale > 0.0) {
        return Err(Error::Degenerate("alignment yields a non-positive scale".into()));
    }
    let translation = mu_t - scale * rotation * mu_s;
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// Named point with known coordinates in the measurement frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl ReferencePoint {
    pub fn point(&self) -> WorldPoint {
        WorldPoint::new(self.x, self.y, self.z)
    }
}

/// Reads `name,x,y,z` rows; `#` lines are comments.
pub fn read_reference_points(path: &Path) -> Result<Vec<ReferencePoint>> {
    let text = io::read_to_string(path)?;
    csv_reader(&text)
        .deserialize()
        .map(|r| r.map_err(|e| Error::parse(path, e.to_string())))
        .collect()
}

pub fn encode_reference_points(points: &[ReferencePoint], header: &Header) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for p in points {
        writer.serialize(p).map_err(|e| Error::InvalidValue(e.to_string()))?;
    }
    let body = String::from_utf8(writer.into_inner().map_err(|e| Error::InvalidValue(e.to_string()))?)
        .expect("csv output is utf-8");
    Ok(io::with_comment_header(header, &body))
}

/// Source/target pairs for every named point that has a reference, in source order.
pub fn pair_by_name(
    source: &[(String, WorldPoint)],
    reference: &[ReferencePoint],
) -> (Vec<WorldPoint>, Vec<WorldPoint>) {
    let lookup: IndexMap<&str, WorldPoint> = reference.iter().map(|r| (r.name.as_str(), r.point())).collect();
    source
        .iter()
        .filter_map(|(name, p)| lookup.get(name.as_str()).map(|r| (*p, *r)))
        .unzip()
}

/// Which points of a cloud make up one component.
///
/// In JSON: a list of point indices, `{"pixel_box": [u_min, v_min, u_max, v_max]}`
/// (inclusive) or `{"pixel_polygon": [[u, v], ...]}` over the points' source pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComponentSelection {
    Indices(Vec<usize>),
    PixelBox { pixel_box: [f64; 4] },
    PixelPolygon { pixel_polygon: Vec<[f64; 2]> },
}

impl ComponentSelection {
    /// Indices of the selected points, ascending.
    pub fn resolve(&self, cloud: &PointCloud) -> Result<Vec<usize>> {
        let pixels = || {
            cloud.pixels.as_ref().ok_or_else(|| {
                Error::InvalidValue("pixel selections need a cloud with source pixels".into())
            })
        };
        match self {
            ComponentSelection::Indices(idx) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= cloud.len()) {
                    return Err(Error::InvalidValue(format!(
                        "selection index {bad} out of range for {} points",
                        cloud.len()
                    )));
                }
                let mut idx = idx.clone();
                idx.sort_unstable();
                idx.dedup();
                Ok(idx)
            }
            ComponentSelection::PixelBox { pixel_box: [u0, v0, u1, v1] } => Ok(pixels()?
                .iter()
                .enumerate()
                .filter(|(_, p)| p.u >= *u0 && p.u <= *u1 && p.v >= *v0 && p.v <= *v1)
                .map(|(i, _)| i)
                .collect()),
            ComponentSelection::PixelPolygon { pixel_polygon } => {
                if pixel_polygon.len() < 3 {
                    return Err(Error::InvalidValue("a pixel polygon needs at least 3 vertices".into()));
                }
                Ok(pixels()?
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| point_in_polygon(p.u, p.v, pixel_polygon))
                    .map(|(i, _)| i)
                    .collect())
            }
        }
    }
}

/// Even-odd crossing test.
fn point_in_polygon(x: f64, y: f64, poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Named selections, in file order.
pub type SelectionMap = IndexMap<String, ComponentSelection>;

/// Reads a selection file, with or without a `meta` header block.
pub fn read_selections(path: &Path) -> Result<SelectionMap> {
    io::read_json_skip_header(path)
}

/// Bounding-box extents `(L, W, H)` of the selected points along x, y, z.
pub fn measure_dimension(cloud: &PointCloud, selection: &ComponentSelection) -> Result<[f64; 3]> {
    let idx = selection.resolve(cloud)?;
    measure_points(idx.iter().map(|&i| &cloud.points[i]))
}

/// Bounding-box extents of a point set.
pub fn measure_points<'a>(points: impl IntoIterator<Item = &'a WorldPoint>) -> Result<[f64; 3]> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    let mut any = false;
    for p in points {
        let c = p.coords();
        lo = lo.inf(&c);
        hi = hi.sup(&c);
        any = true;
    }
    if !any {
        return Err(Error::EmptyInput("selection"));
    }
    Ok([hi.x - lo.x, hi.y - lo.y, hi.z - lo.z])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean_percent: f64,
    /// Population standard deviation.
    pub std_percent: f64,
    /// Mean error per object, for heatmaps.
    pub per_object_errors: IndexMap<String, f64>,
}

/// Mean and population standard deviation of all percent errors.
pub fn aggregate_errors(records: &[MeasurementRecord]) -> Result<ErrorSummary> {
    if records.is_empty() {
        return Err(Error::EmptyInput("measurement records"));
    }
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.percent_error).sum::<f64>() / n;
    let var = records
        .iter()
        .map(|r| (r.percent_error - mean).powi(2))
        .sum::<f64>()
        / n;
    let mut groups: IndexMap<String, (f64, usize)> = IndexMap::new();
    for r in records {
        let g = groups.entry(r.object_name.clone()).or_insert((0.0, 0));
        g.0 += r.percent_error;
        g.1 += 1;
    }
    Ok(ErrorSummary {
        mean_percent: mean,
        std_percent: var.sqrt(),
        per_object_errors: groups
            .into_iter()
            .map(|(k, (sum, count))| (k, sum / count as f64))
            .collect(),
    })
}

/// A ground-truth row: object, axis, actual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub object: String,
    pub axis: Axis,
    pub actual: f64,
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::parse(path, format!("missing column {name:?}")))
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let text = io::read_to_string(path)?;
    let mut reader = csv_reader(&text);
    let headers = reader.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
    let (io_, ia, iv) = (
        column(&headers, "object", path)?,
        column(&headers, "axis", path)?,
        column(&headers, "actual", path)?,
    );
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::parse(path, e.to_string()))?;
        out.push(GroundTruth {
            object: row[io_].to_string(),
            axis: row[ia].parse()?,
            actual: parse_f64(&row[iv], path)?,
        });
    }
    Ok(out)
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::parse(path, format!("bad number {s:?}")))
}

/// Pairs each ground-truth row with the measured extent of its object, in ground-truth order.
pub fn build_records(
    truth: &[GroundTruth],
    measured: &IndexMap<String, [f64; 3]>,
) -> Result<Vec<MeasurementRecord>> {
    truth
        .iter()
        .map(|g| {
            let dims = measured.get(&g.object).ok_or_else(|| {
                Error::InvalidValue(format!("no measurement for object {:?}", g.object))
            })?;
            MeasurementRecord::new(g.object.clone(), g.axis, g.actual, dims[g.axis.index()])
        })
        .collect()
}

/// Reads records from a CSV with `object, axis, actual, measured` columns.
///
/// Percent errors are recomputed. When an `error_percent` column is present it
/// must agree with the recomputed value to its printed precision.
pub fn read_records(path: &Path) -> Result<Vec<MeasurementRecord>> {
    let text = io::read_to_string(path)?;
    let mut reader = csv_reader(&text);
    let headers = reader.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
    let io_ = column(&headers, "object", path)?;
    let ia = column(&headers, "axis", path)?;
    let iact = column(&headers, "actual", path)?;
    let imeas = column(&headers, "measured", path)?;
    let ierr = headers.iter().position(|h| h == "error_percent");
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::parse(path, e.to_string()))?;
        let record = MeasurementRecord::new(
            &row[io_],
            row[ia].parse()?,
            parse_f64(&row[iact], path)?,
            parse_f64(&row[imeas], path)?,
        )?;
        if let Some(ie) = ierr {
            let printed = &row[ie];
            let decimals = printed.split('.').nth(1).map_or(0, str::len) as i32;
            let printed = parse_f64(printed, path)?;
            if (printed - record.percent_error).abs() > 0.5 * 10f64.powi(-decimals) + 1e-9 {
                return Err(Error::parse(
                    path,
                    format!(
                        "{} {}: error_percent {printed} disagrees with computed {:.4}",
                        record.object_name,
                        record.axis.as_str(),
                        record.percent_error
                    ),
                ));
            }
        }
        out.push(record);
    }
    Ok(out)
}

/// Report CSV text: `# ` header lines, then `object,axis,actual,measured,error_percent`.
pub fn encode_report_csv(records: &[MeasurementRecord], header: &Header) -> Result<String> {
    if records.is_empty() {
        return Err(Error::EmptyInput("measurement records"));
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::InvalidValue(e.to_string());
    writer
        .write_record(["object", "axis", "actual", "measured", "error_percent"])
        .map_err(io_err)?;
    for r in records {
        writer
            .write_record([
                r.object_name.clone(),
                r.axis.as_str().to_string(),
                r.actual.to_string(),
                r.measured.to_string(),
                format!("{:.2}", r.percent_error),
            ])
            .map_err(io_err)?;
    }
    let body = String::from_utf8(writer.into_inner().map_err(|e| Error::InvalidValue(e.to_string()))?)
        .expect("csv output is utf-8");
    let header = header.clone().param("std", "population");
    Ok(io::with_comment_header(&header, &body))
}

/// Writes the report CSV and the JSON summary.
pub fn export_report(
    csv_path: &Path,
    json_path: &Path,
    records: &[MeasurementRecord],
    summary: &ErrorSummary,
    header: &Header,
) -> Result<()> {
    let csv = encode_report_csv(records, header)?;
    io::write_bytes(csv_path, csv.as_bytes())?;
    let header = header.clone().param("std", "population");
    io::write_json_with_header(json_path, &header, summary)
}

/// Reads a summary written by [`export_report`].
pub fn read_summary(path: &Path) -> Result<ErrorSummary> {
    io::read_json_skip_header(path)
}

/// Human-readable table, one line per record plus the summary.
pub fn format_table(records: &[MeasurementRecord], summary: &ErrorSummary) -> String {
    let mut out = String::new();
    let width = records.iter().map(|r| r.object_name.len()).max().unwrap_or(6).max(6);
    let _ = writeln!(out, "{:width$}  axis  {:>10}  {:>10}  {:>7}", "object", "actual", "measured", "error");
    for r in records {
        let _ = writeln!(
            out,
            "{:width$}  {:4}  {:>10.4}  {:>10.4}  {:>6.2}%",
            r.object_name,
            r.axis.as_str(),
            r.actual,
            r.measured,
            r.percent_error
        );
    }
    let _ = writeln!(
        out,
        "mean {:.2}%  std {:.2}%  ({} records)",
        summary.mean_percent,
        summary.std_percent,
        records.len()
    );
    out
}
