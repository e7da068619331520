//! Dense correspondence between rectified images, and hand-picked landmarks.
//!
//! The matcher is plain winner-take-all block matching on zero-normalized
//! cross-correlation (ZNCC), with a parabolic sub-pixel step and three
//! rejection tests: window texture, uniqueness of the peak, and left-right
//! consistency.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PixelPoint;
use crate::io::{self, Header};
use crate::rectification::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    /// Correlation window is `(2r+1) × (2r+1)`.
    pub window_radius: usize,
    pub d_min: i32,
    pub d_max: i32,
    /// Minimum intensity variance inside the left window.
    pub min_texture: f64,
    /// A match is kept only if `1 − best ≤ ratio · (1 − second)`, where `second`
    /// is the best score more than one disparity step away from the peak.
    pub uniqueness_ratio: f64,
    /// Largest allowed gap between left→right and right→left disparities.
    pub lr_tolerance: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            window_radius: 4,
            d_min: 0,
            d_max: 64,
            min_texture: 1e-4,
            uniqueness_ratio: 0.8,
            lr_tolerance: 1.0,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if self.d_min > self.d_max {
            return Err(Error::InvalidRange {
                d_min: self.d_min,
                d_max: self.d_max,
            });
        }
        if !(self.min_texture >= 0.0) || !(self.uniqueness_ratio > 0.0) || !(self.lr_tolerance >= 0.0)
        {
            return Err(Error::InvalidValue(
                "min_texture, uniqueness_ratio and lr_tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn header(&self, header: Header) -> Header {
        header
            .param("window_radius", self.window_radius)
            .param("d_min", self.d_min)
            .param("d_max", self.d_max)
            .param("min_texture", self.min_texture)
            .param("uniqueness_ratio", self.uniqueness_ratio)
            .param("lr_tolerance", self.lr_tolerance)
    }
}

/// Per-pixel disparity `x_l − x_r` for the left image of a rectified pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DisparityMap {
    /// An all-invalid map.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn from_parts(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "disparity map {width}x{height} needs {} values and flags",
                width * height
            )));
        }
        let mut map = Self {
            width,
            height,
            values,
            valid,
        };
        for (v, ok) in map.values.iter_mut().zip(&map.valid) {
            if !ok {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::InvalidValue("valid disparity is not finite".into()));
            }
        }
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    pub fn set(&mut self, x: usize, y: usize, value: Option<f64>) {
        let i = y * self.width + x;
        self.valid[i] = value.is_some();
        self.values[i] = value.unwrap_or(0.0);
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// `(x, y, disparity)` for every valid pixel, row-major.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.values.len())
            .filter(|&i| self.valid[i])
            .map(|i| (i % self.width, i / self.width, self.values[i]))
    }
}

/// Window mean and variance for every pixel whose window lies inside the image.
struct WindowStats {
    mean: Vec<f64>,
    var: Vec<f64>,
}

fn window_stats(img: &RasterImage, r: usize) -> WindowStats {
    let (w, h) = (img.width(), img.height());
    let s = img.samples();
    // integral images of x and x²
    let mut sum = vec![0.0; (w + 1) * (h + 1)];
    let mut sq = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0.0;
        let mut row_sq = 0.0;
        for x in 0..w {
            let v = s[y * w + x];
            row_sum += v;
            row_sq += v * v;
            sum[(y + 1) * (w + 1) + x + 1] = sum[y * (w + 1) + x + 1] + row_sum;
            sq[(y + 1) * (w + 1) + x + 1] = sq[y * (w + 1) + x + 1] + row_sq;
        }
    }
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut mean = vec![f64::NAN; w * h];
    let mut var = vec![f64::NAN; w * h];
    if w > 2 * r && h > 2 * r {
        for y in r..h - r {
            for x in r..w - r {
                let (x0, y0, x1, y1) = (x - r, y - r, x + r + 1, y + r + 1);
                let area = |t: &[f64]| {
                    t[y1 * (w + 1) + x1] - t[y0 * (w + 1) + x1] - t[y1 * (w + 1) + x0]
                        + t[y0 * (w + 1) + x0]
                };
                let m = area(&sum) / n;
                mean[y * w + x] = m;
                var[y * w + x] = (area(&sq) / n - m * m).max(0.0);
            }
        }
    }
    WindowStats { mean, var }
}

const FLAT_VARIANCE: f64 = 1e-12;

/// ZNCC block matching of a rectified pair.
pub fn compute_disparity(
    left: &RasterImage,
    right: &RasterImage,
    params: &MatchParams,
) -> Result<DisparityMap> {
    params.validate()?;
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::DimensionMismatch(format!(
            "left image is {}x{}, right image is {}x{}",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    let left = left.to_gray();
    let right = right.to_gray();
    let (w, h) = (left.width(), left.height());
    let r = params.window_radius;
    let mut map = DisparityMap::empty(w, h);
    if w <= 2 * r || h <= 2 * r {
        return Ok(map);
    }
    let ls = window_stats(&left, r);
    let rs = window_stats(&right, r);
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let disparities: Vec<i32> = (params.d_min..=params.d_max).collect();
    let nd = disparities.len();

    let rows: Vec<Vec<Option<f64>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut out = vec![None; w];
            if y < r || y + r >= h {
                return out;
            }
            // scores[x * nd + k]: ZNCC of left(x) against right(x - d_k)
            let mut scores = vec![f64::NAN; w * nd];
            let mut colsum = vec![0.0; w];
            for (k, &d) in disparities.iter().enumerate() {
                // left columns x such that x and x - d both have full windows
                let lo = (r as i64).max(r as i64 + d as i64);
                let hi = ((w - r - 1) as i64).min((w - r - 1) as i64 + d as i64);
                if lo > hi {
                    continue;
                }
                let (lo, hi) = (lo as usize, hi as usize);
                let (cl, ch) = (lo - r, hi + r);
                for x in cl..=ch {
                    let xr = (x as i64 - d as i64) as usize;
                    let mut acc = 0.0;
                    for yy in y - r..=y + r {
                        acc += left.samples()[yy * w + x] * right.samples()[yy * w + xr];
                    }
                    colsum[x] = acc;
                }
                let mut window: f64 = colsum[cl..cl + 2 * r + 1].iter().sum();
                for x in lo..=hi {
                    if x > lo {
                        window += colsum[x + r] - colsum[x - r - 1];
                    }
                    let li = y * w + x;
                    let ri = y * w + (x as i64 - d as i64) as usize;
                    let (vl, vr) = (ls.var[li], rs.var[ri]);
                    if vl < FLAT_VARIANCE || vr < FLAT_VARIANCE {
                        continue;
                    }
                    let cov = window / n - ls.mean[li] * rs.mean[ri];
                    scores[x * nd + k] = (cov / (vl * vr).sqrt()).clamp(-1.0, 1.0);
                }
            }

            // right-image winners, for the consistency check
            let mut right_best = vec![None::<usize>; w];
            for (xr, best) in right_best.iter_mut().enumerate() {
                let mut top = f64::NEG_INFINITY;
                for (k, &d) in disparities.iter().enumerate() {
                    let x = xr as i64 + d as i64;
                    if x < 0 || x >= w as i64 {
                        continue;
                    }
                    let s = scores[x as usize * nd + k];
                    if s > top {
                        top = s;
                        *best = Some(k);
                    }
                }
            }

            for x in r..w - r {
                if !(ls.var[y * w + x] >= params.min_texture) {
                    continue;
                }
                let row = &scores[x * nd..(x + 1) * nd];
                let mut best = None;
                let mut top = f64::NEG_INFINITY;
                for (k, &s) in row.iter().enumerate() {
                    if s > top {
                        top = s;
                        best = Some(k);
                    }
                }
                let Some(kb) = best else { continue };
                let second = row
                    .iter()
                    .enumerate()
                    .filter(|(k, s)| k.abs_diff(kb) > 1 && !s.is_nan())
                    .map(|(_, &s)| s)
                    .fold(f64::NEG_INFINITY, f64::max);
                if second.is_finite() && 1.0 - top > params.uniqueness_ratio * (1.0 - second) {
                    continue;
                }
                let d = disparities[kb];
                let xr = x as i64 - d as i64;
                let consistent = right_best[xr as usize]
                    .map(|kr| ((disparities[kr] - d) as f64).abs() <= params.lr_tolerance)
                    .unwrap_or(false);
                if !consistent {
                    continue;
                }
                let mut value = d as f64;
                if kb > 0 && kb + 1 < nd {
                    let (sm, sp) = (row[kb - 1], row[kb + 1]);
                    if sm.is_finite() && sp.is_finite() {
                        let denom = sm - 2.0 * top + sp;
                        if denom < 0.0 {
                            value += (0.5 * (sm - sp) / denom).clamp(-0.5, 0.5);
                        }
                    }
                }
                out[x] = Some(value);
            }
            out
        })
        .collect();

    for (y, row) in rows.into_iter().enumerate() {
        for (x, v) in row.into_iter().enumerate() {
            map.set(x, y, v);
        }
    }
    Ok(map)
}

/// Writes the disparity grid as text (`nan` where invalid) and the validity mask as PGM.
pub fn write_disparity(
    grid_path: &Path,
    mask_path: &Path,
    map: &DisparityMap,
    header: &Header,
) -> Result<()> {
    let mut body = format!("{} {}\n", map.width, map.height);
    for y in 0..map.height {
        let row: Vec<String> = (0..map.width)
            .map(|x| match map.get(x, y) {
                Some(v) => format!("{v}"),
                None => "nan".to_string(),
            })
            .collect();
        body.push_str(&row.join(" "));
        body.push('\n');
    }
    io::write_bytes(grid_path, io::with_comment_header(header, &body).as_bytes())?;
    let mask = RasterImage::new(
        map.width,
        map.height,
        1,
        map.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
    )?;
    io::write_pnm(mask_path, &mask, Some(header))
}

/// Reads a grid written by [`write_disparity`]; the mask, when given, decides validity.
pub fn read_disparity(grid_path: &Path, mask_path: Option<&Path>) -> Result<DisparityMap> {
    let text = io::strip_comment_lines(&io::read_to_string(grid_path)?);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let dims = lines
        .next()
        .ok_or_else(|| Error::parse(grid_path, "missing dimensions line"))?;
    let dims: Vec<usize> = dims
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(grid_path, "bad dimensions line"))?;
    let [width, height] = dims[..] else {
        return Err(Error::parse(grid_path, "dimensions line must hold width and height"));
    };
    let mut values = Vec::with_capacity(width * height);
    for (row, line) in lines.enumerate() {
        let parsed: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(grid_path, format!("bad value on row {row}")))?;
        if parsed.len() != width {
            return Err(Error::parse(
                grid_path,
                format!("row {row} has {} values, expected {width}", parsed.len()),
            ));
        }
        values.extend(parsed);
    }
    if values.len() != width * height {
        return Err(Error::parse(grid_path, "wrong number of rows"));
    }
    let valid = match mask_path {
        Some(p) => {
            let mask = io::read_pnm(p)?;
            if mask.width() != width || mask.height() != height {
                return Err(Error::DimensionMismatch(format!(
                    "mask {} does not match the disparity grid",
                    p.display()
                )));
            }
            mask.samples().iter().map(|&s| s > 0.5).collect()
        }
        None => values.iter().map(|v| v.is_finite()).collect(),
    };
    DisparityMap::from_parts(width, height, values, valid)
}

/// A named point picked by hand in both rectified images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub name: String,
    pub u_l: f64,
    pub v_l: f64,
    pub u_r: f64,
    pub v_r: f64,
}

impl Landmark {
    pub fn left(&self) -> PixelPoint {
        PixelPoint::new(self.u_l, self.v_l)
    }

    pub fn right(&self) -> PixelPoint {
        PixelPoint::new(self.u_r, self.v_r)
    }
}

/// Reads landmark pairs (`name,u_l,v_l,u_r,v_r`); they go to triangulation unchanged.
pub fn match_landmarks(path: &Path) -> Result<Vec<Landmark>> {
    let text = io::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::parse(path, e.to_string())))
        .collect()
}

pub fn write_landmarks(path: &Path, landmarks: &[Landmark], header: &Header) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for l in landmarks {
        writer
            .serialize(l)
            .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    let body = String::from_utf8(writer.into_inner().map_err(|e| Error::parse(path, e.to_string()))?)
        .expect("csv output is utf-8");
    io::write_bytes(path, io::with_comment_header(header, &body).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Smoothed random texture.
    fn texture(w: usize, h: usize, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
        RasterImage::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            let mut n = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                        acc += raw[yy as usize * w + xx as usize];
                        n += 1.0;
                    }
                }
            }
            acc / n
        })
        .unwrap()
    }

    fn shifted(img: &RasterImage, shift: usize) -> RasterImage {
        let w = img.width();
        RasterImage::from_fn(w, img.height(), |x, y| img.get((x + shift).min(w - 1), y, 0)).unwrap()
    }

    #[test]
    fn identical_images_give_zero_disparity() {
        let img = texture(60, 40, 1);
        let params = MatchParams {
            d_min: 0,
            d_max: 16,
            ..MatchParams::default()
        };
        let map = compute_disparity(&img, &img, &params).unwrap();
        assert!(map.valid_count() > 0);
        for (x, y, d) in map.iter_valid() {
            assert_eq!(d, 0.0, "pixel ({x}, {y})");
        }
        // every textured interior pixel whose window fits
        for y in 4..36 {
            for x in 4..56 {
                assert!(map.get(x, y).is_some(), "({x}, {y}) invalid");
            }
        }
    }

    #[test]
    fn constant_shift_is_recovered() {
        let left = texture(120, 60, 2);
        let right = shifted(&left, 8);
        let params = MatchParams {
            d_min: 0,
            d_max: 16,
            ..MatchParams::default()
        };
        let map = compute_disparity(&left, &right, &params).unwrap();
        let mut total = 0;
        let mut good = 0;
        for y in 4..56 {
            for x in 12..108 {
                total += 1;
                if let Some(d) = map.get(x, y) {
                    assert!((d - 8.0).abs() <= 0.25, "({x},{y}) -> {d}");
                    good += 1;
                }
            }
        }
        assert!(good as f64 >= 0.95 * total as f64, "{good}/{total}");
    }

    #[test]
    fn textureless_image_is_all_invalid() {
        let flat = RasterImage::filled(40, 30, 1, 0.5).unwrap();
        let map = compute_disparity(&flat, &flat, &MatchParams::default()).unwrap();
        assert_eq!(map.valid_count(), 0);
    }

    #[test]
    fn argument_errors() {
        let a = texture(20, 20, 3);
        let b = texture(21, 20, 3);
        assert!(matches!(
            compute_disparity(&a, &b, &MatchParams::default()),
            Err(Error::DimensionMismatch(_))
        ));
        let bad = MatchParams {
            d_min: 5,
            d_max: 2,
            ..MatchParams::default()
        };
        assert!(matches!(
            compute_disparity(&a, &a, &bad),
            Err(Error::InvalidRange { d_min: 5, d_max: 2 })
        ));
    }

    #[test]
    fn valid_values_stay_in_range_and_are_deterministic() {
        let left = texture(90, 40, 4);
        let right = texture(90, 40, 5);
        let params = MatchParams {
            d_min: 3,
            d_max: 20,
            uniqueness_ratio: 1.0,
            ..MatchParams::default()
        };
        let a = compute_disparity(&left, &right, &params).unwrap();
        let b = compute_disparity(&left, &right, &params).unwrap();
        assert_eq!(a, b);
        for (_, _, d) in a.iter_valid() {
            assert!((3.0..=20.0).contains(&d));
        }
    }

    #[test]
    fn disparity_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = DisparityMap::empty(4, 3);
        map.set(1, 1, Some(7.123456789012345));
        map.set(3, 2, Some(0.1 + 0.2));
        let grid = dir.path().join("d.txt");
        let mask = dir.path().join("d.pgm");
        write_disparity(&grid, &mask, &map, &Header::new("disparity")).unwrap();
        assert_eq!(read_disparity(&grid, Some(&mask)).unwrap(), map);
        assert_eq!(read_disparity(&grid, None).unwrap(), map);
    }

    #[test]
    fn landmarks_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        std::fs::write(
            &path,
            "# picked by hand\nname,u_l,v_l,u_r,v_r\nknob, 100.5, 50, 60.25, 50\n",
        )
        .unwrap();
        let l = match_landmarks(&path).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].name, "knob");
        assert_eq!(l[0].right(), PixelPoint::new(60.25, 50.0));
        write_landmarks(&path, &l, &Header::new("t")).unwrap();
        assert_eq!(match_landmarks(&path).unwrap(), l);
    }
}
