//! One function per stage. Each reads its declared inputs, runs one chain of
//! library calls and writes its outputs; `pipeline` calls the same functions.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use photogram::calibration::{
    calibrate_intrinsics, fundamental_matrix, read_observations, stereo_rig_from_calibrations,
    CalibrationFile, CalibrationOptions, CalibrationResult, PlanarObservation, StereoRigFile,
};
use photogram::correspondence::{
    compute_disparity, match_landmarks, read_disparity, write_disparity, write_landmarks, MatchParams,
};
use photogram::evaluation::{
    aggregate_errors, align_similarity, build_records, encode_reference_points, encode_report_csv,
    export_report, measure_dimension, pair_by_name, read_ground_truth, read_records,
    read_reference_points, read_selections, ErrorSummary, MeasurementRecord, SelectionMap,
    SimilarityFile, SimilarityTransform,
};
use photogram::geometry::{matrix_to_row_major, CameraPose, StereoRig};
use photogram::io::{self, Header};
use photogram::reconstruction::{
    cloud_from_disparity, cloud_from_disparity_colored, mesh_from_cloud_with, read_ply, triangulate_landmarks,
    write_cloud_ply, write_mesh_obj, write_mesh_ply, MeshOptions, PointCloud, SurfaceMesh,
};
use photogram::rectification::{
    compute_rectifying_transforms_with, warp_image, RasterImage, RectifiedRig, RectifiedRigFile, RectifyOptions,
};
use photogram::synthetic::{
    box_ground_truth, box_selections, calibration_views, project_board, reference_corners, render_stereo_pair,
    visible_corner_landmarks, BoardSpec, SceneSpec,
};

use crate::config::{CalibrationInputs, PipelineConfig};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Fails with a usage error when `path` does not exist.
pub fn require(stage: &'static str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput {
            stage,
            path: path.to_path_buf(),
        })
    }
}

/// File name only, so headers do not depend on where a run happens.
fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn read_rectified_rig(stage: &'static str, path: &Path) -> Result<RectifiedRig> {
    require(stage, path)?;
    let file: RectifiedRigFile = io::read_json_skip_header(path).map_err(CliError::stage(stage))?;
    RectifiedRig::try_from(&file).map_err(CliError::stage(stage))
}

fn read_image(stage: &'static str, path: &Path) -> Result<RasterImage> {
    require(stage, path)?;
    io::read_pnm(path).map_err(CliError::stage(stage))
}

fn read_cloud(stage: &'static str, path: &Path) -> Result<PointCloud> {
    require(stage, path)?;
    read_ply(path).map(|(cloud, _)| cloud).map_err(CliError::stage(stage))
}

pub fn calibrate(observations: &Path, options: CalibrationOptions, output: &Path) -> Result<CalibrationResult> {
    const STAGE: &str = "calibrate";
    require(STAGE, observations)?;
    let err = CliError::stage(STAGE);
    let obs = read_observations(observations).map_err(&err)?;
    let result = calibrate_intrinsics(&obs, options).map_err(&err)?;
    let header = Header::new(STAGE)
        .param("observations", file_name(observations))
        .param("refine", options.refine)
        .param("zero_skew", options.zero_skew);
    io::write_json_with_header(output, &header, &CalibrationFile::from(&result)).map_err(&err)?;
    Ok(result)
}

/// Rig file written by `stereo-pose`: the rig plus its fundamental matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigOutput {
    #[serde(flatten)]
    pub rig: StereoRigFile,
    /// Row-major, unit Frobenius norm.
    pub fundamental: [f64; 9],
}

pub fn stereo_pose(left: &Path, right: &Path, output: &Path) -> Result<StereoRig> {
    const STAGE: &str = "stereo-pose";
    let err = CliError::stage(STAGE);
    let read = |path: &Path| -> Result<CalibrationResult> {
        require(STAGE, path)?;
        let file: CalibrationFile = io::read_json_skip_header(path).map_err(&err)?;
        CalibrationResult::try_from(&file).map_err(&err)
    };
    let (l, r) = (read(left)?, read(right)?);
    let rig = stereo_rig_from_calibrations(&l, &r).map_err(&err)?;
    let f = fundamental_matrix(&rig).map_err(&err)?;
    let header = Header::new(STAGE)
        .param("left", file_name(left))
        .param("right", file_name(right));
    let out = RigOutput {
        rig: StereoRigFile::from(&rig),
        fundamental: matrix_to_row_major(&f),
    };
    io::write_json_with_header(output, &header, &out).map_err(&err)?;
    Ok(rig)
}

pub struct RectifyOutputs<'a> {
    pub left: &'a Path,
    pub right: &'a Path,
    pub rig: &'a Path,
}

pub fn rectify(
    rig_path: &Path,
    left: &Path,
    right: &Path,
    recenter: bool,
    outputs: &RectifyOutputs,
) -> Result<RectifiedRig> {
    const STAGE: &str = "rectify";
    let err = CliError::stage(STAGE);
    require(STAGE, rig_path)?;
    let file: StereoRigFile = io::read_json_skip_header(rig_path).map_err(&err)?;
    let rig = StereoRig::try_from(&file).map_err(&err)?;
    let (li, ri) = (read_image(STAGE, left)?, read_image(STAGE, right)?);
    if (li.width(), li.height()) != (ri.width(), ri.height()) {
        return Err(err(photogram::Error::DimensionMismatch(
            "left and right images differ in size".into(),
        )));
    }
    let options = RectifyOptions {
        recenter: recenter.then_some((li.width(), li.height())),
    };
    let rect = compute_rectifying_transforms_with(&rig, &options).map_err(&err)?;
    let header = Header::new(STAGE)
        .param("rig", file_name(rig_path))
        .param("left", file_name(left))
        .param("right", file_name(right))
        .param("recenter", recenter);
    let wl = warp_image(&li, &rect.left_transform, li.width(), li.height()).map_err(&err)?;
    let wr = warp_image(&ri, &rect.right_transform, ri.width(), ri.height()).map_err(&err)?;
    io::write_pnm(outputs.left, &wl.image, Some(&header)).map_err(&err)?;
    io::write_pnm(outputs.right, &wr.image, Some(&header)).map_err(&err)?;
    io::write_json_with_header(outputs.rig, &header, &RectifiedRigFile::from(&rect)).map_err(&err)?;
    Ok(rect)
}

pub fn disparity(
    left: &Path,
    right: &Path,
    params: &MatchParams,
    grid: &Path,
    mask: &Path,
) -> Result<photogram::correspondence::DisparityMap> {
    const STAGE: &str = "disparity";
    let err = CliError::stage(STAGE);
    params.validate().map_err(|e| CliError::InvalidParameter {
        stage: STAGE,
        message: e.to_string(),
    })?;
    let (li, ri) = (read_image(STAGE, left)?, read_image(STAGE, right)?);
    let map = compute_disparity(&li.to_gray(), &ri.to_gray(), params).map_err(&err)?;
    let header = params.header(
        Header::new(STAGE)
            .param("left", file_name(left))
            .param("right", file_name(right)),
    );
    write_disparity(grid, mask, &map, &header).map_err(&err)?;
    Ok(map)
}

pub fn reconstruct(
    grid: &Path,
    mask: Option<&Path>,
    rig_path: &Path,
    color: Option<&Path>,
    output: &Path,
) -> Result<PointCloud> {
    const STAGE: &str = "reconstruct";
    let err = CliError::stage(STAGE);
    require(STAGE, grid)?;
    if let Some(m) = mask {
        require(STAGE, m)?;
    }
    let map = read_disparity(grid, mask).map_err(&err)?;
    let rig = read_rectified_rig(STAGE, rig_path)?;
    let mut header = Header::new(STAGE)
        .param("disparity", file_name(grid))
        .param("rig", file_name(rig_path));
    let cloud = match color {
        Some(path) => {
            let image = read_image(STAGE, path)?;
            header = header.param("color", file_name(path));
            cloud_from_disparity_colored(&map, &rig, &image).map_err(&err)?
        }
        None => cloud_from_disparity(&map, &rig),
    };
    if cloud.is_empty() {
        return Err(err(photogram::Error::EmptyInput("no valid disparities")));
    }
    write_cloud_ply(output, &cloud, &header.param("points", cloud.len())).map_err(&err)?;
    Ok(cloud)
}

pub fn mesh(cloud_path: &Path, edge_factor: f64, ply: &Path, obj: &Path) -> Result<SurfaceMesh> {
    const STAGE: &str = "mesh";
    let err = CliError::stage(STAGE);
    if !(edge_factor > 0.0) || !edge_factor.is_finite() {
        return Err(CliError::InvalidParameter {
            stage: STAGE,
            message: format!("edge factor must be positive, got {edge_factor}"),
        });
    }
    let cloud = read_cloud(STAGE, cloud_path)?;
    let (mesh, threshold) = mesh_from_cloud_with(&cloud, &MeshOptions { edge_factor }).map_err(&err)?;
    let header = Header::new(STAGE)
        .param("cloud", file_name(cloud_path))
        .param("edge_factor", edge_factor)
        .param("edge_threshold", threshold)
        .param("triangles", mesh.triangles.len());
    write_mesh_ply(ply, &mesh, &header).map_err(&err)?;
    write_mesh_obj(obj, &mesh, &header).map_err(&err)?;
    Ok(mesh)
}

pub struct AlignInputs<'a> {
    pub cloud: &'a Path,
    pub rig: &'a Path,
    pub landmarks: &'a Path,
    pub reference: &'a Path,
}

pub fn align(inputs: &AlignInputs, cloud_out: &Path, transform_out: &Path) -> Result<(SimilarityTransform, f64)> {
    const STAGE: &str = "align";
    let err = CliError::stage(STAGE);
    let cloud = read_cloud(STAGE, inputs.cloud)?;
    let rig = read_rectified_rig(STAGE, inputs.rig)?;
    require(STAGE, inputs.landmarks)?;
    require(STAGE, inputs.reference)?;
    let landmarks = match_landmarks(inputs.landmarks).map_err(&err)?;
    let named = triangulate_landmarks(&landmarks, &rig).map_err(&err)?;
    let reference = read_reference_points(inputs.reference).map_err(&err)?;
    let (source, target) = pair_by_name(&named, &reference);
    let transform = align_similarity(&source, &target).map_err(&err)?;
    let rms = transform.rms_residual(&source, &target);
    let header = Header::new(STAGE)
        .param("cloud", file_name(inputs.cloud))
        .param("landmarks", file_name(inputs.landmarks))
        .param("reference", file_name(inputs.reference))
        .param("pairs", source.len());
    write_cloud_ply(cloud_out, &transform.apply_cloud(&cloud), &header).map_err(&err)?;
    io::write_json_with_header(transform_out, &header, &SimilarityFile::new(&transform, rms)).map_err(&err)?;
    Ok((transform, rms))
}

pub fn measure(cloud_path: &Path, selections: &Path, ground_truth: &Path, output: &Path) -> Result<Vec<MeasurementRecord>> {
    const STAGE: &str = "measure";
    let err = CliError::stage(STAGE);
    let cloud = read_cloud(STAGE, cloud_path)?;
    require(STAGE, selections)?;
    require(STAGE, ground_truth)?;
    let selections: SelectionMap = read_selections(selections).map_err(&err)?;
    let truth = read_ground_truth(ground_truth).map_err(&err)?;
    let mut measured = IndexMap::new();
    for (name, selection) in &selections {
        measured.insert(name.clone(), measure_dimension(&cloud, selection).map_err(&err)?);
    }
    let records = build_records(&truth, &measured).map_err(&err)?;
    let header = Header::new(STAGE)
        .param("cloud", file_name(cloud_path))
        .param("ground_truth", file_name(ground_truth));
    let csv = encode_report_csv(&records, &header).map_err(&err)?;
    io::write_bytes(output, csv.as_bytes()).map_err(&err)?;
    Ok(records)
}

pub fn report(records_path: &Path, csv_out: &Path, json_out: &Path) -> Result<(Vec<MeasurementRecord>, ErrorSummary)> {
    const STAGE: &str = "report";
    let err = CliError::stage(STAGE);
    require(STAGE, records_path)?;
    let records = read_records(records_path).map_err(&err)?;
    let summary = aggregate_errors(&records).map_err(&err)?;
    let header = Header::new(STAGE).param("records", file_name(records_path));
    export_report(csv_out, json_out, &records, &summary, &header).map_err(&err)?;
    Ok((records, summary))
}

/// What `synth` wrote, relative to its output directory.
#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub spec: SceneSpec,
    pub config: PipelineConfig,
    pub landmarks: usize,
}

pub const SYNTH_CONFIG: &str = "pipeline.json";

/// Renders a scene and writes everything `pipeline` needs to run on it, plus
/// the exact disparity and point cloud for comparison.
///
/// With `calibration_views > 0` it also writes noiseless board observations
/// for both cameras, and the generated config calibrates instead of using the
/// exact rectified rig.
pub fn synth(spec: &SceneSpec, calibration_views: usize, out_dir: &Path) -> Result<SynthSummary> {
    const STAGE: &str = "synth";
    let err = CliError::stage(STAGE);
    let out = |name: &str| out_dir.join(name);
    let render = render_stereo_pair(spec).map_err(&err)?;
    let rig = spec.rig().map_err(&err)?;
    let names: Vec<&str> = spec.objects.iter().map(|o| o.name.as_str()).collect();
    let header = Header::new(STAGE)
        .param("objects", names.join(";"))
        .param("texture_seed", spec.texture_seed)
        .param("size", format!("{}x{}", spec.width, spec.height));

    io::write_pnm(&out("left.pgm"), &render.left, Some(&header)).map_err(&err)?;
    io::write_pnm(&out("right.pgm"), &render.right, Some(&header)).map_err(&err)?;
    write_disparity(
        &out("gt_disparity.txt"),
        &out("gt_disparity_mask.pgm"),
        &render.disparity,
        &header,
    )
    .map_err(&err)?;
    write_cloud_ply(&out("gt_cloud.ply"), &render.cloud, &header).map_err(&err)?;

    let landmarks = visible_corner_landmarks(spec).map_err(&err)?;
    write_landmarks(&out("landmarks.csv"), &landmarks, &header).map_err(&err)?;
    let reference = encode_reference_points(&reference_corners(spec), &header).map_err(&err)?;
    io::write_bytes(&out("reference.csv"), reference.as_bytes()).map_err(&err)?;
    let selections: SelectionMap = box_selections(spec).map_err(&err)?.into_iter().collect();
    io::write_json_with_header(&out("selections.json"), &header, &selections).map_err(&err)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for g in box_ground_truth(spec) {
        writer
            .serialize(g)
            .map_err(|e| err(photogram::Error::InvalidValue(e.to_string())))?;
    }
    let body = String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("csv output is utf-8");
    io::write_bytes(&out("ground_truth.csv"), io::with_comment_header(&header, &body).as_bytes()).map_err(&err)?;
    io::write_json_with_header(&out("rectified_rig.json"), &header, &RectifiedRigFile::from(&rig)).map_err(&err)?;
    io::write_json_with_header(&out("scene.json"), &header, spec).map_err(&err)?;

    let (lo, hi) = render
        .disparity
        .iter_valid()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, _, d)| (lo.min(d), hi.max(d)));
    if !lo.is_finite() {
        return Err(err(photogram::Error::EmptyInput("the scene covers no pixels")));
    }
    let matching = MatchParams {
        d_min: lo.floor() as i32 - 4,
        d_max: hi.ceil() as i32 + 4,
        ..MatchParams::default()
    };

    let calibration = if calibration_views > 0 {
        let [left, right] = board_observations(spec, calibration_views).map_err(&err)?;
        io::write_json_with_header(&out("observations_left.json"), &header, &left).map_err(&err)?;
        io::write_json_with_header(&out("observations_right.json"), &header, &right).map_err(&err)?;
        Some(CalibrationInputs {
            left: "observations_left.json".into(),
            right: "observations_right.json".into(),
            zero_skew: false,
            refine: true,
            recenter: false,
        })
    } else {
        None
    };
    let config = PipelineConfig {
        left: "left.pgm".into(),
        right: "right.pgm".into(),
        rectified_rig: calibration.is_none().then(|| PathBuf::from("rectified_rig.json")),
        calibration,
        landmarks: "landmarks.csv".into(),
        reference: "reference.csv".into(),
        selections: "selections.json".into(),
        ground_truth: "ground_truth.csv".into(),
        output_dir: "run".into(),
        matching,
        edge_factor: MeshOptions::default().edge_factor,
        seed: Some(spec.texture_seed),
    };
    io::write_json_with_header(&out(SYNTH_CONFIG), &header, &config).map_err(&err)?;
    Ok(SynthSummary {
        spec: spec.clone(),
        config,
        landmarks: landmarks.len(),
    })
}

/// A checkerboard seen by both cameras of the scene's rig, centred between them.
fn board_observations(spec: &SceneSpec, count: usize) -> photogram::Result<[Vec<PlanarObservation>; 2]> {
    let k = &spec.intrinsics;
    // far enough that the two views differ by a fifth of the width, sized to
    // span about 40% of it
    let width = spec.width as f64;
    let distance = spec.baseline * k.alpha_u / (0.2 * width);
    let square = 0.04 * width * distance / k.alpha_u;
    let board = BoardSpec { rows: 7, cols: 9, square };
    let shift = Vector3::new(spec.baseline / 2.0, 0.0, 0.0);
    let mut left = Vec::with_capacity(count);
    let mut right = Vec::with_capacity(count);
    for (i, pose) in calibration_views(count, distance).iter().enumerate() {
        let id = format!("view{i:02}");
        let l = CameraPose::new(*pose.rotation(), pose.translation() + shift)?;
        let r = CameraPose::new(*pose.rotation(), pose.translation() - shift)?;
        left.push(project_board(&board, k, &l, id.clone(), None)?);
        right.push(project_board(&board, k, &r, id, None)?);
    }
    Ok([left, right])
}

/// Every file a pipeline run writes, under its output directory.
pub mod outputs {
    pub const CALIBRATION_LEFT: &str = "calibration_left.json";
    pub const CALIBRATION_RIGHT: &str = "calibration_right.json";
    pub const RIG: &str = "rig.json";
    pub const RECTIFIED_LEFT: &str = "rectified_left.pgm";
    pub const RECTIFIED_RIGHT: &str = "rectified_right.pgm";
    pub const RECTIFIED_RIG: &str = "rectified_rig.json";
    pub const DISPARITY: &str = "disparity.txt";
    pub const DISPARITY_MASK: &str = "disparity_mask.pgm";
    pub const CLOUD: &str = "cloud.ply";
    pub const MESH_PLY: &str = "mesh.ply";
    pub const MESH_OBJ: &str = "mesh.obj";
    pub const ALIGNED: &str = "aligned.ply";
    pub const SIMILARITY: &str = "similarity.json";
    pub const MEASUREMENTS: &str = "measurements.csv";
    pub const REPORT: &str = "report.csv";
    pub const SUMMARY: &str = "summary.json";
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub out_dir: PathBuf,
    pub records: Vec<MeasurementRecord>,
    pub summary: ErrorSummary,
    pub valid_disparities: usize,
    pub triangles: usize,
    pub alignment_rms: f64,
}

/// Runs every stage of a validated, path-resolved config.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<PipelineSummary> {
    use outputs::*;
    let out = |name: &str| out_dir.join(name);

    let (left, right, rig) = match &config.calibration {
        Some(c) => {
            let refine = CalibrationOptions {
                refine: c.refine,
                zero_skew: c.zero_skew,
            };
            calibrate(&c.left, refine, &out(CALIBRATION_LEFT))?;
            calibrate(&c.right, refine, &out(CALIBRATION_RIGHT))?;
            stereo_pose(&out(CALIBRATION_LEFT), &out(CALIBRATION_RIGHT), &out(RIG))?;
            rectify(
                &out(RIG),
                &config.left,
                &config.right,
                c.recenter,
                &RectifyOutputs {
                    left: &out(RECTIFIED_LEFT),
                    right: &out(RECTIFIED_RIGHT),
                    rig: &out(RECTIFIED_RIG),
                },
            )?;
            (out(RECTIFIED_LEFT), out(RECTIFIED_RIGHT), out(RECTIFIED_RIG))
        }
        None => (
            config.left.clone(),
            config.right.clone(),
            config
                .rectified_rig
                .clone()
                .expect("validated config has a rig or a calibration"),
        ),
    };

    let map = disparity(&left, &right, &config.matching, &out(DISPARITY), &out(DISPARITY_MASK))?;
    reconstruct(&out(DISPARITY), Some(&out(DISPARITY_MASK)), &rig, Some(&left), &out(CLOUD))?;
    let mesh = mesh(&out(CLOUD), config.edge_factor, &out(MESH_PLY), &out(MESH_OBJ))?;
    let (_, rms) = align(
        &AlignInputs {
            cloud: &out(CLOUD),
            rig: &rig,
            landmarks: &config.landmarks,
            reference: &config.reference,
        },
        &out(ALIGNED),
        &out(SIMILARITY),
    )?;
    measure(&out(ALIGNED), &config.selections, &config.ground_truth, &out(MEASUREMENTS))?;
    let (records, summary) = report(&out(MEASUREMENTS), &out(REPORT), &out(SUMMARY))?;
    Ok(PipelineSummary {
        out_dir: out_dir.to_path_buf(),
        records,
        summary,
        valid_disparities: map.valid_count(),
        triangles: mesh.triangles.len(),
        alignment_rms: rms,
    })
}
