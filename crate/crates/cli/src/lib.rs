//! Command-line driver for the photogram pipeline.
//!
//! Each subcommand runs one stage over files; `pipeline` chains them all from a
//! JSON config. Outputs carry a provenance header and never a timestamp, so
//! rerunning a command on unchanged inputs rewrites identical bytes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use photogram::calibration::CalibrationOptions;
use photogram::correspondence::MatchParams;
use photogram::evaluation::format_table;
use photogram::io;
use photogram::synthetic::{front_rack_scene, SceneSpec};

pub mod config;
mod error;
pub mod stages;

pub use config::PipelineConfig;
pub use error::CliError;
use stages::outputs;

#[derive(Debug, Parser)]
#[command(name = "photogram", version, about = "Stereo photogrammetry from calibration to dimensional error")]
pub struct Cli {
    /// Texture seed for `synth`; recorded by `pipeline`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for outputs. `pipeline` defaults to the config's output_dir.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// Only print errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Intrinsics and per-view poses from planar target observations (JSON).
    Calibrate {
        observations: PathBuf,
        /// Fix skew at zero; two views suffice.
        #[arg(long)]
        zero_skew: bool,
        /// Keep the closed-form estimate.
        #[arg(long)]
        no_refine: bool,
        #[arg(long, default_value = "calibration.json")]
        output: String,
    },
    /// Relative pose and fundamental matrix from two calibrations with shared views.
    StereoPose {
        left: PathBuf,
        right: PathBuf,
        #[arg(long, default_value = outputs::RIG)]
        output: String,
    },
    /// Warp a raw image pair so epipolar lines become rows.
    Rectify {
        #[arg(long)]
        rig: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        /// Centre the rectified pair in the frame.
        #[arg(long)]
        recenter: bool,
    },
    /// Dense ZNCC disparity for a rectified pair.
    Disparity {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[command(flatten)]
        matching: MatchArgs,
    },
    /// Point cloud from a disparity map and a rectified rig.
    Reconstruct {
        #[arg(long)]
        disparity: PathBuf,
        /// Validity mask; defaults to the finite grid values.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        rig: PathBuf,
        /// Rectified left image used to colour the points.
        #[arg(long)]
        color: Option<PathBuf>,
    },
    /// Triangulated surface over a point cloud.
    Mesh {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        edge_factor: f64,
    },
    /// Similarity transform onto reference points via triangulated landmarks.
    Align {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        rig: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Bounding-box dimensions of selected components against ground truth.
    Measure {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        selections: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
    },
    /// Percent errors and their summary from actual/measured records.
    Report { records: PathBuf },
    /// Render a synthetic stereo scene with its ground truth and a pipeline config.
    Synth {
        /// Scene description; defaults to the built-in Front Rack box.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Also write board observations and calibrate in the generated config.
        #[arg(long, default_value_t = 0)]
        calibration_views: usize,
    },
    /// Run every stage from a config file.
    Pipeline {
        config: PathBuf,
        #[arg(long)]
        d_min: Option<i32>,
        #[arg(long)]
        d_max: Option<i32>,
        #[arg(long)]
        window_radius: Option<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    #[arg(long, default_value_t = MatchParams::default().d_min, allow_negative_numbers = true)]
    pub d_min: i32,
    #[arg(long, default_value_t = MatchParams::default().d_max, allow_negative_numbers = true)]
    pub d_max: i32,
    #[arg(long, default_value_t = MatchParams::default().window_radius)]
    pub window_radius: usize,
    #[arg(long, default_value_t = MatchParams::default().min_texture)]
    pub min_texture: f64,
    #[arg(long, default_value_t = MatchParams::default().uniqueness_ratio)]
    pub uniqueness_ratio: f64,
    #[arg(long, default_value_t = MatchParams::default().lr_tolerance)]
    pub lr_tolerance: f64,
}

impl From<&MatchArgs> for MatchParams {
    fn from(a: &MatchArgs) -> Self {
        MatchParams {
            window_radius: a.window_radius,
            d_min: a.d_min,
            d_max: a.d_max,
            min_texture: a.min_texture,
            uniqueness_ratio: a.uniqueness_ratio,
            lr_tolerance: a.lr_tolerance,
        }
    }
}

/// Runs one parsed command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let out = |name: &str| out_dir.join(name);
    let say = |line: String| {
        if !cli.quiet {
            println!("{line}");
        }
    };

    match &cli.command {
        Command::Calibrate {
            observations,
            zero_skew,
            no_refine,
            output,
        } => {
            let options = CalibrationOptions {
                refine: !no_refine,
                zero_skew: *zero_skew,
            };
            let r = stages::calibrate(observations, options, &out(output))?;
            let k = r.intrinsics;
            say(format!(
                "calibrated {} views: alpha_u {:.4} alpha_v {:.4} gamma {:.4} u0 {:.4} v0 {:.4}, rms {:.4} px{}",
                r.view_poses.len(),
                k.alpha_u,
                k.alpha_v,
                k.gamma,
                k.u0,
                k.v0,
                r.rms_reprojection_error,
                if r.converged { "" } else { " (not converged)" }
            ));
        }
        Command::StereoPose { left, right, output } => {
            let rig = stages::stereo_pose(left, right, &out(output))?;
            say(format!("baseline {:.6} -> {}", rig.baseline(), out(output).display()));
        }
        Command::Rectify {
            rig,
            left,
            right,
            recenter,
        } => {
            let r = stages::rectify(
                rig,
                left,
                right,
                *recenter,
                &stages::RectifyOutputs {
                    left: &out(outputs::RECTIFIED_LEFT),
                    right: &out(outputs::RECTIFIED_RIGHT),
                    rig: &out(outputs::RECTIFIED_RIG),
                },
            )?;
            say(format!("rectified: G {:.6} O {:.4}", r.baseline_g, r.focal_o));
        }
        Command::Disparity { left, right, matching } => {
            let map = stages::disparity(
                left,
                right,
                &MatchParams::from(matching),
                &out(outputs::DISPARITY),
                &out(outputs::DISPARITY_MASK),
            )?;
            say(format!("{} valid disparities of {}", map.valid_count(), map.width() * map.height()));
        }
        Command::Reconstruct {
            disparity,
            mask,
            rig,
            color,
        } => {
            let cloud = stages::reconstruct(disparity, mask.as_deref(), rig, color.as_deref(), &out(outputs::CLOUD))?;
            say(format!("{} points -> {}", cloud.len(), out(outputs::CLOUD).display()));
        }
        Command::Mesh { cloud, edge_factor } => {
            let mesh = stages::mesh(cloud, *edge_factor, &out(outputs::MESH_PLY), &out(outputs::MESH_OBJ))?;
            say(format!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len()));
        }
        Command::Align {
            cloud,
            rig,
            landmarks,
            reference,
        } => {
            let (t, rms) = stages::align(
                &stages::AlignInputs {
                    cloud,
                    rig,
                    landmarks,
                    reference,
                },
                &out(outputs::ALIGNED),
                &out(outputs::SIMILARITY),
            )?;
            say(format!("scale {:.6}, landmark rms {rms:.3e}", t.scale));
        }
        Command::Measure {
            cloud,
            selections,
            ground_truth,
        } => {
            let records = stages::measure(cloud, selections, ground_truth, &out(outputs::MEASUREMENTS))?;
            say(format!("{} measurements -> {}", records.len(), out(outputs::MEASUREMENTS).display()));
        }
        Command::Report { records } => {
            let (records, summary) = stages::report(records, &out(outputs::REPORT), &out(outputs::SUMMARY))?;
            say(format_table(&records, &summary).trim_end().to_string());
        }
        Command::Synth {
            scene,
            calibration_views,
        } => {
            let mut spec = match scene {
                Some(path) => load_scene(path)?,
                None => front_rack_scene(),
            };
            if let Some(seed) = cli.seed {
                spec.texture_seed = seed;
            }
            let s = stages::synth(&spec, *calibration_views, &out_dir)?;
            say(format!(
                "rendered {}x{} pair, {} landmarks, disparity {}..{} -> {}",
                spec.width,
                spec.height,
                s.landmarks,
                s.config.matching.d_min,
                s.config.matching.d_max,
                out(stages::SYNTH_CONFIG).display()
            ));
        }
        Command::Pipeline {
            config,
            d_min,
            d_max,
            window_radius,
        } => {
            let mut cfg = PipelineConfig::load(config)?;
            if let Some(v) = d_min {
                cfg.matching.d_min = *v;
            }
            if let Some(v) = d_max {
                cfg.matching.d_max = *v;
            }
            if let Some(v) = window_radius {
                cfg.matching.window_radius = *v;
            }
            if cli.seed.is_some() {
                cfg.seed = cli.seed;
            }
            cfg.validate()?;
            let dir = cli.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
            let s = stages::run_pipeline(&cfg, &dir)?;
            say(format_table(&s.records, &s.summary).trim_end().to_string());
            say(format!(
                "{} valid disparities, {} triangles, landmark rms {:.3e} -> {}",
                s.valid_disparities,
                s.triangles,
                s.alignment_rms,
                dir.display()
            ));
        }
    }
    Ok(())
}

fn load_scene(path: &Path) -> Result<SceneSpec, CliError> {
    stages::require("synth", path)?;
    io::read_json_skip_header(path).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
