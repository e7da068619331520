use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use photogram::correspondence::MatchParams;
use photogram::io;
use photogram::reconstruction::MeshOptions;

use crate::stages::require;
use crate::CliError;

/// Board observations for calibrating each camera; the pipeline then
/// rectifies the raw images itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationInputs {
    pub left: PathBuf,
    pub right: PathBuf,
    #[serde(default)]
    pub zero_skew: bool,
    #[serde(default = "yes")]
    pub refine: bool,
    #[serde(default)]
    pub recenter: bool,
}

fn yes() -> bool {
    true
}

fn default_edge_factor() -> f64 {
    MeshOptions::default().edge_factor
}

fn default_output_dir() -> PathBuf {
    "run".into()
}

/// `pipeline` configuration. Relative paths are resolved against the
/// directory holding the config file.
///
/// Exactly one of `rectified_rig` (images already rectified) and
/// `calibration` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub left: PathBuf,
    pub right: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rectified_rig: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationInputs>,
    pub landmarks: PathBuf,
    pub reference: PathBuf,
    pub selections: PathBuf,
    pub ground_truth: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub matching: MatchParams,
    #[serde(default = "default_edge_factor")]
    pub edge_factor: f64,
    /// Recorded for provenance; no stage draws random numbers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PipelineConfig {
    /// Reads a config written by hand or by `synth` and resolves its paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        require("pipeline", path)?;
        let mut config: PipelineConfig = io::read_json_skip_header(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: match e {
                photogram::Error::Parse { message, .. } => message,
                other => other.to_string(),
            },
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve(base);
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.left);
        fix(&mut self.right);
        if let Some(r) = &mut self.rectified_rig {
            fix(r);
        }
        if let Some(c) = &mut self.calibration {
            fix(&mut c.left);
            fix(&mut c.right);
        }
        fix(&mut self.landmarks);
        fix(&mut self.reference);
        fix(&mut self.selections);
        fix(&mut self.ground_truth);
        fix(&mut self.output_dir);
    }

    /// Checks parameters and input paths before any stage runs.
    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |message: String| CliError::InvalidParameter {
            stage: "pipeline",
            message,
        };
        match (&self.rectified_rig, &self.calibration) {
            (Some(_), Some(_)) => return Err(invalid("give either rectified_rig or calibration, not both".into())),
            (None, None) => return Err(invalid("one of rectified_rig or calibration is required".into())),
            _ => {}
        }
        self.matching.validate().map_err(|e| invalid(e.to_string()))?;
        if !(self.edge_factor > 0.0) || !self.edge_factor.is_finite() {
            return Err(invalid(format!("edge_factor must be positive, got {}", self.edge_factor)));
        }
        let mut inputs = vec![&self.left, &self.right];
        if let Some(r) = &self.rectified_rig {
            inputs.push(r);
        }
        if let Some(c) = &self.calibration {
            inputs.push(&c.left);
            inputs.push(&c.right);
        }
        inputs.extend([&self.landmarks, &self.reference, &self.selections, &self.ground_truth]);
        inputs.into_iter().try_for_each(|p| require("pipeline", p))
    }
}
