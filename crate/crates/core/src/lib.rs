//! Stereo photogrammetry toolkit.
//!
//! The pipeline runs from planar-target calibration through epipolar
//! rectification, dense disparity matching and triangulation to a point cloud
//! and surface mesh. It then aligns the model to a reference frame and scores
//! its dimensions against tape-measured ground truth.
//!
//! | module | stage |
//! |---|---|
//! | [`geometry`] | points, cameras, pinhole projection |
//! | [`calibration`] | homographies, intrinsics, relative pose, fundamental matrix |
//! | [`rectification`] | rectifying homographies, bilinear warping |
//! | [`correspondence`] | ZNCC disparity, hand-picked landmarks |
//! | [`reconstruction`] | triangulation, point clouds, meshes |
//! | [`evaluation`] | similarity alignment, dimensions, error statistics |
//! | [`synthetic`] | ground-truth scenes for testing everything above |

pub mod calibration;
pub mod correspondence;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod least_squares;
pub mod reconstruction;
pub mod rectification;
pub mod synthetic;

pub use error::{Error, Result};
