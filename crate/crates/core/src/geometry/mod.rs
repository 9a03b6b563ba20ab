//! Pinhole camera, rigid transforms and differentiable image warping.
//!
//! Image coordinates put pixel centers on integers, origin top-left, `u`
//! to the right and `v` down.

mod camera;
mod se3;
mod warp;

pub use camera::{CameraIntrinsics, Projection, EPSILON_Z};
pub use se3::{format_pose_line, hat, load_pose_file, parse_pose_file, save_pose_file, PoseSE3};
pub use warp::{bilinear_sample, synthesize_view, warp_grid, WarpGrid};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid depth {0}: must be positive")]
    InvalidDepth(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("not a rotation: |RᵀR − I| = {orthogonality_error:e}, det = {determinant}")]
    NotARotation { orthogonality_error: f64, determinant: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{0}: {1}")]
    Io(String, String),
}
