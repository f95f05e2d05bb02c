//! Depth-image-based rendering onto multi-plane images.
//!
//! A reference RGB-D frame is forward-warped into a target camera by splatting
//! each valid pixel onto one of `K` fronto-parallel strata, uniform in
//! disparity between the near and far depth bounds. Each stratum is repaired
//! independently (isolated points removed, cracks filled) and the strata are
//! composited back to front, so that foreground never mixes with background
//! inside a single layer.

mod camera;
mod repair;
mod rig;
mod warp;

use thiserror::Error;

pub use camera::{Camera, MIN_IMAGE_SIDE};
pub use repair::{
    box_response, crack_kernel, fill_cracks, gaussian_response, remove_isolated, RepairConfig,
};
pub use rig::{build_rig, CameraRig, RigMode};
pub use warp::{
    blend_planes, outpaint_padding, project_to_planes, warp_coordinates, warp_frame,
    MultiPlaneImage, PlaneLayer, PlaneStrata, WarpConfig, WarpCoords, WarpResult,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-invertible intrinsics (fx={fx}, fy={fy})")]
    InvalidIntrinsics { fx: f64, fy: f64 },
    #[error("orientation is not orthonormal (max |RᵀR - I| = {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("image {width}x{height} is smaller than the 8x8 minimum")]
    ImageTooSmall { width: usize, height: usize },
    #[error("frame is {frame:?} but its camera is {camera:?}")]
    ResolutionMismatch {
        frame: (usize, usize),
        camera: (usize, usize),
    },
    #[error("source frame has no valid pixel")]
    EmptyInput,
    #[error("plane count must be at least 1")]
    InvalidPlaneCount,
    #[error("depth bounds must satisfy 0 < near < far, got ({near}, {far})")]
    InvalidDepthBounds { near: f64, far: f64 },
    #[error("{0}")]
    Domain(String),
    #[error("invalid view count {n} for {mode:?} rig (minimum {min})")]
    InvalidViewCount { mode: RigMode, n: usize, min: usize },
}
