//! Skeleton-driven multi-part correspondence and piecewise perspective
//! garment morphing.
//!
//! The flow is: keypoints → per-region bounding boxes → parsing-restricted
//! region masks → one homography per region from box corners → inverse-mapped
//! piecewise warp.

mod homography;
mod parsing;
mod skeleton;
mod warp;

pub use homography::{estimate_homography, estimate_homography_with, Homography, HomographyFit, LmOptions};
pub use parsing::{parts, region_masks, RegionMask, SegmentationMap};
pub use skeleton::{
    body25, build_region_boxes, BoundingBox, GarmentCategory, Keypoint, Region, RegionBoxes, RegionSpec, Skeleton,
    DEFAULT_CONFIDENCE_THRESHOLD, NUM_KEYPOINTS,
};
pub use warp::{mask_bbox, piecewise_warp, relocate_garment, RegionStatus, WarpResult};

use ndarray::{Array2, Array3};
use thiserror::Error;

/// H×W×3 image with values in `[0, 1]`.
pub type Image = Array3<f64>;

/// H×W binary mask.
pub type BinaryMask = Array2<bool>;

pub type Point = nalgebra::Point2<f64>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("skeleton must have {expected} keypoints, got {got}")]
    WrongKeypointCount { expected: usize, got: usize },
    #[error("invalid keypoint {index}: {reason}")]
    InvalidKeypoint { index: usize, reason: &'static str },
    #[error("invalid region spec: {0}")]
    InvalidRegionSpec(String),
    #[error("confidence threshold must lie in [0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("no region has at least two valid keypoints")]
    AllRegionsAbsent,
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("degenerate corners: three or more points are collinear or coincide")]
    DegenerateCorners,
    #[error("homography is not invertible (det = {0:e})")]
    Singular(f64),
    #[error("Levenberg-Marquardt did not converge in {iterations} iterations (cost {cost:e})")]
    NoConvergence {
        best: Box<Homography>,
        iterations: usize,
        cost: f64,
    },
    #[error("no homography supplied for region {0}")]
    MissingHomography(u32),
    #[error("mask is empty")]
    EmptyMask,
}
