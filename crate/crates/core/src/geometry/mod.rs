//! Two-view epipolar geometry on calibrated cameras.

mod camera;
mod essential;
mod homography;
mod pose;
mod ransac;
mod triangulation;

pub use camera::CameraIntrinsics;
pub use essential::{
    decompose_essential, estimate_essential, sampson_distance, skew, EightPoint, EssentialMatrix,
    EssentialSolver,
};
pub use homography::{decompose_homography, estimate_homography, FourPointHomography};
pub(crate) use essential::count_in_front;
pub use pose::Pose;
pub use ransac::{ransac_essential, ransac_essential_with, ransac_hypotheses, RansacConfig, RansacOutput, RansacPool};
pub use triangulation::{parallax_angle, project, triangulate, MIN_PARALLAX_DEG};

use alloc::vec::Vec;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Camera identifier as used in track, intrinsics and pose files.
pub type CameraId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("invalid pose: {0}")]
    InvalidPose(&'static str),
    #[error("inverse distortion did not converge")]
    UndistortDiverged,
    #[error("need at least {needed} point pairs, got {got}")]
    NotEnoughPairs { needed: usize, got: usize },
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("only {found} inliers found, need at least {needed}")]
    InsufficientInliers { found: usize, needed: usize },
    #[error("no pose candidate puts more than half of the points in front of both cameras (best {best_fraction:.2})")]
    CheiralityAmbiguity { best_fraction: f64 },
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("triangulation angle {angle_deg:.4} deg is below the parallax limit")]
    LowParallax { angle_deg: f64 },
    #[error("correspondence set must reference two different cameras")]
    SameCamera,
}

/// A single 2D-2D correspondence between camera A and camera B.
///
/// Depending on context `a` and `b` are pixel coordinates or normalized
/// (undistorted, intrinsics removed) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
    pub frame: u32,
    pub person_id: u32,
    pub weight: f64,
}

impl PointPair {
    pub fn new(a: Vector2<f64>, b: Vector2<f64>, frame: u32, person_id: u32) -> Self {
        Self {
            a,
            b,
            frame,
            person_id,
            weight: 1.0,
        }
    }

    /// Pair without provenance, handy for purely geometric work.
    pub fn bare(a: Vector2<f64>, b: Vector2<f64>) -> Self {
        Self::new(a, b, 0, 0)
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

/// Time-indexed correspondences between one camera pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub cam_a: CameraId,
    pub cam_b: CameraId,
    pub pairs: Vec<PointPair>,
}

impl CorrespondenceSet {
    pub fn new(cam_a: CameraId, cam_b: CameraId, pairs: Vec<PointPair>) -> Result<Self, GeomError> {
        if cam_a == cam_b {
            return Err(GeomError::SameCamera);
        }
        Ok(Self {
            cam_a,
            cam_b,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
