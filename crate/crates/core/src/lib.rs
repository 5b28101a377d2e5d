//! Extrinsic calibration of static, wide-baseline camera networks using the
//! people walking through the scene as correspondences.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`assoc`]: person tracklets are matched across views from precomputed
//!    appearance embeddings (restricted random sampling, average pooling,
//!    Hungarian assignment).
//! 2. [`correspond`]: matched tracklets are turned into time-indexed 2D-2D
//!    point correspondences using bounding box centers.
//! 3. [`geometry`] and [`optim`]: every camera is solved against a reference
//!    camera (essential matrix in RANSAC, decomposition, triangulation,
//!    local bundle adjustment, metric scale from a known length), the
//!    per-pair points are merged and a global bundle adjustment refines all
//!    poses together.
//!
//! [`pipeline`] ties the stages together, [`metrics`] evaluates results and
//! [`synth`] produces ground-truth scenes used throughout the test suites.
//! [`study`] sweeps noise and correspondence budgets; [`track`] follows a
//! person in 3D once the network is calibrated.
//!
//! Coordinate convention used everywhere: `x_cam = R * x_ref + t`.
//!
//! The crate is `no_std` and only needs `alloc`; file formats and the CLI
//! live in the `crowdcal` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod assoc;
pub mod correspond;
pub mod geometry;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod study;
pub mod synth;
pub mod track;

mod seed;

pub use assoc::{Assignment, BBox, Tracklet};
pub use geometry::{
    CameraId, CameraIntrinsics, CorrespondenceSet, EssentialMatrix, GeomError, PointPair, Pose,
    RansacConfig,
};
pub use optim::{LmConfig, OptimError, ScalePrior};
pub use pipeline::{CalibrationConfig, CalibrationInput, CalibrationResult, PipelineError};
