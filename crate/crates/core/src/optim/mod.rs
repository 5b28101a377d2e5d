//! Bundle adjustment and the metric steps around it.

mod global;
mod lm;
mod pairwise;
mod problem;

pub use global::{global_ba, merge_3d_points, GlobalBaOutput, GlobalObservation, PointKey};
pub use lm::{lm_minimize, LmConfig, LmReport, Termination};
pub use pairwise::{local_ba, resolve_scale, LocalBaOutput, ScalePrior};
pub use problem::{BaCamera, BaProblem, CameraGauge, Observation, ObservationJacobian};

use alloc::boxed::Box;
use thiserror::Error;

use crate::geometry::GeomError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("invalid problem: {0}")]
    InvalidProblem(&'static str),
    /// The solver gave up; the best state reached so far is attached.
    #[error("Levenberg-Marquardt did not converge (damping {damping:e})")]
    NonConvergence {
        damping: f64,
        best: Box<BaProblem>,
        report: LmReport,
    },
    #[error("scale prior endpoints are too close ({distance:e})")]
    DegeneratePrior { distance: f64 },
    #[error(transparent)]
    Geometry(#[from] GeomError),
}
