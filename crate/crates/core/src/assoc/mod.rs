//! Cross-view person association from appearance embeddings.

mod hungarian;
mod matching;
mod tracklet;

pub use hungarian::{hungarian_assign, Assignment};
pub use matching::{
    cost_matrix, feature_distance, match_across_cameras, pool_features, sample_tracklet, AssocConfig,
};
pub use tracklet::{BBox, Tracklet};

use thiserror::Error;

use crate::geometry::CameraId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssocError {
    #[error("invalid bounding box: {0}")]
    InvalidBox(&'static str),
    #[error("invalid tracklet: {0}")]
    InvalidTracklet(&'static str),
    #[error("tracklet is empty")]
    EmptyTracklet,
    #[error("camera {camera} person {person} frame {frame} has no embedding")]
    MissingFeature { camera: CameraId, person: u32, frame: u32 },
    #[error("feature dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("pooled feature has zero norm")]
    ZeroFeature,
}
