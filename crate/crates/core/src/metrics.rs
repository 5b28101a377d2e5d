//! Evaluation against ground truth: camera pose error, reprojection error
//! on annotated pairs, and the resolution-normalized error ratio.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use nalgebra::{Rotation3, Vector2};
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, triangulate, CameraId, CameraIntrinsics, PointPair, Pose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("camera {0} is missing from one of the pose sets")]
    CameraMismatch(CameraId),
    #[error("no intrinsics for camera {0}")]
    MissingIntrinsics(CameraId),
    #[error("no annotated pair could be evaluated")]
    NothingToEvaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Distance between camera centers, millimeters.
    pub position_mm: f64,
    /// Geodesic rotation angle, degrees.
    pub orientation_deg: f64,
}

/// Angle of the rotation taking `b` onto `a`, in radians.
///
/// Uses `atan2` on the skew and trace parts, which stays accurate for tiny
/// angles where `acos` of the trace loses half the digits.
pub fn rotation_angle(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    let m = (a * b.inverse()).into_inner();
    let sin2 = nalgebra::Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    let cos2 = m.trace() - 1.0;
    sin2.atan2(cos2)
}

/// Per-camera position and orientation error.
///
/// Both maps must hold the same cameras and be expressed against the same
/// reference camera. Positions compare camera centers `-R^T t`.
pub fn camera_pose_error(
    est: &BTreeMap<CameraId, Pose>,
    gt: &BTreeMap<CameraId, Pose>,
) -> Result<BTreeMap<CameraId, PoseError>, MetricsError> {
    if let Some(id) = est.keys().find(|k| !gt.contains_key(k)) {
        return Err(MetricsError::CameraMismatch(*id));
    }
    if let Some(id) = gt.keys().find(|k| !est.contains_key(k)) {
        return Err(MetricsError::CameraMismatch(*id));
    }
    Ok(est
        .iter()
        .map(|(id, e)| {
            let g = &gt[id];
            let position_mm = (e.center() - g.center()).norm() * 1000.0;
            let orientation_deg = rotation_angle(&e.rotation, &g.rotation).to_degrees();
            (
                *id,
                PoseError {
                    position_mm,
                    orientation_deg,
                },
            )
        })
        .collect())
}

/// Mean of the per-camera errors, leaving out `skip` (normally the
/// reference camera, whose error is zero by construction).
pub fn mean_pose_error(errors: &BTreeMap<CameraId, PoseError>, skip: Option<CameraId>) -> PoseError {
    let kept: Vec<&PoseError> = errors
        .iter()
        .filter(|(id, _)| Some(**id) != skip)
        .map(|(_, e)| e)
        .collect();
    if kept.is_empty() {
        return PoseError {
            position_mm: 0.0,
            orientation_deg: 0.0,
        };
    }
    let n = kept.len() as f64;
    PoseError {
        position_mm: kept.iter().map(|e| e.position_mm).sum::<f64>() / n,
        orientation_deg: kept.iter().map(|e| e.orientation_deg).sum::<f64>() / n,
    }
}

/// Hand-picked pixel correspondence between two cameras.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPair {
    pub cam_a: CameraId,
    pub cam_b: CameraId,
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpeReport {
    /// Mean pixel distance over the evaluated pairs and both views.
    pub rpe: f64,
    pub evaluated: usize,
    /// Pairs that triangulated behind a camera or with too little parallax.
    pub excluded: usize,
}

/// Reprojection error on annotated pairs: every pair is triangulated with
/// the estimated poses and reprojected into both of its views.
pub fn reprojection_error_metric(
    poses: &BTreeMap<CameraId, Pose>,
    intrinsics: &BTreeMap<CameraId, CameraIntrinsics>,
    annotated: &[AnnotatedPair],
) -> Result<RpeReport, MetricsError> {
    let mut sum = 0.0;
    let mut evaluated = 0;
    let mut excluded = 0;
    for ap in annotated {
        let pa = poses.get(&ap.cam_a).ok_or(MetricsError::CameraMismatch(ap.cam_a))?;
        let pb = poses.get(&ap.cam_b).ok_or(MetricsError::CameraMismatch(ap.cam_b))?;
        let ka = intrinsics.get(&ap.cam_a).ok_or(MetricsError::MissingIntrinsics(ap.cam_a))?;
        let kb = intrinsics.get(&ap.cam_b).ok_or(MetricsError::MissingIntrinsics(ap.cam_b))?;
        let rel = pb.relative_to(pa);
        let eval = || -> Option<f64> {
            let na = ka.undistort_normalize(&ap.a).ok()?;
            let nb = kb.undistort_normalize(&ap.b).ok()?;
            let x = triangulate(&PointPair::bare(na, nb), &rel).ok()?;
            let ra = project(&x, &Pose::identity(), ka).ok()?;
            let rb = project(&x, &rel, kb).ok()?;
            Some((ra - ap.a).norm() + (rb - ap.b).norm())
        };
        match eval() {
            Some(d) => {
                sum += d;
                evaluated += 1;
            }
            None => {
                log::warn!("annotated pair between cameras {} and {} excluded", ap.cam_a, ap.cam_b);
                excluded += 1;
            }
        }
    }
    if evaluated == 0 {
        return Err(MetricsError::NothingToEvaluate);
    }
    Ok(RpeReport {
        rpe: sum / (2 * evaluated) as f64,
        evaluated,
        excluded,
    })
}

/// Reprojection error as a percentage of the smaller image side.
pub fn err_ratio(rpe: f64, width: u32, height: u32) -> f64 {
    100.0 * rpe / width.min(height) as f64
}
