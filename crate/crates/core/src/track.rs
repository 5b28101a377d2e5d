//! Locating a person in 3D over time with a calibrated network.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc::Tracklet;
use crate::correspond::bbox_center;
use crate::geometry::{triangulate, CameraId, CameraIntrinsics, PointPair};
use crate::pipeline::CalibrationResult;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackError {
    #[error("track {0} does not exist in the reference camera")]
    UnknownPerson(u32),
    #[error("no intrinsics for camera {0}")]
    MissingIntrinsics(CameraId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub frame: u32,
    /// Body-mass location in the reference camera frame.
    pub position: Vector3<f64>,
    /// Cameras that saw the person at this frame.
    pub views: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Track id in the reference camera.
    pub person: u32,
    pub points: Vec<TrajectoryPoint>,
    /// Frames where fewer than two usable views were available.
    pub skipped: Vec<u32>,
}

/// Triangulates the box center of `person` (a reference-camera track id)
/// from every camera pair seeing it and averages the estimates per frame.
///
/// Other cameras find the person through the associations stored in
/// `result`. Frames with fewer than two views, or where no pair could be
/// triangulated, are skipped.
pub fn track_person(
    result: &CalibrationResult,
    person: u32,
    tracks: &BTreeMap<CameraId, Vec<Tracklet>>,
    intrinsics: &BTreeMap<CameraId, CameraIntrinsics>,
) -> Result<Trajectory, TrackError> {
    let find = |cam: CameraId, id: u32| tracks.get(&cam)?.iter().find(|t| t.person_id == id);
    if find(result.reference, person).is_none() {
        return Err(TrackError::UnknownPerson(person));
    }
    let mut seen: Vec<(CameraId, &Tracklet)> = Vec::new();
    for &cam in result.poses.keys() {
        let Some(t) = result.track_in(cam, person).and_then(|id| find(cam, id)) else {
            continue;
        };
        if !intrinsics.contains_key(&cam) {
            return Err(TrackError::MissingIntrinsics(cam));
        }
        seen.push((cam, t));
    }

    let frames: BTreeSet<u32> = seen.iter().flat_map(|(_, t)| t.boxes.iter().map(|b| b.frame)).collect();
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for f in frames {
        let views: Vec<(CameraId, Vector2<f64>)> = seen
            .iter()
            .filter_map(|(cam, t)| t.at_frame(f).map(|b| (*cam, bbox_center(b))))
            .collect();
        let mut sum = Vector3::zeros();
        let mut n = 0;
        for (i, (ca, pa)) in views.iter().enumerate() {
            for (cb, pb) in &views[i + 1..] {
                let (ka, kb) = (&intrinsics[ca], &intrinsics[cb]);
                let (posa, posb) = (&result.poses[ca], &result.poses[cb]);
                let (Ok(na), Ok(nb)) = (ka.undistort_normalize(pa), kb.undistort_normalize(pb)) else {
                    continue;
                };
                let rel = posb.relative_to(posa);
                if let Ok(x) = triangulate(&PointPair::bare(na, nb), &rel) {
                    sum += posa.inverse().transform(&x);
                    n += 1;
                }
            }
        }
        if n == 0 {
            log::debug!("person {person}: frame {f} skipped ({} view(s))", views.len());
            skipped.push(f);
            continue;
        }
        points.push(TrajectoryPoint {
            frame: f,
            position: sum / n as f64,
            views: views.len(),
        });
    }
    Ok(Trajectory {
        person,
        points,
        skipped,
    })
}

/// Best-fit plane through a point cloud, used for bird's-eye views of
/// reference-frame reconstructions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub origin: Vector3<f64>,
    pub x_axis: Vector3<f64>,
    pub y_axis: Vector3<f64>,
    /// Points toward the reference camera.
    pub normal: Vector3<f64>,
}

impl GroundPlane {
    /// Least-squares plane through `points`; `None` for fewer than three.
    /// The in-plane `x` axis follows the direction of largest spread.
    pub fn fit(points: &[Vector3<f64>]) -> Option<Self> {
        if points.len() < 3 {
            return None;
        }
        let origin = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
        let cov: Matrix3<f64> = points.iter().map(|p| (p - origin) * (p - origin).transpose()).sum();
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let x_axis: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
        let mut normal: Vector3<f64> = eig.eigenvectors.column(order[2]).into();
        // The reference camera sits at the origin, above the ground.
        if normal.dot(&-origin) < 0.0 {
            normal = -normal;
        }
        Some(Self {
            origin,
            x_axis,
            y_axis: normal.cross(&x_axis),
            normal,
        })
    }

    /// In-plane coordinates of `x`.
    pub fn project(&self, x: &Vector3<f64>) -> Vector2<f64> {
        let d = x - self.origin;
        Vector2::new(d.dot(&self.x_axis), d.dot(&self.y_axis))
    }

    /// Signed distance of `x` from the plane along the normal.
    pub fn height(&self, x: &Vector3<f64>) -> f64 {
        (x - self.origin).dot(&self.normal)
    }
}
