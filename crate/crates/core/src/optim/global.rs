use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::lm::{lm_minimize, LmConfig, LmReport};
use super::problem::{BaCamera, BaProblem, CameraGauge, Observation};
use super::OptimError;
use crate::geometry::{CameraId, CameraIntrinsics, Pose};

/// Identity of a reconstructed body-mass point: the reference camera's
/// person id and the frame index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PointKey {
    pub person: u32,
    pub frame: u32,
}

impl PointKey {
    pub fn new(person: u32, frame: u32) -> Self {
        Self { person, frame }
    }
}

/// Averages points reconstructed by several camera pairs.
///
/// A key seen by one pair keeps its coordinates, otherwise the mean is
/// taken. Contributions are summed in sorted order so the result does not
/// depend on the order of the inputs.
pub fn merge_3d_points<'a, I>(per_pair: I) -> BTreeMap<PointKey, Vector3<f64>>
where
    I: IntoIterator<Item = &'a BTreeMap<PointKey, Vector3<f64>>>,
{
    let mut gathered: BTreeMap<PointKey, Vec<Vector3<f64>>> = BTreeMap::new();
    for map in per_pair {
        for (k, p) in map {
            gathered.entry(*k).or_default().push(*p);
        }
    }
    gathered
        .into_iter()
        .map(|(k, mut ps)| {
            if ps.len() == 1 {
                return (k, ps[0]);
            }
            ps.sort_by(|a, b| {
                a.x.total_cmp(&b.x)
                    .then(a.y.total_cmp(&b.y))
                    .then(a.z.total_cmp(&b.z))
            });
            let sum = ps.iter().fold(Vector3::zeros(), |acc, p| acc + p);
            (k, sum / ps.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalObservation {
    pub camera: CameraId,
    pub key: PointKey,
    pub pixel: Vector2<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalBaOutput {
    pub poses: BTreeMap<CameraId, Pose>,
    pub points: BTreeMap<PointKey, Vector3<f64>>,
    pub report: LmReport,
}

/// Joint refinement of all metric camera poses and the merged points.
///
/// Gauge: the reference camera (which must sit at the identity) is fixed
/// and the lowest-id other camera keeps its distance to it, so neither the
/// frame nor the global scale can drift. Points with fewer than two
/// observations are left out.
pub fn global_ba(
    reference: CameraId,
    poses: &BTreeMap<CameraId, Pose>,
    intrinsics: &BTreeMap<CameraId, CameraIntrinsics>,
    points: &BTreeMap<PointKey, Vector3<f64>>,
    observations: &[GlobalObservation],
    cfg: &LmConfig,
) -> Result<GlobalBaOutput, OptimError> {
    let ref_pose = poses
        .get(&reference)
        .ok_or(OptimError::InvalidProblem("reference camera has no pose"))?;
    if (ref_pose.rotation.matrix() - Matrix3::identity()).amax() > 1e-12 || ref_pose.translation.amax() > 1e-12 {
        return Err(OptimError::InvalidProblem("reference camera must be at the identity"));
    }
    if poses.values().any(|p| !p.metric) {
        return Err(OptimError::InvalidProblem("global BA expects metric poses"));
    }

    let mut order: Vec<CameraId> = Vec::with_capacity(poses.len());
    order.push(reference);
    order.extend(poses.keys().copied().filter(|&c| c != reference));
    let cam_index: BTreeMap<CameraId, usize> = order.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    let usable: Vec<&GlobalObservation> = observations
        .iter()
        .filter(|o| cam_index.contains_key(&o.camera) && points.contains_key(&o.key))
        .collect();
    let mut counts: BTreeMap<PointKey, usize> = BTreeMap::new();
    for o in &usable {
        *counts.entry(o.key).or_default() += 1;
    }
    let keys: Vec<PointKey> = points.keys().copied().filter(|k| counts.get(k).copied().unwrap_or(0) >= 2).collect();
    let point_index: BTreeMap<PointKey, usize> = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();

    let mut seen = alloc::vec![false; order.len()];
    let obs: Vec<Observation> = usable
        .iter()
        .filter_map(|o| {
            let point = *point_index.get(&o.key)?;
            let camera = cam_index[&o.camera];
            seen[camera] = true;
            Some(Observation {
                camera,
                point,
                pixel: o.pixel,
                weight: o.weight,
            })
        })
        .collect();

    let mut norm_fixed = false;
    let cameras: Vec<BaCamera> = order
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let intr = intrinsics.get(id).copied();
            let gauge = if i == 0 || !seen[i] {
                CameraGauge::Fixed
            } else if !norm_fixed {
                norm_fixed = true;
                CameraGauge::FixedNorm
            } else {
                CameraGauge::Free
            };
            intr.map(|intrinsics| BaCamera {
                pose: poses[id],
                intrinsics,
                gauge,
            })
        })
        .collect::<Option<_>>()
        .ok_or(OptimError::InvalidProblem("missing intrinsics for a camera"))?;

    let problem = BaProblem {
        cameras,
        points: keys.iter().map(|k| points[k]).collect(),
        observations: obs,
    };
    let (solved, report) = lm_minimize(&problem, cfg)?;
    let out_poses = order
        .iter()
        .zip(&solved.cameras)
        .map(|(&id, c)| {
            let mut p = c.pose;
            p.metric = true;
            (id, p)
        })
        .collect();
    let mut out_points = points.clone();
    for (k, p) in keys.iter().zip(&solved.points) {
        out_points.insert(*k, *p);
    }
    Ok(GlobalBaOutput {
        poses: out_poses,
        points: out_points,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_pair_passes_through() {
        let mut a = BTreeMap::new();
        a.insert(PointKey::new(1, 0), Vector3::new(1.0, 2.0, 3.0));
        let merged = merge_3d_points([&a]);
        assert_eq!(merged[&PointKey::new(1, 0)], Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn shared_keys_are_averaged() {
        let k = PointKey::new(4, 10);
        let mut a = BTreeMap::new();
        let mut b = BTreeMap::new();
        a.insert(k, Vector3::new(1.0, 2.0, 3.0));
        b.insert(k, Vector3::new(1.0, 2.0, 3.2));
        let merged = merge_3d_points([&a, &b]);
        assert!((merged[&k] - Vector3::new(1.0, 2.0, 3.1)).norm() < 1e-15);

        let maps: Vec<BTreeMap<PointKey, Vector3<f64>>> = [(0.0, 0.0, 0.0), (3.0, 0.0, 0.0), (0.0, 3.0, 0.0)]
            .iter()
            .map(|&(x, y, z)| BTreeMap::from([(k, Vector3::new(x, y, z))]))
            .collect();
        assert_eq!(merge_3d_points(&maps)[&k], Vector3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn empty_input() {
        let none: Vec<BTreeMap<PointKey, Vector3<f64>>> = vec![];
        assert!(merge_3d_points(&none).is_empty());
    }

    #[test]
    fn reference_must_be_identity() {
        let poses = BTreeMap::from([(0, Pose::from_parts(nalgebra::Rotation3::identity(), Vector3::new(1.0, 0.0, 0.0), true))]);
        let err = global_ba(0, &poses, &BTreeMap::new(), &BTreeMap::new(), &[], &LmConfig::default());
        assert!(matches!(err, Err(OptimError::InvalidProblem(_))));
    }
}
