use alloc::vec::Vec;
use nalgebra::Vector3;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::lm::{lm_minimize, LmConfig, LmReport};
use super::problem::{BaCamera, BaProblem, CameraGauge, Observation};
use super::OptimError;
use crate::geometry::{CameraIntrinsics, CorrespondenceSet, Pose};

/// Known metric distance between two reconstructed points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePrior {
    pub point_a: usize,
    pub point_b: usize,
    /// Meters.
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalBaOutput {
    pub pose: Pose,
    pub points: Vec<Vector3<f64>>,
    pub report: LmReport,
}

/// Two-view bundle adjustment of an up-to-scale pose.
///
/// `set` holds pixel correspondences and `points[i]` is the triangulation
/// of `set.pairs[i]` in camera A's frame. Camera A stays at the origin and
/// the translation is kept on the unit sphere.
pub fn local_ba(
    set: &CorrespondenceSet,
    pose: &Pose,
    points: &[Vector3<f64>],
    k_a: &CameraIntrinsics,
    k_b: &CameraIntrinsics,
    cfg: &LmConfig,
) -> Result<LocalBaOutput, OptimError> {
    if pose.metric {
        return Err(OptimError::InvalidProblem("local BA expects an up-to-scale pose"));
    }
    if points.len() != set.pairs.len() {
        return Err(OptimError::InvalidProblem("one point per correspondence expected"));
    }
    let mut observations = Vec::with_capacity(2 * points.len());
    for (i, p) in set.pairs.iter().enumerate() {
        observations.push(Observation {
            camera: 0,
            point: i,
            pixel: p.a,
            weight: p.weight,
        });
        observations.push(Observation {
            camera: 1,
            point: i,
            pixel: p.b,
            weight: p.weight,
        });
    }
    let problem = BaProblem {
        cameras: alloc::vec![
            BaCamera {
                pose: Pose::identity(),
                intrinsics: *k_a,
                gauge: CameraGauge::Fixed,
            },
            BaCamera {
                pose: *pose,
                intrinsics: *k_b,
                gauge: CameraGauge::FixedNorm,
            },
        ],
        points: points.to_vec(),
        observations,
    };
    let (solved, report) = lm_minimize(&problem, cfg)?;
    let mut out_pose = solved.cameras[1].pose;
    // Norm is preserved by the retraction up to rounding; make it exact.
    out_pose.translation = out_pose.translation.normalize();
    out_pose.metric = false;
    Ok(LocalBaOutput {
        pose: out_pose,
        points: solved.points,
        report,
    })
}

/// Metric upgrade of a two-view reconstruction from known lengths.
///
/// With one prior the scale is `length / |P_a - P_b|`; several priors are
/// combined as `Σ L / Σ d`, which weights long segments more. Translation and
/// points are multiplied by the scale, rotation is untouched.
pub fn resolve_scale(
    pose: &Pose,
    points: &[Vector3<f64>],
    priors: &[ScalePrior],
) -> Result<(Pose, Vec<Vector3<f64>>, f64), OptimError> {
    if priors.is_empty() {
        return Err(OptimError::InvalidProblem("at least one scale prior is required"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for prior in priors {
        if prior.point_a == prior.point_b || !(prior.length > 0.0) {
            return Err(OptimError::InvalidProblem("scale prior needs two distinct points and a positive length"));
        }
        let (Some(a), Some(b)) = (points.get(prior.point_a), points.get(prior.point_b)) else {
            return Err(OptimError::InvalidProblem("scale prior index out of range"));
        };
        let d = (a - b).norm();
        if !(d >= 1e-9) {
            return Err(OptimError::DegeneratePrior { distance: d });
        }
        num += prior.length;
        den += d;
    }
    let s = num / den;
    let scaled = points.iter().map(|p| p * s).collect();
    Ok((pose.with_scale(s), scaled, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, triangulate, PointPair};
    use nalgebra::{Rotation3, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(700.0, 700.0, 640.0, 360.0, [-0.05, 0.01, 0.0, 0.0, 0.0], 1280, 720).unwrap()
    }

    /// Metric two-camera scene; returns the metric pose, pixel pairs and
    /// ground-truth points in camera A.
    fn two_view(seed: u64, n: usize, noise: f64) -> (Pose, CorrespondenceSet, Vec<Vector3<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center_b = Vector3::new(6.0, 0.3, 1.5);
        let rot = Rotation3::from_euler_angles(0.01, -0.45, 0.02);
        let pose = Pose::from_parts(rot, -(rot * center_b), true);
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let mut pairs = Vec::new();
        let mut pts = Vec::new();
        while pairs.len() < n {
            let x = Vector3::new(rng.random_range(-2.0..4.0), rng.random_range(-1.0..1.0), rng.random_range(8.0..14.0));
            let (Ok(a), Ok(b)) = (project(&x, &Pose::identity(), &k()), project(&x, &pose, &k())) else {
                continue;
            };
            let inside = |p: &Vector2<f64>| p.x > 0.0 && p.x < 1280.0 && p.y > 0.0 && p.y < 720.0;
            if !inside(&a) || !inside(&b) {
                continue;
            }
            let mut jitter = || if noise > 0.0 { Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng)) } else { Vector2::zeros() };
            let (na, nb) = (jitter(), jitter());
            pairs.push(PointPair::new(a + na, b + nb, pairs.len() as u32, 0));
            pts.push(x);
        }
        (pose, CorrespondenceSet::new(0, 1, pairs).unwrap(), pts)
    }

    fn unit(pose: &Pose) -> Pose {
        let n = pose.translation.norm();
        Pose::from_parts(pose.rotation, pose.translation / n, false)
    }

    #[test]
    fn ground_truth_is_unchanged() {
        let (pose, set, pts) = two_view(1, 50, 0.0);
        let s = pose.translation.norm();
        let up = unit(&pose);
        let scaled: Vec<_> = pts.iter().map(|p| p / s).collect();
        let out = local_ba(&set, &up, &scaled, &k(), &k(), &LmConfig::default()).unwrap();
        assert!((out.pose.rotation.matrix() - up.rotation.matrix()).amax() < 1e-10);
        assert!((out.pose.translation - up.translation).amax() < 1e-10);
        for (a, b) in out.points.iter().zip(&scaled) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn perturbed_points_return() {
        let (pose, set, pts) = two_view(2, 60, 0.0);
        let s = pose.translation.norm();
        let up = unit(&pose);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let start: Vec<_> = pts
            .iter()
            .map(|p| p / s + Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)))
            .collect();
        let out = local_ba(&set, &up, &start, &k(), &k(), &LmConfig::default()).unwrap();
        for (a, p) in out.points.iter().zip(&pts) {
            assert!((a - p / s).norm() < 1e-6);
        }
        assert!((out.pose.translation.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_rms_does_not_increase() {
        let (pose, set, _) = two_view(4, 100, 1.0);
        let up = unit(&pose);
        let pts: Vec<_> = set
            .pairs
            .iter()
            .map(|p| {
                let a = k().undistort_normalize(&p.a).unwrap();
                let b = k().undistort_normalize(&p.b).unwrap();
                triangulate(&PointPair::bare(a, b), &up).unwrap()
            })
            .collect();
        let rms = |pose: &Pose, pts: &[Vector3<f64>]| {
            let mut sum = 0.0;
            for (p, x) in set.pairs.iter().zip(pts) {
                sum += (project(x, &Pose::identity(), &k()).unwrap() - p.a).norm_squared();
                sum += (project(x, pose, &k()).unwrap() - p.b).norm_squared();
            }
            (sum / (2 * pts.len()) as f64).sqrt()
        };
        let before = rms(&up, &pts);
        let out = local_ba(&set, &up, &pts, &k(), &k(), &LmConfig::default()).unwrap();
        let after = rms(&out.pose, &out.points);
        assert!(after <= before, "{after} > {before}");
    }

    #[test]
    fn metric_pose_is_rejected() {
        let (pose, set, pts) = two_view(5, 10, 0.0);
        assert!(local_ba(&set, &pose, &pts, &k(), &k(), &LmConfig::default()).is_err());
    }

    #[test]
    fn person_height_prior() {
        let pose = Pose::from_parts(Rotation3::identity(), Vector3::new(1.0, 0.0, 0.0), false);
        let pts = [Vector3::new(0.0, 0.0, 5.0), Vector3::new(0.0, 0.5, 5.0)];
        let prior = ScalePrior {
            point_a: 0,
            point_b: 1,
            length: 1.75,
        };
        let (metric, scaled, s) = resolve_scale(&pose, &pts, &[prior]).unwrap();
        assert!((s - 3.5).abs() < 1e-12);
        assert!((metric.translation - Vector3::new(3.5, 0.0, 0.0)).norm() < 1e-12);
        assert!(metric.metric);
        assert_eq!(metric.rotation, pose.rotation);
        assert!((scaled[1] - Vector3::new(0.0, 1.75, 17.5)).norm() < 1e-12);
    }

    #[test]
    fn free_throw_line_identity() {
        let pose = Pose::from_parts(Rotation3::identity(), Vector3::new(0.0, 1.0, 0.0), false);
        let pts = [Vector3::new(-1.8, 0.0, 9.0), Vector3::new(1.8, 0.0, 9.0)];
        let prior = ScalePrior {
            point_a: 0,
            point_b: 1,
            length: 3.6,
        };
        let (metric, scaled, s) = resolve_scale(&pose, &pts, &[prior]).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(scaled[0], pts[0] * s);
        assert!((metric.translation - pose.translation).norm() < 1e-15);
    }

    #[test]
    fn recovers_metric_baseline() {
        let (pose, set, pts) = two_view(6, 40, 0.0);
        let s = pose.translation.norm();
        let up = unit(&pose);
        let scaled: Vec<_> = pts.iter().map(|p| p / s).collect();
        let prior = ScalePrior {
            point_a: 3,
            point_b: 17,
            length: (pts[3] - pts[17]).norm(),
        };
        let _ = set;
        let (metric, _, _) = resolve_scale(&up, &scaled, &[prior]).unwrap();
        assert!((metric.translation.norm() - s).abs() < 1e-9 * s);
    }

    #[test]
    fn degenerate_prior() {
        let pose = Pose::identity();
        let pts = [Vector3::new(1.0, 1.0, 1.0), Vector3::new(1.0, 1.0, 1.0 + 1e-12)];
        let prior = ScalePrior {
            point_a: 0,
            point_b: 1,
            length: 1.0,
        };
        assert!(matches!(resolve_scale(&pose, &pts, &[prior]), Err(OptimError::DegeneratePrior { .. })));
    }

    #[test]
    fn combined_priors_total_length() {
        let pts = [Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 2.0, 0.0)];
        let priors = [
            ScalePrior { point_a: 0, point_b: 1, length: 2.0 },
            ScalePrior { point_a: 0, point_b: 2, length: 4.4 },
        ];
        // (2 + 4.4) / (1 + 2)
        let (_, _, s) = resolve_scale(&Pose::identity(), &pts, &priors).unwrap();
        assert!((s - 6.4 / 3.0).abs() < 1e-12);
    }
}
