use std::collections::BTreeMap;

use crowdcal_core::geometry::{project, CameraId, Pose};
use crowdcal_core::metrics::{camera_pose_error, mean_pose_error};
use crowdcal_core::optim::{global_ba, merge_3d_points, resolve_scale, GlobalObservation, LmConfig, PointKey, ScalePrior};
use crowdcal_core::synth::{generate_scene, GroundTruth, SceneSpec};
use crowdcal_core::CameraIntrinsics;
use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Network {
    poses: BTreeMap<CameraId, Pose>,
    intrinsics: BTreeMap<CameraId, CameraIntrinsics>,
    points: BTreeMap<PointKey, Vector3<f64>>,
    observations: Vec<GlobalObservation>,
}

/// Four cameras around a 20 x 25 m scene watching `n` points that each
/// show up in at least two images.
fn network(seed: u64, n: usize, sigma: f64) -> (Network, GroundTruth) {
    let gt = generate_scene(&SceneSpec {
        seed,
        ..SceneSpec::default()
    })
    .unwrap();
    let poses = gt.relative_poses(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    let mut points = BTreeMap::new();
    let mut observations = Vec::new();
    while points.len() < n {
        let world = Vector3::new(rng.random_range(0.0..20.0), rng.random_range(0.0..25.0), rng.random_range(0.0..2.0));
        let x = gt.to_reference(0, &world);
        let key = PointKey::new(points.len() as u32, 0);
        let seen: Vec<GlobalObservation> = poses
            .iter()
            .filter_map(|(&camera, pose)| {
                let k = &gt.intrinsics[&camera];
                let px = project(&x, pose, k).ok()?;
                let inside = px.x >= 0.0 && px.y >= 0.0 && px.x <= k.width as f64 && px.y <= k.height as f64;
                let jitter = if sigma > 0.0 {
                    Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))
                } else {
                    Vector2::zeros()
                };
                inside.then_some(GlobalObservation {
                    camera,
                    key,
                    pixel: px + jitter,
                    weight: 1.0,
                })
            })
            .collect();
        if seen.len() >= 2 {
            points.insert(key, x);
            observations.extend(seen);
        }
    }
    (
        Network {
            poses,
            intrinsics: gt.intrinsics.clone(),
            points,
            observations,
        },
        gt,
    )
}

/// Rotates every non-reference camera by `deg` about a random axis and
/// moves its center by `frac` of its distance to the reference. Camera 1,
/// whose distance to the reference is the scale gauge, only moves sideways.
fn perturb(poses: &BTreeMap<CameraId, Pose>, seed: u64, deg: f64, frac: f64) -> BTreeMap<CameraId, Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
    poses
        .iter()
        .map(|(&id, p)| {
            if id == 0 {
                return (id, *p);
            }
            let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(unit()), deg.to_radians()) * p.rotation;
            let t = if id == 1 {
                let n = p.translation.norm();
                (p.translation + unit() * frac * n).normalize() * n
            } else {
                p.translation + unit() * frac * p.translation.norm()
            };
            (id, Pose::from_parts(r, t, true))
        })
        .collect()
}

fn run(net: &Network, poses: &BTreeMap<CameraId, Pose>) -> crowdcal_core::optim::GlobalBaOutput {
    global_ba(0, poses, &net.intrinsics, &net.points, &net.observations, &LmConfig::default()).unwrap()
}

#[test]
fn ground_truth_is_left_alone() {
    let (net, _) = network(1, 100, 0.0);
    let out = run(&net, &net.poses);
    for (id, p) in &out.poses {
        let g = &net.poses[id];
        assert!((p.rotation.matrix() - g.rotation.matrix()).amax() < 1e-10);
        assert!((p.translation - g.translation).amax() < 1e-10);
    }
    assert!(out.report.final_cost() < 1e-18);
}

#[test]
fn perturbed_network_converges() {
    let (net, _) = network(2, 100, 0.0);
    let start = perturb(&net.poses, 5, 0.3, 0.01);
    let out = run(&net, &start);
    let err = camera_pose_error(&out.poses, &net.poses).unwrap();
    for e in err.values() {
        assert!(e.position_mm < 0.1, "{e:?}");
        assert!(e.orientation_deg.to_radians() < 1e-4, "{e:?}");
    }
}

#[test]
fn reference_and_gauge_camera_are_pinned() {
    let (net, _) = network(3, 60, 1.0);
    let start = perturb(&net.poses, 9, 0.3, 0.01);
    let out = run(&net, &start);
    // Fixed parameters come back bit for bit; the gauge baseline keeps its
    // length up to rounding.
    assert_eq!(out.poses[&0], start[&0]);
    let (a, b) = (out.poses[&1].translation.norm(), start[&1].translation.norm());
    assert!((a - b).abs() <= 4.0 * f64::EPSILON * b, "{a} vs {b}");
    assert_ne!(out.poses[&1], start[&1]);
    let trace = &out.report.cost_trace;
    assert!(trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn noisy_monte_carlo() {
    let (mut pos, mut rot) = (0.0, 0.0);
    for trial in 0..10 {
        let (net, _) = network(100 + trial, 100, 2.0);
        let start = perturb(&net.poses, trial, 0.3, 0.01);
        let out = run(&net, &start);
        let m = mean_pose_error(&camera_pose_error(&out.poses, &net.poses).unwrap(), Some(0));
        pos += m.position_mm / 10.0;
        rot += m.orientation_deg / 10.0;
    }
    assert!(pos < 200.0 && rot < 0.5, "{pos} mm {rot} deg");
}

#[test]
fn merging_ignores_pair_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let maps: Vec<BTreeMap<PointKey, Vector3<f64>>> = (0..4)
        .map(|_| {
            let mut m = BTreeMap::new();
            for i in 0..30 {
                let p = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * 10.0;
                if rng.random_bool(0.7) {
                    m.insert(PointKey::new(i, 3), p);
                }
            }
            m
        })
        .collect();
    let reference = merge_3d_points(&maps);
    for perm in [[3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]] {
        let shuffled: Vec<_> = perm.iter().map(|&i| maps[i].clone()).collect();
        assert_eq!(merge_3d_points(&shuffled), reference);
    }
}

#[test]
fn merging_examples() {
    let key = PointKey::new(1, 0);
    let one = |p: Vector3<f64>| BTreeMap::from([(key, p)]);
    let alone = merge_3d_points(&[one(Vector3::new(1.0, 2.0, 3.0))]);
    assert_eq!(alone[&key], Vector3::new(1.0, 2.0, 3.0));
    let two = merge_3d_points(&[one(Vector3::new(1.0, 2.0, 3.0)), one(Vector3::new(1.0, 2.0, 3.2))]);
    assert!((two[&key] - Vector3::new(1.0, 2.0, 3.1)).norm() < 1e-12);
    let three = merge_3d_points(&[one(Vector3::zeros()), one(Vector3::new(3.0, 0.0, 0.0)), one(Vector3::new(0.0, 3.0, 0.0))]);
    assert!((three[&key] - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    assert!(merge_3d_points(std::iter::empty()).is_empty());
}

#[test]
fn metric_baseline_from_known_length() {
    let (net, _) = network(6, 10, 0.0);
    let truth = net.poses[&2];
    let unit = Pose::from_parts(truth.rotation, truth.translation.normalize(), false);
    let s = truth.translation.norm();
    // Reconstruction up to scale: true points shrunk by the baseline.
    let pts: Vec<Vector3<f64>> = net.points.values().map(|p| p / s).collect();
    let length = (net.points.values().next().unwrap() - net.points.values().nth(1).unwrap()).norm();
    let prior = ScalePrior {
        point_a: 0,
        point_b: 1,
        length,
    };
    let (metric, scaled, _) = resolve_scale(&unit, &pts, &[prior]).unwrap();
    assert!(metric.metric);
    assert!((metric.translation.norm() - s).abs() / s < 1e-9);
    for (a, b) in scaled.iter().zip(net.points.values()) {
        assert!((a - b).norm() < 1e-9);
    }
}
