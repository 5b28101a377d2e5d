use std::collections::{BTreeMap, BTreeSet};

use crowdcal_core::metrics::{
    camera_pose_error, err_ratio, mean_pose_error, reprojection_error_metric, AnnotatedPair,
};
use crowdcal_core::pipeline::{calibrate, CalibrationConfig, CalibrationInput};
use crowdcal_core::study::{noisy_input, study_count, study_noise, StudyRow};
use crowdcal_core::synth::{generate_scene, render_observations, GroundTruth, RenderedScene, SceneSpec};
use crowdcal_core::track::{track_person, TrackError};
use crowdcal_core::CameraIntrinsics;
use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn scene(spec: &SceneSpec) -> (GroundTruth, RenderedScene, CalibrationInput) {
    let gt = generate_scene(spec).unwrap();
    let r = render_observations(&gt, spec).unwrap();
    let input = CalibrationInput {
        reference: 0,
        intrinsics: gt.intrinsics.clone(),
        tracks: r.tracks.clone(),
        priors: r.priors.clone(),
    };
    (gt, r, input)
}

fn position(row: &StudyRow) -> f64 {
    row.outcome.as_ref().map_or(f64::INFINITY, |o| o.mean.position_mm)
}

#[test]
fn zero_noise_row_is_a_plain_calibration() {
    let spec = SceneSpec {
        seed: 2,
        ..SceneSpec::default()
    };
    let (gt, _, input) = scene(&spec);
    let cfg = CalibrationConfig::default();
    let truth = gt.relative_poses(0);
    assert_eq!(noisy_input(&input, 0.0, 9), input);
    let rows = study_noise(&input, &cfg, &truth, &[0.0, 2.0], 9);
    assert_eq!(rows.len(), 2);
    let direct = camera_pose_error(&calibrate(&input, &cfg).unwrap().poses, &truth).unwrap();
    let row = rows[0].outcome.as_ref().unwrap();
    assert_eq!(row.per_camera, direct);
    assert_eq!(row.mean, mean_pose_error(&direct, Some(0)));
    assert!(position(&rows[1]) > position(&rows[0]));
}

#[test]
fn failing_levels_keep_their_row() {
    let (gt, _, input) = scene(&SceneSpec::default());
    let mut truth = gt.relative_poses(0);
    truth.remove(&3);
    let rows = study_noise(&input, &CalibrationConfig::default(), &truth, &[0.0, 1.0, 5.0], 1);
    assert_eq!(rows.iter().map(|r| r.level).collect::<Vec<_>>(), [Some(0.0), Some(1.0), Some(5.0)]);
    assert!(rows.iter().all(|r| r.outcome.is_err()));
}

#[test]
fn correspondence_budgets() {
    let (gt, _, input) = scene(&SceneSpec::default());
    let truth = gt.relative_poses(0);
    let rows = study_count(&input, &CalibrationConfig::default(), &truth, &[Some(5), Some(7), Some(8), None]);
    for r in &rows[..2] {
        assert!(r.outcome.as_ref().unwrap_err().contains("infeasible"));
    }
    // Eight is attempted; whether it succeeds depends on the data.
    if let Err(e) = &rows[2].outcome {
        assert!(!e.contains("infeasible"), "{e}");
    }
    assert_eq!(rows[3].level, None);
    assert!(position(&rows[3]) < 1e-3);
}

#[test]
fn more_correspondences_help() {
    let mut better = 0;
    for seed in 0..10 {
        let (gt, _, input) = scene(&SceneSpec {
            seed,
            pixel_noise_sigma: 2.0,
            center_offset_radius: 2.0,
            ..SceneSpec::default()
        });
        let mut cfg = CalibrationConfig {
            seed,
            ..CalibrationConfig::default()
        };
        cfg.ransac.threshold_px = 8.0;
        let rows = study_count(&input, &cfg, &gt.relative_poses(0), &[Some(10), Some(50)]);
        if position(&rows[1]) <= position(&rows[0]) {
            better += 1;
        }
    }
    assert!(better >= 9, "{better}/10");
}

#[test]
fn exact_tracking() {
    let (gt, _, input) = scene(&SceneSpec {
        seed: 6,
        ..SceneSpec::default()
    });
    let result = calibrate(&input, &CalibrationConfig::default()).unwrap();
    for (pi, person) in gt.people.iter().enumerate() {
        let Ok(traj) = track_person(&result, person.id, &input.tracks, &input.intrinsics) else {
            continue;
        };
        let cams_at = |f: u32| {
            input
                .tracks
                .values()
                .filter(|ts| ts.iter().any(|t| t.person_id == person.id && t.at_frame(f).is_some()))
                .count()
        };
        for p in &traj.points {
            let truth = gt.to_reference(0, &gt.body_mass(pi, p.frame));
            assert!((p.position - truth).norm() < 1e-6, "{} m", (p.position - truth).norm());
            assert!(p.views >= 2 && p.views == cams_at(p.frame));
        }
        for f in &traj.skipped {
            assert!(cams_at(*f) < 2);
        }
        let listed: BTreeSet<u32> = traj.points.iter().map(|p| p.frame).chain(traj.skipped.iter().copied()).collect();
        assert_eq!(listed.len(), traj.points.len() + traj.skipped.len());
    }
    assert_eq!(
        track_person(&result, 999, &input.tracks, &input.intrinsics),
        Err(TrackError::UnknownPerson(999))
    );
}

#[test]
fn ground_truth_scores_zero() {
    let (gt, r, _) = scene(&SceneSpec::default());
    let truth = gt.relative_poses(0);
    let e = camera_pose_error(&truth, &truth).unwrap();
    assert!(e.values().all(|e| e.position_mm == 0.0 && e.orientation_deg == 0.0));
    let rpe = reprojection_error_metric(&truth, &gt.intrinsics, &r.annotated).unwrap();
    assert_eq!(rpe.evaluated, r.annotated.len());
    assert!(rpe.rpe < 1e-6, "{}", rpe.rpe);
}

#[test]
fn annotation_noise_shows_in_rpe() {
    let (gt, r, _) = scene(&SceneSpec::default());
    let truth = gt.relative_poses(0);
    let sigma = 2.0;
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut jitter = || Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng));
    let noisy: Vec<AnnotatedPair> = r
        .annotated
        .iter()
        .map(|a| AnnotatedPair {
            a: a.a + jitter(),
            b: a.b + jitter(),
            ..*a
        })
        .collect();
    let rpe = reprojection_error_metric(&truth, &gt.intrinsics, &noisy).unwrap().rpe;
    assert!(rpe > 0.0 && rpe < 3.0 * sigma, "{rpe}");
}

#[test]
fn err_ratio_follows_resolution() {
    let (gt, r, _) = scene(&SceneSpec::default());
    let truth = gt.relative_poses(0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(0.0, 1.5).unwrap();
    let noisy: Vec<AnnotatedPair> = r
        .annotated
        .iter()
        .map(|a| AnnotatedPair {
            a: a.a + Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng)),
            ..*a
        })
        .collect();
    let k1 = &gt.intrinsics;
    let k2: BTreeMap<_, _> = k1
        .iter()
        .map(|(&c, k)| {
            (
                c,
                CameraIntrinsics {
                    fx: 2.0 * k.fx,
                    fy: 2.0 * k.fy,
                    cx: 2.0 * k.cx,
                    cy: 2.0 * k.cy,
                    width: 2 * k.width,
                    height: 2 * k.height,
                    ..*k
                },
            )
        })
        .collect();
    let doubled: Vec<AnnotatedPair> = noisy
        .iter()
        .map(|a| AnnotatedPair {
            a: 2.0 * a.a,
            b: 2.0 * a.b,
            ..*a
        })
        .collect();
    let small = reprojection_error_metric(&truth, k1, &noisy).unwrap().rpe;
    let large = reprojection_error_metric(&truth, &k2, &doubled).unwrap().rpe;
    assert!((large / small - 2.0).abs() < 1e-6, "{small} {large}");
    let (w, h) = (k1[&0].width, k1[&0].height);
    // The same image, twice the pixels: the ratio does not move.
    assert!((err_ratio(large, 2 * w, 2 * h) - err_ratio(small, w, h)).abs() < 1e-6);
    // The same pixel error on a twice larger image is half the ratio.
    assert!((err_ratio(small, 2 * w, 2 * h) - 0.5 * err_ratio(small, w, h)).abs() < 1e-12);
}
