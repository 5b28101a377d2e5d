//! Robustness and efficiency sweeps: calibration accuracy against box
//! noise strength and against the number of correspondences.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correspond::inject_bbox_noise;
use crate::geometry::{CameraId, Pose};
use crate::metrics::{camera_pose_error, mean_pose_error, PoseError};
use crate::pipeline::{calibrate, CalibrationConfig, CalibrationInput};
use crate::seed;

/// Noise strengths (pixels) swept by default.
pub const DEFAULT_NOISE_LEVELS: [f64; 7] = [0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutcome {
    /// Mean over the non-reference cameras.
    pub mean: PoseError,
    pub per_camera: BTreeMap<CameraId, PoseError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    /// Noise level in pixels, or correspondence budget (`None` = all).
    pub level: Option<f64>,
    pub outcome: Result<StudyOutcome, String>,
}

fn evaluate(input: &CalibrationInput, cfg: &CalibrationConfig, gt: &BTreeMap<CameraId, Pose>) -> Result<StudyOutcome, String> {
    let result = calibrate(input, cfg).map_err(|e| e.to_string())?;
    let per_camera = camera_pose_error(&result.poses, gt).map_err(|e| e.to_string())?;
    Ok(StudyOutcome {
        mean: mean_pose_error(&per_camera, Some(input.reference)),
        per_camera,
    })
}

/// Copy of `input` whose boxes carry uniform corner noise of strength `n`.
///
/// Every (camera, person) track has its own random stream derived from
/// `noise_seed`, independent of `n`, so the sweep compares the same noise
/// pattern at different amplitudes.
pub fn noisy_input(input: &CalibrationInput, n: f64, noise_seed: u64) -> CalibrationInput {
    let mut out = input.clone();
    for (cam, ts) in out.tracks.iter_mut() {
        for t in ts.iter_mut() {
            let stream = ((*cam as u64) << 32) | t.person_id as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(noise_seed, stream));
            for b in t.boxes.iter_mut() {
                *b = inject_bbox_noise(b, n, &mut rng);
            }
        }
    }
    out
}

/// Calibrates once per noise level. A failing level is recorded in its row
/// and the sweep carries on.
pub fn study_noise(
    input: &CalibrationInput,
    cfg: &CalibrationConfig,
    gt: &BTreeMap<CameraId, Pose>,
    levels: &[f64],
    noise_seed: u64,
) -> Vec<StudyRow> {
    levels
        .iter()
        .map(|&n| StudyRow {
            level: Some(n),
            outcome: evaluate(&noisy_input(input, n, noise_seed), cfg, gt),
        })
        .collect()
}

/// Calibrates with at most `k` correspondences per camera pair for every
/// entry of `counts` (`None` keeps them all). Budgets below the
/// eight-point minimum are reported as infeasible without running.
pub fn study_count(
    input: &CalibrationInput,
    cfg: &CalibrationConfig,
    gt: &BTreeMap<CameraId, Pose>,
    counts: &[Option<usize>],
) -> Vec<StudyRow> {
    counts
        .iter()
        .map(|&k| {
            let outcome = match k {
                Some(k) if k < 8 => Err("infeasible: fewer than 8 correspondences".to_string()),
                _ => {
                    let c = CalibrationConfig {
                        max_correspondences: k,
                        ..cfg.clone()
                    };
                    evaluate(input, &c, gt)
                }
            };
            StudyRow {
                level: k.map(|k| k as f64),
                outcome,
            }
        })
        .collect()
}
