//! One function per subcommand. Each reads what it needs through an
//! [`AppConfig`], writes its outputs under `out` and returns the in-memory
//! result for callers that want it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crowdcal_core::metrics::{camera_pose_error, err_ratio, mean_pose_error, reprojection_error_metric};
use crowdcal_core::pipeline::{
    calibrate_with, solve_pair_excluding, CalibrationConfig, CalibrationInput, CalibrationResult, PairFailure,
    PairSolution, PipelineError,
};
use crowdcal_core::study::{study_count, study_noise, StudyRow};
use crowdcal_core::synth::{generate_scene, render_observations};
use crowdcal_core::track::{track_person, GroundPlane, Trajectory};
use crowdcal_core::{CameraId, Pose};
use nalgebra::Vector3;

use crate::formats::{self, DatasetPaths, MetricsReport};
use crate::{AppConfig, Error, Result};

/// [`crowdcal_core::pipeline::calibrate`] with every camera pair solved on
/// its own thread. The result is identical to the sequential one.
pub fn calibrate_parallel(input: &CalibrationInput, cfg: &CalibrationConfig) -> Result<CalibrationResult, PipelineError> {
    calibrate_with(input, cfg, |jobs| {
        std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(cam, excluded)| s.spawn(move || solve_pair_excluding(input, cfg, *cam, excluded)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("pair solver panicked"))
                .collect::<Vec<Result<PairSolution, PairFailure>>>()
        })
    })
}

/// Reads intrinsics, tracks, embeddings and priors named in `cfg`.
pub fn load_input(cfg: &AppConfig) -> Result<CalibrationInput> {
    if cfg.tracks.is_empty() {
        return Err(Error::Config("no track files given".into()));
    }
    let intrinsics = formats::read_intrinsics(&cfg.intrinsics)?;
    let mut tracks = BTreeMap::new();
    for (&cam, path) in &cfg.tracks {
        tracks.insert(cam, formats::read_tracks(path, cam)?);
    }
    let embeddings = formats::read_embeddings(&cfg.embeddings)?;
    formats::attach_embeddings(&mut tracks, &embeddings)?;
    Ok(CalibrationInput {
        reference: cfg.reference,
        intrinsics,
        tracks,
        priors: formats::read_priors(&cfg.priors)?,
    })
}

/// Generates a synthetic dataset under `out`, together with a
/// `config.json` that points at it.
pub fn synth(cfg: &AppConfig, out: &Path) -> Result<PathBuf> {
    let gt = generate_scene(&cfg.scene)?;
    let scene = render_observations(&gt, &cfg.scene)?;
    let paths = DatasetPaths { dir: out.to_path_buf() };
    formats::write_intrinsics(&paths.intrinsics(), &gt.intrinsics)?;
    for (cam, ts) in &scene.tracks {
        formats::write_tracks(&paths.tracks(*cam), ts)?;
    }
    formats::write_embeddings(&paths.embeddings(), &scene.tracks)?;
    formats::write_priors(&paths.priors(), &scene.priors)?;
    formats::write_annotated(&paths.annotated(), &scene.annotated)?;
    formats::write_poses(&paths.ground_truth(), &gt.poses)?;
    if !scene.swapped.is_empty() {
        log::info!("{} planted appearance swaps", scene.swapped.len());
    }

    let name = |p: PathBuf| PathBuf::from(p.file_name().expect("dataset paths have file names"));
    let config = AppConfig {
        intrinsics: name(paths.intrinsics()),
        tracks: scene.tracks.keys().map(|&c| (c, name(paths.tracks(c)))).collect(),
        embeddings: name(paths.embeddings()),
        priors: name(paths.priors()),
        annotated: Some(name(paths.annotated())),
        ground_truth: Some(name(paths.ground_truth())),
        ..cfg.clone()
    };
    let config_path = paths.config();
    formats::write_json(&config_path, &config)?;
    Ok(config_path)
}

/// Calibrates and writes `result.json`, `poses.json` and the cost traces
/// of the global (`cost_trace.csv`) and pairwise (`cost_trace_<cam>.csv`)
/// adjustments.
pub fn calibrate(cfg: &AppConfig, out: &Path) -> Result<CalibrationResult> {
    let input = load_input(cfg)?;
    let result = calibrate_parallel(&input, &cfg.calibration)?;
    write_calibration(&result, out)?;
    Ok(result)
}

pub fn write_calibration(result: &CalibrationResult, out: &Path) -> Result<()> {
    formats::write_result(&out.join("result.json"), result)?;
    formats::write_poses(&out.join("poses.json"), &result.poses)?;
    formats::write_cost_trace(&out.join("cost_trace.csv"), &result.global.report)?;
    for pair in &result.pairs {
        formats::write_cost_trace(&out.join(format!("cost_trace_{}.csv", pair.cam_b)), &pair.stats.local_report)?;
    }
    Ok(())
}

fn estimated_poses(cfg: &AppConfig) -> Result<BTreeMap<CameraId, Pose>> {
    if let Some(p) = &cfg.estimate {
        return formats::read_poses(p);
    }
    if let Some(p) = &cfg.result {
        return Ok(formats::read_result(p)?.poses);
    }
    Err(Error::Config("eval needs `estimate` or `result`".into()))
}

fn ground_truth(cfg: &AppConfig) -> Result<Option<BTreeMap<CameraId, Pose>>> {
    let Some(path) = &cfg.ground_truth else {
        return Ok(None);
    };
    let poses = formats::read_poses(path)?;
    formats::rebase(&poses, cfg.reference)
        .map(Some)
        .ok_or_else(|| Error::format(path, format!("reference camera {} is missing", cfg.reference)))
}

/// Scores estimated poses against ground truth and, when annotations are
/// given, by reprojection error. Writes `metrics.csv`.
pub fn eval(cfg: &AppConfig, out: &Path) -> Result<MetricsReport> {
    let estimate = estimated_poses(cfg)?;
    let pose = match ground_truth(cfg)? {
        Some(gt) => {
            let per_camera = camera_pose_error(&estimate, &gt)?;
            let mean = mean_pose_error(&per_camera, Some(cfg.reference));
            Some((per_camera, mean))
        }
        None => None,
    };
    let rpe = match &cfg.annotated {
        Some(path) => {
            let annotated = formats::read_annotated(path)?;
            let intrinsics = formats::read_intrinsics(&cfg.intrinsics)?;
            let report = reprojection_error_metric(&estimate, &intrinsics, &annotated)?;
            let k = intrinsics
                .get(&cfg.reference)
                .ok_or_else(|| Error::Config(format!("no intrinsics for camera {}", cfg.reference)))?;
            let err = err_ratio(report.rpe, k.width, k.height);
            Some((report, err))
        }
        None => None,
    };
    if pose.is_none() && rpe.is_none() {
        return Err(Error::Config("eval needs `ground_truth` or `annotated`".into()));
    }
    let report = MetricsReport { pose, rpe };
    formats::write_metrics(&out.join("metrics.csv"), &report)?;
    Ok(report)
}

fn study_inputs(cfg: &AppConfig) -> Result<(CalibrationInput, BTreeMap<CameraId, Pose>)> {
    let input = load_input(cfg)?;
    let gt = ground_truth(cfg)?.ok_or_else(|| Error::Config("studies need `ground_truth`".into()))?;
    Ok((input, gt))
}

/// Runs `row` for every level on its own thread, keeping the input order.
fn parallel_rows<L: Sync>(levels: &[L], row: impl Fn(&L) -> StudyRow + Sync) -> Vec<StudyRow> {
    std::thread::scope(|s| {
        let row = &row;
        let handles: Vec<_> = levels.iter().map(|l| s.spawn(move || row(l))).collect();
        handles.into_iter().map(|h| h.join().expect("study worker panicked")).collect()
    })
}

/// Pose error against box noise; writes `study_noise.csv`.
pub fn run_study_noise(cfg: &AppConfig, out: &Path) -> Result<Vec<StudyRow>> {
    let (input, gt) = study_inputs(cfg)?;
    let rows = parallel_rows(&cfg.noise_levels, |&n| {
        study_noise(&input, &cfg.calibration, &gt, &[n], cfg.noise_seed).remove(0)
    });
    formats::write_study(&out.join("study_noise.csv"), &rows)?;
    Ok(rows)
}

/// Pose error against the number of correspondences; writes
/// `study_count.csv`.
pub fn run_study_count(cfg: &AppConfig, out: &Path) -> Result<Vec<StudyRow>> {
    let (input, gt) = study_inputs(cfg)?;
    let rows = parallel_rows(&cfg.counts, |&k| study_count(&input, &cfg.calibration, &gt, &[k]).remove(0));
    formats::write_study(&out.join("study_count.csv"), &rows)?;
    Ok(rows)
}

/// Follows people through the scene, reusing `result` when configured and
/// calibrating otherwise. Writes `trajectory_<id>.csv` and
/// `birdseye_<id>.csv` per person.
pub fn track(cfg: &AppConfig, out: &Path) -> Result<Vec<Trajectory>> {
    let input = load_input(cfg)?;
    let result = match &cfg.result {
        Some(p) => formats::read_result(p)?,
        None => calibrate_parallel(&input, &cfg.calibration)?,
    };
    let persons: BTreeSet<u32> = if cfg.persons.is_empty() {
        input.tracks[&input.reference].iter().map(|t| t.person_id).collect()
    } else {
        cfg.persons.iter().copied().collect()
    };
    let cloud: Vec<Vector3<f64>> = result.points.iter().map(|p| p.position).collect();
    let plane = GroundPlane::fit(&cloud);
    if plane.is_none() {
        log::warn!("too few reconstructed points for a ground plane; skipping bird's-eye views");
    }
    let mut out_trajectories = Vec::new();
    for person in persons {
        let trajectory = match track_person(&result, person, &input.tracks, &input.intrinsics) {
            Ok(t) => t,
            Err(e) if !cfg.persons.is_empty() => return Err(e.into()),
            Err(e) => {
                log::warn!("person {person}: {e}");
                continue;
            }
        };
        formats::write_trajectory(&out.join(format!("trajectory_{person}.csv")), &trajectory)?;
        if let Some(plane) = &plane {
            formats::write_birds_eye(&out.join(format!("birdseye_{person}.csv")), &trajectory, plane)?;
        }
        out_trajectories.push(trajectory);
    }
    Ok(out_trajectories)
}
