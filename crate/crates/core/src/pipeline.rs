//! End-to-end calibration: association, correspondences, two-view
//! geometry and metric upgrade for every camera against the reference,
//! then point merging and a global bundle adjustment.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc::{match_across_cameras, AssocConfig, AssocError, Tracklet};
use crate::correspond::{extract_correspondences, CorrespondConfig, CorrespondError};
use crate::geometry::{
    count_in_front, decompose_essential, decompose_homography, estimate_homography, ransac_essential, ransac_hypotheses,
    sampson_distance, triangulate, EssentialMatrix, FourPointHomography, CameraId, CameraIntrinsics, CorrespondenceSet, GeomError,
    PointPair, Pose, RansacConfig,
};
use crate::optim::{
    global_ba, local_ba, merge_3d_points, LocalBaOutput, resolve_scale, GlobalObservation, LmConfig, LmReport, OptimError, PointKey,
    ScalePrior,
};
use crate::seed;

/// A segment of known length seen by two cameras, e.g. a person's
/// foot-to-head line or a court marking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrior {
    pub cam_a: CameraId,
    pub cam_b: CameraId,
    pub a_start: Vector2<f64>,
    pub a_end: Vector2<f64>,
    pub b_start: Vector2<f64>,
    pub b_end: Vector2<f64>,
    /// Meters.
    pub length: f64,
}

impl SegmentPrior {
    /// The same prior with the cameras swapped.
    pub fn flipped(&self) -> Self {
        Self {
            cam_a: self.cam_b,
            cam_b: self.cam_a,
            a_start: self.b_start,
            a_end: self.b_end,
            b_start: self.a_start,
            b_end: self.a_end,
            length: self.length,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationInput {
    /// Camera whose frame the result is expressed in.
    pub reference: CameraId,
    pub intrinsics: BTreeMap<CameraId, CameraIntrinsics>,
    pub tracks: BTreeMap<CameraId, Vec<Tracklet>>,
    pub priors: Vec<SegmentPrior>,
}

impl CalibrationInput {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !self.tracks.contains_key(&self.reference) {
            return Err(PipelineError::InvalidInput(format!(
                "reference camera {} has no tracks",
                self.reference
            )));
        }
        if self.tracks.len() < 2 {
            return Err(PipelineError::InvalidInput("at least two cameras are needed".into()));
        }
        for cam in self.tracks.keys() {
            if !self.intrinsics.contains_key(cam) {
                return Err(PipelineError::InvalidInput(format!("camera {cam} has no intrinsics")));
            }
        }
        for p in &self.priors {
            if !(p.length > 0.0) {
                return Err(PipelineError::InvalidInput("scale prior lengths must be positive".into()));
            }
        }
        Ok(())
    }

    /// Non-reference cameras, in id order.
    pub fn others(&self) -> Vec<CameraId> {
        self.tracks.keys().copied().filter(|&c| c != self.reference).collect()
    }
}

/// Every knob of the pipeline. The nested `seed` fields are ignored: the
/// seeds of all randomized stages derive from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub seed: u64,
    pub assoc: AssocConfig,
    pub correspond: CorrespondConfig,
    pub ransac: RansacConfig,
    pub local_ba: LmConfig,
    pub global_ba: LmConfig,
    /// Keep only the earliest `k` correspondences of every pair.
    pub max_correspondences: Option<usize>,
    /// A matched person whose correspondences pass the epipolar test less
    /// often than this is treated as a wrong association and dropped whole.
    pub min_track_support: f64,
    /// Largest RMS distance of a track from the common ground plane, in
    /// robust standard deviations, before it is taken for a wrong
    /// association and its pair is solved again without it; see
    /// [`off_plane_tracks`]. `None` for scenes that are not flat.
    pub ground_tolerance: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            assoc: AssocConfig::default(),
            correspond: CorrespondConfig::default(),
            ransac: RansacConfig::default(),
            local_ba: LmConfig::default(),
            global_ba: LmConfig::default(),
            max_correspondences: None,
            min_track_support: 0.5,
            ground_tolerance: Some(3.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Association,
    Correspondence,
    Essential,
    Decomposition,
    Triangulation,
    LocalBa,
    Scale,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Association => "association",
            Stage::Correspondence => "correspondence extraction",
            Stage::Essential => "essential matrix estimation",
            Stage::Decomposition => "pose decomposition",
            Stage::Triangulation => "triangulation",
            Stage::LocalBa => "two-view bundle adjustment",
            Stage::Scale => "scale recovery",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PairError {
    #[error(transparent)]
    Assoc(#[from] AssocError),
    #[error(transparent)]
    Correspond(#[from] CorrespondError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("no scale prior is visible to both cameras")]
    NoScalePrior,
    #[error("only {0} correspondences survived triangulation")]
    TooFewPoints(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("cameras ({cam_a}, {cam_b}) failed during {stage}: {error}")]
pub struct PairFailure {
    pub cam_a: CameraId,
    pub cam_b: CameraId,
    pub stage: Stage,
    pub error: PairError,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{} camera pair(s) failed; first: {}", .0.len(), .0[0])]
    Pairs(Vec<PairFailure>),
    #[error("global bundle adjustment failed: {0}")]
    Global(OptimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub correspondences: usize,
    pub ransac_inliers: usize,
    pub ransac_iterations: usize,
    /// Inliers that also triangulated and entered bundle adjustment.
    pub used: usize,
    pub local_rms_before: f64,
    pub local_rms_after: f64,
    pub local_report: LmReport,
    pub scale: f64,
    pub priors_used: usize,
}

/// Outcome of the two-view stage for the reference and one other camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSolution {
    pub cam_a: CameraId,
    pub cam_b: CameraId,
    /// `(track id in cam_a, track id in cam_b)` per associated person.
    pub matches: Vec<(u32, u32)>,
    /// Pixel correspondences fed to the geometry.
    pub correspondences: Vec<PointPair>,
    /// Which correspondences were used for the pose.
    pub inliers: Vec<bool>,
    /// Metric pose of `cam_b` relative to `cam_a`.
    pub pose: Pose,
    pub points: Vec<MergedPoint>,
    /// Reference tracks left out because the other pairs contradicted them.
    pub rejected_tracks: Vec<u32>,
    pub stats: PairStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergedPoint {
    pub key: PointKey,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalStats {
    pub observations: usize,
    pub points: usize,
    pub rms_before: f64,
    pub rms_after: f64,
    /// Factor applied after the adjustment so that the reconstructed
    /// priors add up to their known total length.
    pub scale_correction: f64,
    pub report: LmReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub reference: CameraId,
    /// Metric poses against the reference camera, which sits at the identity.
    pub poses: BTreeMap<CameraId, Pose>,
    pub points: Vec<MergedPoint>,
    pub pairs: Vec<PairSolution>,
    pub global: GlobalStats,
    pub config: CalibrationConfig,
    pub seed: u64,
}

impl CalibrationResult {
    pub fn points_map(&self) -> BTreeMap<PointKey, Vector3<f64>> {
        self.points.iter().map(|p| (p.key, p.position)).collect()
    }

    /// Track id under which `person` (a reference-camera track id) is
    /// known in `camera`, according to the association.
    pub fn track_in(&self, camera: CameraId, person: u32) -> Option<u32> {
        if camera == self.reference {
            return Some(person);
        }
        self.pairs
            .iter()
            .find(|p| p.cam_b == camera)?
            .matches
            .iter()
            .find(|m| m.0 == person)
            .map(|m| m.1)
    }
}

fn fail(cam_a: CameraId, cam_b: CameraId, stage: Stage) -> impl Fn(PairError) -> PairFailure {
    move |error| PairFailure {
        cam_a,
        cam_b,
        stage,
        error,
    }
}

/// Keeps the `k` earliest correspondences (by frame, then person) and
/// restores the person-major order.
fn keep_earliest(pairs: &mut Vec<PointPair>, k: usize) {
    if pairs.len() <= k {
        return;
    }
    pairs.sort_by_key(|p| (p.frame, p.person_id));
    pairs.truncate(k);
    pairs.sort_by_key(|p| (p.person_id, p.frame));
}

fn normalize_pair(ka: &CameraIntrinsics, kb: &CameraIntrinsics, a: &Vector2<f64>, b: &Vector2<f64>) -> Option<PointPair> {
    Some(PointPair::bare(ka.undistort_normalize(a).ok()?, kb.undistort_normalize(b).ok()?))
}

/// Rounds of the ground-plane check in [`calibrate_with`].
const MAX_RECHECKS: usize = 3;

/// Competing plane-induced models refined per camera pair.
const PLANAR_HYPOTHESES: usize = 6;
const PLANAR_MIN_ITERS: usize = 200;

/// A pose hypothesis after two-view refinement.
struct Refined {
    used: Vec<bool>,
    used_set: CorrespondenceSet,
    local: LocalBaOutput,
    /// [`msac`] over all correspondences.
    score: f64,
}

/// Correspondences consistent with `pose`: within `threshold` of the
/// epipolar constraint, and belonging to a person for whom at least
/// `support` of all correspondences are.
fn consensus(normalized: &[Option<PointPair>], pose: &Pose, threshold: f64, support: f64) -> Vec<bool> {
    let e = EssentialMatrix::from_pose(pose);
    let mut mask: Vec<bool> = normalized
        .iter()
        .map(|n| n.is_some_and(|n| sampson_distance(&e, &n) < threshold))
        .collect();
    let mut votes: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (n, &m) in normalized.iter().zip(&mask) {
        if let Some(n) = n {
            let v = votes.entry(n.person_id).or_default();
            v.0 += m as usize;
            v.1 += 1;
        }
    }
    for (n, m) in normalized.iter().zip(mask.iter_mut()) {
        if let Some(n) = n {
            let (yes, all) = votes[&n.person_id];
            if (yes as f64) < support * all as f64 {
                *m = false;
            }
        }
    }
    mask
}

/// Triangulates the consensus set of `pose` and runs two-view bundle
/// adjustment on it.
fn refine(
    set: &CorrespondenceSet,
    normalized: &[Option<PointPair>],
    pose: &Pose,
    threshold: f64,
    support: f64,
    ka: &CameraIntrinsics,
    kb: &CameraIntrinsics,
    cfg: &LmConfig,
) -> Option<Refined> {
    let mask = consensus(normalized, pose, threshold, support);
    let mut used = alloc::vec![false; set.len()];
    let mut pairs = Vec::new();
    let mut points = Vec::new();
    for (i, n) in normalized.iter().enumerate() {
        let Some(n) = n.filter(|_| mask[i]) else { continue };
        if let Ok(x) = triangulate(&n, pose) {
            used[i] = true;
            pairs.push(set.pairs[i]);
            points.push(x);
        }
    }
    if pairs.len() < 8 {
        return None;
    }
    let used_set = CorrespondenceSet::new(set.cam_a, set.cam_b, pairs).ok()?;
    let local = match local_ba(&used_set, pose, &points, ka, kb, cfg) {
        Ok(out) => out,
        Err(OptimError::NonConvergence { best, report, .. }) => {
            log::warn!("two-view bundle adjustment for cameras ({}, {}) stopped early", set.cam_a, set.cam_b);
            let mut p = best.cameras[1].pose;
            p.translation = p.translation.normalize();
            p.metric = false;
            LocalBaOutput {
                pose: p,
                points: best.points.clone(),
                report,
            }
        }
        Err(_) => return None,
    };
    let score = msac(normalized.iter().flatten(), &local.pose, threshold);
    Some(Refined {
        used,
        used_set,
        local,
        score,
    })
}

/// Truncated squared Sampson error; a point that would triangulate behind
/// either camera counts as an outlier however close it is to its
/// epipolar line.
fn msac<'a>(pairs: impl Iterator<Item = &'a PointPair>, pose: &Pose, threshold: f64) -> f64 {
    let e = EssentialMatrix::from_pose(pose);
    let t2 = threshold * threshold;
    pairs
        .map(|n| {
            if matches!(triangulate(n, pose), Err(GeomError::BehindCamera)) {
                t2
            } else {
                sampson_distance(&e, n).powi(2).min(t2)
            }
        })
        .sum()
}

/// Segment priors between `ca` and `cb`, oriented from `ca` to `cb`.
fn pair_priors(input: &CalibrationInput, ca: CameraId, cb: CameraId) -> impl Iterator<Item = SegmentPrior> + '_ {
    input.priors.iter().filter_map(move |p| {
        if (p.cam_a, p.cam_b) == (ca, cb) {
            Some(*p)
        } else if (p.cam_a, p.cam_b) == (cb, ca) {
            Some(p.flipped())
        } else {
            None
        }
    })
}

/// Pose of `camera` relative to the reference, with its own metric scale.
pub fn solve_pair(input: &CalibrationInput, cfg: &CalibrationConfig, camera: CameraId) -> Result<PairSolution, PairFailure> {
    solve_pair_excluding(input, cfg, camera, &BTreeSet::new())
}

/// [`solve_pair`] ignoring the correspondences of the given reference
/// tracks, e.g. associations contradicted by the other camera pairs.
pub fn solve_pair_excluding(
    input: &CalibrationInput,
    cfg: &CalibrationConfig,
    camera: CameraId,
    excluded: &BTreeSet<u32>,
) -> Result<PairSolution, PairFailure> {
    let (ra, cb) = (input.reference, camera);
    let ta = &input.tracks[&ra];
    let tb = input.tracks.get(&cb).map(Vec::as_slice).unwrap_or(&[]);
    let (ka, kb) = (&input.intrinsics[&ra], &input.intrinsics[&cb]);

    let assoc_cfg = AssocConfig {
        seed: seed::mix(cfg.seed, 1),
        ..cfg.assoc
    };
    let assignment = match_across_cameras(ta, tb, &assoc_cfg).map_err(|e| fail(ra, cb, Stage::Association)(e.into()))?;
    let matches = assignment
        .matches
        .iter()
        .map(|&(i, j)| (ta[i].person_id, tb[j].person_id))
        .collect();

    let mut set = extract_correspondences(&assignment, ta, tb, ra, cb, &cfg.correspond)
        .map_err(|e| fail(ra, cb, Stage::Correspondence)(e.into()))?;
    if let Some(k) = cfg.max_correspondences {
        keep_earliest(&mut set.pairs, k);
    }

    let ransac_cfg = RansacConfig {
        seed: seed::mix(cfg.seed, 0x1000 + cb as u64),
        ..cfg.ransac
    };
    let f_mean = 0.25 * (ka.fx + ka.fy + kb.fx + kb.fy);
    let threshold = cfg.ransac.threshold_px / f_mean;
    let normalized: Vec<Option<PointPair>> = set
        .pairs
        .iter()
        .map(|p| {
            if excluded.contains(&p.person_id) || !p.is_finite() {
                return None;
            }
            normalize_pair(ka, kb, &p.a, &p.b).map(|n| PointPair { a: n.a, b: n.b, ..*p })
        })
        .collect();
    let work = CorrespondenceSet::new(
        ra,
        cb,
        set.pairs
            .iter()
            .filter(|p| !excluded.contains(&p.person_id))
            .copied()
            .collect(),
    )
    .map_err(|e| fail(ra, cb, Stage::Correspondence)(e.into()))?;

    // Body centers lie close to one plane, where the eight-point solver is
    // ill-conditioned and the plane-induced motion is two-fold ambiguous.
    // Both hypothesis generators contribute candidates; each is refined and
    // the one explaining the data best wins.
    let mut candidates: Vec<Pose> = Vec::new();
    let mut push_candidate = |pose: Pose| {
        let dup = candidates.iter().any(|c| {
            crate::metrics::rotation_angle(&c.rotation, &pose.rotation) < 1e-3
                && (c.translation - pose.translation).norm() < 1e-3
        });
        if !dup {
            candidates.push(pose);
        }
    };
    let mut any_model = false;
    let mut iterations = 0;
    let mut last_err = None;
    match ransac_essential(&work, ka, kb, &ransac_cfg) {
        Ok(r) => {
            iterations += r.iterations;
            match decompose_essential(&r.essential, &r.inlier_pairs()) {
                Ok(p) => push_candidate(p),
                Err(e) => last_err = Some(fail(ra, cb, Stage::Decomposition)(e.into())),
            }
            any_model = true;
        }
        Err(e) => last_err = Some(fail(ra, cb, Stage::Essential)(e.into())),
    }
    match ransac_hypotheses(&FourPointHomography, &work, ka, kb, &ransac_cfg, PLANAR_HYPOTHESES, PLANAR_MIN_ITERS) {
        Ok(r) => {
            iterations += r.iterations;
            for (e, _) in &r.hypotheses {
                let inl: Vec<PointPair> = r
                    .normalized
                    .iter()
                    .flatten()
                    .filter(|p| sampson_distance(e, p) < r.threshold)
                    .copied()
                    .collect();
                if let Ok(p) = decompose_essential(e, &inl) {
                    push_candidate(p);
                }
                if let Ok(h) = estimate_homography(&inl) {
                    for (p, _) in decompose_homography(&h).unwrap_or_default() {
                        if 2 * count_in_front(&p, &inl) > inl.len() {
                            push_candidate(p);
                        }
                    }
                }
            }
            any_model = true;
        }
        Err(e) => {
            last_err.get_or_insert(fail(ra, cb, Stage::Essential)(e.into()));
        }
    }
    if !any_model {
        return Err(last_err.expect("a failure was recorded"));
    }
    if candidates.is_empty() {
        return Err(last_err.unwrap_or(fail(ra, cb, Stage::Decomposition)(PairError::TooFewPoints(0))));
    }

    // Segment annotations are exact correspondences off the body-center
    // plane: they separate candidates the plane cannot tell apart.
    let anchors: Vec<PointPair> = pair_priors(input, ra, cb)
        .flat_map(|p| [(p.a_start, p.b_start), (p.a_end, p.b_end)])
        .filter_map(|(a, b)| normalize_pair(ka, kb, &a, &b))
        .collect();

    let mut best: Option<Refined> = None;
    for c in &candidates {
        let Some(mut r) = refine(&set, &normalized, c, threshold, cfg.min_track_support, ka, kb, &cfg.local_ba) else {
            continue;
        };
        // One more round when refinement changed the consensus set.
        let mask = consensus(&normalized, &r.local.pose, threshold, cfg.min_track_support);
        if mask != r.used {
            if let Some(again) = refine(&set, &normalized, &r.local.pose, threshold, cfg.min_track_support, ka, kb, &cfg.local_ba) {
                r = again;
            }
        }
        r.score += msac(anchors.iter(), &r.local.pose, threshold);
        log::debug!("cameras ({ra}, {cb}): candidate score {:.4e}", r.score);
        if best.as_ref().is_none_or(|b| r.score < b.score) {
            best = Some(r);
        }
    }
    let Some(Refined {
        used, used_set, local, ..
    }) = best
    else {
        return Err(fail(ra, cb, Stage::Triangulation)(PairError::TooFewPoints(0)));
    };
    let ransac_inliers = used.iter().filter(|&&u| u).count();
    let n_corr = set.len();
    let n_obs = 2 * used_set.len();
    let rms = |cost: f64| (2.0 * cost / n_obs as f64).sqrt();

    // Scale: triangulate every prior visible to this pair with the refined
    // up-to-scale pose and match their total length.
    let mut all_points = local.points.clone();
    let mut scale_priors = Vec::new();
    for p in pair_priors(input, ra, cb) {
        let ends = [(p.a_start, p.b_start), (p.a_end, p.b_end)].map(|(a, b)| {
            normalize_pair(ka, kb, &a, &b).and_then(|n| triangulate(&n, &local.pose).ok())
        });
        if let [Some(s), Some(e)] = ends {
            let i = all_points.len();
            all_points.push(s);
            all_points.push(e);
            scale_priors.push(ScalePrior {
                point_a: i,
                point_b: i + 1,
                length: p.length,
            });
        }
    }
    if scale_priors.is_empty() {
        return Err(fail(ra, cb, Stage::Scale)(PairError::NoScalePrior));
    }
    let (metric_pose, scaled, s) =
        resolve_scale(&local.pose, &all_points, &scale_priors).map_err(|e| fail(ra, cb, Stage::Scale)(e.into()))?;

    let points = used_set
        .pairs
        .iter()
        .zip(&scaled)
        .map(|(p, x)| MergedPoint {
            key: PointKey::new(p.person_id, p.frame),
            position: *x,
        })
        .collect();

    Ok(PairSolution {
        cam_a: ra,
        cam_b: cb,
        matches,
        correspondences: set.pairs,
        inliers: used,
        pose: metric_pose,
        points,
        rejected_tracks: excluded.iter().copied().collect(),
        stats: PairStats {
            correspondences: n_corr,
            ransac_inliers,
            ransac_iterations: iterations,
            used: used_set.len(),
            local_rms_before: rms(local.report.initial_cost()),
            local_rms_after: rms(local.report.final_cost()),
            local_report: local.report.clone(),
            scale: s,
            priors_used: scale_priors.len(),
        },
    })
}

/// Per-pair log scale offsets, zero on average.
///
/// Every pair contains the reference camera, so a pair whose metric scale
/// is off by a factor scales its points about the origin by that factor.
/// The median log ratio of depths over shared points measures the offset
/// between two pairs; the offsets are fitted to those in the
/// least-squares sense.
pub fn pair_log_scales(pairs: &[PairSolution]) -> Vec<f64> {
    let n = pairs.len();
    if n < 2 {
        return alloc::vec![0.0; n];
    }
    let maps: Vec<BTreeMap<PointKey, Vector3<f64>>> = pairs
        .iter()
        .map(|p| p.points.iter().map(|m| (m.key, m.position)).collect())
        .collect();
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let mut logs: Vec<f64> = maps[i]
                .iter()
                .filter_map(|(k, x)| maps[j].get(k).map(|y| (x.norm() / y.norm()).ln()))
                .filter(|v| v.is_finite())
                .collect();
            if logs.len() >= 5 {
                rows.push((i, j, median(&mut logs)));
            }
        }
    }
    if rows.is_empty() {
        return alloc::vec![0.0; n];
    }
    let mut a = DMatrix::<f64>::zeros(rows.len() + 1, n);
    let mut b = DVector::<f64>::zeros(rows.len() + 1);
    for (r, &(i, j, d)) in rows.iter().enumerate() {
        a[(r, i)] = 1.0;
        a[(r, j)] = -1.0;
        b[r] = d;
    }
    a.row_mut(rows.len()).fill(1.0);
    match a.svd(true, true).solve(&b, 1e-12) {
        Ok(x) => x.iter().copied().collect(),
        Err(_) => alloc::vec![0.0; n],
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Rescales every pair onto the common scale of [`pair_log_scales`].
pub fn harmonize_scales(pairs: &mut [PairSolution]) {
    let logs = pair_log_scales(pairs);
    for (p, l) in pairs.iter_mut().zip(logs) {
        let f = (-l).exp();
        p.pose = p.pose.with_scale(f);
        for m in &mut p.points {
            m.position *= f;
        }
    }
}

/// Reference tracks, per camera, that do not walk on the common ground.
///
/// Body centers of people walking on flat ground stay close to one plane,
/// while a wrong association triangulates to a ghost path that leaves it.
/// The used correspondences of every pair are triangulated with the
/// calibrated poses and a plane is fitted to all of them (refitted twice
/// without the tracks it rejects). A track whose RMS offset from the plane
/// exceeds `tolerance` robust standard deviations (1.4826 · MAD) of all
/// offsets is rejected. When more than half of a pair's tracks would go,
/// the pair itself is suspect and nothing is dropped.
pub fn off_plane_tracks(
    input: &CalibrationInput,
    result: &CalibrationResult,
    tolerance: f64,
) -> BTreeMap<CameraId, BTreeSet<u32>> {
    let mut tracks: BTreeMap<(CameraId, u32), Vec<Vector3<f64>>> = BTreeMap::new();
    for p in &result.pairs {
        let (Some(pa), Some(pb)) = (result.poses.get(&p.cam_a), result.poses.get(&p.cam_b)) else {
            continue;
        };
        let (ka, kb) = (&input.intrinsics[&p.cam_a], &input.intrinsics[&p.cam_b]);
        let rel = pb.relative_to(pa);
        let back = pa.inverse();
        for (c, _) in p.correspondences.iter().zip(&p.inliers).filter(|(_, &u)| u) {
            if let Some(x) = normalize_pair(ka, kb, &c.a, &c.b).and_then(|n| triangulate(&n, &rel).ok()) {
                tracks.entry((p.cam_b, c.person_id)).or_default().push(back.transform(&x));
            }
        }
    }
    let mut rejected: BTreeSet<(CameraId, u32)> = BTreeSet::new();
    for _ in 0..3 {
        let kept = tracks.iter().filter(|(k, _)| !rejected.contains(k)).flat_map(|(_, v)| v.iter());
        let Some((center, normal)) = fit_plane(kept.clone()) else {
            return BTreeMap::new();
        };
        let mut offsets: Vec<f64> = kept.map(|x| (x - center).dot(&normal)).collect();
        let mid = median(&mut offsets);
        let mut dev: Vec<f64> = offsets.iter().map(|x| (x - mid).abs()).collect();
        let sigma = 1.4826 * median(&mut dev);
        rejected = tracks
            .iter()
            .filter(|(_, v)| {
                let ms = v.iter().map(|x| (x - center).dot(&normal).powi(2)).sum::<f64>() / v.len() as f64;
                ms.sqrt() > tolerance * sigma
            })
            .map(|(k, _)| *k)
            .collect();
    }
    let mut out: BTreeMap<CameraId, BTreeSet<u32>> = BTreeMap::new();
    for (cam, person) in rejected {
        out.entry(cam).or_default().insert(person);
    }
    out.retain(|cam, r| 2 * r.len() <= tracks.keys().filter(|k| k.0 == *cam).count());
    out
}

/// Centroid and unit normal of the least-squares plane.
fn fit_plane<'a>(points: impl Iterator<Item = &'a Vector3<f64>> + Clone) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let n = points.clone().count();
    if n < 3 {
        return None;
    }
    let center = points.clone().fold(Vector3::zeros(), |a, x| a + x) / n as f64;
    let cov = points.fold(Matrix3::zeros(), |a, x| a + (x - center) * (x - center).transpose());
    let eig = cov.symmetric_eigen();
    let normal = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
    Some((center, normal))
}

/// Scale `Σ L / Σ d` over every prior, its endpoints
/// triangulated with the given poses. `None` without a usable prior.
pub fn prior_scale(input: &CalibrationInput, poses: &BTreeMap<CameraId, Pose>) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for p in &input.priors {
        let (Some(pa), Some(pb)) = (poses.get(&p.cam_a), poses.get(&p.cam_b)) else {
            continue;
        };
        let (Some(ka), Some(kb)) = (input.intrinsics.get(&p.cam_a), input.intrinsics.get(&p.cam_b)) else {
            continue;
        };
        let rel = pb.relative_to(pa);
        let ends = [(p.a_start, p.b_start), (p.a_end, p.b_end)]
            .map(|(a, b)| normalize_pair(ka, kb, &a, &b).and_then(|n| triangulate(&n, &rel).ok()));
        if let [Some(s), Some(e)] = ends {
            let d = (s - e).norm();
            num += p.length;
            den += d;
        }
    }
    (den > 0.0 && num > 0.0).then(|| num / den)
}

/// Merges the pairwise reconstructions and refines everything jointly.
pub fn finish(
    input: &CalibrationInput,
    cfg: &CalibrationConfig,
    pairs: Vec<PairSolution>,
) -> Result<CalibrationResult, PipelineError> {
    let reference = input.reference;
    let mut pairs = pairs;
    harmonize_scales(&mut pairs);
    let mut poses = BTreeMap::from([(reference, Pose::identity())]);
    for p in &pairs {
        poses.insert(p.cam_b, p.pose);
    }
    let per_pair: Vec<BTreeMap<PointKey, Vector3<f64>>> = pairs
        .iter()
        .map(|p| p.points.iter().map(|m| (m.key, m.position)).collect())
        .collect();
    let mut merged = merge_3d_points(&per_pair);

    let mut observations = Vec::new();
    let mut seen_in_reference = BTreeSet::new();
    for p in &pairs {
        for (pp, _) in p.correspondences.iter().zip(&p.inliers).filter(|(_, &u)| u) {
            let key = PointKey::new(pp.person_id, pp.frame);
            if seen_in_reference.insert(key) {
                observations.push(GlobalObservation {
                    camera: reference,
                    key,
                    pixel: pp.a,
                    weight: pp.weight,
                });
            }
            observations.push(GlobalObservation {
                camera: p.cam_b,
                key,
                pixel: pp.b,
                weight: pp.weight,
            });
        }
    }

    // A point averaged from pairs that disagree (typically one pair holding
    // a wrong association) can land behind a camera that observes it. Such
    // observations carry no usable information; drop them, and any point
    // left with a single view.
    let before = observations.len();
    observations.retain(|o| {
        let x = &merged[&o.key];
        poses[&o.camera].transform(x).z > 1e-6
    });
    let mut views: BTreeMap<PointKey, usize> = BTreeMap::new();
    for o in &observations {
        *views.entry(o.key).or_default() += 1;
    }
    observations.retain(|o| views[&o.key] >= 2);
    merged.retain(|k, _| views.get(k).is_some_and(|&n| n >= 2));
    if observations.len() < before {
        log::warn!(
            "dropped {} observations behind their camera or without a second view",
            before - observations.len()
        );
    }

    let out = global_ba(reference, &poses, &input.intrinsics, &merged, &observations, &cfg.global_ba)
        .map_err(PipelineError::Global)?;
    // The gauge held one baseline at its pairwise length. With the network
    // adjusted, every prior between any two cameras refines the scale; a
    // similarity does not change the reprojection cost.
    let rescale = prior_scale(input, &out.poses).unwrap_or(1.0);
    let n_obs = observations.len().max(1) as f64;
    let rms = |cost: f64| (2.0 * cost / (2.0 * n_obs)).sqrt();
    let global = GlobalStats {
        observations: observations.len(),
        points: merged.len(),
        rms_before: rms(out.report.initial_cost()),
        rms_after: rms(out.report.final_cost()),
        scale_correction: rescale,
        report: out.report,
    };
    Ok(CalibrationResult {
        reference,
        poses: out.poses.iter().map(|(id, p)| (*id, p.with_scale(rescale))).collect(),
        points: out
            .points
            .into_iter()
            .map(|(key, position)| MergedPoint {
                key,
                position: position * rescale,
            })
            .collect(),
        pairs,
        global,
        config: cfg.clone(),
        seed: cfg.seed,
    })
}

/// Runs the whole pipeline, one camera pair after the other.
pub fn calibrate(input: &CalibrationInput, cfg: &CalibrationConfig) -> Result<CalibrationResult, PipelineError> {
    calibrate_with(input, cfg, |jobs| {
        jobs.iter()
            .map(|(cam, excluded)| solve_pair_excluding(input, cfg, *cam, excluded))
            .collect()
    })
}

/// [`calibrate`] with a caller-supplied executor for the pairwise stage,
/// which receives `(camera, excluded tracks)` jobs and must return one
/// result per job, in order. Pairs are solved once, checked with
/// [`off_plane_tracks`], and the affected ones solved again without the
/// rejected tracks.
pub fn calibrate_with<F>(input: &CalibrationInput, cfg: &CalibrationConfig, solve: F) -> Result<CalibrationResult, PipelineError>
where
    F: Fn(&[(CameraId, BTreeSet<u32>)]) -> Vec<Result<PairSolution, PairFailure>>,
{
    input.validate()?;
    let jobs: Vec<(CameraId, BTreeSet<u32>)> = input.others().into_iter().map(|c| (c, BTreeSet::new())).collect();
    let mut solutions = collect_pairs(solve(&jobs))?;
    let mut result = finish(input, cfg, solutions.clone())?;
    let Some(tolerance) = cfg.ground_tolerance else {
        return Ok(result);
    };
    let mut excluded: BTreeMap<CameraId, BTreeSet<u32>> = BTreeMap::new();
    for _ in 0..MAX_RECHECKS {
        let mut again = Vec::new();
        for (cam, persons) in off_plane_tracks(input, &result, tolerance) {
            let set = excluded.entry(cam).or_default();
            let before = set.len();
            set.extend(persons);
            if set.len() > before {
                again.push((cam, set.clone()));
            }
        }
        if again.is_empty() {
            break;
        }
        log::info!("solving {} pair(s) again without off-ground tracks", again.len());
        for (job, solved) in again.iter().zip(solve(&again)) {
            match solved {
                Ok(s) => {
                    if let Some(slot) = solutions.iter_mut().find(|p| p.cam_b == job.0) {
                        *slot = s;
                    }
                }
                Err(f) => log::warn!("keeping the previous solution: {f}"),
            }
        }
        result = finish(input, cfg, solutions.clone())?;
    }
    Ok(result)
}

fn collect_pairs(results: Vec<Result<PairSolution, PairFailure>>) -> Result<Vec<PairSolution>, PipelineError> {
    let mut solutions = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => solutions.push(s),
            Err(f) => failures.push(f),
        }
    }
    if failures.is_empty() {
        Ok(solutions)
    } else {
        Err(PipelineError::Pairs(failures))
    }
}
