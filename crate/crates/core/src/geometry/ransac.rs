use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::essential::{sampson_distance, EightPoint, EssentialMatrix, EssentialSolver};
use super::{CameraIntrinsics, CorrespondenceSet, GeomError, PointPair};

/// RANSAC settings for essential matrix estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Inlier threshold on the Sampson distance, in pixels. It is divided
    /// by the mean focal length of the two cameras.
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold_px: 2.0,
            confidence: 0.999,
            max_iters: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutput {
    pub essential: EssentialMatrix,
    /// One flag per input pair; pairs whose undistortion failed are outliers.
    pub inliers: Vec<bool>,
    /// Normalized coordinates of each input pair, `None` when dropped.
    pub normalized: Vec<Option<PointPair>>,
    /// Threshold in normalized units actually used.
    pub threshold: f64,
    pub iterations: usize,
}

impl RansacOutput {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }

    /// Normalized inlier pairs in input order.
    pub fn inlier_pairs(&self) -> Vec<PointPair> {
        self.normalized
            .iter()
            .zip(&self.inliers)
            .filter_map(|(p, &inl)| if inl { *p } else { None })
            .collect()
    }
}

struct Score {
    count: usize,
    mean: f64,
    mask: Vec<bool>,
}

impl Score {
    fn better_than(&self, other: &Score) -> bool {
        self.count > other.count || (self.count == other.count && self.mean < other.mean)
    }
}

fn score(e: &EssentialMatrix, pairs: &[Option<PointPair>], threshold: f64) -> Score {
    let mut count = 0;
    let mut sum = 0.0;
    let mask = pairs
        .iter()
        .map(|p| match p {
            Some(p) => {
                let d = sampson_distance(e, p);
                let inlier = d < threshold;
                if inlier {
                    count += 1;
                    sum += d;
                }
                inlier
            }
            None => false,
        })
        .collect();
    Score {
        count,
        mean: if count > 0 { sum / count as f64 } else { f64::INFINITY },
        mask,
    }
}

fn required_iterations(inlier_ratio: f64, sample: usize, confidence: f64) -> usize {
    let w = inlier_ratio.powi(sample as i32);
    if w >= 1.0 {
        return 1;
    }
    if w <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Robust essential matrix for a pixel correspondence set, using the
/// eight-point solver for hypotheses.
pub fn ransac_essential(
    set: &CorrespondenceSet,
    k_a: &CameraIntrinsics,
    k_b: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<RansacOutput, GeomError> {
    ransac_essential_with(&EightPoint, set, k_a, k_b, cfg)
}

/// [`ransac_essential`] with a caller-chosen hypothesis solver.
///
/// The best hypothesis maximizes the inlier count, ties going to the lower
/// mean Sampson distance. The winner is refit on its inliers for as long as
/// that does not lose inliers; the returned mask is always the one of the
/// returned matrix.
pub fn ransac_essential_with<S: EssentialSolver>(
    solver: &S,
    set: &CorrespondenceSet,
    k_a: &CameraIntrinsics,
    k_b: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<RansacOutput, GeomError> {
    let (normalized, valid, threshold) = prepare(set, k_a, k_b, cfg, S::SAMPLE_SIZE)?;
    let (mut pool, iterations) = search(solver, &normalized, &valid, threshold, cfg, 1, 0);
    let (mut essential, mut best_score) = pool.pop().ok_or(GeomError::InsufficientInliers { found: 0, needed: 8 })?;
    if best_score.count < 8 {
        return Err(GeomError::InsufficientInliers {
            found: best_score.count,
            needed: 8,
        });
    }

    for _ in 0..5 {
        let inliers: Vec<PointPair> = normalized
            .iter()
            .zip(&best_score.mask)
            .filter_map(|(p, &m)| if m { *p } else { None })
            .collect();
        let Ok(refit) = crate::geometry::estimate_essential(&inliers) else {
            break;
        };
        let s = score(&refit, &normalized, threshold);
        if s.count < best_score.count {
            break;
        }
        let unchanged = s.mask == best_score.mask;
        essential = refit;
        best_score = s;
        if unchanged {
            break;
        }
    }

    Ok(RansacOutput {
        essential,
        inliers: best_score.mask,
        normalized,
        threshold,
        iterations,
    })
}

/// Normalized pairs (`None` where undistortion failed), indices of the
/// usable ones and the threshold in normalized units.
fn prepare(
    set: &CorrespondenceSet,
    k_a: &CameraIntrinsics,
    k_b: &CameraIntrinsics,
    cfg: &RansacConfig,
    sample_size: usize,
) -> Result<(Vec<Option<PointPair>>, Vec<usize>, f64), GeomError> {
    let normalized: Vec<Option<PointPair>> = set
        .pairs
        .iter()
        .map(|p| {
            if !p.is_finite() {
                return None;
            }
            let a = k_a.undistort_normalize(&p.a).ok()?;
            let b = k_b.undistort_normalize(&p.b).ok()?;
            Some(PointPair { a, b, ..*p })
        })
        .collect();
    let valid: Vec<usize> = normalized
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|_| i))
        .collect();
    if valid.len() < sample_size.max(8) {
        return Err(GeomError::NotEnoughPairs {
            needed: sample_size.max(8),
            got: valid.len(),
        });
    }
    let f_mean = 0.25 * (k_a.fx + k_a.fy + k_b.fx + k_b.fy);
    Ok((normalized, valid, cfg.threshold_px / f_mean))
}

fn same_model(a: &EssentialMatrix, b: &EssentialMatrix) -> bool {
    (a.matrix() - b.matrix()).amax().min((a.matrix() + b.matrix()).amax()) < 0.05
}

/// Hypothesize-and-verify loop keeping the `keep` best mutually distinct
/// models, best last. Runs at least `min_iters` iterations.
fn search<S: EssentialSolver>(
    solver: &S,
    normalized: &[Option<PointPair>],
    valid: &[usize],
    threshold: f64,
    cfg: &RansacConfig,
    keep: usize,
    min_iters: usize,
) -> (Vec<(EssentialMatrix, Score)>, usize) {
    let sample_size = S::SAMPLE_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Sorted worst first.
    let mut pool: Vec<(EssentialMatrix, Score)> = Vec::new();
    let mut needed = cfg.max_iters;
    let mut iterations = 0;
    let mut sample = Vec::with_capacity(sample_size);
    while iterations < needed.max(min_iters).min(cfg.max_iters) {
        iterations += 1;
        sample.clear();
        for idx in rand::seq::index::sample(&mut rng, valid.len(), sample_size).iter() {
            sample.push(normalized[valid[idx]].expect("valid index"));
        }
        let Ok(models) = solver.solve(&sample) else {
            continue;
        };
        for e in models {
            let s = score(&e, normalized, threshold);
            if pool.last().is_none_or(|(_, b)| s.better_than(b)) {
                let ratio = s.count as f64 / valid.len() as f64;
                needed = required_iterations(ratio, sample_size, cfg.confidence);
            }
            if let Some(i) = pool.iter().position(|(m, _)| same_model(m, &e)) {
                if !s.better_than(&pool[i].1) {
                    continue;
                }
                pool.remove(i);
            } else if pool.len() == keep && !s.better_than(&pool[0].1) {
                continue;
            }
            let at = pool.iter().position(|(_, b)| b.better_than(&s)).unwrap_or(pool.len());
            pool.insert(at, (e, s));
            if pool.len() > keep {
                pool.remove(0);
            }
        }
    }
    (pool, iterations)
}

/// Several competing RANSAC models, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RansacPool {
    pub hypotheses: Vec<(EssentialMatrix, usize)>,
    pub normalized: Vec<Option<PointPair>>,
    pub threshold: f64,
    pub iterations: usize,
}

/// RANSAC that reports the `keep` best mutually distinct models instead of
/// one. Near-degenerate scenes can give a wrong model about as much support
/// as the right one; the caller then decides with more information.
pub fn ransac_hypotheses<S: EssentialSolver>(
    solver: &S,
    set: &CorrespondenceSet,
    k_a: &CameraIntrinsics,
    k_b: &CameraIntrinsics,
    cfg: &RansacConfig,
    keep: usize,
    min_iters: usize,
) -> Result<RansacPool, GeomError> {
    let (normalized, valid, threshold) = prepare(set, k_a, k_b, cfg, S::SAMPLE_SIZE)?;
    let (pool, iterations) = search(solver, &normalized, &valid, threshold, cfg, keep.max(1), min_iters);
    let hypotheses: Vec<(EssentialMatrix, usize)> =
        pool.into_iter().rev().filter(|(_, s)| s.count >= 8).map(|(e, s)| (e, s.count)).collect();
    if hypotheses.is_empty() {
        return Err(GeomError::InsufficientInliers { found: 0, needed: 8 });
    }
    Ok(RansacPool {
        hypotheses,
        normalized,
        threshold,
        iterations,
    })
}
