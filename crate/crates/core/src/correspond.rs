//! Turning matched tracklets into point correspondences.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc::{Assignment, BBox, Tracklet};
use crate::geometry::{CameraId, CorrespondenceSet, GeomError, PointPair};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrespondError {
    #[error("no correspondences between cameras {0} and {1}")]
    EmptyCorrespondences(CameraId, CameraId),
    #[error("match ({0}, {1}) refers to a missing tracklet")]
    BadMatch(usize, usize),
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrespondConfig {
    /// Only frames that are multiples of this are used.
    pub frame_stride: u32,
    /// A sample is skipped when neither endpoint moved at least this far
    /// (pixels) since the last kept sample of the same person.
    pub min_motion_px: f64,
}

impl Default for CorrespondConfig {
    fn default() -> Self {
        Self {
            frame_stride: 25,
            min_motion_px: 2.0,
        }
    }
}

/// Box center, the body-mass proxy.
pub fn bbox_center(b: &BBox) -> Vector2<f64> {
    b.center()
}

/// Builds center-to-center pairs for every matched person at the frames
/// both cameras saw them. Pairs are ordered by person, then frame; the
/// person id is taken from the `a` side.
pub fn extract_correspondences(
    assignment: &Assignment,
    tracklets_a: &[Tracklet],
    tracklets_b: &[Tracklet],
    cam_a: CameraId,
    cam_b: CameraId,
    cfg: &CorrespondConfig,
) -> Result<CorrespondenceSet, CorrespondError> {
    let stride = cfg.frame_stride.max(1);
    let mut by_person: BTreeMap<u32, Vec<PointPair>> = BTreeMap::new();
    for &(i, j) in &assignment.matches {
        let (ta, tb) = match (tracklets_a.get(i), tracklets_b.get(j)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(CorrespondError::BadMatch(i, j)),
        };
        let out = by_person.entry(ta.person_id).or_default();
        let mut last: Option<(Vector2<f64>, Vector2<f64>)> = None;
        for ba in ta.boxes.iter().filter(|b| b.frame % stride == 0) {
            let Some(bb) = tb.at_frame(ba.frame) else {
                continue;
            };
            let (ca, cb) = (bbox_center(ba), bbox_center(bb));
            if let Some((la, lb)) = last {
                if (ca - la).norm() < cfg.min_motion_px && (cb - lb).norm() < cfg.min_motion_px {
                    continue;
                }
            }
            last = Some((ca, cb));
            out.push(PointPair::new(ca, cb, ba.frame, ta.person_id));
        }
    }
    let mut pairs: Vec<PointPair> = by_person.into_values().flatten().collect();
    pairs.sort_by_key(|p| (p.person_id, p.frame));
    if pairs.is_empty() {
        return Err(CorrespondError::EmptyCorrespondences(cam_a, cam_b));
    }
    Ok(CorrespondenceSet::new(cam_a, cam_b, pairs)?)
}

/// Moves every corner coordinate by an independent uniform draw from
/// `[-n, n]`. Corners that end up crossed are swapped back.
///
/// Exactly four draws are taken from `rng` whatever `n` is, so runs at
/// different levels from the same seed see the same noise pattern scaled.
pub fn inject_bbox_noise<R: Rng + ?Sized>(b: &BBox, n: f64, rng: &mut R) -> BBox {
    let mut jitter = |v: f64| v + n * (2.0 * rng.random::<f64>() - 1.0);
    let (mut u0, mut v0, mut u1, mut v1) = (jitter(b.u_tl), jitter(b.v_tl), jitter(b.u_br), jitter(b.v_br));
    if u0 > u1 {
        core::mem::swap(&mut u0, &mut u1);
    }
    if v0 > v1 {
        core::mem::swap(&mut v0, &mut v1);
    }
    // Keep the box non-empty; only reachable with ties at machine precision.
    if u0 == u1 {
        u1 = u0 + f64::EPSILON * (1.0 + u0.abs());
    }
    if v0 == v1 {
        v1 = v0 + f64::EPSILON * (1.0 + v0.abs());
    }
    BBox {
        u_tl: u0,
        v_tl: v0,
        u_br: u1,
        v_br: v1,
        ..*b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::hungarian_assign;
    use alloc::vec;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn walking(camera: u32, person: u32, frames: u32, speed: f64) -> Tracklet {
        let boxes = (0..frames)
            .map(|f| {
                let u = 100.0 + speed * f as f64;
                BBox::new([u, 50.0, u + 40.0, 150.0], f, person, camera).unwrap()
            })
            .collect();
        Tracklet::new(camera, person, boxes).unwrap()
    }

    #[test]
    fn counts_follow_stride_and_thinning() {
        let a = vec![walking(0, 0, 500, 1.0), walking(0, 1, 500, 0.0)];
        let b = vec![walking(1, 7, 500, 0.5), walking(1, 8, 500, 0.0)];
        let assignment = hungarian_assign(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), None);
        let set = extract_correspondences(&assignment, &a, &b, 0, 1, &CorrespondConfig::default()).unwrap();
        // The walker gives one pair every 25 frames, the statue only one.
        assert_eq!(set.len(), 20 + 1);
        assert!(set.pairs.windows(2).all(|w| (w[0].person_id, w[0].frame) < (w[1].person_id, w[1].frame)));
        assert_eq!(set.pairs[0].person_id, 0);
        assert_eq!(set.pairs[0].a, Vector2::new(120.0, 100.0));
    }

    #[test]
    fn disjoint_frames_give_an_error() {
        let a = vec![walking(0, 0, 10, 1.0)];
        let mut b = walking(1, 0, 40, 1.0);
        b.boxes.retain(|x| x.frame >= 20 && x.frame % 25 != 0);
        b.embeddings.clear();
        let assignment = hungarian_assign(&DMatrix::zeros(1, 1), None);
        let err = extract_correspondences(&assignment, &a, &[b], 0, 1, &CorrespondConfig::default());
        assert_eq!(err.unwrap_err(), CorrespondError::EmptyCorrespondences(0, 1));
    }

    #[test]
    fn zero_noise_is_identity() {
        let b = BBox::new([1.0, 2.0, 3.0, 4.0], 0, 0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(inject_bbox_noise(&b, 0.0, &mut rng), b);
    }

    #[test]
    fn noise_statistics_and_bounds() {
        let b = BBox::new([100.0, 100.0, 200.0, 300.0], 0, 0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 5.0;
        let draws = 100_000;
        let mut mean = [0.0; 4];
        for _ in 0..draws {
            let nb = inject_bbox_noise(&b, n, &mut rng);
            for (m, (x, y)) in mean.iter_mut().zip(nb.corners().iter().zip(b.corners())) {
                assert!((x - y).abs() <= n);
                *m += (x - y) / draws as f64;
            }
            let d = nb.center() - b.center();
            assert!(d.x.abs() <= n && d.y.abs() <= n);
        }
        assert!(mean.iter().all(|m| m.abs() < 0.1), "{mean:?}");
    }

    #[test]
    fn crossed_corners_are_swapped() {
        let b = BBox::new([10.0, 10.0, 10.5, 10.5], 0, 0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(inject_bbox_noise(&b, 20.0, &mut rng).validate().is_ok());
        }
    }
}
