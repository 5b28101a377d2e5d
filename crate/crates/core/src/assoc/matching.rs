use alloc::vec::Vec;
use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{hungarian_assign, AssocError, Assignment, Tracklet};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssocConfig {
    /// Boxes drawn from every tracklet before pooling.
    pub sample_size: usize,
    /// Matches whose feature distance exceeds this are dropped.
    pub max_cost: Option<f64>,
    pub seed: u64,
}

impl Default for AssocConfig {
    fn default() -> Self {
        Self {
            sample_size: 8,
            max_cost: None,
            seed: 0,
        }
    }
}

/// Draws `n` boxes spread over the whole tracklet.
///
/// The tracklet is cut into `n` contiguous chunks of (almost) equal length
/// and one box is picked at random from each, so the output stays in time
/// order. Shorter tracklets are cycled until `n` boxes are collected. The
/// draw depends only on the seed and the tracklet's camera and person, not
/// on where the tracklet sits in a list.
pub fn sample_tracklet(t: &Tracklet, n: usize, seed: u64) -> Result<Tracklet, AssocError> {
    let len = t.len();
    if len == 0 {
        return Err(AssocError::EmptyTracklet);
    }
    let stream = ((t.camera_id as u64) << 32) | t.person_id as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(seed, stream));
    let picks: Vec<usize> = if len < n {
        (0..n).map(|k| k % len).collect()
    } else {
        (0..n)
            .map(|k| {
                let lo = k * len / n;
                let hi = (k + 1) * len / n;
                rng.random_range(lo..hi)
            })
            .collect()
    };
    let has_emb = !t.embeddings.is_empty();
    Ok(Tracklet {
        camera_id: t.camera_id,
        person_id: t.person_id,
        boxes: picks.iter().map(|&i| t.boxes[i]).collect(),
        embeddings: if has_emb {
            picks.iter().map(|&i| t.embeddings[i].clone()).collect()
        } else {
            Vec::new()
        },
    })
}

/// Mean of the box embeddings, scaled to unit length.
pub fn pool_features(t: &Tracklet) -> Result<Vec<f64>, AssocError> {
    if t.is_empty() {
        return Err(AssocError::EmptyTracklet);
    }
    let mut sum: Vec<f64> = Vec::new();
    for (i, b) in t.boxes.iter().enumerate() {
        let e = t.embedding(i).ok_or(AssocError::MissingFeature {
            camera: b.camera_id,
            person: b.person_id,
            frame: b.frame,
        })?;
        if sum.is_empty() {
            sum.resize(e.len(), 0.0);
        } else if sum.len() != e.len() {
            return Err(AssocError::DimensionMismatch(sum.len(), e.len()));
        }
        for (s, v) in sum.iter_mut().zip(e) {
            *s += v;
        }
    }
    let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(AssocError::ZeroFeature);
    }
    Ok(sum.into_iter().map(|v| v / norm).collect())
}

/// Euclidean distance between two pooled features.
pub fn feature_distance(a: &[f64], b: &[f64]) -> Result<f64, AssocError> {
    if a.len() != b.len() {
        return Err(AssocError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

fn pooled(ts: &[Tracklet], cfg: &AssocConfig) -> Result<Vec<Vec<f64>>, AssocError> {
    ts.iter()
        .map(|t| pool_features(&sample_tracklet(t, cfg.sample_size, cfg.seed)?))
        .collect()
}

/// Pairwise feature distances between the tracklets of two cameras.
pub fn cost_matrix(a: &[Tracklet], b: &[Tracklet], cfg: &AssocConfig) -> Result<DMatrix<f64>, AssocError> {
    let fa = pooled(a, cfg)?;
    let fb = pooled(b, cfg)?;
    let mut c = DMatrix::zeros(fa.len(), fb.len());
    for (i, x) in fa.iter().enumerate() {
        for (j, y) in fb.iter().enumerate() {
            c[(i, j)] = feature_distance(x, y)?;
        }
    }
    Ok(c)
}

/// Associates the people seen by two cameras. Indices in the result refer
/// to positions in `a` and `b`.
pub fn match_across_cameras(a: &[Tracklet], b: &[Tracklet], cfg: &AssocConfig) -> Result<Assignment, AssocError> {
    let c = cost_matrix(a, b, cfg)?;
    Ok(hungarian_assign(&c, cfg.max_cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::BBox;
    use alloc::vec;
    use rand_distr::{Distribution, Normal};

    fn track(camera: u32, person: u32, frames: core::ops::Range<u32>, emb: impl Fn(u32) -> Vec<f64>) -> Tracklet {
        let boxes: Vec<BBox> = frames
            .clone()
            .map(|f| BBox::new([0.0, 0.0, 10.0, 30.0], f, person, camera).unwrap())
            .collect();
        let e = frames.map(|f| Some(emb(f))).collect();
        Tracklet::new(camera, person, boxes).unwrap().with_embeddings(e).unwrap()
    }

    #[test]
    fn sampling_covers_every_chunk() {
        let t = track(0, 0, 0..800, |_| vec![1.0]);
        let s = sample_tracklet(&t, 8, 3).unwrap();
        assert_eq!(s.len(), 8);
        for (k, b) in s.boxes.iter().enumerate() {
            assert!((100 * k as u32..100 * (k as u32 + 1)).contains(&b.frame));
        }
        assert_eq!(s, sample_tracklet(&t, 8, 3).unwrap());
    }

    #[test]
    fn short_tracklets_cycle() {
        let t = track(0, 0, 0..3, |_| vec![1.0]);
        let s = sample_tracklet(&t, 8, 0).unwrap();
        let frames: Vec<u32> = s.boxes.iter().map(|b| b.frame).collect();
        assert_eq!(frames, vec![0, 1, 2, 0, 1, 2, 0, 1]);
    }

    #[test]
    fn pooled_features_have_unit_norm() {
        let t = track(0, 0, 0..5, |f| vec![f as f64, 1.0, -2.0]);
        let p = pool_features(&t).unwrap();
        assert!((p.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_and_mismatched_features() {
        let mut t = track(0, 2, 0..3, |_| vec![1.0, 0.0]);
        t.embeddings[1] = None;
        assert_eq!(
            pool_features(&t),
            Err(AssocError::MissingFeature { camera: 0, person: 2, frame: 1 })
        );
        assert_eq!(feature_distance(&[1.0], &[1.0, 2.0]), Err(AssocError::DimensionMismatch(1, 2)));
    }

    #[test]
    fn distinct_people_are_recovered_and_swap_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 16;
        let ids: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut make = |cam: u32, person: u32| {
            let id = ids[person as usize].clone();
            let samples: Vec<Vec<f64>> = (0..40).map(|_| id.iter().map(|v| v + noise.sample(&mut rng)).collect()).collect();
            track(cam, person + 10 * cam, 0..40, |f| samples[f as usize].clone())
        };
        let a: Vec<Tracklet> = (0..6).map(|p| make(0, p)).collect();
        let b: Vec<Tracklet> = [3, 0, 5, 1, 4, 2].iter().map(|&p| make(1, p)).collect();
        let cfg = AssocConfig::default();
        let ab = match_across_cameras(&a, &b, &cfg).unwrap();
        assert_eq!(ab.matches, vec![(0, 1), (1, 3), (2, 5), (3, 0), (4, 4), (5, 2)]);
        let ba = match_across_cameras(&b, &a, &cfg).unwrap();
        let mut flipped: Vec<_> = ba.matches.iter().map(|&(i, j)| (j, i)).collect();
        flipped.sort();
        assert_eq!(flipped, ab.matches);
    }
}
