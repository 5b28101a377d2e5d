use crowdcal_core::assoc::{
    feature_distance, hungarian_assign, match_across_cameras, pool_features, sample_tracklet, AssocConfig, BBox, Tracklet,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tracklet(camera: u32, person: u32, embeddings: Vec<Vec<f64>>) -> Tracklet {
    let boxes = (0..embeddings.len() as u32)
        .map(|f| BBox::new([10.0, 10.0, 30.0, 60.0], f, person, camera).unwrap())
        .collect();
    Tracklet::new(camera, person, boxes)
        .unwrap()
        .with_embeddings(embeddings.into_iter().map(Some).collect())
        .unwrap()
}

#[test]
fn pooling_examples() {
    let v = vec![3.0, -4.0, 12.0];
    let f = pool_features(&tracklet(0, 0, vec![v.clone(); 5])).unwrap();
    for (a, b) in f.iter().zip(&v) {
        assert!((a - b / 13.0).abs() < 1e-15);
    }
    let f = pool_features(&tracklet(0, 0, vec![vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert!((f[0] - h).abs() < 1e-15 && (f[1] - h).abs() < 1e-15);
}

#[test]
fn pooling_matches_direct_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let d = rng.random_range(1..40);
        let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mean = DMatrix::from_fn(8, d, |i, j| rows[i][j]).row_mean();
        let expected = &mean / mean.norm();
        let f = pool_features(&tracklet(0, 0, rows)).unwrap();
        for (a, b) in f.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((f.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn distance_examples() {
    assert_eq!(feature_distance(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
    assert!((feature_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<f64> = (0..64).map(|_| rng.random()).collect();
    let b: Vec<f64> = (0..64).map(|_| rng.random()).collect();
    let brute: f64 = (0..64).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
    assert!((feature_distance(&a, &b).unwrap() - brute).abs() < 1e-12);
    assert!(feature_distance(&a, &b[..3]).is_err());
}

#[test]
fn sampling_windows() {
    let emb = |n: usize| (0..n).map(|i| vec![i as f64 + 1.0]).collect::<Vec<_>>();
    let t8 = tracklet(0, 0, emb(8));
    assert_eq!(sample_tracklet(&t8, 8, 3).unwrap().boxes, t8.boxes);

    let t800 = tracklet(0, 0, emb(800));
    let s = sample_tracklet(&t800, 8, 3).unwrap();
    for (k, b) in s.boxes.iter().enumerate() {
        assert!((100 * k as u32..100 * (k as u32 + 1)).contains(&b.frame));
    }

    let t3 = tracklet(0, 0, emb(3));
    let s = sample_tracklet(&t3, 8, 3).unwrap();
    let frames: Vec<u32> = s.boxes.iter().map(|b| b.frame).collect();
    assert_eq!(frames, [0, 1, 2, 0, 1, 2, 0, 1]);
    assert_eq!(sample_tracklet(&t3, 8, 3).unwrap(), sample_tracklet(&t3, 8, 3).unwrap());
}

#[test]
fn ten_against_seven() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ids: Vec<Vec<f64>> = (0..10).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let noisy = |v: &Vec<f64>, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..20).map(|_| v.iter().map(|x| x + 0.05 * rng.random_range(-1.0..1.0)).collect()).collect()
    };
    let a: Vec<Tracklet> = ids.iter().enumerate().map(|(i, v)| tracklet(0, i as u32, noisy(v, &mut rng))).collect();
    let b: Vec<Tracklet> = ids[..7].iter().enumerate().map(|(i, v)| tracklet(1, i as u32, noisy(v, &mut rng))).collect();
    let r = match_across_cameras(&a, &b, &AssocConfig::default()).unwrap();
    assert_eq!(r.matches.len(), 7);
    assert_eq!(r.unmatched_a.len(), 3);
    assert!(r.unmatched_b.is_empty());
    assert!(r.matches.iter().all(|&(i, j)| i == j));
}

#[test]
fn identical_sides_cost_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a: Vec<Tracklet> = (0..6)
        .map(|p| tracklet(0, p, (0..12).map(|_| (0..8).map(|_| rng.random()).collect()).collect()))
        .collect();
    let b: Vec<Tracklet> = a
        .iter()
        .map(|t| Tracklet {
            camera_id: 1,
            boxes: t.boxes.iter().map(|b| BBox { camera_id: 1, ..*b }).collect(),
            ..t.clone()
        })
        .collect();
    // Samples differ between cameras, pooled features of the full tracklet do not.
    let cfg = AssocConfig {
        sample_size: 12,
        ..AssocConfig::default()
    };
    let r = match_across_cameras(&a, &b, &cfg).unwrap();
    assert!(r.matches.iter().all(|&(i, j)| i == j));
    assert!(r.total_cost < 1e-12);
}

#[test]
fn assignment_never_beats_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let perms = |n: usize| -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p: Vec<usize>| {
                    (0..n)
                        .filter(|j| !p.contains(j))
                        .map(|j| {
                            let mut q = p.clone();
                            q.push(j);
                            q
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
        }
        out
    };
    let all = perms(6);
    assert_eq!(all.len(), 720);
    for _ in 0..50 {
        let c = DMatrix::from_fn(6, 6, |_, _| rng.random_range(0.0..5.0));
        let best = all.iter().map(|p| (0..6).map(|i| c[(i, p[i])]).sum::<f64>()).fold(f64::INFINITY, f64::min);
        assert!((hungarian_assign(&c, None).total_cost - best).abs() < 1e-12);
    }
}
