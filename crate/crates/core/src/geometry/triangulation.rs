use nalgebra::{Matrix3x4, Matrix4, RowVector4, Vector2, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use super::{CameraIntrinsics, GeomError, PointPair, Pose};

/// Rays closer to parallel than this cannot be triangulated reliably.
pub const MIN_PARALLAX_DEG: f64 = 0.1;

fn dlt_rows(x: &Vector2<f64>, p: &Matrix3x4<f64>) -> [RowVector4<f64>; 2] {
    let r0 = p.row(2) * x.x - p.row(0);
    let r1 = p.row(2) * x.y - p.row(1);
    [r0 / r0.norm(), r1 / r1.norm()]
}

/// Linear two-view triangulation in camera A's frame, no validity checks.
pub(crate) fn triangulate_dlt(a: &Vector2<f64>, b: &Vector2<f64>, pose: &Pose) -> Option<Vector3<f64>> {
    let pa = Matrix3x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let mut pb = Matrix3x4::zeros();
    pb.fixed_view_mut::<3, 3>(0, 0).copy_from(pose.rotation.matrix());
    pb.set_column(3, &pose.translation);
    let [r0, r1] = dlt_rows(a, &pa);
    let [r2, r3] = dlt_rows(b, &pb);
    let m = Matrix4::from_rows(&[r0, r1, r2, r3]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let s = svd.singular_values;
    let (idx, _) = s
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
    let h = v_t.row(idx);
    if h[3].abs() < 1e-300 {
        return None;
    }
    let x = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Angle in radians between the two viewing rays of a normalized pair.
pub fn parallax_angle(a: &Vector2<f64>, b: &Vector2<f64>, pose: &Pose) -> f64 {
    let ray_a = a.push(1.0).normalize();
    let ray_b = pose.rotation.inverse() * b.push(1.0).normalize();
    ray_a.dot(&ray_b).clamp(-1.0, 1.0).acos()
}

/// Triangulates a normalized pair; the point is returned in camera A's
/// frame, camera B being at `pose` relative to A.
pub fn triangulate(pair: &PointPair, pose: &Pose) -> Result<Vector3<f64>, GeomError> {
    let angle = parallax_angle(&pair.a, &pair.b, pose);
    if angle < MIN_PARALLAX_DEG.to_radians() {
        return Err(GeomError::LowParallax {
            angle_deg: angle.to_degrees(),
        });
    }
    let x = triangulate_dlt(&pair.a, &pair.b, pose).ok_or(GeomError::LowParallax {
        angle_deg: angle.to_degrees(),
    })?;
    if x.z <= 0.0 || pose.transform(&x).z <= 0.0 {
        return Err(GeomError::BehindCamera);
    }
    Ok(x)
}

/// Pixel coordinates of a reference-frame point seen by a camera at `pose`.
pub fn project(point: &Vector3<f64>, pose: &Pose, k: &CameraIntrinsics) -> Result<Vector2<f64>, GeomError> {
    let xc = pose.transform(point);
    if xc.z <= 0.0 {
        return Err(GeomError::BehindCamera);
    }
    Ok(k.to_pixel(&(xc.xy() / xc.z)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vga() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn hand_geometry() {
        let pose = Pose::from_parts(Rotation3::identity(), Vector3::new(-1.0, 0.0, 0.0), false);
        let pair = PointPair::bare(Vector2::new(0.0, 0.0), Vector2::new(-0.2, 0.0));
        let x = triangulate(&pair, &pose).unwrap();
        assert!((x - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn parallel_rays_fail() {
        let pose = Pose::from_parts(Rotation3::identity(), Vector3::new(-1.0, 0.0, 0.0), false);
        let pair = PointPair::bare(Vector2::zeros(), Vector2::zeros());
        assert!(matches!(
            triangulate(&pair, &pose),
            Err(GeomError::LowParallax { .. } | GeomError::BehindCamera)
        ));
    }

    #[test]
    fn behind_camera_is_reported() {
        let pose = Pose::from_parts(Rotation3::identity(), Vector3::new(-1.0, 0.0, 0.0), false);
        // Point (0, 0, -5) seen through the back of both cameras.
        let x = Vector3::new(0.0, 0.0, -5.0);
        let q = pose.transform(&x);
        let pair = PointPair::bare(x.xy() / x.z, q.xy() / q.z);
        assert_eq!(triangulate(&pair, &pose), Err(GeomError::BehindCamera));
    }

    #[test]
    fn random_scene_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let pose = Pose::from_parts(
                Rotation3::from_euler_angles(rng.random_range(-0.3..0.3), rng.random_range(-0.6..0.6), 0.1),
                Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0)),
                true,
            );
            let x = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(5.0..20.0));
            let q = pose.transform(&x);
            if q.z <= 0.0 {
                continue;
            }
            let pair = PointPair::bare(x.xy() / x.z, q.xy() / q.z);
            if let Ok(y) = triangulate(&pair, &pose) {
                worst = worst.max((y - x).norm());
            }
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn projection_examples() {
        let k = vga();
        let id = Pose::identity();
        assert_eq!(project(&Vector3::new(0.0, 0.0, 5.0), &id, &k).unwrap(), Vector2::new(320.0, 240.0));
        assert_eq!(project(&Vector3::new(1.0, 0.0, 5.0), &id, &k).unwrap(), Vector2::new(420.0, 240.0));
        assert_eq!(project(&Vector3::new(1.0, 0.0, -5.0), &id, &k), Err(GeomError::BehindCamera));
    }

    #[test]
    fn project_undistort_triangulate_round_trip() {
        let mut k = vga();
        k.dist = [-0.1, 0.02, 0.001, 0.0005, 0.0];
        let pose = Pose::from_parts(Rotation3::from_euler_angles(0.0, -0.4, 0.02), Vector3::new(3.0, 0.2, 1.0), true);
        let pts: Vec<_> = (0..20)
            .map(|i| Vector3::new(-1.5 + 0.15 * i as f64, 0.4 - 0.05 * i as f64, 6.0 + 0.3 * i as f64))
            .collect();
        for x in &pts {
            let a = k.undistort_normalize(&project(x, &Pose::identity(), &k).unwrap()).unwrap();
            let b = k.undistort_normalize(&project(x, &pose, &k).unwrap()).unwrap();
            let pair = PointPair::bare(a, b);
            assert!(parallax_angle(&a, &b, &pose) > 2f64.to_radians());
            let y = triangulate(&pair, &pose).unwrap();
            assert!((y - x).norm() < 1e-9 * x.norm(), "{}", (y - x).norm());
        }
    }
}
