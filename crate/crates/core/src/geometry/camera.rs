use nalgebra::{Matrix2, Vector2};
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::GeomError;

const UNDISTORT_MAX_ITERS: usize = 20;
const UNDISTORT_STEP_TOL: f64 = 1e-12;

/// Pinhole intrinsics with Brown-Conrady distortion `[k1, k2, p1, p2, k3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub dist: [f64; 5],
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        dist: [f64; 5],
        width: u32,
        height: u32,
    ) -> Result<Self, GeomError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            dist,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Distortion-free camera.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        Self::new(fx, fy, cx, cy, [0.0; 5], width, height)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeomError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeomError::InvalidIntrinsics("cx outside image"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeomError::InvalidIntrinsics("cy outside image"));
        }
        if !self.dist.iter().all(|d| d.is_finite()) {
            return Err(GeomError::InvalidIntrinsics("non-finite distortion"));
        }
        Ok(())
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    pub fn has_distortion(&self) -> bool {
        self.dist.iter().any(|&d| d != 0.0)
    }

    /// Same camera at a different resolution: focal lengths, principal point
    /// and image size are multiplied by `factor`, distortion is unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
            dist: self.dist,
            width: (self.width as f64 * factor).round() as u32,
            height: (self.height as f64 * factor).round() as u32,
        }
    }

    /// Forward distortion of an ideal normalized point.
    pub fn distort(&self, n: &Vector2<f64>) -> Vector2<f64> {
        let [k1, k2, p1, p2, k3] = self.dist;
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        Vector2::new(
            x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
            y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
        )
    }

    /// Jacobian of [`Self::distort`] with respect to the ideal normalized point.
    pub fn distort_jacobian(&self, n: &Vector2<f64>) -> Matrix2<f64> {
        let [k1, k2, p1, p2, k3] = self.dist;
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        // d(radial)/d(r2)
        let dradial = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2);
        let dxdx = radial + x * dradial * 2.0 * x + 2.0 * p1 * y + p2 * 6.0 * x;
        let dxdy = x * dradial * 2.0 * y + 2.0 * p1 * x + p2 * 2.0 * y;
        let dydx = y * dradial * 2.0 * x + p1 * 2.0 * x + 2.0 * p2 * y;
        let dydy = radial + y * dradial * 2.0 * y + p1 * 6.0 * y + 2.0 * p2 * x;
        Matrix2::new(dxdx, dxdy, dydx, dydy)
    }

    /// Ideal normalized point to pixel coordinates (distortion + intrinsics).
    pub fn to_pixel(&self, n: &Vector2<f64>) -> Vector2<f64> {
        let d = self.distort(n);
        Vector2::new(self.fx * d.x + self.cx, self.fy * d.y + self.cy)
    }

    /// Pixel to ideal normalized coordinates.
    ///
    /// Distortion is inverted by fixed-point iteration; a point that has
    /// not settled after 20 iterations is reported as
    /// [`GeomError::UndistortDiverged`] and should be dropped by the caller.
    pub fn undistort_normalize(&self, px: &Vector2<f64>) -> Result<Vector2<f64>, GeomError> {
        let d = Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy);
        if !self.has_distortion() {
            return Ok(d);
        }
        let [k1, k2, p1, p2, k3] = self.dist;
        let mut n = d;
        for _ in 0..UNDISTORT_MAX_ITERS {
            let (x, y) = (n.x, n.y);
            let r2 = x * x + y * y;
            let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
            let dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
            let dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
            let next = Vector2::new((d.x - dx) / radial, (d.y - dy) / radial);
            if !(next.x.is_finite() && next.y.is_finite()) {
                return Err(GeomError::UndistortDiverged);
            }
            let step = (next - n).norm();
            n = next;
            if step < UNDISTORT_STEP_TOL {
                return Ok(n);
            }
        }
        Err(GeomError::UndistortDiverged)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vga() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn principal_point_maps_to_origin() {
        let k = vga();
        let n = k.undistort_normalize(&Vector2::new(320.0, 240.0)).unwrap();
        assert_eq!(n, Vector2::zeros());
    }

    #[test]
    fn linear_pinhole() {
        let k = vga();
        let n = k.undistort_normalize(&Vector2::new(820.0, 240.0)).unwrap();
        assert_eq!(n, Vector2::new(1.0, 0.0));
    }

    #[test]
    fn radial_round_trip() {
        let mut k = vga();
        k.dist = [0.1, 0.0, 0.0, 0.0, 0.0];
        let ideal = Vector2::new(0.2, 0.1);
        let px = k.to_pixel(&ideal);
        let back = k.undistort_normalize(&px).unwrap();
        assert!((back - ideal).norm() < 1e-9, "{back:?}");
    }

    #[test]
    fn full_model_round_trip() {
        let k = CameraIntrinsics::new(
            700.0,
            705.0,
            640.0,
            360.0,
            [-0.08, 0.01, 0.001, -0.0005, 0.0],
            1280,
            720,
        )
        .unwrap();
        for &(x, y) in &[(0.0, 0.0), (0.5, -0.3), (-0.85, 0.48), (0.9, 0.5)] {
            let ideal = Vector2::new(x, y);
            let back = k.undistort_normalize(&k.to_pixel(&ideal)).unwrap();
            assert!((back - ideal).norm() < 1e-9);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let mut k = vga();
        k.dist = [-2.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(
            k.undistort_normalize(&Vector2::new(639.0, 479.0)),
            Err(GeomError::UndistortDiverged)
        );
    }

    #[test]
    fn distortion_jacobian_matches_differences() {
        let k = CameraIntrinsics::new(
            700.0,
            700.0,
            640.0,
            360.0,
            [-0.08, 0.01, 0.002, -0.001, 0.003],
            1280,
            720,
        )
        .unwrap();
        let n = Vector2::new(0.31, -0.42);
        let j = k.distort_jacobian(&n);
        let h = 1e-6;
        for c in 0..2 {
            let mut dp = n;
            let mut dm = n;
            dp[c] += h;
            dm[c] -= h;
            let col = (k.distort(&dp) - k.distort(&dm)) / (2.0 * h);
            for r in 0..2 {
                assert!((col[r] - j[(r, c)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(CameraIntrinsics::pinhole(0.0, 1.0, 1.0, 1.0, 10, 10).is_err());
        assert!(CameraIntrinsics::pinhole(1.0, 1.0, 10.0, 1.0, 10, 10).is_err());
        assert!(CameraIntrinsics::pinhole(1.0, 1.0, 1.0, -1.0, 10, 10).is_err());
    }
}
