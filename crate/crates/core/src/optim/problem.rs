use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Matrix2x3, Matrix3, Matrix3x2, SMatrix, Vector2, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use super::OptimError;
use crate::geometry::{skew, CameraIntrinsics, Pose};

/// How a camera takes part in the optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraGauge {
    /// Parameters are never touched.
    Fixed,
    /// Rotation and translation are free (6 parameters).
    Free,
    /// Rotation is free, the translation keeps its norm (5 parameters).
    /// With the reference camera at the origin this pins the global scale.
    FixedNorm,
}

impl CameraGauge {
    pub fn dof(self) -> usize {
        match self {
            CameraGauge::Fixed => 0,
            CameraGauge::Free => 6,
            CameraGauge::FixedNorm => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaCamera {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub gauge: CameraGauge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub camera: usize,
    pub point: usize,
    pub pixel: Vector2<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaProblem {
    pub cameras: Vec<BaCamera>,
    pub points: Vec<Vector3<f64>>,
    pub observations: Vec<Observation>,
}

/// Weighted residual of one observation and its derivatives.
///
/// `camera` has `dof` meaningful columns (see [`CameraGauge::dof`]), the
/// first three being the left-multiplied rotation increment.
#[derive(Debug, Clone, Copy)]
pub struct ObservationJacobian {
    pub residual: Vector2<f64>,
    pub camera: SMatrix<f64, 2, 6>,
    pub point: Matrix2x3<f64>,
}

/// Orthonormal basis of the plane perpendicular to `t`.
pub(crate) fn tangent_basis(t: &Vector3<f64>) -> Matrix3x2<f64> {
    let n = t.normalize();
    let axis = if n.x.abs() < 0.6 {
        Vector3::x()
    } else if n.y.abs() < 0.6 {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let u = n.cross(&axis).normalize();
    let v = n.cross(&u);
    Matrix3x2::from_columns(&[u, v])
}

impl BaProblem {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !self.cameras.iter().any(|c| c.gauge == CameraGauge::Fixed) {
            return Err(OptimError::InvalidProblem("at least one camera must be fixed"));
        }
        let mut seen = vec![0usize; self.points.len()];
        for o in &self.observations {
            if o.camera >= self.cameras.len() || o.point >= self.points.len() {
                return Err(OptimError::InvalidProblem("observation index out of range"));
            }
            if !(o.weight >= 0.0) || !o.pixel.iter().all(|v| v.is_finite()) {
                return Err(OptimError::InvalidProblem("bad observation"));
            }
            seen[o.point] += 1;
        }
        if seen.iter().any(|&n| n < 2) {
            return Err(OptimError::InvalidProblem("every point needs two observations"));
        }
        Ok(())
    }

    /// Number of optimized parameters (camera block, then points).
    pub fn camera_offsets(&self) -> (Vec<Option<usize>>, usize) {
        let mut offsets = Vec::with_capacity(self.cameras.len());
        let mut n = 0;
        for c in &self.cameras {
            let d = c.gauge.dof();
            if d == 0 {
                offsets.push(None);
            } else {
                offsets.push(Some(n));
                n += d;
            }
        }
        (offsets, n)
    }

    /// Weighted pixel residual, `None` when the point is behind the camera.
    pub fn residual(&self, obs: &Observation) -> Option<Vector2<f64>> {
        let cam = &self.cameras[obs.camera];
        let xc = cam.pose.transform(&self.points[obs.point]);
        if xc.z <= 0.0 {
            return None;
        }
        let px = cam.intrinsics.to_pixel(&(xc.xy() / xc.z));
        Some((px - obs.pixel) * obs.weight.sqrt())
    }

    pub fn jacobian(&self, obs: &Observation) -> Option<ObservationJacobian> {
        let cam = &self.cameras[obs.camera];
        let k = &cam.intrinsics;
        let x = &self.points[obs.point];
        let rx = cam.pose.rotation * x;
        let xc = rx + cam.pose.translation;
        if xc.z <= 0.0 {
            return None;
        }
        let iz = 1.0 / xc.z;
        let n = xc.xy() * iz;
        let sw = obs.weight.sqrt();
        let px = k.to_pixel(&n);
        let dn = Matrix2x3::new(iz, 0.0, -xc.x * iz * iz, 0.0, iz, -xc.y * iz * iz);
        let mut dpix = k.distort_jacobian(&n);
        dpix.row_mut(0).scale_mut(k.fx);
        dpix.row_mut(1).scale_mut(k.fy);
        let dxc = dpix * dn * sw;

        let mut camera = SMatrix::<f64, 2, 6>::zeros();
        match cam.gauge {
            CameraGauge::Fixed => {}
            CameraGauge::Free => {
                camera.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dxc * -skew(&rx)));
                camera.fixed_view_mut::<2, 3>(0, 3).copy_from(&dxc);
            }
            CameraGauge::FixedNorm => {
                camera.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dxc * -skew(&rx)));
                let b = tangent_basis(&cam.pose.translation);
                camera.fixed_view_mut::<2, 2>(0, 3).copy_from(&(dxc * b));
            }
        }
        Some(ObservationJacobian {
            residual: (px - obs.pixel) * sw,
            camera,
            point: dxc * cam.pose.rotation.matrix(),
        })
    }

    /// Applies an increment laid out as in [`Self::camera_offsets`],
    /// followed by three entries per point.
    pub fn retract(&self, delta: &[f64]) -> BaProblem {
        let (offsets, ncam) = self.camera_offsets();
        let mut out = self.clone();
        for (cam, off) in out.cameras.iter_mut().zip(offsets) {
            let Some(o) = off else { continue };
            let w = Vector3::new(delta[o], delta[o + 1], delta[o + 2]);
            let rot = nalgebra::Rotation3::new(w) * cam.pose.rotation;
            cam.pose.rotation = nalgebra::Rotation3::from_matrix_unchecked(orthonormalize(rot.matrix()));
            match cam.gauge {
                CameraGauge::Free => {
                    cam.pose.translation += Vector3::new(delta[o + 3], delta[o + 4], delta[o + 5]);
                }
                CameraGauge::FixedNorm => {
                    let t = cam.pose.translation;
                    let norm = t.norm();
                    let moved = t + tangent_basis(&t) * Vector2::new(delta[o + 3], delta[o + 4]);
                    cam.pose.translation = moved * (norm / moved.norm());
                }
                CameraGauge::Fixed => {}
            }
        }
        for (i, p) in out.points.iter_mut().enumerate() {
            let o = ncam + 3 * i;
            *p += Vector3::new(delta[o], delta[o + 1], delta[o + 2]);
        }
        out
    }

    /// Root mean square reprojection distance in pixels (unweighted).
    pub fn rms_reprojection(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for o in &self.observations {
            let unit = Observation { weight: 1.0, ..*o };
            if let Some(r) = self.residual(&unit) {
                sum += r.norm_squared();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            (sum / n as f64).sqrt()
        }
    }
}

/// Nearest rotation matrix, keeps accumulated updates on SO(3).
fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => {
            let r = u * v_t;
            if r.determinant() > 0.0 {
                r
            } else {
                *m
            }
        }
        _ => *m,
    }
}
