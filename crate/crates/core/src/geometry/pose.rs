use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
#[allow(unused_imports)]
use num_traits::Float;

use super::GeomError;

const ORTHO_TOL: f64 = 1e-9;

/// Rigid transform from the reference frame into a camera frame:
/// `x_cam = rotation * x_ref + translation`.
///
/// `metric == false` marks an up-to-scale pose whose translation has unit
/// norm, as produced by essential matrix decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
    pub metric: bool,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
            metric: true,
        }
    }

    /// Checked constructor from a raw 3x3 matrix.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, metric: bool) -> Result<Self, GeomError> {
        let pose = Self {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
            metric,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_parts(rotation: Rotation3<f64>, translation: Vector3<f64>, metric: bool) -> Self {
        Self {
            rotation,
            translation,
            metric,
        }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let r = self.rotation.matrix();
        if !r.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(GeomError::InvalidPose("non-finite entries"));
        }
        let gram = r.transpose() * r - Matrix3::identity();
        if gram.amax() > ORTHO_TOL {
            return Err(GeomError::InvalidPose("rotation is not orthonormal"));
        }
        if (r.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(GeomError::InvalidPose("rotation determinant is not +1"));
        }
        if !self.metric && (self.translation.norm() - 1.0).abs() > ORTHO_TOL {
            return Err(GeomError::InvalidPose("up-to-scale pose needs a unit translation"));
        }
        Ok(())
    }

    /// Maps a reference-frame point into this camera's frame.
    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Camera center in the reference frame, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rinv = self.rotation.inverse();
        Self {
            rotation: rinv,
            translation: -(rinv * self.translation),
            metric: self.metric,
        }
    }

    /// `self ∘ inner`: first apply `inner`, then `self`.
    pub fn compose(&self, inner: &Pose) -> Self {
        Self {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
            metric: self.metric && inner.metric,
        }
    }

    /// Transform taking points from `from`'s camera frame into `self`'s
    /// camera frame, both poses being expressed against the same reference.
    pub fn relative_to(&self, from: &Pose) -> Self {
        self.compose(&from.inverse())
    }

    /// Multiplies the translation by `s` and marks the pose metric.
    pub fn with_scale(&self, s: f64) -> Self {
        Self {
            rotation: self.rotation,
            translation: self.translation * s,
            metric: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_and_inverse() {
        let r = Rotation3::from_euler_angles(0.1, -0.2, 0.3);
        let c = Vector3::new(1.0, 2.0, -3.0);
        let pose = Pose::from_parts(r, -(r * c), true);
        assert!((pose.center() - c).norm() < 1e-12);
        let id = pose.compose(&pose.inverse());
        assert!((id.rotation.matrix() - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn relative_pose_maps_between_cameras() {
        let p1 = Pose::from_parts(Rotation3::from_euler_angles(0.2, 0.1, 0.0), Vector3::new(1.0, 0.0, 2.0), true);
        let p2 = Pose::from_parts(Rotation3::from_euler_angles(-0.1, 0.4, 0.3), Vector3::new(0.0, -1.0, 5.0), true);
        let x = Vector3::new(0.3, -0.7, 4.0);
        let rel = p2.relative_to(&p1);
        assert!((rel.transform(&p1.transform(&x)) - p2.transform(&x)).norm() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 1.0), false).is_ok());
        assert!(Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 2.0), false).is_err());
        assert!(Pose::new(Matrix3::identity() * 2.0, Vector3::zeros(), true).is_err());
        let reflect = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(reflect, Vector3::zeros(), true).is_err());
    }
}
