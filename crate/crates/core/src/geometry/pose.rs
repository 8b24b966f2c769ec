use nalgebra::{Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::Vec3;

/// Rigid transform: rotation followed by translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

/// JSON form: `{"translation": [x, y, z], "rotation": [w, x, y, z]}`.
#[derive(Serialize, Deserialize)]
struct PoseRepr {
    #[serde(default)]
    translation: [f64; 3],
    #[serde(default = "identity_wxyz")]
    rotation: [f64; 4],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        let [w, x, y, z] = r.rotation;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        Pose {
            translation: Vector3::from(r.translation),
            rotation: UnitQuaternion::from_quaternion(q),
        }
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.rotation.quaternion();
        PoseRepr {
            translation: p.translation.into(),
            rotation: [q.w, q.i, q.j, q.k],
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            translation: Vec3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vec3, rotation: UnitQuaternion<f64>) -> Self {
        Pose { translation, rotation }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Pose {
            translation,
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn from_axis_angle(translation: Vec3, axis: Vec3, angle: f64) -> Self {
        Pose {
            translation,
            rotation: UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    #[inline]
    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse() * (p - self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            translation: -(inv * self.translation),
            rotation: inv,
        }
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: self.rotation * other.translation + self.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    /// Signed rotation angle about the local z axis (twist component).
    pub fn yaw(&self) -> f64 {
        let x = self.rotation * Vec3::x();
        x.y.atan2(x.x)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
    }

    /// Unit-norm check on the stored quaternion.
    pub fn is_normalized(&self) -> bool {
        (self.rotation.quaternion().norm() - 1.0).abs() <= 1e-9
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn compose_and_inverse() {
        let a = Pose::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), Vec3::z(), FRAC_PI_2);
        let b = Pose::from_axis_angle(Vec3::new(-0.5, 0.1, 0.0), Vec3::x(), 0.3);
        let p = Vec3::new(0.2, -0.7, 1.1);
        let ab = a.compose(&b);
        assert!((ab.transform_point(&p) - a.transform_point(&b.transform_point(&p))).norm() < 1e-12);
        let id = a.compose(&a.inverse());
        assert!(id.translation.norm() < 1e-12);
        assert!((a.inverse_transform_point(&a.transform_point(&p)) - p).norm() < 1e-12);
        assert!((a.yaw() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn json_form_normalizes() {
        let p: Pose = serde_json::from_str(r#"{"translation":[1,0,0],"rotation":[0.7071,0,0,0.7071]}"#).unwrap();
        assert!(p.is_normalized());
        let back: Pose = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert!((back.rotation.angle_to(&p.rotation)).abs() < 1e-12);
    }
}
