//! Rigid transforms in SE(3), stored as a unit quaternion plus translation.
//!
//! Every composition renormalizes the rotation so long chains of updates
//! (particle diffusion in particular) do not drift off the unit sphere.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// A rigid transform `x -> R x + t`. Translations are in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct PoseSE3 {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

/// JSON form: `{"rotation": [w, x, y, z], "translation": [x, y, z]}`.
#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl From<PoseRepr> for PoseSE3 {
    /// Quaternions that are already unit to rounding are kept bit for bit, so
    /// a written pose reads back identical.
    fn from(r: PoseRepr) -> Self {
        let q = r.rotation;
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        if (raw.norm() - 1.0).abs() <= 1e-12 {
            return PoseSE3::new(UnitQuaternion::new_unchecked(raw), Vector3::from(r.translation));
        }
        PoseSE3::from_wxyz(q, r.translation)
    }
}

impl From<PoseSE3> for PoseRepr {
    fn from(p: PoseSE3) -> Self {
        PoseRepr {
            rotation: p.wxyz(),
            translation: p.translation_array(),
        }
    }
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from a (possibly unnormalized) `[w, x, y, z]` quaternion.
    /// A zero quaternion yields the identity rotation.
    pub fn from_wxyz(q: [f64; 4], t: [f64; 3]) -> Self {
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        let rotation = if raw.norm() > 0.0 {
            UnitQuaternion::from_quaternion(raw)
        } else {
            UnitQuaternion::identity()
        };
        Self::new(rotation, Vector3::from(t))
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::from(t))
    }

    /// Rotation of `angle` radians about `axis` (normalized internally), followed by `t`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64, t: [f64; 3]) -> Self {
        let axis = Vector3::from(axis);
        let rotation = match Unit::try_new(axis, 0.0) {
            Some(axis) => UnitQuaternion::from_axis_angle(&axis, angle),
            None => UnitQuaternion::identity(),
        };
        Self::new(rotation, Vector3::from(t))
    }

    /// Exponential map of a rotation vector (axis times angle).
    pub fn from_rotation_vector(omega: [f64; 3], t: [f64; 3]) -> Self {
        Self::new(
            UnitQuaternion::from_scaled_axis(Vector3::from(omega)),
            Vector3::from(t),
        )
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn translation_array(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    /// Quaternion coefficients in `[w, x, y, z]` order.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        let mut rotation = self.rotation * other.rotation;
        rotation.renormalize();
        PoseSE3 {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rotation = self.rotation.inverse();
        PoseSE3 {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    pub fn transform_vector(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.transform_vector(&Vector3::from(p));
        [v.x, v.y, v.z]
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let v = self.rotation * Vector3::from(v);
        [v.x, v.y, v.z]
    }

    /// Geodesic angle (radians, in `[0, π]`) between the two rotations.
    pub fn rotation_angle_to(&self, other: &PoseSE3) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_distance_to(&self, other: &PoseSE3) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Slerp on rotation, linear on translation; `s = 0` gives `self`.
    pub fn interpolate(&self, other: &PoseSE3, s: f64) -> PoseSE3 {
        if s <= 0.0 {
            return *self;
        }
        if s >= 1.0 {
            return *other;
        }
        let rotation = self
            .rotation
            .try_slerp(&other.rotation, s, 1e-12)
            .unwrap_or(self.rotation);
        PoseSE3 {
            rotation,
            translation: self.translation.lerp(&other.translation, s),
        }
    }

    /// Deviation of the stored quaternion's norm from one.
    pub fn norm_error(&self) -> f64 {
        (self.rotation.quaternion().norm() - 1.0).abs()
    }

    pub fn is_finite(&self) -> bool {
        self.wxyz().iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Mul for PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        self.compose(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn quarter_turn_about_z() {
        let p = PoseSE3::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2, [0.0; 3]);
        assert!(close(p.transform_point([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], 1e-15));
    }

    #[test]
    fn inverse_composes_to_identity() {
        let p = PoseSE3::from_axis_angle([1.0, 2.0, -0.5], 1.1, [0.3, -0.2, 0.9]);
        let id = p.inverse().compose(&p);
        assert!(id.rotation_angle_to(&PoseSE3::identity()) < 1e-12);
        assert!(id.translation().norm() < 1e-12);
    }

    #[test]
    fn json_shape() {
        let p = PoseSE3::from_axis_angle([0.0, 0.0, 1.0], PI, [1.0, 2.0, 3.0]);
        let v = serde_json::to_value(p).unwrap();
        assert_eq!(v["translation"], serde_json::json!([1.0, 2.0, 3.0]));
        assert_eq!(v["rotation"].as_array().unwrap().len(), 4);
        let back: PoseSE3 = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn json_text_round_trip_is_exact() {
        let mut p = PoseSE3::identity();
        for i in 0..500 {
            p = p.compose(&PoseSE3::from_axis_angle([1.0, i as f64, -2.0], 0.37, [1e-3, 0.0, 0.2]));
            let back: PoseSE3 = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
            assert_eq!(back, p);
        }
        let scaled: PoseSE3 = serde_json::from_str(r#"{"rotation": [2, 0, 0, 0], "translation": [0, 0, 0]}"#).unwrap();
        assert_eq!(scaled, PoseSE3::identity());
    }

    #[test]
    fn zero_quaternion_is_identity() {
        let p = PoseSE3::from_wxyz([0.0; 4], [0.0; 3]);
        assert_eq!(p, PoseSE3::identity());
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = PoseSE3::identity();
        let b = PoseSE3::from_axis_angle([0.0, 0.0, 1.0], 0.5, [2.0, 0.0, 0.0]);
        assert_eq!(a.interpolate(&b, 0.0), a);
        assert_eq!(a.interpolate(&b, 1.0), b);
        let m = a.interpolate(&b, 0.5);
        assert!((m.rotation_angle_to(&a) - 0.25).abs() < 1e-12);
        assert!((m.translation().x - 1.0).abs() < 1e-15);
    }
}
