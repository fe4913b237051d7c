//! Unit-quaternion algebra and pose composition.
//!
//! Conventions used throughout the crate:
//! - Hamilton (right-handed) quaternion product.
//! - `q` is the orientation of the sensor frame with respect to the world
//!   frame: `rotation(q)` maps sensor-frame vectors into the world frame,
//!   `rotation(q).transpose()` maps world to sensor.
//! - `exp_map` takes a rotation vector (axis * angle, radians) with the
//!   half-angle convention: `exp_map(v) = [cos(|v|/2), sin(|v|/2) * v/|v|]`.
//! - Exported quaternions are renormalized and sign-canonicalized to `w >= 0`
//!   to remove the double-cover ambiguity.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Quat = UnitQuaternion<f64>;

/// Pose of the sensor: position in the world frame plus orientation of the
/// sensor frame with respect to the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub p: Vector3<f64>,
    #[serde(with = "quat_serde")]
    pub q: Quat,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            p: Vector3::zeros(),
            q: Quat::identity(),
        }
    }

    pub fn new(p: Vector3<f64>, q: Quat) -> Self {
        Pose {
            p,
            q: canonicalize(q),
        }
    }
}

mod quat_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &Quat, s: S) -> Result<S::Ok, S::Error> {
        [q.w, q.i, q.j, q.k].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Quat, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        Ok(super::canonicalize(UnitQuaternion::from_quaternion(
            Quaternion::new(w, x, y, z),
        )))
    }
}

/// Renormalize and flip sign so that `w >= 0`.
pub fn canonicalize(q: Quat) -> Quat {
    let q = UnitQuaternion::from_quaternion(q.into_inner());
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Hamilton product `qa * qb`, renormalized and canonicalized.
pub fn quat_mul(qa: Quat, qb: Quat) -> Quat {
    canonicalize(qa * qb)
}

pub fn conjugate(q: Quat) -> Quat {
    canonicalize(q.conjugate())
}

/// Exponential map from a rotation vector to a unit quaternion.
///
/// For small angles a 4th-order series for `sin(a/2)/a` avoids the division
/// by zero at the origin.
pub fn exp_map(v: Vector3<f64>) -> Quat {
    let angle = v.norm();
    let (w, s) = if angle < 1e-8 {
        // cos(a/2) ~ 1 - a^2/8, sin(a/2)/a ~ 1/2 - a^2/48
        (1.0 - angle * angle / 8.0, 0.5 - angle * angle / 48.0)
    } else {
        ((angle / 2.0).cos(), (angle / 2.0).sin() / angle)
    };
    canonicalize(UnitQuaternion::from_quaternion(Quaternion::new(
        w,
        s * v.x,
        s * v.y,
        s * v.z,
    )))
}

/// Logarithm map: the rotation vector `v` with `exp_map(v) = q`, `|v| <= pi`.
pub fn log_map(q: Quat) -> Vector3<f64> {
    let q = canonicalize(q);
    let vec = Vector3::new(q.i, q.j, q.k);
    let s = vec.norm();
    if s < 1e-12 {
        // sin(a/2)/a -> 1/2
        vec * 2.0
    } else {
        let angle = 2.0 * s.atan2(q.w);
        vec * (angle / s)
    }
}

/// Rotation matrix of `q`: maps sensor-frame vectors to the world frame.
pub fn to_rotation(q: Quat) -> Matrix3<f64> {
    q.to_rotation_matrix().into_inner()
}

/// ZYX (yaw-pitch-roll) Euler angles `(roll, pitch, yaw)`.
///
/// Near gimbal lock (`|pitch| ~ pi/2`) roll is set to zero and the residual
/// rotation is assigned to yaw.
pub fn to_euler(q: Quat) -> (f64, f64, f64) {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let sinp = 2.0 * (w * y - z * x);
    if sinp.abs() >= 1.0 - 1e-6 {
        let pitch = std::f64::consts::FRAC_PI_2.copysign(sinp);
        // roll - yaw (or roll + yaw) is the only observable combination; put
        // everything into yaw.
        let yaw = 2.0 * x.atan2(w) * -sinp.signum();
        (0.0, pitch, yaw)
    } else {
        let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
        let pitch = sinp.asin();
        let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
        (roll, pitch, yaw)
    }
}

/// Quaternion from ZYX Euler angles.
pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Quat {
    quat_mul(
        quat_mul(
            exp_map(Vector3::new(0.0, 0.0, yaw)),
            exp_map(Vector3::new(0.0, pitch, 0.0)),
        ),
        exp_map(Vector3::new(roll, 0.0, 0.0)),
    )
}
