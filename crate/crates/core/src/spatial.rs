//! Shared 3-D spatial math.
//!
//! Orientation is carried as ZYX Euler angles `(roll, pitch, yaw)`, i.e.
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)`. Angular velocities are expressed in
//! the inertial frame throughout the crate.

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default distance kept from the pitch representation singularity [rad].
pub const DEFAULT_PITCH_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6 {
    pub position: Vector3<f64>,
    /// (roll, pitch, yaw)
    pub euler: Vector3<f64>,
}

impl Pose6 {
    pub fn new(position: Vector3<f64>, euler: Vector3<f64>) -> Self {
        Self {
            position,
            euler: wrap_euler(&euler),
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::from_slice(v.as_slice())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.position);
        v.fixed_rows_mut::<3>(3).copy_from(&self.euler);
        v
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        euler_to_rotation(&self.euler)
    }

    pub fn pitch(&self) -> f64 {
        self.euler[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            linear: v.fixed_rows::<3>(0).into_owned(),
            angular: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        stack(&self.linear, &self.angular)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Self { force, torque }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            force: v.fixed_rows::<3>(0).into_owned(),
            torque: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        stack(&self.force, &self.torque)
    }
}

pub fn stack(top: &Vector3<f64>, bottom: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = a - two_pi * ((a - PI) / two_pi).ceil();
    // guard the open end against rounding
    if w <= -PI {
        w + two_pi
    } else {
        w
    }
}

pub fn wrap_euler(e: &Vector3<f64>) -> Vector3<f64> {
    e.map(wrap_angle)
}

/// ZYX Euler angles to the body-to-inertial rotation matrix.
pub fn euler_to_rotation(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sr, cr) = euler[0].sin_cos();
    let (sp, cp) = euler[1].sin_cos();
    let (sy, cy) = euler[2].sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Inverse of [`euler_to_rotation`] on the principal branch `|pitch| <= pi/2`.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> Vector3<f64> {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    Vector3::new(roll, pitch, yaw)
}

/// Matrix `T` with `omega = T(euler) * euler_dot` (inertial-frame angular velocity).
pub fn euler_rate_matrix(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sp, cp) = euler[1].sin_cos();
    let (sy, cy) = euler[2].sin_cos();
    Matrix3::new(cy * cp, -sy, 0.0, sy * cp, cy, 0.0, -sp, 0.0, 1.0)
}

fn check_pitch(euler: &Vector3<f64>, margin: f64) -> Result<()> {
    let limit = PI / 2.0 - margin;
    if !(euler[1].abs() < limit) {
        return Err(Error::RepresentationSingularity {
            pitch: euler[1].abs(),
            limit,
        });
    }
    Ok(())
}

/// Inverse of [`euler_rate_matrix`]; refused within `margin` of the pitch singularity.
pub fn euler_rate_matrix_inverse(euler: &Vector3<f64>, margin: f64) -> Result<Matrix3<f64>> {
    check_pitch(euler, margin)?;
    let (sp, cp) = euler[1].sin_cos();
    let (sy, cy) = euler[2].sin_cos();
    let tp = sp / cp;
    Ok(Matrix3::new(
        cy / cp,
        sy / cp,
        0.0,
        -sy,
        cy,
        0.0,
        cy * tp,
        sy * tp,
        1.0,
    ))
}

/// Block map `[p_dot; euler_dot] -> [p_dot; omega]`.
pub fn euler_rate_jacobian(euler: &Vector3<f64>, margin: f64) -> Result<Matrix6<f64>> {
    check_pitch(euler, margin)?;
    let mut j = Matrix6::identity();
    j.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&euler_rate_matrix(euler));
    Ok(j)
}

/// Block map `[p_dot; omega] -> [p_dot; euler_dot]`.
pub fn euler_rate_jacobian_inverse(euler: &Vector3<f64>, margin: f64) -> Result<Matrix6<f64>> {
    let tinv = euler_rate_matrix_inverse(euler, margin)?;
    let mut j = Matrix6::identity();
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&tinv);
    Ok(j)
}

pub fn skew(l: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -l.z, l.y, l.z, 0.0, -l.x, -l.y, l.x, 0.0)
}

/// Position difference `a - b` followed by per-axis wrapped Euler differences.
pub fn pose_error(a: &Pose6, b: &Pose6) -> Vector6<f64> {
    let dp = a.position - b.position;
    let de = (a.euler - b.euler).map(wrap_angle);
    stack(&dp, &de)
}

/// Rotation vector `theta * axis` of `a * b^T` (inertial frame).
pub fn rotation_error(a: &Matrix3<f64>, b: &Matrix3<f64>) -> Vector3<f64> {
    let m = a * b.transpose();
    let v = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5;
    let c = 0.5 * (m.trace() - 1.0);
    if c < 0.0 {
        // near a half turn the skew part loses the axis
        return Rotation3::from_matrix_unchecked(m).scaled_axis();
    }
    let s = v.norm();
    if s < 1e-300 {
        return Vector3::zeros();
    }
    v * (s.atan2(c) / s)
}
