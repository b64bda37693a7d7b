//! Rigid payload carried by the team.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{self, Pose6, Twist};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectParams {
    /// Body-frame generalized inertia about the CoM, rigid body plus added mass.
    pub mass_matrix: [[f64; 6]; 6],
    /// Body-frame linear damping.
    pub linear_damping: [[f64; 6]; 6],
    /// Body-frame quadratic damping, diagonal.
    pub quadratic_damping: [f64; 6],
    /// Weight minus buoyancy [N]; positive sinks.
    pub net_restoring: f64,
    /// Where the net restoring force acts, body frame [m].
    pub restoring_offset: [f64; 3],
    pub bounding_radius: f64,
}

fn to_matrix6(rows: &[[f64; 6]; 6]) -> Matrix6<f64> {
    Matrix6::from_fn(|r, c| rows[r][c])
}

impl ObjectParams {
    /// Uniform solid cylinder along the body x axis with a simple added-mass
    /// guess; the numbers are placeholders, not measured data.
    pub fn cylinder(mass: f64, length: f64, radius: f64, net_restoring: f64, bounding_radius: f64) -> Self {
        let ixx = 0.5 * mass * radius * radius;
        let iyy = mass * (3.0 * radius * radius + length * length) / 12.0;
        let added = std::f64::consts::PI * 1000.0 * radius * radius * length;
        let diag = [
            mass + 0.1 * added,
            mass + added,
            mass + added,
            ixx,
            iyy + added * length * length / 12.0,
            iyy + added * length * length / 12.0,
        ];
        let mut m = [[0.0; 6]; 6];
        let mut d = [[0.0; 6]; 6];
        let lin = [1.0, 4.0, 4.0, 0.05, 0.5, 0.5];
        for k in 0..6 {
            m[k][k] = diag[k];
            d[k][k] = lin[k];
        }
        ObjectParams {
            mass_matrix: m,
            linear_damping: d,
            quadratic_damping: [2.0, 8.0, 8.0, 0.02, 0.3, 0.3],
            net_restoring,
            restoring_offset: [0.0; 3],
            bounding_radius,
        }
    }

    pub fn inertia(&self) -> Matrix6<f64> {
        to_matrix6(&self.mass_matrix)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.inertia();
        if (m - m.transpose()).abs().max() > 1e-12 * m.abs().max() {
            return Err(Error::Validation("object.mass_matrix must be symmetric".into()));
        }
        if m.cholesky().is_none() {
            return Err(Error::Validation("object.mass_matrix must be positive definite".into()));
        }
        if !(self.bounding_radius > 0.0) {
            return Err(Error::Validation("object.bounding_radius must be positive".into()));
        }
        if self.quadratic_damping.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::Validation("object.quadratic_damping must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub pose: Pose6,
    /// Inertial-frame velocity of the CoM and angular velocity.
    pub twist: Twist,
}

impl ObjectState {
    pub fn new(pose: Pose6, twist: Twist) -> Self {
        Self { pose, twist }
    }

    pub fn at_rest(pose: Pose6) -> Self {
        Self { pose, twist: Twist::zero() }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectTerms {
    pub mass: Matrix6<f64>,
    pub coriolis: Vector6<f64>,
    pub damping: Vector6<f64>,
    pub restoring: Vector6<f64>,
}

fn block_diag(r: &Matrix3<f64>) -> Matrix6<f64> {
    let mut t = Matrix6::zeros();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    t.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    t
}

/// Inertia, velocity-dependent and restoring terms in inertial coordinates.
pub fn object_terms(params: &ObjectParams, state: &ObjectState) -> ObjectTerms {
    let r = state.pose.rotation();
    let t = block_diag(&r);
    let mb = params.inertia();
    let mass = t * mb * t.transpose();
    let mass = (mass + mass.transpose()) * 0.5;

    let v = state.twist.linear;
    let w = state.twist.angular;
    let twist = state.twist.to_vector();
    let momentum = mass * twist;
    let p = momentum.fixed_rows::<3>(0).into_owned();
    let l = momentum.fixed_rows::<3>(3).into_owned();
    let gyro = spatial::stack(&w.cross(&p), &(v.cross(&p) + w.cross(&l)));
    let coriolis = gyro - mass * spatial::stack(&w.cross(&v), &Vector3::zeros());

    let nu = t.transpose() * twist;
    let lin = to_matrix6(&params.linear_damping) * nu;
    let quad = Vector6::from_fn(|k, _| params.quadratic_damping[k] * nu[k].abs() * nu[k]);
    let damping = t * (lin + quad);

    let f = Vector3::new(0.0, 0.0, -params.net_restoring);
    let arm = r * Vector3::from(params.restoring_offset);
    let restoring = -spatial::stack(&f, &arm.cross(&f));

    ObjectTerms { mass, coriolis, damping, restoring }
}

/// Time derivative of the pose coordinates (position rate, Euler rates).
pub fn object_pose_rate(state: &ObjectState, pitch_margin: f64) -> Result<Vector6<f64>> {
    let jinv = spatial::euler_rate_jacobian_inverse(&state.pose.euler, pitch_margin)?;
    Ok(jinv * state.twist.to_vector())
}

pub fn kinetic_energy(params: &ObjectParams, state: &ObjectState) -> f64 {
    let terms = object_terms(params, state);
    let v = state.twist.to_vector();
    0.5 * v.dot(&(terms.mass * v))
}
