//! State and input constraint sets as signed margins (positive = satisfied).

use nalgebra::{DVector, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::grasp::{reconstruct_object_state, GraspGeometry};
use crate::uvms::{gram_determinant, Kinematics, UvmsParams, VEHICLE_DOF};

#[derive(Debug, Clone, PartialEq)]
pub struct StateConstraintSet {
    pub pitch_limit: f64,
    pub singularity_floor: f64,
    pub joint_bounds: Vec<f64>,
    pub vehicle_linear: f64,
    pub vehicle_angular: f64,
    pub arm_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputConstraintSet {
    pub vehicle: f64,
    pub arm: f64,
    pub arm_dof: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyWeights {
    /// Model-domain constraints: object pitch and kinematic singularity.
    pub interior: f64,
    /// Joint, velocity and actuation boxes.
    pub bounds: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self { interior: 1e3, bounds: 1e2 }
    }
}

impl StateConstraintSet {
    pub fn from_params(p: &UvmsParams) -> Self {
        Self {
            pitch_limit: FRAC_PI_2 - p.pitch_margin,
            singularity_floor: p.singularity_threshold,
            joint_bounds: p.joint_position_bounds.clone(),
            vehicle_linear: p.velocity_bounds.vehicle_linear,
            vehicle_angular: p.velocity_bounds.vehicle_angular,
            arm_rate: p.velocity_bounds.arm,
        }
    }

    /// Box bounds scaled by `factor`; the model-domain limits are kept.
    pub fn tightened(&self, factor: f64) -> Self {
        Self {
            joint_bounds: self.joint_bounds.iter().map(|b| b * factor).collect(),
            vehicle_linear: self.vehicle_linear * factor,
            vehicle_angular: self.vehicle_angular * factor,
            arm_rate: self.arm_rate * factor,
            ..self.clone()
        }
    }

    pub fn count(&self) -> usize {
        2 + self.joint_bounds.len() + VEHICLE_DOF + self.joint_bounds.len()
    }

    /// Scale of each margin, used to normalize penalties.
    pub fn scales(&self) -> Vec<f64> {
        let mut s = vec![self.pitch_limit, self.singularity_floor];
        s.extend(&self.joint_bounds);
        s.extend([self.vehicle_linear; 3]);
        s.extend([self.vehicle_angular; 3]);
        s.extend(std::iter::repeat_n(self.arm_rate, self.joint_bounds.len()));
        s
    }

    pub fn labels(&self) -> Vec<String> {
        let m = self.joint_bounds.len();
        let mut l = vec!["object_pitch".to_string(), "singularity".to_string()];
        l.extend((0..m).map(|k| format!("q{}", VEHICLE_DOF + k)));
        l.extend((0..VEHICLE_DOF + m).map(|k| format!("qdot{k}")));
        l
    }

    pub fn weights(&self, w: &PenaltyWeights) -> Vec<f64> {
        let mut out = vec![w.interior; 2];
        out.extend(std::iter::repeat_n(w.bounds, self.count() - 2));
        out
    }
}

impl InputConstraintSet {
    pub fn from_params(p: &UvmsParams) -> Self {
        Self { vehicle: p.actuation_bounds.vehicle, arm: p.actuation_bounds.arm, arm_dof: p.arm_dof() }
    }

    pub fn tightened(&self, factor: f64) -> Self {
        Self { vehicle: self.vehicle * factor, arm: self.arm * factor, arm_dof: self.arm_dof }
    }

    pub fn bound(&self, k: usize) -> f64 {
        if k < VEHICLE_DOF {
            self.vehicle
        } else {
            self.arm
        }
    }

    pub fn count(&self) -> usize {
        VEHICLE_DOF + self.arm_dof
    }

    pub fn scales(&self) -> Vec<f64> {
        (0..self.count()).map(|k| self.bound(k)).collect()
    }
}

/// Margins in the order: object pitch, `det(J J^T)`, arm joint positions,
/// then every generalized velocity.
pub fn state_violations(
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    kin: &Kinematics,
    geom: &GraspGeometry,
    i: usize,
    set: &StateConstraintSet,
) -> Vec<f64> {
    let ee = &kin.end_effector;
    let mut out = Vec::with_capacity(set.count());
    // reconstruction only fails beyond the limit, which is itself a violation
    let pitch = reconstruct_object_state(&kin.ee_pose(), &ee.twist, geom, i, 1e-9)
        .map(|o| o.pose.euler.y.abs())
        .unwrap_or(FRAC_PI_2);
    out.push(set.pitch_limit - pitch);
    out.push(gram_determinant(&ee.jacobian) - set.singularity_floor);
    for (k, b) in set.joint_bounds.iter().enumerate() {
        out.push(b - q[VEHICLE_DOF + k].abs());
    }
    for k in 0..qdot.len() {
        let b = match k {
            0..=2 => set.vehicle_linear,
            3..=5 => set.vehicle_angular,
            _ => set.arm_rate,
        };
        out.push(b - qdot[k].abs());
    }
    out
}

/// Margins `bound - |tau_k|` of the joint torque `tau = J^T u + tau_0`.
pub fn input_violations(tau: &DVector<f64>, set: &InputConstraintSet) -> Vec<f64> {
    tau.iter().enumerate().map(|(k, t)| set.bound(k) - t.abs()).collect()
}

/// Joint torque for a task wrench.
pub fn applied_torque(kin: &Kinematics, u: &Vector6<f64>, tau0: &DVector<f64>) -> DVector<f64> {
    kin.end_effector.jacobian.tr_mul(&DVector::from_column_slice(u.as_slice())) + tau0
}

pub fn penalty(margins: &[f64], weights: &[f64]) -> f64 {
    margins.iter().zip(weights).map(|(m, w)| w * m.min(0.0).powi(2)).sum()
}
