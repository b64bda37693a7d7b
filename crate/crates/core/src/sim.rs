//! Ground-truth plant: every agent and the object integrated together, the
//! rigid grasps enforced through Lagrange multipliers.
//!
//! Unknowns of one resolve are `(qddot_1..qddot_N, vdot_O, lambda_1..lambda_N)`
//! where `lambda_i` is the wrench agent `i` applies to the object at its
//! grasp. The saddle-point system is
//!
//! ```text
//! M_i qddot_i + J_i^T lambda_i             = tau_i - h_i
//! M_O vdot_O  - sum_i J_Oi^T lambda_i      = -h_O
//! J_i qddot_i - J_Oi vdot_O                = -Jdot_i qdot_i + Jdot_Oi v_O - 2 zeta w e_v - w^2 e_p
//! ```

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grasp::{coupling_rate, end_effector_target, grasp_lever, coupling_from_lever, GraspGeometry};
use crate::object::{object_pose_rate, object_terms, ObjectParams, ObjectState};
use crate::spatial::{rotation_error, stack, wrap_angle, Pose6, Twist};
use crate::uvms::{dvec6, JointState, Kinematics, UvmsModel};

mod closed_loop;

pub use closed_loop::{
    run_closed_loop, run_closed_loop_with, Acceptance, AgentRow, BoundUsage, IsolationReport, LogRow, Progress, RunLog,
    RunOptions, RunSummary, Verdict,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baumgarte {
    pub zeta: f64,
    /// [rad/s]
    pub omega: f64,
}

impl Default for Baumgarte {
    fn default() -> Self {
        Self { zeta: 1.0, omega: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub agents: Vec<JointState>,
    pub object: ObjectState,
}

/// Result of one acceleration resolve.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub qddot: Vec<DVector<f64>>,
    pub object_accel: Vector6<f64>,
    pub lambda: Vec<Vector6<f64>>,
    /// `|A x - b|_inf / max(1, |b|_inf)` of the saddle-point solve.
    pub kkt_residual: f64,
    /// `|M_O vdot_O + h_O - G^T lambda|_inf`.
    pub third_law_residual: f64,
    /// `det(J_i J_i^T)` per agent.
    pub singularity: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Plant {
    pub models: Vec<UvmsModel>,
    pub object: ObjectParams,
    pub geom: GraspGeometry,
    pub baumgarte: Baumgarte,
    pub pitch_margin: f64,
}

/// Grasp pose and velocity residuals of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspResidual {
    pub pose: Vector6<f64>,
    pub velocity: Vector6<f64>,
}

impl Plant {
    pub fn new(models: Vec<UvmsModel>, object: ObjectParams, geom: GraspGeometry, baumgarte: Baumgarte) -> Result<Self> {
        if models.len() != geom.agents() {
            return Err(Error::DimensionMismatch { context: "plant agents", expected: geom.agents(), got: models.len() });
        }
        let pitch_margin = models.iter().map(|m| m.params().pitch_margin).fold(f64::INFINITY, f64::min);
        Ok(Self { models, object, geom, baumgarte, pitch_margin })
    }

    pub fn agents(&self) -> usize {
        self.models.len()
    }

    fn residual_from(&self, kin: &Kinematics, object: &ObjectState, i: usize) -> GraspResidual {
        let target = end_effector_target(&object.pose, &self.geom, i);
        let ee = &kin.end_effector;
        let pose = stack(&(ee.position - target.position), &rotation_error(&ee.rotation, &target.rotation()));
        let r = grasp_lever(&self.geom, i, &object.pose.euler);
        let (_, from_object) = coupling_from_lever(&r);
        let velocity = ee.twist - from_object * object.twist.to_vector();
        GraspResidual { pose, velocity }
    }

    pub fn grasp_residual(&self, state: &PlantState, i: usize) -> Result<GraspResidual> {
        let a = &state.agents[i];
        let kin = self.models[i].kinematics(&a.q, Some(&a.qdot))?;
        Ok(self.residual_from(&kin, &state.object, i))
    }

    /// Largest grasp pose residual norm over the agents.
    pub fn max_grasp_residual(&self, state: &PlantState) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..self.agents() {
            worst = worst.max(self.grasp_residual(state, i)?.pose.norm());
        }
        Ok(worst)
    }

    /// Solves the saddle-point system for the given joint torques.
    pub fn resolve(&self, state: &PlantState, tau: &[DVector<f64>]) -> Result<Resolved> {
        let n_agents = self.agents();
        let dofs: Vec<usize> = self.models.iter().map(|m| m.dof()).collect();
        let n_q: usize = dofs.iter().sum();
        let size = n_q + 6 + 6 * n_agents;
        let lam0 = n_q + 6;
        let mut a = DMatrix::zeros(size, size);
        let mut b = DVector::zeros(size);

        let obj = &state.object;
        let ot = object_terms(&self.object, obj);
        a.view_mut((n_q, n_q), (6, 6)).copy_from(&ot.mass);
        b.rows_mut(n_q, 6).copy_from(&(-(ot.coriolis + ot.damping + ot.restoring)));
        let v_o = obj.twist.to_vector();
        let (bz, bw) = (2.0 * self.baumgarte.zeta * self.baumgarte.omega, self.baumgarte.omega.powi(2));

        let mut singularity = Vec::with_capacity(n_agents);
        let mut off = 0;
        for i in 0..n_agents {
            let n = dofs[i];
            let s = &state.agents[i];
            if tau[i].len() != n {
                return Err(Error::DimensionMismatch { context: "plant torque", expected: n, got: tau[i].len() });
            }
            let (kin, jt) = self.models[i].joint_dynamics(s)?;
            let j = &kin.end_effector.jacobian;
            singularity.push(crate::uvms::gram_determinant(j));
            a.view_mut((off, off), (n, n)).copy_from(&jt.mass);
            b.rows_mut(off, n).copy_from(&(&tau[i] - &jt.coriolis - &jt.damping - &jt.restoring));

            let r = grasp_lever(&self.geom, i, &obj.pose.euler);
            let (_, from_object) = coupling_from_lever(&r);
            let lrow = lam0 + 6 * i;
            a.view_mut((off, lrow), (n, 6)).copy_from(&j.transpose());
            a.view_mut((lrow, off), (6, n)).copy_from(j);
            a.view_mut((n_q, lrow), (6, 6)).copy_from(&(-from_object.transpose()));
            a.view_mut((lrow, n_q), (6, 6)).copy_from(&(-from_object));

            let res = self.residual_from(&kin, obj, i);
            let from_object_dot = -coupling_rate(&r, &obj.twist.angular);
            let rhs = -kin.end_effector.bias + from_object_dot * v_o - res.velocity * bz - res.pose * bw;
            b.rows_mut(lrow, 6).copy_from(&rhs);
            off += n;
        }

        let lu = a.clone().lu();
        let mut x = lu.solve(&b).ok_or_else(|| Error::SingularKkt { detail: pivot_report(&a) })?;
        // one round of iterative refinement
        let r = &b - &a * &x;
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
        let kkt_residual = (&a * &x - &b).amax() / b.amax().max(1.0);
        if !kkt_residual.is_finite() {
            return Err(Error::SingularKkt { detail: pivot_report(&a) });
        }

        let mut qddot = Vec::with_capacity(n_agents);
        let mut off = 0;
        for n in &dofs {
            qddot.push(x.rows(off, *n).into_owned());
            off += n;
        }
        let object_accel = Vector6::from_fn(|r, _| x[n_q + r]);
        let lambda: Vec<Vector6<f64>> = (0..n_agents).map(|i| Vector6::from_fn(|r, _| x[lam0 + 6 * i + r])).collect();
        let mut net = Vector6::zeros();
        for (i, l) in lambda.iter().enumerate() {
            let (_, from_object) = coupling_from_lever(&grasp_lever(&self.geom, i, &obj.pose.euler));
            net += from_object.transpose() * l;
        }
        let third_law_residual = (ot.mass * object_accel + ot.coriolis + ot.damping + ot.restoring - net).amax();
        Ok(Resolved { qddot, object_accel, lambda, kkt_residual, third_law_residual, singularity })
    }

    fn derivative<F>(&self, state: &PlantState, torque: &F) -> Result<(Resolved, Vector6<f64>)>
    where
        F: Fn(usize, &JointState) -> Result<DVector<f64>>,
    {
        let tau = (0..self.agents()).map(|i| torque(i, &state.agents[i])).collect::<Result<Vec<_>>>()?;
        let resolved = self.resolve(state, &tau)?;
        let pose_rate = object_pose_rate(&state.object, self.pitch_margin)?;
        Ok((resolved, pose_rate))
    }

    /// One RK4 step of length `dt`; torques are re-evaluated at every stage
    /// by `torque(agent, state)`. Returns the new state and the resolve at
    /// the start of the step.
    pub fn step<F>(&self, state: &PlantState, torque: F, dt: f64) -> Result<(PlantState, Resolved)>
    where
        F: Fn(usize, &JointState) -> Result<DVector<f64>>,
    {
        if !(dt > 0.0) {
            return Err(Error::Validation(format!("plant step must be positive, got {dt}")));
        }
        // `stage` holds the state the derivative `k` was taken at
        let advance = |k: &(Resolved, Vector6<f64>), stage: &PlantState, t: f64| -> PlantState {
            let agents = state
                .agents
                .iter()
                .zip(&stage.agents)
                .zip(&k.0.qddot)
                .map(|((s, at), a)| JointState::new(&s.q + &at.qdot * t, &s.qdot + a * t))
                .collect();
            let pv = state.object.pose.to_vector() + k.1 * t;
            let tw = state.object.twist.to_vector() + k.0.object_accel * t;
            PlantState { agents, object: ObjectState::new(raw_pose(&pv), Twist::from_vector(&tw)) }
        };
        let k1 = self.derivative(state, &torque)?;
        let s2 = advance(&k1, state, dt / 2.0);
        let k2 = self.derivative(&s2, &torque)?;
        let s3 = advance(&k2, &s2, dt / 2.0);
        let k3 = self.derivative(&s3, &torque)?;
        let s4 = advance(&k3, &s3, dt);
        let k4 = self.derivative(&s4, &torque)?;

        let w = dt / 6.0;
        let agents = (0..self.agents())
            .map(|i| {
                let s = &state.agents[i];
                let (a1, a2, a3, a4) = (&k1.0.qddot[i], &k2.0.qddot[i], &k3.0.qddot[i], &k4.0.qddot[i]);
                let v2 = &s.qdot + a1 * (dt / 2.0);
                let v3 = &s.qdot + a2 * (dt / 2.0);
                let v4 = &s.qdot + a3 * dt;
                let dq = (&s.qdot + v2 * 2.0 + v3 * 2.0 + v4) * w;
                let dv = (a1 + a2 * 2.0 + a3 * 2.0 + a4) * w;
                let mut q = &s.q + dq;
                for k in 3..6 {
                    q[k] = wrap_angle(q[k]);
                }
                JointState::new(q, &s.qdot + dv)
            })
            .collect();
        let pv = state.object.pose.to_vector() + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * w;
        let tw = state.object.twist.to_vector()
            + (k1.0.object_accel + k2.0.object_accel * 2.0 + k3.0.object_accel * 2.0 + k4.0.object_accel) * w;
        let next = PlantState { agents, object: ObjectState::new(Pose6::from_vector(&pv), Twist::from_vector(&tw)) };
        Ok((next, k1.0))
    }

    /// Agent states that satisfy the grasp exactly for a resting object, by
    /// damped least squares from the given joint guesses.
    pub fn initial_state(&self, object: &ObjectState, guesses: &[DVector<f64>]) -> Result<PlantState> {
        let mut agents = Vec::with_capacity(self.agents());
        for (i, m) in self.models.iter().enumerate() {
            let target = end_effector_target(&object.pose, &self.geom, i);
            let free = vec![true; m.dof()];
            let q = m
                .inverse_kinematics(&target.position, &target.rotation(), &guesses[i], &free, 1e-12)
                .map_err(|e| Error::InfeasibleStart(format!("agent {i}: {e}")))?;
            let r = grasp_lever(&self.geom, i, &object.pose.euler);
            let (_, from_object) = coupling_from_lever(&r);
            let v_i = from_object * object.twist.to_vector();
            let j = m.geometric_jacobian(&q)?;
            let jp = crate::uvms::right_pseudo_inverse(&j)?;
            agents.push(JointState::new(q, jp * dvec6(&v_i)));
        }
        Ok(PlantState { agents, object: *object })
    }

    /// Total kinetic energy of agents and object.
    pub fn kinetic_energy(&self, state: &PlantState) -> Result<f64> {
        let mut e = crate::object::kinetic_energy(&self.object, &state.object);
        for (m, s) in self.models.iter().zip(&state.agents) {
            e += m.kinetic_energy(s)?;
        }
        Ok(e)
    }
}

/// Pose from an intermediate RK4 stage vector, left unwrapped.
fn raw_pose(v: &Vector6<f64>) -> Pose6 {
    Pose6 { position: Vector3::new(v[0], v[1], v[2]), euler: Vector3::new(v[3], v[4], v[5]) }
}

fn pivot_report(a: &DMatrix<f64>) -> String {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    format!("{}x{} system, singular values in [{min:.3e}, {max:.3e}]", a.nrows(), a.ncols())
}
