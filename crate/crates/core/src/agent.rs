//! One agent's local view: its own UVMS model, its own grasp point and load
//! share, and the object parameters. Everything here is computed from that
//! agent's joint state alone.

use nalgebra::{DVector, Matrix6, Vector6};

use crate::error::Result;
use crate::grasp::{self, coupling_rate, distributed_terms, DistributedTerms, GraspGeometry, GraspPoint, NullMotion};
use crate::object::{object_terms, ObjectParams};
use crate::uvms::{dvec6, right_pseudo_inverse, to_vector6, AgentDynamics, JointState, UvmsModel};

#[derive(Debug, Clone)]
pub struct Agent {
    pub model: UvmsModel,
    pub object: ObjectParams,
    grasp: GraspGeometry,
    pub share: f64,
    pub null_motion: NullMotion,
}

/// Model quantities at one agent state.
#[derive(Debug, Clone)]
pub struct AgentEval {
    pub dynamics: AgentDynamics,
    pub terms: DistributedTerms,
    /// Joint torque applied on top of `J^T u_hat`.
    pub tau0: DVector<f64>,
    /// Part of `tau0` that reaches the end-effector, `Jbar^T tau0`.
    pub task_offset: Vector6<f64>,
}

impl Agent {
    pub fn new(model: UvmsModel, object: ObjectParams, grasp: GraspPoint, share: f64, null_motion: NullMotion) -> Self {
        Self { model, object, grasp: GraspGeometry::new(vec![grasp]), share, null_motion }
    }

    pub fn grasp(&self) -> &GraspGeometry {
        &self.grasp
    }

    pub fn pitch_margin(&self) -> f64 {
        self.model.params().pitch_margin
    }

    /// `tau0 = g_q + J^T J_iO^T c g_O + N^T tau_posture`: restoring-force
    /// compensation of the agent and of its share of the object, plus arm
    /// posture regulation in the task null space.
    pub fn evaluate(&self, state: &JointState) -> Result<AgentEval> {
        let dynamics = self.model.dynamics(state)?;
        let terms = distributed_terms(&dynamics, &self.object, &self.grasp, 0, self.share, self.pitch_margin())?;
        let g_o = object_terms(&self.object, &terms.object).restoring;
        let to_object_t = inverse_transpose(&terms.from_object);
        let share_wrench = to_object_t * g_o * self.share;
        let tau0 = self.model.actuation_offset(state, &dynamics)
            + dynamics.kin.end_effector.jacobian.tr_mul(&dvec6(&share_wrench));
        let task_offset = dynamics.task.restoring + share_wrench;
        Ok(AgentEval { dynamics, terms, tau0, task_offset })
    }

    pub fn torque(&self, eval: &AgentEval, u_hat: &Vector6<f64>) -> DVector<f64> {
        eval.dynamics.kin.end_effector.jacobian.tr_mul(&dvec6(u_hat)) + &eval.tau0
    }

    /// `qddot` of the distributed model for the feedback wrench `u_hat`.
    pub fn acceleration(&self, state: &JointState, eval: &AgentEval, u_hat: &Vector6<f64>) -> Result<DVector<f64>> {
        let u = u_hat + eval.task_offset;
        grasp::flow_from_terms(&self.model, state, &eval.dynamics, &eval.terms, &u, self.null_motion)
    }

    pub fn flow(&self, state: &JointState, u_hat: &Vector6<f64>) -> Result<DVector<f64>> {
        let eval = self.evaluate(state)?;
        let qddot = self.acceleration(state, &eval, u_hat)?;
        let n = state.dof();
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&state.qdot);
        out.rows_mut(n, n).copy_from(&qddot);
        Ok(out)
    }

    /// Feedback wrench under which the distributed model gives the object
    /// the acceleration `a_ref + (v_ref - v_O) / relax`. `relax = inf` drops
    /// the velocity correction.
    pub fn reference_input(
        &self,
        state: &JointState,
        v_ref: &Vector6<f64>,
        a_ref: &Vector6<f64>,
        relax: f64,
    ) -> Result<Vector6<f64>> {
        let eval = self.evaluate(state)?;
        let ee = &eval.dynamics.kin.end_effector;
        let object = grasp::reconstruct_object_state(&eval.dynamics.kin.ee_pose(), &ee.twist, &self.grasp, 0, self.pitch_margin())?;
        let v_o = object.twist.to_vector();
        let a_cmd = a_ref + (v_ref - v_o) / relax;
        let r = -(object.pose.rotation() * self.grasp.offset(0));
        let (_, from_object) = grasp::coupling_from_lever(&r);
        let a_i = from_object * a_cmd - coupling_rate(&r, &object.twist.angular) * v_o;
        let qddot = right_pseudo_inverse(&ee.jacobian)? * dvec6(&(a_i - ee.bias));
        let t = &eval.terms;
        let lhs = to_vector6(&(&t.mass * qddot)) + t.coriolis + t.damping + t.restoring;
        Ok(inverse_transpose(&t.from_object) * lhs - eval.task_offset)
    }
}

/// `J_Oi^-T = J_iO^T`, exact for the grasp coupling structure.
fn inverse_transpose(from_object: &Matrix6<f64>) -> Matrix6<f64> {
    let mut to_object = *from_object;
    let s = from_object.fixed_view::<3, 3>(0, 3).into_owned();
    to_object.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-s));
    to_object.transpose()
}
