//! One agent's distributed model as the NMPC prediction.

use nalgebra::{DVector, Vector6};

use super::{Observation, PredictionModel};
use crate::agent::{Agent, AgentEval};
use crate::constraints::{
    input_violations, state_violations, InputConstraintSet, PenaltyWeights, StateConstraintSet,
};
use crate::error::Result;
use crate::grasp::reconstruct_object_state;
use crate::navfun::Reference;
use crate::uvms::JointState;

pub struct AgentPrediction<'a> {
    agent: &'a Agent,
    state_set: StateConstraintSet,
    input_set: InputConstraintSet,
    state_scales: Vec<f64>,
    input_scales: Vec<f64>,
    state_weights: Vec<f64>,
    input_weights: Vec<f64>,
}

impl<'a> AgentPrediction<'a> {
    /// Box bounds are tightened by `tightening`; margins are normalized by
    /// the tightened bounds.
    pub fn new(agent: &'a Agent, tightening: f64, weights: &PenaltyWeights) -> Self {
        let p = agent.model.params();
        let state_set = StateConstraintSet::from_params(p).tightened(tightening);
        let input_set = InputConstraintSet::from_params(p).tightened(tightening);
        let state_weights = state_set.weights(weights);
        let input_weights = vec![weights.bounds; input_set.count()];
        Self {
            agent,
            state_scales: state_set.scales(),
            input_scales: input_set.scales(),
            state_set,
            input_set,
            state_weights,
            input_weights,
        }
    }

    fn observation(&self, state: &JointState, eval: &AgentEval, u: Option<&Vector6<f64>>) -> Result<Observation> {
        let kin = &eval.dynamics.kin;
        let object = reconstruct_object_state(
            &kin.ee_pose(),
            &kin.end_effector.twist,
            self.agent.grasp(),
            0,
            self.agent.pitch_margin(),
        )?;
        let state_margins = state_violations(&state.q, &state.qdot, kin, self.agent.grasp(), 0, &self.state_set)
            .iter()
            .zip(&self.state_scales)
            .map(|(m, s)| m / s)
            .collect();
        let input_margins = match u {
            Some(u) => input_violations(&self.agent.torque(eval, u), &self.input_set)
                .iter()
                .zip(&self.input_scales)
                .map(|(m, s)| m / s)
                .collect(),
            None => Vec::new(),
        };
        Ok(Observation { pose: object.pose, twist: object.twist.to_vector(), state_margins, input_margins })
    }

    fn derivative(&self, state: &JointState, eval: &AgentEval, u: &Vector6<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        Ok((state.qdot.clone(), self.agent.acceleration(state, eval, u)?))
    }
}

fn offset(state: &JointState, dq: &DVector<f64>, dv: &DVector<f64>, t: f64) -> JointState {
    JointState::new(&state.q + dq * t, &state.qdot + dv * t)
}

impl PredictionModel for AgentPrediction<'_> {
    type State = JointState;

    fn step(&self, x: &JointState, u: &Vector6<f64>, h: f64, substeps: usize) -> Result<(Observation, JointState)> {
        let dt = h / substeps as f64;
        let first = self.agent.evaluate(x)?;
        let obs = self.observation(x, &first, Some(u))?;
        let mut s = x.clone();
        let mut eval = Some(first);
        for _ in 0..substeps {
            let e1 = match eval.take() {
                Some(e) => e,
                None => self.agent.evaluate(&s)?,
            };
            let (q1, v1) = self.derivative(&s, &e1, u)?;
            let s2 = offset(&s, &q1, &v1, dt / 2.0);
            let (q2, v2) = self.derivative(&s2, &self.agent.evaluate(&s2)?, u)?;
            let s3 = offset(&s, &q2, &v2, dt / 2.0);
            let (q3, v3) = self.derivative(&s3, &self.agent.evaluate(&s3)?, u)?;
            let s4 = offset(&s, &q3, &v3, dt);
            let (q4, v4) = self.derivative(&s4, &self.agent.evaluate(&s4)?, u)?;
            s = JointState::new(
                &s.q + (q1 + q2 * 2.0 + q3 * 2.0 + q4) * (dt / 6.0),
                &s.qdot + (v1 + v2 * 2.0 + v3 * 2.0 + v4) * (dt / 6.0),
            );
        }
        Ok((obs, s))
    }

    fn observe(&self, x: &JointState) -> Result<Observation> {
        let eval = self.agent.evaluate(x)?;
        self.observation(x, &eval, None)
    }

    fn input_scale(&self) -> Vector6<f64> {
        Vector6::repeat(self.agent.model.params().actuation_bounds.vehicle)
    }

    fn state_weights(&self) -> &[f64] {
        &self.state_weights
    }

    fn input_weights(&self) -> &[f64] {
        &self.input_weights
    }

    /// Wrenches realizing the reference twist and its finite-difference
    /// acceleration block by block, propagated under themselves.
    fn reference_inputs(&self, x0: &JointState, reference: &Reference, h: f64, substeps: usize) -> Result<Vec<Vector6<f64>>> {
        let n = reference.steps();
        let mut x = x0.clone();
        let mut out = Vec::with_capacity(n);
        // velocity errors are relaxed over one horizon
        let relax = h * n as f64;
        for k in 0..n {
            let a_ref = (reference.twists[k + 1] - reference.twists[k]) / h;
            let u = self.agent.reference_input(&x, &reference.twists[k], &a_ref, relax)?;
            out.push(u);
            if k + 1 < n {
                x = self.step(&x, &u, h, substeps)?.1;
            }
        }
        Ok(out)
    }
}
