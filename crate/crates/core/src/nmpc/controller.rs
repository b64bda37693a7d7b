//! Receding-horizon controller owned by one agent.
//!
//! A controller only ever receives [`LocalMeasurement`]s. Each one is checked
//! against the controller's own index and counted, so a run can show after
//! the fact that no controller saw anything but its own agent.

use std::collections::BTreeMap;

use nalgebra::Vector6;

use super::{shift_warm_start, solve_fhocp, AgentPrediction, CostBreakdown, NmpcConfig, SolveStatus};
use crate::agent::Agent;
use crate::error::{Error, Result};
use crate::grasp::reconstruct_object_state;
use crate::navfun::{propagate_reference, NavFunConfig, WaypointSequence};
use crate::object::ObjectState;
use crate::par::Execution;
use crate::spatial::Pose6;
use crate::uvms::JointState;
use crate::world::SphereWorld;

/// Position and velocity of one agent, as its own sensors report them.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMeasurement {
    pub agent: usize,
    pub time: f64,
    pub state: JointState,
}

/// Measurement reads per source agent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReadAudit {
    pub reads: BTreeMap<usize, usize>,
    pub rejected: usize,
}

impl ReadAudit {
    /// True when every accepted read came from `own` and nothing was rejected.
    pub fn is_isolated(&self, own: usize) -> bool {
        self.rejected == 0 && self.reads.keys().all(|&k| k == own)
    }
}

#[derive(Debug, Clone)]
pub struct ControlAction {
    pub input: Vector6<f64>,
    pub object: ObjectState,
    pub reference_twist: Vector6<f64>,
    pub reference_input: Vector6<f64>,
    pub cost: CostBreakdown,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Waypoints this controller considers captured at this sample.
    pub captured: Vec<usize>,
    pub waypoint: usize,
}

#[derive(Debug, Clone)]
pub struct Controller {
    id: usize,
    agent: Agent,
    world: SphereWorld,
    nav: NavFunConfig,
    waypoints: WaypointSequence,
    cfg: NmpcConfig,
    previous: Option<Vec<Vector6<f64>>>,
    audit: ReadAudit,
}

impl Controller {
    pub fn new(
        id: usize,
        agent: Agent,
        world: SphereWorld,
        nav: NavFunConfig,
        waypoints: Vec<Pose6>,
        cfg: NmpcConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        nav.validate()?;
        if waypoints.is_empty() {
            return Err(Error::Validation("at least one waypoint is required".into()));
        }
        let waypoints = WaypointSequence::new(waypoints, nav.capture_radius);
        Ok(Self { id, agent, world, nav, waypoints, cfg, previous: None, audit: ReadAudit::default() })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn audit(&self) -> &ReadAudit {
        &self.audit
    }

    pub fn finished(&self) -> bool {
        self.waypoints.finished()
    }

    /// One sampling instant: reconstruct the object from the agent's own
    /// state, rebuild the reference, solve and keep the solution for the
    /// next warm start. Returns the first input block.
    pub fn step(&mut self, m: &LocalMeasurement, exec: Execution) -> Result<ControlAction> {
        if m.agent != self.id {
            self.audit.rejected += 1;
            return Err(Error::IsolationViolation { controller: self.id, agent: m.agent });
        }
        *self.audit.reads.entry(m.agent).or_insert(0) += 1;

        let margin = self.agent.pitch_margin();
        let kin = self.agent.model.kinematics(&m.state.q, Some(&m.state.qdot))?;
        let object = reconstruct_object_state(&kin.ee_pose(), &kin.end_effector.twist, self.agent.grasp(), 0, margin)?;
        let captured = self.waypoints.update(&object.pose.position);
        let goal = *self.waypoints.active();
        let steps = self.cfg.steps();
        let reference = propagate_reference(&object, &goal, &self.world, &self.nav, steps, self.cfg.h, margin)?;

        let model = AgentPrediction::new(&self.agent, self.cfg.tightening, &self.cfg.penalty);
        let warm = self.previous.as_deref().map(shift_warm_start);
        let sol = solve_fhocp(&model, &m.state, &reference, warm.as_deref(), &self.cfg, exec)?;
        let action = ControlAction {
            input: sol.first_input(),
            object,
            reference_twist: reference.twists[0],
            reference_input: sol.reference_inputs[0],
            cost: sol.cost,
            iterations: sol.iterations,
            status: sol.status,
            captured,
            waypoint: self.waypoints.index(),
        };
        self.previous = Some(sol.inputs);
        Ok(action)
    }
}
