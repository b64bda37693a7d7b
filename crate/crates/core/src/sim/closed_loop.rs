//! Receding-horizon loop: controllers sample every `h`, the plant advances in
//! `plant_substeps` RK4 steps under a zero-order hold on the feedback wrench.

use nalgebra::{DVector, Vector6};
use serde::Serialize;

use super::{Plant, PlantState};
use crate::error::{Error, Result};
use crate::navfun::WaypointSequence;
use crate::nmpc::{Controller, LocalMeasurement, ReadAudit, SolveStatus};
use crate::par::{self, Execution};
use crate::scenario::Scenario;
use crate::uvms::VEHICLE_DOF;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub exec: Execution,
    /// Worker threads for the controller solves; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Overrides the scenario's time budget [s].
    pub budget: Option<f64>,
}

/// Progress report passed to the observer once per sampling instant.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub time: f64,
    pub waypoint: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRow {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub tau: DVector<f64>,
    pub u_hat: Vector6<f64>,
    pub lambda: Vector6<f64>,
    pub det: f64,
    /// Largest `|x| / bound` over this agent's boxes.
    pub bound_ratio: f64,
    pub grasp_residual: f64,
    pub cost: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub time: f64,
    pub object_pose: Vector6<f64>,
    pub object_twist: Vector6<f64>,
    pub reference_twist: Vector6<f64>,
    pub waypoint: usize,
    pub clearance: f64,
    pub agents: Vec<AgentRow>,
}

/// Peak use of one family of hard bounds, as `|x| / bound`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundUsage {
    pub name: String,
    pub bound: f64,
    pub max_ratio: f64,
    /// Peak over steady intervals only; zero if there were none.
    pub max_ratio_steady: f64,
}

impl BoundUsage {
    fn new(name: &str, bound: f64) -> Self {
        Self { name: name.into(), bound, max_ratio: 0.0, max_ratio_steady: 0.0 }
    }

    fn record(&mut self, value: f64, bound: f64, steady: bool) {
        let r = value.abs() / bound;
        self.max_ratio = self.max_ratio.max(r);
        if steady {
            self.max_ratio_steady = self.max_ratio_steady.max(r);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsolationReport {
    pub controller: usize,
    pub reads_own: usize,
    pub reads_foreign: usize,
    pub rejected: usize,
    pub isolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub final_time: f64,
    pub samples: usize,
    pub finished: bool,
    /// Plant-truth capture time per waypoint.
    pub capture_times: Vec<Option<f64>>,
    /// Closest approach of the object to each waypoint [m].
    pub closest_approach: Vec<f64>,
    pub path_length: f64,
    pub min_clearance: f64,
    pub min_det: Vec<f64>,
    pub max_grasp_residual: f64,
    pub max_kkt_residual: f64,
    pub max_third_law_residual: f64,
    pub bounds: Vec<BoundUsage>,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub solver_failures: usize,
    pub max_iteration_hits: usize,
    pub stalls: usize,
    /// RMS of the object twist minus the navigation reference.
    pub tracking_rms: f64,
    pub isolation: Vec<IsolationReport>,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub dt: f64,
    pub log_stride: usize,
    pub arm_dof: Vec<usize>,
    pub rows: Vec<LogRow>,
    pub summary: RunSummary,
}

/// Thresholds for judging a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acceptance {
    pub capture_radius: f64,
    pub grasp_residual: f64,
    /// Allowed transient overshoot as a fraction of the bound.
    pub overshoot: f64,
}

impl Default for Acceptance {
    fn default() -> Self {
        Self { capture_radius: 0.3, grasp_residual: 1e-5, overshoot: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl RunSummary {
    pub fn assess(&self, a: &Acceptance) -> Vec<Verdict> {
        let v = |name: &str, passed: bool, detail: String| Verdict { name: name.into(), passed, detail };
        let captured = self.capture_times.iter().all(Option::is_some)
            && self.closest_approach.iter().all(|&d| d <= a.capture_radius);
        let approach: Vec<String> = self.closest_approach.iter().map(|d| format!("{d:.3}")).collect();
        let dets: Vec<String> = self.min_det.iter().map(|d| format!("{d:.3e}")).collect();
        let worst = self
            .bounds
            .iter()
            .max_by(|x, y| x.max_ratio.total_cmp(&y.max_ratio))
            .map(|b| format!("{} at {:.4} of bound", b.name, b.max_ratio))
            .unwrap_or_default();
        let worst_steady = self.bounds.iter().map(|b| b.max_ratio_steady).fold(0.0, f64::max);
        let bounds_ok = self
            .bounds
            .iter()
            .all(|b| b.max_ratio <= 1.0 + a.overshoot && b.max_ratio_steady <= 1.0);
        vec![
            v("waypoints", captured, format!("closest approach [{}] m", approach.join(", "))),
            v("clearance", self.min_clearance > 0.0, format!("min {:.4} m", self.min_clearance)),
            v("singularity", self.min_det.iter().all(|&d| d > 0.0), format!("min det(JJ^T) [{}]", dets.join(", "))),
            v("bounds", bounds_ok, format!("{worst}; steady peak {worst_steady:.4}")),
            v(
                "grasp",
                self.max_grasp_residual <= a.grasp_residual,
                format!("max residual {:.3e}", self.max_grasp_residual),
            ),
            v(
                "isolation",
                self.isolation.iter().all(|r| r.isolated),
                format!("{} controllers audited", self.isolation.len()),
            ),
        ]
    }
}

struct Metrics {
    bounds: Vec<BoundUsage>,
    min_clearance: f64,
    min_det: Vec<f64>,
    max_grasp: f64,
    max_kkt: f64,
    max_third: f64,
    tracking_sq: f64,
    tracking_n: usize,
    closest: Vec<f64>,
    path_length: f64,
}

const JOINT: usize = 0;
const VEHICLE_LINEAR: usize = 1;
const VEHICLE_ANGULAR: usize = 2;
const ARM_RATE: usize = 3;
const VEHICLE_FORCE: usize = 4;
const ARM_TORQUE: usize = 5;

/// Worst `|x| / bound` of one agent, updating the run-wide usage.
fn record_bounds(
    usage: &mut [BoundUsage],
    plant: &Plant,
    i: usize,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    tau: &DVector<f64>,
    steady: bool,
) -> f64 {
    let p = plant.models[i].params();
    let mut worst = 0.0f64;
    let mut rec = |k: usize, x: f64, b: f64| {
        usage[k].record(x, b, steady);
        worst = worst.max(x.abs() / b);
    };
    for (j, &b) in p.joint_position_bounds.iter().enumerate() {
        rec(JOINT, q[VEHICLE_DOF + j], b);
    }
    for k in 0..qdot.len() {
        match k {
            0..=2 => rec(VEHICLE_LINEAR, qdot[k], p.velocity_bounds.vehicle_linear),
            3..=5 => rec(VEHICLE_ANGULAR, qdot[k], p.velocity_bounds.vehicle_angular),
            _ => rec(ARM_RATE, qdot[k], p.velocity_bounds.arm),
        }
    }
    for k in 0..tau.len() {
        if k < VEHICLE_DOF {
            rec(VEHICLE_FORCE, tau[k], p.actuation_bounds.vehicle);
        } else {
            rec(ARM_TORQUE, tau[k], p.actuation_bounds.arm);
        }
    }
    worst
}

fn bound_families(plant: &Plant) -> Vec<BoundUsage> {
    let p = plant.models[0].params();
    vec![
        BoundUsage::new("arm joint position", p.joint_position_bounds.iter().copied().fold(0.0, f64::max)),
        BoundUsage::new("vehicle linear velocity", p.velocity_bounds.vehicle_linear),
        BoundUsage::new("vehicle angular velocity", p.velocity_bounds.vehicle_angular),
        BoundUsage::new("arm joint velocity", p.velocity_bounds.arm),
        BoundUsage::new("vehicle generalized force", p.actuation_bounds.vehicle),
        BoundUsage::new("arm joint torque", p.actuation_bounds.arm),
    ]
}

pub fn run_closed_loop(scn: &Scenario, opts: &RunOptions) -> Result<RunLog> {
    run_closed_loop_with(scn, opts, |_| {})
}

/// Same as [`run_closed_loop`], calling `observe` after every sampling instant.
pub fn run_closed_loop_with<F: FnMut(&Progress)>(scn: &Scenario, opts: &RunOptions, mut observe: F) -> Result<RunLog> {
    let cfg = &scn.config;
    let plant = &scn.plant;
    let n = scn.agents.len();
    let h = cfg.nmpc.h;
    let substeps = cfg.run.plant_substeps;
    let dt = h / substeps as f64;
    let budget = opts.budget.unwrap_or(cfg.run.budget);
    let settle = cfg.run.settle;

    let mut controllers = (0..n)
        .map(|i| {
            Controller::new(i, scn.agents[i].clone(), scn.world.clone(), scn.nav.clone(), scn.waypoints.clone(), cfg.nmpc.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut truth = WaypointSequence::new(scn.waypoints.clone(), scn.nav.capture_radius);
    let mut capture_times = vec![None; scn.waypoints.len()];
    let mut m = Metrics {
        bounds: bound_families(plant),
        min_clearance: f64::INFINITY,
        min_det: vec![f64::INFINITY; n],
        max_grasp: 0.0,
        max_kkt: 0.0,
        max_third: 0.0,
        tracking_sq: 0.0,
        tracking_n: 0,
        closest: vec![f64::INFINITY; scn.waypoints.len()],
        path_length: 0.0,
    };

    let mut state = scn.initial.clone();
    let mut t = 0.0;
    let mut last_switch = 0.0;
    let mut inputs = vec![Vector6::zeros(); n];
    let mut reference_twist = Vector6::zeros();
    let mut costs = vec![0.0; n];
    let mut iterations = vec![0usize; n];
    let mut iteration_total = 0usize;
    let mut iteration_max = 0usize;
    let mut solves = 0usize;
    let (mut failures, mut max_hits, mut stalls) = (0usize, 0usize, 0usize);
    let mut rows = Vec::new();
    let mut samples = 0usize;
    let mut substep = 0usize;

    let capture = |truth: &mut WaypointSequence, times: &mut [Option<f64>], s: &PlantState, t: f64, last: &mut f64| {
        for k in truth.update(&s.object.pose.position) {
            times[k] = Some(t);
            *last = t;
        }
    };
    capture(&mut truth, &mut capture_times, &state, t, &mut last_switch);

    while !truth.finished() && t < budget - 1e-9 {
        // each controller sees only its own agent
        let measurements: Vec<LocalMeasurement> = state
            .agents
            .iter()
            .enumerate()
            .map(|(i, s)| LocalMeasurement { agent: i, time: t, state: s.clone() })
            .collect();
        let inner = opts.exec;
        let results = par::with_threads(opts.jobs, || {
            par::map_slice_mut(opts.exec, &mut controllers, |c| {
                let mm = &measurements[c.id()];
                c.step(mm, inner)
            })
        });
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(a) => {
                    inputs[i] = a.input;
                    costs[i] = a.cost.total();
                    iterations[i] = a.iterations;
                    iteration_total += a.iterations;
                    iteration_max = iteration_max.max(a.iterations);
                    solves += 1;
                    match a.status {
                        SolveStatus::MaxIterations => max_hits += 1,
                        SolveStatus::Stalled => stalls += 1,
                        SolveStatus::Converged => {}
                    }
                    if i == 0 {
                        reference_twist = a.reference_twist;
                    }
                }
                Err(e @ Error::IsolationViolation { .. }) => return Err(e),
                // keep the previous input
                Err(_) => failures += 1,
            }
        }
        samples += 1;

        for _ in 0..substeps {
            let steady = t - last_switch >= settle;
            let taus = scn
                .agents
                .iter()
                .zip(&state.agents)
                .zip(&inputs)
                .map(|((a, s), u)| Ok(a.torque(&a.evaluate(s)?, u)))
                .collect::<Result<Vec<_>>>()?;
            let agents = &scn.agents;
            let (next, resolved) = plant.step(&state, |i, s| Ok(agents[i].torque(&agents[i].evaluate(s)?, &inputs[i])), dt)?;

            let clearance = scn.world.clearance(&state.object.pose.position);
            m.min_clearance = m.min_clearance.min(clearance);
            m.max_kkt = m.max_kkt.max(resolved.kkt_residual);
            m.max_third = m.max_third.max(resolved.third_law_residual);
            let e = state.object.twist.to_vector() - reference_twist;
            m.tracking_sq += e.norm_squared();
            m.tracking_n += 1;
            for (k, w) in scn.waypoints.iter().enumerate() {
                m.closest[k] = m.closest[k].min((state.object.pose.position - w.position).norm());
            }
            let mut agent_rows = Vec::with_capacity(n);
            for i in 0..n {
                let s = &state.agents[i];
                m.min_det[i] = m.min_det[i].min(resolved.singularity[i]);
                let ratio = record_bounds(&mut m.bounds, plant, i, &s.q, &s.qdot, &taus[i], steady);
                let g = plant.grasp_residual(&state, i)?.pose.amax();
                m.max_grasp = m.max_grasp.max(g);
                if substep % cfg.run.log_stride == 0 {
                    agent_rows.push(AgentRow {
                        q: s.q.clone(),
                        qdot: s.qdot.clone(),
                        tau: taus[i].clone(),
                        u_hat: inputs[i],
                        lambda: resolved.lambda[i],
                        det: resolved.singularity[i],
                        bound_ratio: ratio,
                        grasp_residual: g,
                        cost: costs[i],
                        iterations: iterations[i],
                    });
                }
            }
            if substep % cfg.run.log_stride == 0 {
                rows.push(LogRow {
                    time: t,
                    object_pose: state.object.pose.to_vector(),
                    object_twist: state.object.twist.to_vector(),
                    reference_twist,
                    waypoint: truth.index(),
                    clearance,
                    agents: agent_rows,
                });
            }

            m.path_length += (next.object.pose.position - state.object.pose.position).norm();
            state = next;
            substep += 1;
            t = substep as f64 * dt;
            capture(&mut truth, &mut capture_times, &state, t, &mut last_switch);
            if truth.finished() {
                break;
            }
        }
        let goal = truth.active().position;
        observe(&Progress { time: t, waypoint: truth.index(), distance: (state.object.pose.position - goal).norm() });
    }

    // the final state counts too
    m.min_clearance = m.min_clearance.min(scn.world.clearance(&state.object.pose.position));
    m.max_grasp = m.max_grasp.max(plant.max_grasp_residual(&state)?);
    for (k, w) in scn.waypoints.iter().enumerate() {
        m.closest[k] = m.closest[k].min((state.object.pose.position - w.position).norm());
    }
    for (i, s) in state.agents.iter().enumerate() {
        m.min_det[i] = m.min_det[i].min(plant.models[i].singularity_measure(&s.q)?);
    }

    let isolation = controllers.iter().map(|c| isolation_report(c.id(), c.audit())).collect();
    let summary = RunSummary {
        scenario: cfg.name.clone(),
        final_time: t,
        samples,
        finished: truth.finished(),
        capture_times,
        closest_approach: m.closest,
        path_length: m.path_length,
        min_clearance: m.min_clearance,
        min_det: m.min_det,
        max_grasp_residual: m.max_grasp,
        max_kkt_residual: m.max_kkt,
        max_third_law_residual: m.max_third,
        bounds: m.bounds,
        mean_iterations: if solves > 0 { iteration_total as f64 / solves as f64 } else { 0.0 },
        max_iterations: iteration_max,
        solver_failures: failures,
        max_iteration_hits: max_hits,
        stalls,
        tracking_rms: if m.tracking_n > 0 { (m.tracking_sq / m.tracking_n as f64).sqrt() } else { 0.0 },
        isolation,
    };
    Ok(RunLog {
        dt,
        log_stride: cfg.run.log_stride,
        arm_dof: plant.models.iter().map(|m| m.params().arm_dof()).collect(),
        rows,
        summary,
    })
}

fn isolation_report(id: usize, audit: &ReadAudit) -> IsolationReport {
    let reads_own = audit.reads.get(&id).copied().unwrap_or(0);
    let reads_foreign = audit.reads.iter().filter(|(&k, _)| k != id).map(|(_, &v)| v).sum();
    IsolationReport { controller: id, reads_own, reads_foreign, rejected: audit.rejected, isolated: audit.is_isolated(id) }
}
