//! Rigid-grasp coupling between the agents and the payload.
//!
//! Agent `i` holds the object at the body-frame offset `l_i`; its
//! end-effector pose is `x_O + [R_O l_i; alpha_i]`. Velocity maps use the
//! inertial lever `r_i = -R_O l_i` from the grasp point to the object CoM:
//! `v_O = J_iO v_i` with `J_iO = [I, -S(r_i); 0, I]` and `J_Oi = J_iO^-1`.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::object::{object_terms, ObjectParams, ObjectState};
use crate::spatial::{self, skew, wrap_euler, Pose6, Twist};
use crate::uvms::{dvec6, AgentDynamics, JointState, UvmsModel};

/// Condition number of `M M^T` above which the distributed inertia is rejected.
pub const MAX_FLOW_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspPoint {
    /// Object-frame position of the end-effector [m].
    pub offset: [f64; 3],
    /// Constant Euler offset added to the object attitude [rad].
    #[serde(default)]
    pub euler_offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GraspGeometry {
    pub points: Vec<GraspPoint>,
}

impl GraspGeometry {
    pub fn new(points: Vec<GraspPoint>) -> Self {
        Self { points }
    }

    pub fn agents(&self) -> usize {
        self.points.len()
    }

    pub fn offset(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.points[i].offset)
    }

    pub fn euler_offset(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.points[i].euler_offset)
    }

    /// End-effectors must be at least two agent radii apart.
    pub fn validate(&self, agent_radius: f64) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Validation("grasp: at least one grasp point is required".into()));
        }
        for i in 0..self.agents() {
            for j in i + 1..self.agents() {
                let d = (self.offset(i) - self.offset(j)).norm();
                if d < 2.0 * agent_radius {
                    return Err(Error::Validation(format!(
                        "grasp points {i} and {j} are {d:.3} m apart; need at least 2 * agent_radius = {:.3} m",
                        2.0 * agent_radius
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LoadSharing {
    c: Vec<f64>,
}

impl LoadSharing {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::Validation("load sharing: empty coefficient list".into()));
        }
        if c.len() == 1 {
            if c[0] != 1.0 {
                return Err(Error::Validation("load sharing: a single agent must carry c = 1".into()));
            }
            return Ok(Self { c });
        }
        if let Some((i, v)) = c.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v < 1.0)) {
            return Err(Error::Validation(format!("load sharing: c[{i}] = {v} must lie in (0, 1)")));
        }
        let sum: f64 = c.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "load sharing: coefficients must sum to 1 (got {sum}), the per-agent load shares would not add up to the object"
            )));
        }
        Ok(Self { c })
    }

    pub fn equal(n: usize) -> Self {
        Self { c: vec![1.0 / n as f64; n] }
    }

    pub fn get(&self, i: usize) -> f64 {
        self.c[i]
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.c
    }
}

impl TryFrom<Vec<f64>> for LoadSharing {
    type Error = Error;
    fn try_from(c: Vec<f64>) -> Result<Self> {
        LoadSharing::new(c)
    }
}

impl From<LoadSharing> for Vec<f64> {
    fn from(l: LoadSharing) -> Self {
        l.c
    }
}

pub fn end_effector_target(object_pose: &Pose6, geom: &GraspGeometry, i: usize) -> Pose6 {
    let p = object_pose.position + object_pose.rotation() * geom.offset(i);
    Pose6::new(p, wrap_euler(&(object_pose.euler + geom.euler_offset(i))))
}

/// `(J_iO, J_Oi)` for an inertial grasp-to-CoM lever `r`.
pub fn coupling_from_lever(r: &Vector3<f64>) -> (Matrix6<f64>, Matrix6<f64>) {
    let s = skew(r);
    let mut to_object = Matrix6::identity();
    let mut from_object = Matrix6::identity();
    to_object.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-s));
    from_object.fixed_view_mut::<3, 3>(0, 3).copy_from(&s);
    (to_object, from_object)
}

pub fn grasp_lever(geom: &GraspGeometry, i: usize, attitude: &Vector3<f64>) -> Vector3<f64> {
    -(spatial::euler_to_rotation(attitude) * geom.offset(i))
}

/// `(J_iO, J_Oi)` at the given object attitude.
pub fn object_coupling_jacobian(geom: &GraspGeometry, i: usize, attitude: &Vector3<f64>) -> (Matrix6<f64>, Matrix6<f64>) {
    coupling_from_lever(&grasp_lever(geom, i, attitude))
}

/// Time derivative of `J_iO` for a lever rotating at `omega`.
pub fn coupling_rate(r: &Vector3<f64>, omega: &Vector3<f64>) -> Matrix6<f64> {
    let mut d = Matrix6::zeros();
    d.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&omega.cross(r))));
    d
}

/// Stacked `J_Oi`, mapping the object twist to all grasp twists (6N x 6).
pub fn grasp_matrix(geom: &GraspGeometry, attitude: &Vector3<f64>) -> DMatrix<f64> {
    let n = geom.agents();
    let mut g = DMatrix::zeros(6 * n, 6);
    for i in 0..n {
        let (_, from_object) = object_coupling_jacobian(geom, i, attitude);
        g.view_mut((6 * i, 0), (6, 6)).copy_from(&from_object);
    }
    g
}

/// Object state implied by one agent's end-effector pose and twist.
pub fn reconstruct_object_state(
    ee_pose: &Pose6,
    ee_twist: &Vector6<f64>,
    geom: &GraspGeometry,
    i: usize,
    pitch_margin: f64,
) -> Result<ObjectState> {
    let euler = wrap_euler(&(ee_pose.euler - geom.euler_offset(i)));
    let limit = std::f64::consts::FRAC_PI_2 - pitch_margin;
    if euler.y.abs() >= limit {
        return Err(Error::RepresentationSingularity { pitch: euler.y.abs(), limit });
    }
    let r = spatial::euler_to_rotation(&euler);
    let position = ee_pose.position - r * geom.offset(i);
    let (to_object, _) = coupling_from_lever(&(-(r * geom.offset(i))));
    let pose = Pose6 { position, euler };
    Ok(ObjectState::new(pose, Twist::from_vector(&(to_object * ee_twist))))
}

#[derive(Debug, Clone)]
pub struct CoupledTerms {
    pub mass: Matrix6<f64>,
    pub coriolis: Vector6<f64>,
    pub damping: Vector6<f64>,
    pub restoring: Vector6<f64>,
}

/// Object-level dynamics of the whole team, from the true object state and
/// every agent's state.
pub fn coupled_terms(
    models: &[&UvmsModel],
    agents: &[JointState],
    object: &ObjectState,
    object_params: &ObjectParams,
    geom: &GraspGeometry,
) -> Result<CoupledTerms> {
    if models.len() != agents.len() || agents.len() != geom.agents() {
        return Err(Error::DimensionMismatch {
            context: "coupled_terms: agents",
            expected: geom.agents(),
            got: agents.len(),
        });
    }
    let ot = object_terms(object_params, object);
    let v_o = object.twist.to_vector();
    let mut out = CoupledTerms {
        mass: ot.mass,
        coriolis: ot.coriolis,
        damping: ot.damping,
        restoring: ot.restoring,
    };
    for (i, (model, state)) in models.iter().zip(agents).enumerate() {
        let d = model.dynamics(state)?;
        let r = grasp_lever(geom, i, &object.pose.euler);
        let (_, jo) = coupling_from_lever(&r);
        // J_Oi is the inverse of J_iO, so its rate is [0, S(rdot); 0, 0]
        let jo_dot = -coupling_rate(&r, &object.twist.angular);
        let jot = jo.transpose();
        out.mass += jot * d.task.mass * jo;
        out.coriolis += jot * (d.task.mass * (jo_dot * v_o) + d.task.coriolis);
        out.damping += jot * d.task.damping;
        out.restoring += jot * d.task.restoring;
    }
    out.mass = (out.mass + out.mass.transpose()) * 0.5;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DistributedTerms {
    /// 6 x n
    pub mass: DMatrix<f64>,
    /// Factor `A` of `mass = A J`.
    pub task_mass: Matrix6<f64>,
    pub coriolis: Vector6<f64>,
    pub damping: Vector6<f64>,
    pub restoring: Vector6<f64>,
    /// `J_Oi` at the reconstructed attitude.
    pub from_object: Matrix6<f64>,
    /// The object state this agent infers from its own measurements.
    pub object: ObjectState,
}

/// One agent's load-shared part of the team dynamics, using only that
/// agent's own joint state.
pub fn distributed_terms(
    dynamics: &AgentDynamics,
    object_params: &ObjectParams,
    geom: &GraspGeometry,
    i: usize,
    c_i: f64,
    pitch_margin: f64,
) -> Result<DistributedTerms> {
    let ee = &dynamics.kin.end_effector;
    let object = reconstruct_object_state(&dynamics.kin.ee_pose(), &ee.twist, geom, i, pitch_margin)?;
    let r = -(object.pose.rotation() * geom.offset(i));
    let (to_object, from_object) = coupling_from_lever(&r);
    let to_object_dot = coupling_rate(&r, &ee.twist.fixed_rows::<3>(3).into_owned());
    let ot = object_terms(object_params, &object);
    let jot = from_object.transpose();

    let a = ot.mass * to_object * c_i + jot * dynamics.task.mass;
    let mass = crate::uvms::from_matrix6(&a) * &ee.jacobian;

    // J_Oi^T (Lambda Jdot qdot + C_i v_i) = J_Oi^T Jbar^T C qdot
    let agent_coriolis = dynamics.task.coriolis + dynamics.task.mass * ee.bias;
    let coriolis = (ot.mass * (to_object * ee.bias + to_object_dot * ee.twist) + ot.coriolis) * c_i
        + jot * agent_coriolis;
    let damping = ot.damping * c_i + jot * dynamics.task.damping;
    let restoring = ot.restoring * c_i + jot * dynamics.task.restoring;
    Ok(DistributedTerms { mass, task_mass: a, coriolis, damping, restoring, from_object, object })
}

/// How the null space of the distributed inertia is filled when solving for
/// joint accelerations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullMotion {
    /// Plain Moore-Penrose solution, no self motion.
    MinimumNorm,
    /// Self motion follows the agent's own drift under `tau_0`, as in the plant.
    #[default]
    Dynamic,
}

/// Joint accelerations from the distributed model for a task wrench `u`.
///
/// `u` is the wrench acting at the end-effector, i.e. already including the
/// share of `tau_0` that reaches the task space.
pub fn solve_flow_acceleration(
    terms: &DistributedTerms,
    u: &Vector6<f64>,
) -> Result<(DVector<f64>, Vector6<f64>)> {
    let residual = terms.from_object.transpose() * u - terms.coriolis - terms.damping - terms.restoring;
    let m = &terms.mass;
    let mmt = crate::uvms::to_matrix6(&(m * m.transpose()));
    let ev = mmt.symmetric_eigenvalues();
    let (lo, hi) = (ev.min(), ev.max());
    if !(lo > 0.0) || hi / lo > MAX_FLOW_CONDITION {
        return Err(Error::IllConditioned { condition: if lo > 0.0 { hi / lo } else { f64::INFINITY } });
    }
    let y = mmt
        .cholesky()
        .ok_or(Error::IllConditioned { condition: hi / lo })?
        .solve(&residual);
    Ok((m.tr_mul(&dvec6(&y)), residual))
}

/// State derivative `[qdot; qddot]` of one agent under the distributed model.
#[allow(clippy::too_many_arguments)]
pub fn agent_flow(
    model: &UvmsModel,
    state: &JointState,
    u: &Vector6<f64>,
    object_params: &ObjectParams,
    geom: &GraspGeometry,
    i: usize,
    c_i: f64,
    null_motion: NullMotion,
) -> Result<DVector<f64>> {
    let dynamics = model.dynamics(state)?;
    let terms = distributed_terms(&dynamics, object_params, geom, i, c_i, model.params().pitch_margin)?;
    let qddot = flow_from_terms(model, state, &dynamics, &terms, u, null_motion)?;
    let n = state.dof();
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&state.qdot);
    out.rows_mut(n, n).copy_from(&qddot);
    Ok(out)
}

pub(crate) fn flow_from_terms(
    model: &UvmsModel,
    state: &JointState,
    dynamics: &AgentDynamics,
    terms: &DistributedTerms,
    u: &Vector6<f64>,
    null_motion: NullMotion,
) -> Result<DVector<f64>> {
    match null_motion {
        NullMotion::MinimumNorm => Ok(solve_flow_acceleration(terms, u)?.0),
        NullMotion::Dynamic => {
            // mass = A J, so the task acceleration follows from A alone; the
            // self motion is the free drift under tau_0
            let j = &dynamics.kin.end_effector.jacobian;
            let residual = terms.from_object.transpose() * u - terms.coriolis - terms.damping - terms.restoring;
            let task_acc = terms
                .task_mass
                .lu()
                .solve(&residual)
                .map(|x| dvec6(&x))
                .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
            let tau0 = model.actuation_offset(state, dynamics);
            let free = dynamics
                .mass_cholesky
                .solve(&(tau0 - &dynamics.joint.coriolis - &dynamics.joint.damping - &dynamics.joint.restoring));
            let jbar = &dynamics.task.jbar;
            let drift = &free - jbar * (j * &free);
            Ok(jbar * task_acc + drift)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn geom(l: [f64; 3]) -> GraspGeometry {
        GraspGeometry::new(vec![GraspPoint { offset: l, euler_offset: [0.0; 3] }])
    }

    #[test]
    fn zero_offset_target_is_object_pose() {
        let pose = Pose6::from_slice(&[1.0, 2.0, 3.0, 0.1, 0.2, 0.3]);
        let t = end_effector_target(&pose, &geom([0.0; 3]), 0);
        assert_eq!(t, pose);
    }

    #[test]
    fn target_offsets() {
        let g = geom([1.0, 0.0, 0.0]);
        let t = end_effector_target(&Pose6::identity(), &g, 0);
        assert_relative_eq!(t.position, Vector3::new(1.0, 0.0, 0.0));
        let yawed = Pose6::from_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, FRAC_PI_2]);
        let t = end_effector_target(&yawed, &g, 0);
        assert_relative_eq!(t.position, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn coupling_examples() {
        let (a, b) = coupling_from_lever(&Vector3::zeros());
        assert_eq!(a, Matrix6::identity());
        assert_eq!(b, Matrix6::identity());
        let (to_object, _) = coupling_from_lever(&Vector3::new(1.0, 0.0, 0.0));
        let v = to_object * Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(v, Vector6::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn grasp_matrix_shape() {
        let g = GraspGeometry::new(vec![
            GraspPoint { offset: [0.0; 3], euler_offset: [0.0; 3] },
            GraspPoint { offset: [0.0; 3], euler_offset: [0.0; 3] },
        ]);
        let m = grasp_matrix(&g, &Vector3::zeros());
        assert_eq!(m.shape(), (12, 6));
        let mut expected = DMatrix::zeros(12, 6);
        expected.view_mut((0, 0), (6, 6)).fill_with_identity();
        expected.view_mut((6, 0), (6, 6)).fill_with_identity();
        assert_eq!(m, expected);
    }

    #[test]
    fn load_sharing_validation() {
        assert!(LoadSharing::new(vec![0.5, 0.5]).is_ok());
        let err = LoadSharing::new(vec![0.6, 0.5]).unwrap_err();
        assert!(err.to_string().contains("sum to 1"));
        assert!(LoadSharing::new(vec![1.0, 0.0]).is_err());
        assert!(LoadSharing::new(vec![1.0]).is_ok());
    }

    #[test]
    fn separation_validation() {
        let g = GraspGeometry::new(vec![
            GraspPoint { offset: [-1.0, 0.0, 0.0], euler_offset: [0.0; 3] },
            GraspPoint { offset: [1.0, 0.0, 0.0], euler_offset: [0.0; 3] },
        ]);
        assert!(g.validate(1.0).is_ok());
        assert!(g.validate(1.01).is_err());
    }

    #[test]
    fn reconstruction_rejects_pitch_singularity() {
        let pose = Pose6::from_slice(&[0.0, 0.0, 0.0, 0.0, 1.56, 0.0]);
        let r = reconstruct_object_state(&pose, &Vector6::zeros(), &geom([0.0; 3]), 0, 0.05);
        assert!(matches!(r, Err(Error::RepresentationSingularity { .. })));
    }

    fn arb_vec3(scale: f64) -> impl Strategy<Value = Vector3<f64>> {
        prop::array::uniform3(-scale..scale).prop_map(Vector3::from)
    }

    proptest! {
        #[test]
        fn coupling_inverse_pair(r in arb_vec3(3.0)) {
            let (a, b) = coupling_from_lever(&r);
            prop_assert!((a * b - Matrix6::identity()).abs().max() <= 1e-12);
            prop_assert!((b * a - Matrix6::identity()).abs().max() <= 1e-12);
        }

        #[test]
        fn grasp_matrix_full_rank(l1 in arb_vec3(2.0), l2 in arb_vec3(2.0), e in arb_vec3(1.0)) {
            let g = GraspGeometry::new(vec![
                GraspPoint { offset: l1.into(), euler_offset: [0.0; 3] },
                GraspPoint { offset: l2.into(), euler_offset: [0.0; 3] },
            ]);
            let sv = grasp_matrix(&g, &e).singular_values();
            prop_assert!(sv.min() > 0.0);
        }

        #[test]
        fn reconstruction_round_trip(
            p in arb_vec3(5.0),
            e in prop::array::uniform3(-1.2..1.2f64),
            l in arb_vec3(2.0),
            a in prop::array::uniform3(-0.2..0.2f64),
            tw in prop::array::uniform6(-1.0..1.0f64),
        ) {
            let g = GraspGeometry::new(vec![GraspPoint { offset: l.into(), euler_offset: a }]);
            let pose = Pose6::new(p, Vector3::from(e));
            let target = end_effector_target(&pose, &g, 0);
            let v_o = Vector6::from_column_slice(&tw);
            let (_, jo) = object_coupling_jacobian(&g, 0, &pose.euler);
            let rec = reconstruct_object_state(&target, &(jo * v_o), &g, 0, 0.05).unwrap();
            prop_assert!((rec.pose.position - pose.position).norm() <= 1e-12);
            prop_assert!((rec.pose.euler - pose.euler).norm() <= 1e-12);
            prop_assert!((rec.twist.to_vector() - v_o).norm() <= 1e-12);
            let zero = reconstruct_object_state(&target, &Vector6::zeros(), &g, 0, 0.05).unwrap();
            prop_assert_eq!(zero.twist.to_vector(), Vector6::zeros());
        }

        #[test]
        fn coupling_rate_matches_finite_difference(r in arb_vec3(2.0), w in arb_vec3(1.0)) {
            let h = 1e-6;
            let rot = |t: f64| nalgebra::Rotation3::from_scaled_axis(w * t);
            let ja = coupling_from_lever(&(rot(h) * r)).0;
            let jb = coupling_from_lever(&(rot(-h) * r)).0;
            let fd = (ja - jb) / (2.0 * h);
            prop_assert!((fd - coupling_rate(&r, &w)).abs().max() < 1e-8);
        }
    }
}
