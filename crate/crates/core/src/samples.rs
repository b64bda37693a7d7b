//! Random team states that satisfy the rigid-grasp constraints, used by the
//! property checks.

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use rand::Rng;

use crate::error::{Error, Result};
use crate::grasp::{coupling_from_lever, coupling_rate, end_effector_target, grasp_lever, GraspGeometry, GraspPoint};
use crate::object::ObjectState;
use crate::spatial::{Pose6, Twist};
use crate::uvms::{dvec6, right_pseudo_inverse, JointState, UvmsModel};

#[derive(Debug, Clone)]
pub struct ConsistentSample {
    pub object: ObjectState,
    pub object_accel: Vector6<f64>,
    pub agents: Vec<JointState>,
    pub accels: Vec<DVector<f64>>,
}

/// Agent joint state and acceleration for a given object motion, arm
/// posture and self-motion components.
#[allow(clippy::too_many_arguments)]
pub fn agent_from_object(
    model: &UvmsModel,
    geom: &GraspGeometry,
    i: usize,
    object: &ObjectState,
    object_accel: &Vector6<f64>,
    arm: &[f64],
    null_rate: &DVector<f64>,
    null_accel: &DVector<f64>,
) -> Result<(JointState, DVector<f64>)> {
    let target = end_effector_target(&object.pose, geom, i);
    let q = model.place_vehicle(&target.position, &target.rotation(), arm)?;
    let j = model.geometric_jacobian(&q)?;
    let jp = right_pseudo_inverse(&j)?;
    let null = DMatrix::identity(model.dof(), model.dof()) - &jp * &j;

    let r = grasp_lever(geom, i, &object.pose.euler);
    let (_, from_object) = coupling_from_lever(&r);
    let v_o = object.twist.to_vector();
    let v_i = from_object * v_o;
    let qdot = &jp * dvec6(&v_i) + &null * null_rate;

    let bias = model.kinematics(&q, Some(&qdot))?.end_effector.bias;
    let from_object_dot = -coupling_rate(&r, &object.twist.angular);
    let a_i = from_object * object_accel + from_object_dot * v_o;
    let qddot = &jp * dvec6(&(a_i - bias)) + &null * null_accel;
    Ok((JointState::new(q, qdot), qddot))
}

fn uniform_vec(rng: &mut impl Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

fn uniform3(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

/// Random geometry with the agents roughly on opposite sides of the object.
pub fn random_geometry(rng: &mut impl Rng, agents: usize) -> GraspGeometry {
    let points = (0..agents)
        .map(|i| {
            let side = if i % 2 == 0 { -1.0 } else { 1.0 };
            let l = Vector3::new(side * rng.random_range(0.6..1.4), 0.0, 0.0) + uniform3(rng, 0.3);
            GraspPoint { offset: l.into(), euler_offset: [0.0; 3] }
        })
        .collect();
    GraspGeometry::new(points)
}

/// Random consistent state for the given models; arm postures are drawn
/// around each model's home posture.
pub fn random_consistent_sample(
    rng: &mut impl Rng,
    models: &[&UvmsModel],
    geom: &GraspGeometry,
) -> Result<ConsistentSample> {
    for _ in 0..100 {
        let pose = Pose6::new(
            uniform3(rng, 5.0),
            Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-3.0..3.0)),
        );
        let twist = Twist::new(uniform3(rng, 0.5), uniform3(rng, 0.3));
        let object = ObjectState::new(pose, twist);
        let object_accel = dvec_to6(&uniform_vec(rng, 6, 0.5));
        let mut agents = Vec::with_capacity(models.len());
        let mut accels = Vec::with_capacity(models.len());
        let mut ok = true;
        for (i, model) in models.iter().enumerate() {
            let home = &model.params().posture.home;
            let arm: Vec<f64> = home.iter().map(|h| h + rng.random_range(-0.4..0.4)).collect();
            let n = model.dof();
            let null_rate = uniform_vec(rng, n, 0.2);
            let null_accel = uniform_vec(rng, n, 0.2);
            match agent_from_object(model, geom, i, &object, &object_accel, &arm, &null_rate, &null_accel) {
                Ok((s, a)) if s.q[4].abs() < 1.2 => {
                    agents.push(s);
                    accels.push(a);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(ConsistentSample { object, object_accel, agents, accels });
        }
    }
    Err(Error::InfeasibleStart("could not sample a consistent team state".into()))
}

fn dvec_to6(v: &DVector<f64>) -> Vector6<f64> {
    Vector6::from_fn(|r, _| v[r])
}
