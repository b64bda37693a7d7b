//! Kinematics and dynamics of a single underwater vehicle-manipulator system.
//!
//! The floating base is modelled as a serial chain: three prismatic joints
//! along the inertial axes followed by yaw, pitch and roll revolute joints, so
//! the generalized velocity `qdot` is exactly the time derivative of
//! `q = [x, y, z, roll, pitch, yaw, q_arm...]`. The arm is described by
//! standard Denavit-Hartenberg parameters.
//!
//! Rigid bodies carry a constant body-frame generalized inertia (added mass is
//! folded in). The joint-space mass matrix and the Coriolis/centrifugal vector
//! are both assembled from per-body Jacobians and the Kirchhoff form of the
//! rigid-body equations, which keeps `qdot^T (Mdot - 2C) qdot = 0` exact.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::spatial::{self, euler_to_rotation, Pose6};

pub const VEHICLE_DOF: usize = 6;

/// Default step for the directional finite difference of the Jacobian.
pub const JDOT_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhLink {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedTransform {
    pub translation: [f64; 3],
    /// ZYX Euler angles (roll, pitch, yaw)
    pub euler: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleBody {
    /// Diagonal of the body-frame generalized inertia incl. added mass.
    pub mass_matrix: [f64; 6],
    pub weight: f64,
    pub buoyancy: f64,
    /// Centre of buoyancy in the body frame.
    pub center_of_buoyancy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBody {
    pub mass: f64,
    /// Centre of mass in the DH frame of the link.
    pub com: [f64; 3],
    /// Principal inertia about the CoM, link-frame axes.
    pub inertia: [f64; 3],
    pub weight: f64,
    pub buoyancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityBounds {
    pub vehicle_linear: f64,
    pub vehicle_angular: f64,
    pub arm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuationBounds {
    pub vehicle: f64,
    pub arm: f64,
}

/// Arm posture regulation acting in the null space of the end-effector task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostureControl {
    pub home: Vec<f64>,
    pub stiffness: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UvmsParams {
    pub dh: Vec<DhLink>,
    pub base_to_arm: FixedTransform,
    pub tool: FixedTransform,
    pub vehicle: VehicleBody,
    pub links: Vec<LinkBody>,
    /// Diagonal joint-space linear damping, length n.
    pub linear_damping: Vec<f64>,
    /// Joint-space quadratic damping coefficients, length n.
    pub quadratic_damping: Vec<f64>,
    /// Arm joint position bounds, length arm_dof.
    pub joint_position_bounds: Vec<f64>,
    pub velocity_bounds: VelocityBounds,
    pub actuation_bounds: ActuationBounds,
    pub posture: PostureControl,
    #[serde(default = "default_singularity_threshold")]
    pub singularity_threshold: f64,
    #[serde(default = "default_pitch_margin")]
    pub pitch_margin: f64,
}

fn default_singularity_threshold() -> f64 {
    1e-6
}

fn default_pitch_margin() -> f64 {
    spatial::DEFAULT_PITCH_MARGIN
}

impl UvmsParams {
    pub fn arm_dof(&self) -> usize {
        self.dh.len()
    }

    pub fn dof(&self) -> usize {
        VEHICLE_DOF + self.dh.len()
    }

    /// Small AUV with a 4-DoF arm at the bow. Dynamic values are placeholders.
    pub fn bow_arm_default() -> Self {
        let dh = vec![
            DhLink { a: 0.08, alpha: -PI / 2.0, d: 0.0, theta_offset: 0.0 },
            DhLink { a: 0.30, alpha: 0.0, d: 0.0, theta_offset: 0.0 },
            DhLink { a: 0.0, alpha: -PI / 2.0, d: 0.0, theta_offset: -PI / 2.0 },
            DhLink { a: 0.0, alpha: 0.0, d: 0.25, theta_offset: 0.0 },
        ];
        let links = vec![
            LinkBody { mass: 1.0, com: [-0.04, 0.0, 0.0], inertia: [0.004, 0.006, 0.006], weight: 10.1, buoyancy: 9.8 },
            LinkBody { mass: 1.6, com: [-0.15, 0.0, 0.0], inertia: [0.004, 0.02, 0.02], weight: 16.0, buoyancy: 15.7 },
            LinkBody { mass: 0.8, com: [0.0, 0.0, 0.0], inertia: [0.003, 0.003, 0.003], weight: 8.0, buoyancy: 7.8 },
            LinkBody { mass: 1.0, com: [0.0, 0.0, -0.12], inertia: [0.008, 0.008, 0.003], weight: 10.0, buoyancy: 9.8 },
        ];
        UvmsParams {
            dh,
            base_to_arm: FixedTransform { translation: [0.45, 0.0, -0.1], euler: [0.0; 3] },
            tool: FixedTransform::default(),
            vehicle: VehicleBody {
                mass_matrix: [30.0, 40.0, 40.0, 2.0, 4.0, 4.0],
                weight: 300.0,
                buoyancy: 300.0,
                center_of_buoyancy: [0.0, 0.0, 0.02],
            },
            links,
            linear_damping: vec![8.0, 10.0, 10.0, 2.0, 3.0, 3.0, 0.8, 0.8, 0.6, 0.3],
            quadratic_damping: vec![6.0, 8.0, 8.0, 0.5, 0.5, 0.5, 0.2, 0.2, 0.2, 0.1],
            joint_position_bounds: vec![2.0; 4],
            velocity_bounds: VelocityBounds { vehicle_linear: 0.5, vehicle_angular: 0.1, arm: 0.1 },
            actuation_bounds: ActuationBounds { vehicle: 10.0, arm: 2.0 },
            posture: PostureControl { home: vec![0.0, -0.3, 0.6, 0.0], stiffness: 2.0, damping: 1.5 },
            singularity_threshold: default_singularity_threshold(),
            pitch_margin: default_pitch_margin(),
        }
    }

    /// Same structure with every dissipative and restoring effect removed.
    pub fn conservative(&self) -> Self {
        let mut p = self.clone();
        p.linear_damping.iter_mut().for_each(|d| *d = 0.0);
        p.quadratic_damping.iter_mut().for_each(|d| *d = 0.0);
        p.vehicle.buoyancy = p.vehicle.weight;
        p.vehicle.center_of_buoyancy = [0.0; 3];
        for l in &mut p.links {
            l.buoyancy = l.weight;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        let m = self.arm_dof();
        let bad = |s: String| Err(Error::Validation(s));
        if m == 0 {
            return bad("arm must have at least one joint".into());
        }
        if self.links.len() != m {
            return bad(format!("links: expected {m} entries (one per DH row), got {}", self.links.len()));
        }
        for (name, v, len) in [
            ("linear_damping", &self.linear_damping, n),
            ("quadratic_damping", &self.quadratic_damping, n),
            ("joint_position_bounds", &self.joint_position_bounds, m),
            ("posture.home", &self.posture.home, m),
        ] {
            if v.len() != len {
                return bad(format!("{name}: expected {len} entries, got {}", v.len()));
            }
        }
        if self.vehicle.mass_matrix.iter().any(|&x| !(x > 0.0)) {
            return bad("vehicle.mass_matrix must be positive definite (all diagonal entries > 0)".into());
        }
        for (k, l) in self.links.iter().enumerate() {
            if !(l.mass > 0.0) || l.inertia.iter().any(|&x| !(x > 0.0)) {
                return bad(format!("links[{k}]: mass and inertia must be positive"));
            }
        }
        if self.linear_damping.iter().chain(&self.quadratic_damping).any(|&d| !(d >= 0.0)) {
            return bad("damping coefficients must be non-negative".into());
        }
        let positives = [
            ("velocity_bounds.vehicle_linear", self.velocity_bounds.vehicle_linear),
            ("velocity_bounds.vehicle_angular", self.velocity_bounds.vehicle_angular),
            ("velocity_bounds.arm", self.velocity_bounds.arm),
            ("actuation_bounds.vehicle", self.actuation_bounds.vehicle),
            ("actuation_bounds.arm", self.actuation_bounds.arm),
            ("singularity_threshold", self.singularity_threshold),
        ];
        for (name, v) in positives {
            if !(v > 0.0) {
                return bad(format!("{name} must be strictly positive"));
            }
        }
        if self.joint_position_bounds.iter().any(|&b| !(b > 0.0)) {
            return bad("joint_position_bounds must be strictly positive".into());
        }
        if !(self.pitch_margin > 0.0 && self.pitch_margin < PI / 2.0) {
            return bad("pitch_margin must lie in (0, pi/2)".into());
        }
        if self.posture.stiffness < 0.0 || self.posture.damping < 0.0 {
            return bad("posture gains must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Self {
        Self { q, qdot }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self { q, qdot: DVector::zeros(n) }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    /// Stacked `[q; qdot]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.q.len();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.q);
        x.rows_mut(n, n).copy_from(&self.qdot);
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        Self {
            q: x.rows(0, n).into_owned(),
            qdot: x.rows(n, n).into_owned(),
        }
    }

    pub fn vehicle_pose(&self) -> Pose6 {
        Pose6::from_slice(&self.q.as_slice()[..6])
    }
}

#[derive(Debug, Clone, Copy)]
enum JointKind {
    Prismatic,
    Revolute,
}

#[derive(Debug, Clone)]
enum Element {
    Joint { kind: JointKind, axis: Vector3<f64>, index: usize, offset: f64 },
    Fixed { translation: Vector3<f64>, rotation: Matrix3<f64> },
    Body(usize),
}

#[derive(Debug, Clone)]
struct BodyModel {
    /// Reference point (CoM) in the attachment frame.
    offset: Vector3<f64>,
    /// Body-frame generalized inertia about the reference point.
    inertia: Matrix6<f64>,
    weight: f64,
    buoyancy: f64,
    center_of_buoyancy: Vector3<f64>,
    /// Leading Jacobian columns that can be nonzero.
    cols: usize,
}

/// Pose, twist and bias acceleration of one point together with its Jacobian.
#[derive(Debug, Clone)]
pub struct PointKinematics {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
    /// 6 x n map from `qdot` to `[linear velocity; angular velocity]`.
    pub jacobian: DMatrix<f64>,
    /// `J qdot`
    pub twist: Vector6<f64>,
    /// `Jdot qdot`
    pub bias: Vector6<f64>,
}

#[derive(Debug, Clone)]
pub struct Kinematics {
    pub end_effector: PointKinematics,
    pub bodies: Vec<PointKinematics>,
}

impl Kinematics {
    pub fn ee_pose(&self) -> Pose6 {
        Pose6::new(
            self.end_effector.position,
            spatial::rotation_to_euler(&self.end_effector.rotation),
        )
    }
}

/// Joint-space dynamic terms; the velocity-dependent ones are already
/// multiplied by `qdot`.
#[derive(Debug, Clone)]
pub struct JointSpaceTerms {
    pub mass: DMatrix<f64>,
    pub coriolis: DVector<f64>,
    pub damping: DVector<f64>,
    pub restoring: DVector<f64>,
}

/// End-effector (task-space) dynamic terms.
#[derive(Debug, Clone)]
pub struct TaskSpaceTerms {
    pub mass: Matrix6<f64>,
    pub coriolis: Vector6<f64>,
    pub damping: Vector6<f64>,
    pub restoring: Vector6<f64>,
    /// Inertia-weighted right inverse `M^-1 J^T Lambda` (n x 6).
    pub jbar: DMatrix<f64>,
}

/// Everything an agent-level computation needs at one state.
#[derive(Debug, Clone)]
pub struct AgentDynamics {
    pub kin: Kinematics,
    pub joint: JointSpaceTerms,
    pub task: TaskSpaceTerms,
    pub singularity: f64,
    pub mass_cholesky: Cholesky<f64, Dyn>,
}

#[derive(Debug, Clone)]
pub struct UvmsModel {
    params: UvmsParams,
    chain: Vec<Element>,
    bodies: Vec<BodyModel>,
}

struct Frame {
    r: Matrix3<f64>,
    p: Vector3<f64>,
    w: Vector3<f64>,
    v: Vector3<f64>,
    alpha: Vector3<f64>,
    acc: Vector3<f64>,
}

#[derive(Clone, Copy)]
struct ActiveJoint {
    kind: JointKind,
    axis: Vector3<f64>,
    pivot: Vector3<f64>,
    index: usize,
}

fn dh_fixed(link: &DhLink) -> Element {
    Element::Fixed {
        translation: Vector3::new(link.a, 0.0, link.d),
        rotation: euler_to_rotation(&Vector3::new(link.alpha, 0.0, 0.0)),
    }
}

fn fixed(t: &FixedTransform) -> Element {
    Element::Fixed {
        translation: Vector3::from(t.translation),
        rotation: euler_to_rotation(&Vector3::from(t.euler)),
    }
}

fn block_rotate(r: &Matrix3<f64>, m: &Matrix6<f64>) -> Matrix6<f64> {
    let mut t = Matrix6::zeros();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    t.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    t * m * t.transpose()
}

impl UvmsModel {
    pub fn new(params: UvmsParams) -> Result<Self> {
        params.validate()?;
        let mut chain = vec![
            Element::Joint { kind: JointKind::Prismatic, axis: Vector3::x(), index: 0, offset: 0.0 },
            Element::Joint { kind: JointKind::Prismatic, axis: Vector3::y(), index: 1, offset: 0.0 },
            Element::Joint { kind: JointKind::Prismatic, axis: Vector3::z(), index: 2, offset: 0.0 },
            Element::Joint { kind: JointKind::Revolute, axis: Vector3::z(), index: 5, offset: 0.0 },
            Element::Joint { kind: JointKind::Revolute, axis: Vector3::y(), index: 4, offset: 0.0 },
            Element::Joint { kind: JointKind::Revolute, axis: Vector3::x(), index: 3, offset: 0.0 },
            Element::Body(0),
            fixed(&params.base_to_arm),
        ];
        let v = &params.vehicle;
        let mut bodies = vec![BodyModel {
            offset: Vector3::zeros(),
            inertia: Matrix6::from_diagonal(&Vector6::from_row_slice(&v.mass_matrix)),
            weight: v.weight,
            buoyancy: v.buoyancy,
            center_of_buoyancy: Vector3::from(v.center_of_buoyancy),
            cols: VEHICLE_DOF,
        }];
        for (k, (link, body)) in params.dh.iter().zip(&params.links).enumerate() {
            chain.push(Element::Joint {
                kind: JointKind::Revolute,
                axis: Vector3::z(),
                index: VEHICLE_DOF + k,
                offset: link.theta_offset,
            });
            chain.push(dh_fixed(link));
            chain.push(Element::Body(bodies.len()));
            let mut inertia = Matrix6::zeros();
            inertia.fixed_view_mut::<3, 3>(0, 0).fill_diagonal(body.mass);
            inertia
                .fixed_view_mut::<3, 3>(3, 3)
                .copy_from(&Matrix3::from_diagonal(&Vector3::from(body.inertia)));
            bodies.push(BodyModel {
                offset: Vector3::from(body.com),
                inertia,
                weight: body.weight,
                buoyancy: body.buoyancy,
                center_of_buoyancy: Vector3::zeros(),
                cols: VEHICLE_DOF + k + 1,
            });
        }
        chain.push(fixed(&params.tool));
        Ok(Self { params, chain, bodies })
    }

    pub fn params(&self) -> &UvmsParams {
        &self.params
    }

    pub fn dof(&self) -> usize {
        self.params.dof()
    }

    fn check_dim(&self, v: &DVector<f64>, context: &'static str) -> Result<()> {
        if v.len() != self.dof() {
            return Err(Error::DimensionMismatch { context, expected: self.dof(), got: v.len() });
        }
        Ok(())
    }

    /// Walks the chain once; returns the end-effector and every body reference point.
    pub fn kinematics(&self, q: &DVector<f64>, qdot: Option<&DVector<f64>>) -> Result<Kinematics> {
        self.check_dim(q, "kinematics: q")?;
        if let Some(qd) = qdot {
            self.check_dim(qd, "kinematics: qdot")?;
        }
        let n = self.dof();
        let rate = |i: usize| qdot.map_or(0.0, |qd| qd[i]);
        let mut f = Frame {
            r: Matrix3::identity(),
            p: Vector3::zeros(),
            w: Vector3::zeros(),
            v: Vector3::zeros(),
            alpha: Vector3::zeros(),
            acc: Vector3::zeros(),
        };
        let mut active: Vec<ActiveJoint> = Vec::with_capacity(n);
        let mut bodies = Vec::with_capacity(self.bodies.len());

        for el in &self.chain {
            match el {
                Element::Joint { kind, axis, index, offset } => {
                    let u = f.r * axis;
                    let (qi, qdi) = (q[*index] + offset, rate(*index));
                    active.push(ActiveJoint { kind: *kind, axis: u, pivot: f.p, index: *index });
                    match kind {
                        JointKind::Prismatic => {
                            let d = u * qi;
                            let ud = u * qdi;
                            f.acc += f.alpha.cross(&d) + f.w.cross(&f.w.cross(&d)) + 2.0 * f.w.cross(&ud);
                            f.v += f.w.cross(&d) + ud;
                            f.p += d;
                        }
                        JointKind::Revolute => {
                            let wd = u * qdi;
                            f.alpha += f.w.cross(&wd);
                            f.w += wd;
                            f.r *= nalgebra::Rotation3::from_axis_angle(
                                &nalgebra::Unit::new_unchecked(*axis),
                                qi,
                            )
                            .matrix();
                        }
                    }
                }
                Element::Fixed { translation, rotation } => {
                    let d = f.r * translation;
                    f.acc += f.alpha.cross(&d) + f.w.cross(&f.w.cross(&d));
                    f.v += f.w.cross(&d);
                    f.p += d;
                    f.r *= rotation;
                }
                Element::Body(b) => {
                    let d = f.r * self.bodies[*b].offset;
                    bodies.push(point(&f, &active, d, n, qdot));
                }
            }
        }
        let end_effector = point(&f, &active, Vector3::zeros(), n, qdot);
        Ok(Kinematics { end_effector, bodies })
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<Pose6> {
        Ok(self.kinematics(q, None)?.ee_pose())
    }

    pub fn geometric_jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.kinematics(q, None)?.end_effector.jacobian)
    }

    /// `Jdot` by a central directional difference of the Jacobian along `qdot`.
    pub fn jacobian_time_derivative(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.jacobian_time_derivative_with_step(q, qdot, JDOT_STEP)
    }

    pub fn jacobian_time_derivative_with_step(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        step: f64,
    ) -> Result<DMatrix<f64>> {
        self.check_dim(q, "jacobian_time_derivative: q")?;
        self.check_dim(qdot, "jacobian_time_derivative: qdot")?;
        if qdot.iter().all(|&x| x == 0.0) {
            return Ok(DMatrix::zeros(6, self.dof()));
        }
        let jp = self.geometric_jacobian(&(q + qdot * step))?;
        let jm = self.geometric_jacobian(&(q - qdot * step))?;
        Ok((jp - jm) / (2.0 * step))
    }

    /// `det(J J^T)`.
    pub fn singularity_measure(&self, q: &DVector<f64>) -> Result<f64> {
        let j = self.geometric_jacobian(q)?;
        Ok(gram_determinant(&j))
    }

    pub fn joint_space_terms(&self, state: &JointState) -> Result<JointSpaceTerms> {
        let kin = self.kinematics(&state.q, Some(&state.qdot))?;
        Ok(self.joint_terms_from(&kin, &state.qdot))
    }

    /// Kinematics and joint-space terms without the task-space reduction.
    pub fn joint_dynamics(&self, state: &JointState) -> Result<(Kinematics, JointSpaceTerms)> {
        let kin = self.kinematics(&state.q, Some(&state.qdot))?;
        let terms = self.joint_terms_from(&kin, &state.qdot);
        Ok((kin, terms))
    }

    fn joint_terms_from(&self, kin: &Kinematics, qdot: &DVector<f64>) -> JointSpaceTerms {
        let n = self.dof();
        let mut mass = DMatrix::zeros(n, n);
        let mut coriolis = DVector::zeros(n);
        let mut restoring = DVector::zeros(n);
        for (body, pk) in self.bodies.iter().zip(&kin.bodies) {
            let mw = block_rotate(&pk.rotation, &body.inertia);
            let c = body.cols;
            let j = pk.jacobian.columns(0, c);
            let mj = mw * j;
            mass.view_mut((0, 0), (c, c)).gemm_tr(1.0, &j, &mj, 1.0);

            // Kirchhoff bias written in inertial coordinates
            let v = pk.twist.fixed_rows::<3>(0).into_owned();
            let w = pk.twist.fixed_rows::<3>(3).into_owned();
            let momentum = mw * pk.twist;
            let lin_mom = momentum.fixed_rows::<3>(0).into_owned();
            let ang_mom = momentum.fixed_rows::<3>(3).into_owned();
            let transport = mw * spatial::stack(&w.cross(&v), &Vector3::zeros());
            let gyro = spatial::stack(&w.cross(&lin_mom), &(v.cross(&lin_mom) + w.cross(&ang_mom)));
            let wrench = mw * pk.bias + gyro - transport;
            coriolis.rows_mut(0, c).gemv_tr(1.0, &j, &wrench, 1.0);

            let gravity = Vector3::new(0.0, 0.0, body.buoyancy - body.weight);
            let cob = pk.rotation * body.center_of_buoyancy;
            let moment = cob.cross(&Vector3::new(0.0, 0.0, body.buoyancy));
            let g = -spatial::stack(&gravity, &moment);
            restoring.rows_mut(0, c).gemv_tr(1.0, &j, &g, 1.0);
        }
        // keep the assembled inertia exactly symmetric
        let mass = (&mass + mass.transpose()) * 0.5;
        let damping = DVector::from_iterator(
            n,
            (0..n).map(|k| {
                (self.params.linear_damping[k] + self.params.quadratic_damping[k] * qdot[k].abs()) * qdot[k]
            }),
        );
        JointSpaceTerms { mass, coriolis, damping, restoring }
    }

    fn task_terms_from(
        &self,
        kin: &Kinematics,
        joint: &JointSpaceTerms,
    ) -> Result<(TaskSpaceTerms, f64, Cholesky<f64, Dyn>)> {
        let j = &kin.end_effector.jacobian;
        let measure = gram_determinant(j);
        if !(measure > self.params.singularity_threshold) {
            return Err(Error::NearSingular { measure, threshold: self.params.singularity_threshold });
        }
        let chol = joint
            .mass
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularKkt { detail: "joint-space inertia not positive definite".into() })?;
        let minv_jt = chol.solve(&j.transpose());
        let inv_lambda = to_matrix6(&(j * &minv_jt));
        let lambda = inv_lambda
            .try_inverse()
            .ok_or(Error::NearSingular { measure, threshold: self.params.singularity_threshold })?;
        let lambda = (lambda + lambda.transpose()) * 0.5;
        let jbar = &minv_jt * from_matrix6(&lambda);
        let project = |v: &DVector<f64>| -> Vector6<f64> { to_vector6(&jbar.tr_mul(v)) };
        let coriolis = project(&joint.coriolis) - lambda * kin.end_effector.bias;
        let task = TaskSpaceTerms {
            mass: lambda,
            coriolis,
            damping: project(&joint.damping),
            restoring: project(&joint.restoring),
            jbar,
        };
        Ok((task, measure, chol))
    }

    pub fn task_space_terms(&self, state: &JointState) -> Result<TaskSpaceTerms> {
        Ok(self.dynamics(state)?.task)
    }

    /// Kinematics plus joint- and task-space terms in one pass.
    pub fn dynamics(&self, state: &JointState) -> Result<AgentDynamics> {
        let kin = self.kinematics(&state.q, Some(&state.qdot))?;
        let joint = self.joint_terms_from(&kin, &state.qdot);
        let (task, singularity, mass_cholesky) = self.task_terms_from(&kin, &joint)?;
        Ok(AgentDynamics { kin, joint, task, singularity, mass_cholesky })
    }

    /// Joint torque added to `J^T u`: restoring-force compensation plus arm
    /// posture regulation projected into the task null space.
    pub fn actuation_offset(&self, state: &JointState, dynamics: &AgentDynamics) -> DVector<f64> {
        let n = self.dof();
        let p = &self.params.posture;
        let mut posture = DVector::zeros(n);
        for k in 0..self.params.arm_dof() {
            let i = VEHICLE_DOF + k;
            posture[i] = -p.stiffness * (state.q[i] - p.home[k]) - p.damping * state.qdot[i];
        }
        // N^T = I - J^T Jbar^T
        let j = &dynamics.kin.end_effector.jacobian;
        let jbar_t_post = dynamics.task.jbar.tr_mul(&posture);
        let null_post = &posture - j.tr_mul(&jbar_t_post);
        &dynamics.joint.restoring + null_post
    }

    /// Joint torque produced by the task wrench `u`: `J^T u + tau_0`.
    pub fn joint_torque(&self, state: &JointState, dynamics: &AgentDynamics, u: &Vector6<f64>) -> DVector<f64> {
        dynamics.kin.end_effector.jacobian.tr_mul(&DVector::from_column_slice(u.as_slice()))
            + self.actuation_offset(state, dynamics)
    }

    /// Unconstrained joint accelerations `M^-1 (tau - C qdot - D qdot - g)`.
    pub fn free_acceleration(&self, state: &JointState, tau: &DVector<f64>) -> Result<DVector<f64>> {
        let terms = self.joint_space_terms(state)?;
        let rhs = tau - &terms.coriolis - &terms.damping - &terms.restoring;
        terms
            .mass
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::SingularKkt { detail: "joint-space inertia not positive definite".into() })
    }

    pub fn kinetic_energy(&self, state: &JointState) -> Result<f64> {
        let terms = self.joint_space_terms(state)?;
        Ok(0.5 * state.qdot.dot(&(&terms.mass * &state.qdot)))
    }

    /// Vehicle pose that puts the end-effector at the target for a given arm
    /// configuration; closed form since the vehicle is a free rigid base.
    pub fn place_vehicle(
        &self,
        target_position: &Vector3<f64>,
        target_rotation: &Matrix3<f64>,
        arm: &[f64],
    ) -> Result<DVector<f64>> {
        if arm.len() != self.params.arm_dof() {
            return Err(Error::DimensionMismatch {
                context: "place_vehicle: arm",
                expected: self.params.arm_dof(),
                got: arm.len(),
            });
        }
        let mut q = DVector::zeros(self.dof());
        q.rows_mut(VEHICLE_DOF, arm.len()).copy_from_slice(arm);
        let local = self.kinematics(&q, None)?.end_effector;
        let rv = target_rotation * local.rotation.transpose();
        let euler = spatial::rotation_to_euler(&rv);
        let limit = PI / 2.0 - self.params.pitch_margin;
        if euler.y.abs() >= limit {
            return Err(Error::RepresentationSingularity { pitch: euler.y.abs(), limit });
        }
        let pv = target_position - rv * local.position;
        q.rows_mut(0, 3).copy_from(&pv);
        q.rows_mut(3, 3).copy_from(&euler);
        Ok(q)
    }

    /// Damped least-squares inverse kinematics over the coordinates flagged in
    /// `free`; the remaining coordinates keep their values from `guess`.
    pub fn inverse_kinematics(
        &self,
        target_position: &Vector3<f64>,
        target_rotation: &Matrix3<f64>,
        guess: &DVector<f64>,
        free: &[bool],
        tolerance: f64,
    ) -> Result<DVector<f64>> {
        self.check_dim(guess, "inverse_kinematics: guess")?;
        if free.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                context: "inverse_kinematics: free mask",
                expected: self.dof(),
                got: free.len(),
            });
        }
        let cols: Vec<usize> = (0..self.dof()).filter(|&i| free[i]).collect();
        let mut q = guess.clone();
        let damping = 1e-6;
        for _ in 0..200 {
            let pk = self.kinematics(&q, None)?.end_effector;
            let ep = target_position - pk.position;
            let er = spatial::rotation_error(target_rotation, &pk.rotation);
            let err = spatial::stack(&ep, &er);
            if err.norm() < tolerance {
                return Ok(q);
            }
            let jr = pk.jacobian.select_columns(&cols);
            let jjt = &jr * jr.transpose() + DMatrix::identity(6, 6) * damping;
            let step = jjt
                .lu()
                .solve(&DVector::from_column_slice(err.as_slice()))
                .ok_or_else(|| Error::SingularKkt { detail: "inverse kinematics step".into() })?;
            let dq = jr.tr_mul(&step);
            for (k, &c) in cols.iter().enumerate() {
                q[c] += dq[k];
            }
        }
        Err(Error::InfeasibleStart("inverse kinematics did not converge".into()))
    }
}

fn point(
    f: &Frame,
    active: &[ActiveJoint],
    offset: Vector3<f64>,
    n: usize,
    qdot: Option<&DVector<f64>>,
) -> PointKinematics {
    let position = f.p + offset;
    let mut jacobian = DMatrix::zeros(6, n);
    for j in active {
        match j.kind {
            JointKind::Prismatic => {
                jacobian.fixed_view_mut::<3, 1>(0, j.index).copy_from(&j.axis);
            }
            JointKind::Revolute => {
                let lin = j.axis.cross(&(position - j.pivot));
                jacobian.fixed_view_mut::<3, 1>(0, j.index).copy_from(&lin);
                jacobian.fixed_view_mut::<3, 1>(3, j.index).copy_from(&j.axis);
            }
        }
    }
    let (twist, bias) = if qdot.is_some() {
        let v = f.v + f.w.cross(&offset);
        let a = f.acc + f.alpha.cross(&offset) + f.w.cross(&f.w.cross(&offset));
        (spatial::stack(&v, &f.w), spatial::stack(&a, &f.alpha))
    } else {
        (Vector6::zeros(), Vector6::zeros())
    };
    PointKinematics { rotation: f.r, position, jacobian, twist, bias }
}

/// Moore-Penrose right inverse of a wide full-row-rank matrix.
pub fn right_pseudo_inverse(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let jjt = j * j.transpose();
    let inv = jjt
        .try_inverse()
        .ok_or_else(|| Error::SingularKkt { detail: "J J^T not invertible".into() })?;
    Ok(j.transpose() * inv)
}

/// Product of squared singular values over the smaller dimension; equals
/// `det(J J^T)` for wide matrices.
pub fn gram_determinant(j: &DMatrix<f64>) -> f64 {
    let g = if j.nrows() <= j.ncols() { j * j.transpose() } else { j.transpose() * j };
    g.determinant().max(0.0)
}

pub(crate) fn to_matrix6(m: &DMatrix<f64>) -> Matrix6<f64> {
    Matrix6::from_fn(|r, c| m[(r, c)])
}

pub(crate) fn from_matrix6(m: &Matrix6<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(6, 6, |r, c| m[(r, c)])
}

pub(crate) fn to_vector6(v: &DVector<f64>) -> Vector6<f64> {
    Vector6::from_fn(|r, _| v[r])
}

pub(crate) fn dvec6(v: &Vector6<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> UvmsModel {
        UvmsModel::new(UvmsParams::bow_arm_default()).unwrap()
    }

    fn random_q(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |i, _| match i {
            0..=2 => rng.random_range(-3.0..3.0),
            4 => rng.random_range(-1.0..1.0),
            _ => rng.random_range(-1.5..1.5),
        })
    }

    fn random_qdot(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Homogeneous-matrix composition, written independently of the chain walker.
    fn fk_oracle(p: &UvmsParams, q: &DVector<f64>) -> (Vector3<f64>, Matrix3<f64>) {
        use nalgebra::Matrix4;
        let h = |r: Matrix3<f64>, t: Vector3<f64>| {
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
            m
        };
        let rz = |a: f64| euler_to_rotation(&Vector3::new(0.0, 0.0, a));
        let rx = |a: f64| euler_to_rotation(&Vector3::new(a, 0.0, 0.0));
        let mut t = h(
            euler_to_rotation(&Vector3::new(q[3], q[4], q[5])),
            Vector3::new(q[0], q[1], q[2]),
        );
        t *= h(euler_to_rotation(&Vector3::from(p.base_to_arm.euler)), Vector3::from(p.base_to_arm.translation));
        for (k, l) in p.dh.iter().enumerate() {
            t *= h(rz(q[6 + k] + l.theta_offset), Vector3::zeros());
            t *= h(Matrix3::identity(), Vector3::new(0.0, 0.0, l.d));
            t *= h(Matrix3::identity(), Vector3::new(l.a, 0.0, 0.0));
            t *= h(rx(l.alpha), Vector3::zeros());
        }
        t *= h(euler_to_rotation(&Vector3::from(p.tool.euler)), Vector3::from(p.tool.translation));
        (t.fixed_view::<3, 1>(0, 3).into_owned(), t.fixed_view::<3, 3>(0, 0).into_owned())
    }

    #[test]
    fn home_pose_matches_chain_composition() {
        let m = model();
        let q = DVector::zeros(10);
        let pose = m.forward_kinematics(&q).unwrap();
        let (p, r) = fk_oracle(m.params(), &q);
        assert_relative_eq!(pose.position, p, epsilon = 1e-12);
        assert_relative_eq!(pose.rotation(), r, epsilon = 1e-12);
        // documented home: base offset + link lengths along the vehicle x axis
        assert_relative_eq!(pose.position, Vector3::new(0.45 + 0.08 + 0.30 + 0.25, 0.0, -0.1), epsilon = 1e-12);
    }

    #[test]
    fn fk_matches_oracle_random() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let q = random_q(&mut rng, 10);
            let pose = m.forward_kinematics(&q).unwrap();
            let (p, r) = fk_oracle(m.params(), &q);
            assert_relative_eq!(pose.position, p, epsilon = 1e-12);
            assert_relative_eq!(pose.rotation(), r, epsilon = 1e-12);
        }
    }

    #[test]
    fn vehicle_translation_moves_end_effector_rigidly() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_q(&mut rng, 10);
        let mut q2 = q.clone();
        let d = Vector3::new(1.5, -2.0, 0.3);
        for k in 0..3 {
            q2[k] += d[k];
        }
        let a = m.forward_kinematics(&q).unwrap();
        let b = m.forward_kinematics(&q2).unwrap();
        assert_relative_eq!(b.position - a.position, d, epsilon = 1e-12);
        assert_relative_eq!(b.euler, a.euler, epsilon = 1e-12);
    }

    #[test]
    fn yaw_by_pi_reflects_through_vehicle_axis() {
        let m = model();
        let mut q = DVector::zeros(10);
        q[6] = 0.3;
        q[7] = -0.5;
        let a = m.forward_kinematics(&q).unwrap().position;
        q[5] = PI;
        let b = m.forward_kinematics(&q).unwrap().position;
        assert_relative_eq!(b, Vector3::new(-a.x, -a.y, a.z), epsilon = 1e-12);
    }

    #[test]
    fn zero_rate_gives_zero_twist() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_q(&mut rng, 10);
        let kin = m.kinematics(&q, Some(&DVector::zeros(10))).unwrap();
        assert_eq!(kin.end_effector.twist, Vector6::zeros());
        assert_eq!(m.jacobian_time_derivative(&q, &DVector::zeros(10)).unwrap(), DMatrix::zeros(6, 10));
    }

    #[test]
    fn vehicle_translation_columns_are_identity() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_q(&mut rng, 10);
        let j = m.geometric_jacobian(&q).unwrap();
        let mut expected = DMatrix::zeros(6, 3);
        expected.view_mut((0, 0), (3, 3)).fill_with_identity();
        assert_relative_eq!(j.columns(0, 3).into_owned(), expected);
        // Euler-rate columns: angular rows equal T(euler)
        let t = spatial::euler_rate_matrix(&Vector3::new(q[3], q[4], q[5]));
        assert_relative_eq!(j.view((3, 3), (3, 3)).into_owned(), from3(&t), epsilon = 1e-12);
    }

    fn from3(m: &Matrix3<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(3, 3, |r, c| m[(r, c)])
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..100 {
            let q = random_q(&mut rng, 10);
            let j = m.geometric_jacobian(&q).unwrap();
            let r0 = m.kinematics(&q, None).unwrap().end_effector.rotation;
            let mut fd = DMatrix::zeros(6, 10);
            for k in 0..10 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[k] += h;
                qm[k] -= h;
                let kp = m.kinematics(&qp, None).unwrap().end_effector;
                let km = m.kinematics(&qm, None).unwrap().end_effector;
                let dp = (kp.position - km.position) / (2.0 * h);
                // skew(omega) = Rdot R^T
                let rdot = (kp.rotation - km.rotation) / (2.0 * h);
                let w = rdot * r0.transpose();
                let omega = Vector3::new(w[(2, 1)] - w[(1, 2)], w[(0, 2)] - w[(2, 0)], w[(1, 0)] - w[(0, 1)]) * 0.5;
                fd.fixed_view_mut::<3, 1>(0, k).copy_from(&dp);
                fd.fixed_view_mut::<3, 1>(3, k).copy_from(&omega);
            }
            let rel = (&fd - &j).norm() / j.norm();
            assert!(rel < 1e-5, "relative FD error {rel}");
        }
    }

    #[test]
    fn jdot_fd_agrees_with_exact_bias() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let q = random_q(&mut rng, 10);
            let qd = random_qdot(&mut rng, 10);
            let jd = m.jacobian_time_derivative(&q, &qd).unwrap();
            let jd_half = m.jacobian_time_derivative_with_step(&q, &qd, JDOT_STEP / 2.0).unwrap();
            assert!((&jd - &jd_half).norm() <= 1e-4 * jd.norm().max(1.0));
            let bias = m.kinematics(&q, Some(&qd)).unwrap().end_effector.bias;
            let fd_bias = &jd * &qd;
            for r in 0..6 {
                assert!((fd_bias[r] - bias[r]).abs() < 1e-6, "{} vs {}", fd_bias[r], bias[r]);
            }
        }
    }

    #[test]
    fn pure_translation_rate_gives_zero_jdot_translation_columns() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_q(&mut rng, 10);
        let mut qd = DVector::zeros(10);
        qd[0] = 0.4;
        qd[1] = -0.2;
        qd[2] = 0.1;
        let jd = m.jacobian_time_derivative(&q, &qd).unwrap();
        assert!(jd.norm() < 1e-8);
    }

    #[test]
    fn singularity_measure_is_product_of_squared_singular_values() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let q = random_q(&mut rng, 10);
            let j = m.geometric_jacobian(&q).unwrap();
            let sv = j.clone().singular_values();
            let prod: f64 = sv.iter().map(|s| s * s).product();
            let det = m.singularity_measure(&q).unwrap();
            assert!(det > 0.0);
            assert!((det - prod).abs() <= 1e-9 * prod);
        }
    }

    #[test]
    fn vehicle_block_collapses_at_pitch_singularity() {
        let m = model();
        let mut q = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.1, 0.0, 0.2, 0.2, -0.6, 0.9, 0.3]);
        let vehicle = |q: &DVector<f64>| gram_determinant(&m.geometric_jacobian(q).unwrap().columns(0, 6).into_owned());
        let regular = vehicle(&q);
        q[4] = PI / 2.0;
        assert!(regular > 0.9);
        assert!(vehicle(&q) < 1e-12);
        // the arm supplies the lost angular direction, so the full map stays regular
        assert!(m.singularity_measure(&q).unwrap() > 1e-6);
    }

    #[test]
    fn mass_matrix_is_spd_and_static_terms_vanish() {
        let m = UvmsModel::new(UvmsParams::bow_arm_default().conservative()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_q(&mut rng, 10);
        let t = m.joint_space_terms(&JointState::at_rest(q)).unwrap();
        assert!(t.mass.clone().symmetric_eigenvalues().min() > 0.0);
        assert_eq!(t.coriolis.norm(), 0.0);
        assert_eq!(t.damping.norm(), 0.0);
        assert!(t.restoring.norm() < 1e-12);
    }

    #[test]
    fn passivity_structure() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = 1e-6;
        for _ in 0..50 {
            let q = random_q(&mut rng, 10);
            let qd = random_qdot(&mut rng, 10);
            let t = m.joint_space_terms(&JointState::new(q.clone(), qd.clone())).unwrap();
            let mp = m.joint_space_terms(&JointState::at_rest(&q + &qd * h)).unwrap().mass;
            let mm = m.joint_space_terms(&JointState::at_rest(&q - &qd * h)).unwrap().mass;
            let mdot = (mp - mm) / (2.0 * h);
            let val = qd.dot(&(&mdot * &qd)) - 2.0 * qd.dot(&t.coriolis);
            let scale = 1.0 + qd.dot(&(&t.mass * &qd));
            assert!(val.abs() < 1e-7 * scale, "qdot^T (Mdot - 2C) qdot = {val}");
        }
    }

    #[test]
    fn coriolis_matches_christoffel_symbols() {
        // C(q, qdot) qdot from finite differences of M, as an independent route
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_q(&mut rng, 10);
        let qd = random_qdot(&mut rng, 10);
        let h = 1e-5;
        let n = 10;
        let dm: Vec<DMatrix<f64>> = (0..n)
            .map(|i| {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i] += h;
                qm[i] -= h;
                let a = m.joint_space_terms(&JointState::at_rest(qp)).unwrap().mass;
                let b = m.joint_space_terms(&JointState::at_rest(qm)).unwrap().mass;
                (a - b) / (2.0 * h)
            })
            .collect();
        let mut c = DVector::zeros(n);
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += 0.5 * (dm[i][(k, j)] + dm[j][(k, i)] - dm[k][(i, j)]) * qd[i] * qd[j];
                }
            }
            c[k] = s;
        }
        let t = m.joint_space_terms(&JointState::new(q, qd)).unwrap();
        assert!((&c - &t.coriolis).norm() < 1e-6 * t.coriolis.norm().max(1.0));
    }

    #[test]
    fn neutral_buoyancy_has_no_restoring_terms() {
        let mut p = UvmsParams::bow_arm_default();
        p.vehicle.center_of_buoyancy = [0.0; 3];
        for l in &mut p.links {
            l.buoyancy = l.weight;
        }
        let m = UvmsModel::new(p).unwrap();
        let q = DVector::from_element(10, 0.3);
        let t = m.joint_space_terms(&JointState::at_rest(q)).unwrap();
        assert!(t.restoring.norm() < 1e-12);
    }

    #[test]
    fn task_space_terms_properties() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let q = random_q(&mut rng, 10);
            let qd = random_qdot(&mut rng, 10);
            let state = JointState::new(q, qd.clone());
            let d = m.dynamics(&state).unwrap();
            let ev = d.task.mass.symmetric_eigenvalues();
            assert!(ev.min() > 0.0);
            // power balance for tau = J^T u
            let u = Vector6::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let tau = d.kin.end_effector.jacobian.tr_mul(&dvec6(&u));
            let v = d.kin.end_effector.twist;
            assert!((qd.dot(&tau) - v.dot(&u)).abs() < 1e-8 * (1.0 + v.dot(&u).abs()));
            // joint-space and task-space accelerations agree on the end-effector twist
            let acc = m.free_acceleration(&state, &tau).unwrap();
            let vdot = &d.kin.end_effector.jacobian * &acc + dvec6(&d.kin.end_effector.bias);
            let lhs = d.task.mass * to_vector6(&vdot) + d.task.coriolis + d.task.damping + d.task.restoring;
            assert!((lhs - u).norm() < 1e-8 * (1.0 + u.norm()));
        }
    }

    #[test]
    fn static_neutral_task_terms_vanish() {
        let m = UvmsModel::new(UvmsParams::bow_arm_default().conservative()).unwrap();
        let d = m.dynamics(&JointState::at_rest(DVector::from_element(10, 0.2))).unwrap();
        assert!(d.task.coriolis.norm() + d.task.damping.norm() + d.task.restoring.norm() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = model();
        assert!(matches!(
            m.forward_kinematics(&DVector::zeros(7)),
            Err(Error::DimensionMismatch { expected: 10, got: 7, .. })
        ));
    }

    #[test]
    fn inverse_kinematics_reaches_target() {
        let m = model();
        let mut guess = DVector::zeros(10);
        guess.rows_mut(6, 4).copy_from_slice(&[0.0, -0.3, 0.6, 0.0]);
        let target_p = Vector3::new(2.0, -1.0, 0.5);
        let target_r = euler_to_rotation(&Vector3::new(0.05, -0.1, 0.7));
        let mut free = vec![false; 10];
        free[..6].iter_mut().for_each(|f| *f = true);
        let q = m.inverse_kinematics(&target_p, &target_r, &guess, &free, 1e-13).unwrap();
        let pk = m.kinematics(&q, None).unwrap().end_effector;
        assert_relative_eq!(pk.position, target_p, epsilon = 1e-12);
        assert_relative_eq!(pk.rotation, target_r, epsilon = 1e-12);
        assert_eq!(q.rows(6, 4), guess.rows(6, 4));
    }
}
