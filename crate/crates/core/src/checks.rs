//! Numerical self-checks against independent oracles.
//!
//! Each suite returns one [`CheckResult`] per measured quantity. The CLI
//! `check` command and the acceptance tests both run these.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grasp::{
    coupled_terms, coupling_from_lever, distributed_terms, reconstruct_object_state, GraspGeometry, GraspPoint,
    LoadSharing,
};
use crate::navfun::{descend, nf_gradient, nf_value, NavFunConfig, Reference};
use crate::nmpc::{lqr_first_input, solve_fhocp, DoubleIntegrator, NmpcConfig};
use crate::object::{ObjectParams, ObjectState};
use crate::par::{map_range, Execution};
use crate::samples::{random_consistent_sample, random_geometry};
use crate::scenario::ScenarioConfig;
use crate::sim::{Baumgarte, Plant};
use crate::spatial::Pose6;
use crate::uvms::{JointState, UvmsModel, UvmsParams};
use crate::world::SphereWorld;

pub const SUITES: [&str; 5] = ["identity", "fd", "energy", "nf", "lqr"];

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub samples: usize,
    pub seconds: f64,
}

impl CheckResult {
    fn at_most(suite: &'static str, name: &'static str, measured: f64, tolerance: f64, samples: usize, t0: Instant) -> Self {
        Self {
            suite,
            name,
            measured,
            tolerance,
            passed: measured <= tolerance,
            samples,
            seconds: t0.elapsed().as_secs_f64(),
        }
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}/{}: {:.3e} (limit {:.1e}, {} samples, {:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.measured,
            self.tolerance,
            self.samples,
            self.seconds
        )
    }
}

pub fn run_suite(name: &str, exec: Execution) -> Result<Vec<CheckResult>> {
    match name {
        "identity" => identity(1000, exec),
        "fd" => finite_differences(100, exec),
        "energy" => energy(10.0, 1e-3),
        "nf" => navigation(200, 100, exec),
        "lqr" => lqr(50, exec),
        other => Err(Error::Validation(format!("unknown check suite `{other}` (known: {})", SUITES.join(", ")))),
    }
}

fn test_object() -> ObjectParams {
    let mut p = ObjectParams::cylinder(12.0, 2.4, 0.05, 2.0, 0.7);
    p.restoring_offset = [0.05, 0.0, -0.02];
    p
}

fn rel6(a: &Vector6<f64>, b: &Vector6<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Sum of the per-agent distributed terms against the coupled object-team
/// terms, over random consistent states and load shares.
pub fn identity(samples: usize, exec: Execution) -> Result<Vec<CheckResult>> {
    let t0 = Instant::now();
    let model = UvmsModel::new(UvmsParams::bow_arm_default())?;
    let obj = test_object();
    let errors = map_range(exec, samples, |k| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
        let models = [&model, &model];
        let geom = random_geometry(&mut rng, 2);
        let c1 = rng.random_range(0.05..0.95);
        let c = LoadSharing::new(vec![c1, 1.0 - c1])?;
        let s = random_consistent_sample(&mut rng, &models, &geom)?;
        let coupled = coupled_terms(&models, &s.agents, &s.object, &obj, &geom)?;
        let (mut lhs, mut damping, mut restoring) = (Vector6::zeros(), Vector6::zeros(), Vector6::zeros());
        for i in 0..2 {
            let d = model.dynamics(&s.agents[i])?;
            let t = distributed_terms(&d, &obj, &geom, i, c.get(i), 0.05)?;
            let m = &t.mass * &s.accels[i];
            lhs += Vector6::from_fn(|r, _| m[r]) + t.coriolis;
            damping += t.damping;
            restoring += t.restoring;
        }
        let rhs = coupled.mass * s.object_accel + coupled.coriolis;
        Ok(rel6(&lhs, &rhs).max(rel6(&damping, &coupled.damping)).max(rel6(&restoring, &coupled.restoring)))
    });
    let worst = errors.into_iter().collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    let elapsed = t0.elapsed().as_secs_f64();
    Ok(vec![
        CheckResult::at_most("identity", "relative_error", worst, 1e-9, samples, t0),
        CheckResult::at_most("identity", "wall_seconds", elapsed, 10.0, samples, t0),
    ])
}

fn vee(w: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(w[(2, 1)] - w[(1, 2)], w[(0, 2)] - w[(2, 0)], w[(1, 0)] - w[(0, 1)]) * 0.5
}

/// Geometric Jacobian against central differences of the forward
/// kinematics, and `J_iO J_Oi = I` for random grasp levers.
pub fn finite_differences(samples: usize, exec: Execution) -> Result<Vec<CheckResult>> {
    let t0 = Instant::now();
    let model = UvmsModel::new(UvmsParams::bow_arm_default())?;
    let n = model.dof();
    let errors = map_range(exec, samples, |k| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + k as u64);
        let mut q = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
        q[4] = rng.random_range(-1.0..1.0);
        let j = model.geometric_jacobian(&q)?;
        let r0 = model.kinematics(&q, None)?.end_effector.rotation;
        let h = 1e-6;
        let mut fd = DMatrix::zeros(6, n);
        for c in 0..n {
            let (mut qp, mut qm) = (q.clone(), q.clone());
            qp[c] += h;
            qm[c] -= h;
            let kp = model.kinematics(&qp, None)?.end_effector;
            let km = model.kinematics(&qm, None)?.end_effector;
            fd.fixed_view_mut::<3, 1>(0, c).copy_from(&((kp.position - km.position) / (2.0 * h)));
            let w = (kp.rotation - km.rotation) / (2.0 * h) * r0.transpose();
            fd.fixed_view_mut::<3, 1>(3, c).copy_from(&vee(&w));
        }
        Ok((&fd - &j).norm() / j.norm())
    });
    let worst = errors.into_iter().collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    let jac = CheckResult::at_most("fd", "jacobian_relative_error", worst, 1e-5, samples, t0);

    let t1 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2999);
    let mut inverse: f64 = 0.0;
    for _ in 0..samples {
        let r = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let (to_object, from_object) = coupling_from_lever(&r);
        inverse = inverse.max((to_object * from_object - nalgebra::Matrix6::identity()).amax());
    }
    Ok(vec![jac, CheckResult::at_most("fd", "coupling_inverse", inverse, 1e-12, samples, t1)])
}

fn massless_object() -> ObjectParams {
    ObjectParams {
        mass_matrix: [[0.0; 6]; 6],
        linear_damping: [[0.0; 6]; 6],
        quadratic_damping: [0.0; 6],
        net_restoring: 0.0,
        restoring_offset: [0.0; 3],
        bounding_radius: 0.5,
    }
}

/// Relative kinetic-energy drift of an undamped, unforced, neutrally
/// buoyant agent integrated by the plant.
pub fn energy(duration: f64, dt: f64) -> Result<Vec<CheckResult>> {
    let t0 = Instant::now();
    let model = UvmsModel::new(UvmsParams::bow_arm_default().conservative())?;
    let geom = GraspGeometry::new(vec![GraspPoint { offset: [0.0; 3], euler_offset: [0.0; 3] }]);
    let plant = Plant::new(vec![model], massless_object(), geom, Baumgarte::default())?;
    let pose = Pose6::from_slice(&[0.0, 0.0, 0.5, 0.0, 0.0, 0.0]);
    let guess = DVector::from_vec(vec![-2.0, 0.0, 0.6, 0.0, 0.0, 0.0, 0.0, -0.3, 0.6, 0.0]);
    let mut state = plant.initial_state(&ObjectState::at_rest(pose), &[guess])?;
    state.agents[0].qdot = DVector::from_vec(vec![0.1, -0.05, 0.02, 0.01, -0.02, 0.03, 0.05, -0.04, 0.03, 0.06]);
    let kin = plant.models[0].kinematics(&state.agents[0].q, Some(&state.agents[0].qdot))?;
    state.object = reconstruct_object_state(&kin.ee_pose(), &kin.end_effector.twist, &plant.geom, 0, 0.05)?;
    let e0 = plant.kinetic_energy(&state)?;
    let steps = (duration / dt).round() as usize;
    let zero = |_: usize, s: &JointState| Ok(DVector::zeros(s.q.len()));
    for _ in 0..steps {
        state = plant.step(&state, zero, dt)?.0;
    }
    let drift = ((plant.kinetic_energy(&state)? - e0) / e0).abs();
    let wall = t0.elapsed().as_secs_f64();
    Ok(vec![
        CheckResult::at_most("energy", "relative_drift", drift, 1e-6, steps, t0),
        CheckResult::at_most("energy", "wall_seconds", wall, 30.0, steps, t0),
    ])
}

fn random_free_point(rng: &mut impl Rng, world: &SphereWorld, margin: f64) -> Vector3<f64> {
    let r = world.boundary_radius;
    loop {
        let x = world.boundary_center + Vector3::from_fn(|_, _| rng.random_range(-r..r));
        if world.clearance(&x) > margin {
            return x;
        }
    }
}

/// Navigation function on the bundled world: value range, analytic gradient
/// against central differences, and gradient descent to every waypoint for
/// at least one exponent `k` in {3, 4, 6, 8}.
pub fn navigation(points: usize, starts: usize, exec: Execution) -> Result<Vec<CheckResult>> {
    let t0 = Instant::now();
    let scn = ScenarioConfig::bundled()?;
    let world = scn.world();
    let base = scn.navigation.nav();
    let goals: Vec<Vector3<f64>> = scn.navigation.waypoints().iter().map(|w| w.position).collect();

    let per_point = map_range(exec, points, |k| -> Result<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + k as u64);
        let x = random_free_point(&mut rng, &world, 0.05);
        let goal = goals[k % goals.len()];
        let phi = nf_value(&x, &goal, &world, &base)?;
        let range = if (0.0..1.0).contains(&phi) { 0.0 } else { 1.0 };
        let g = nf_gradient(&x, &goal, &world, &base)?;
        let h = 1e-6;
        let mut fd = Vector3::zeros();
        for i in 0..3 {
            let mut e = Vector3::zeros();
            e[i] = h;
            fd[i] = (nf_value(&(x + e), &goal, &world, &base)? - nf_value(&(x - e), &goal, &world, &base)?) / (2.0 * h);
        }
        Ok((range, (fd - g).norm() / g.norm().max(1e-3)))
    });
    let per_point = per_point.into_iter().collect::<Result<Vec<_>>>()?;
    let out_of_range = per_point.iter().map(|p| p.0).sum::<f64>();
    let grad = per_point.iter().map(|p| p.1).fold(0.0, f64::max);
    let mut at_goal: f64 = 0.0;
    for g in &goals {
        at_goal = at_goal.max(nf_value(g, g, &world, &base)?.abs());
    }
    let mut out = vec![
        CheckResult::at_most("nf", "value_at_goal", at_goal, 0.0, goals.len(), t0),
        CheckResult::at_most("nf", "values_outside_unit_interval", out_of_range, 0.0, points, t0),
        CheckResult::at_most("nf", "gradient_relative_error", grad, 1e-6, points, t0),
    ];

    let t1 = Instant::now();
    let mut best = f64::INFINITY;
    for k in [3.0, 4.0, 6.0, 8.0] {
        let cfg = NavFunConfig { k, ..base.clone() };
        let failures = map_range(exec, starts, |s| -> Result<usize> {
            let mut rng = ChaCha8Rng::seed_from_u64(4000 + s as u64);
            let start = random_free_point(&mut rng, &world, 0.05);
            let mut failed = 0;
            for goal in &goals {
                let d = descend(&start, goal, &world, &cfg, 0.1, 20_000)?;
                if !(d.reached && d.min_clearance > 0.0) {
                    failed += 1;
                }
            }
            Ok(failed)
        });
        let failed: usize = failures.into_iter().collect::<Result<Vec<_>>>()?.into_iter().sum();
        best = best.min(failed as f64);
        if failed == 0 {
            break;
        }
    }
    out.push(CheckResult::at_most("nf", "failed_descents", best, 0.0, starts * goals.len(), t1));
    let wall = t0.elapsed().as_secs_f64();
    out.push(CheckResult::at_most("nf", "wall_seconds", wall, 60.0, points + starts, t0));
    Ok(out)
}

/// First NMPC input on the unit-mass double integrator against the
/// discrete finite-horizon LQR gain.
pub fn lqr(samples: usize, exec: Execution) -> Result<Vec<CheckResult>> {
    let t0 = Instant::now();
    let cfg = NmpcConfig::default();
    let steps = cfg.steps();
    let reference = Reference {
        poses: vec![Pose6::identity(); steps + 1],
        twists: vec![Vector6::zeros(); steps + 1],
    };
    let errors = map_range(exec, samples, |k| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + k as u64);
        let x0 = (
            Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            Vector6::from_fn(|_, _| rng.random_range(-0.5..0.5)),
        );
        let sol = solve_fhocp(&DoubleIntegrator, &x0, &reference, None, &cfg, Execution::Sequential)?;
        let expected = lqr_first_input(&x0, &cfg)?;
        Ok((sol.first_input() - expected).norm() / expected.norm())
    });
    let worst = errors.into_iter().collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    let wall = t0.elapsed().as_secs_f64();
    Ok(vec![
        CheckResult::at_most("lqr", "first_input_relative_error", worst, 0.02, samples, t0),
        CheckResult::at_most("lqr", "wall_seconds", wall, 60.0, samples, t0),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_a_validation_error() {
        assert!(matches!(run_suite("nope", Execution::Sequential), Err(Error::Validation(_))));
    }

    #[test]
    fn small_suites_pass() {
        for r in identity(20, Execution::Sequential).unwrap().into_iter().chain(lqr(5, Execution::Sequential).unwrap()) {
            assert!(r.passed, "{r}");
        }
        let fd = finite_differences(10, Execution::Parallel).unwrap();
        assert!(fd.iter().all(|r| r.passed), "{fd:?}");
    }
}
