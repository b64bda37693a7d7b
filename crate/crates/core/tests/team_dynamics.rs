use nalgebra::{Vector6, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uvms_coop::grasp::{self, coupled_terms, distributed_terms, LoadSharing, NullMotion};
use uvms_coop::object::ObjectParams;
use uvms_coop::samples::{random_consistent_sample, random_geometry};
use uvms_coop::uvms::{UvmsModel, UvmsParams};

fn object_params() -> ObjectParams {
    let mut p = ObjectParams::cylinder(12.0, 2.4, 0.05, 2.0, 0.7);
    p.restoring_offset = [0.05, 0.0, -0.02];
    p
}

fn rel(a: &Vector6<f64>, b: &Vector6<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

#[test]
fn distributed_terms_sum_to_coupled_terms() {
    let model = UvmsModel::new(UvmsParams::bow_arm_default()).unwrap();
    let models = [&model, &model];
    let obj = object_params();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let geom = random_geometry(&mut rng, 2);
        let c1 = rng.random_range(0.05..0.95);
        let c = LoadSharing::new(vec![c1, 1.0 - c1]).unwrap();
        let s = random_consistent_sample(&mut rng, &models, &geom).unwrap();
        let coupled = coupled_terms(&models, &s.agents, &s.object, &obj, &geom).unwrap();
        let mut lhs = Vector6::zeros();
        let mut damping = Vector6::zeros();
        let mut restoring = Vector6::zeros();
        for i in 0..2 {
            let d = model.dynamics(&s.agents[i]).unwrap();
            let t = distributed_terms(&d, &obj, &geom, i, c.get(i), 0.05).unwrap();
            let m = &t.mass * &s.accels[i];
            lhs += Vector6::from_fn(|r, _| m[r]) + t.coriolis;
            damping += t.damping;
            restoring += t.restoring;
        }
        let v = s.object.twist.to_vector();
        let rhs = coupled.mass * s.object_accel + coupled.coriolis;
        let _ = v;
        worst = worst.max(rel(&lhs, &rhs)).max(rel(&damping, &coupled.damping)).max(rel(&restoring, &coupled.restoring));
    }
    assert!(worst <= 1e-9, "worst relative error {worst:e}");
}

#[test]
fn flow_satisfies_distributed_equation() {
    let model = UvmsModel::new(UvmsParams::bow_arm_default()).unwrap();
    let obj = object_params();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let geom = random_geometry(&mut rng, 1);
        let s = random_consistent_sample(&mut rng, &[&model], &geom).unwrap();
        let state = &s.agents[0];
        let u = Vector6::from_fn(|_, _| rng.random_range(-5.0..5.0));
        for nm in [NullMotion::MinimumNorm, NullMotion::Dynamic] {
            let f = grasp::agent_flow(&model, state, &u, &obj, &geom, 0, 1.0, nm).unwrap();
            let qdd: DVector<f64> = f.rows(10, 10).into_owned();
            let d = model.dynamics(state).unwrap();
            let t = distributed_terms(&d, &obj, &geom, 0, 1.0, 0.05).unwrap();
            let lhs = &t.mass * &qdd;
            let res = t.from_object.transpose() * u - t.coriolis - t.damping - t.restoring;
            let err = Vector6::from_fn(|r, _| lhs[r]) - res;
            assert!(err.norm() <= 1e-8 * (1.0 + res.norm()), "{nm:?}: {}", err.norm());
        }
    }
}
