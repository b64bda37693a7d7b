use super::*;
use crate::agent::Agent;
use crate::grasp::{GraspPoint, NullMotion};
use crate::navfun::NavFunConfig;
use crate::object::{ObjectParams, ObjectState};
use crate::samples::agent_from_object;
use crate::spatial::Twist;
use crate::uvms::{JointState, UvmsModel, UvmsParams};
use crate::world::SphereWorld;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn agent() -> Agent {
    let model = UvmsModel::new(UvmsParams::bow_arm_default()).unwrap();
    let object = ObjectParams::cylinder(12.0, 2.4, 0.05, 2.0, 0.7);
    Agent::new(model, object, GraspPoint { offset: [-1.0, 0.0, 0.0], euler_offset: [0.0; 3] }, 0.5, NullMotion::Dynamic)
}

fn resting(a: &Agent, object: &ObjectState) -> JointState {
    let z = nalgebra::DVector::zeros(10);
    agent_from_object(&a.model, a.grasp(), 0, object, &Vector6::zeros(), &[0.0, -0.3, 0.6, 0.0], &z, &z)
        .unwrap()
        .0
}

fn still_reference(pose: Pose6, steps: usize) -> Reference {
    Reference { poses: vec![pose; steps + 1], twists: vec![Vector6::zeros(); steps + 1] }
}

fn random_observation(rng: &mut ChaCha8Rng, ns: usize, ni: usize) -> Observation {
    let v: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    Observation {
        pose: Pose6::from_slice(&v[..6]),
        twist: Vector6::from_column_slice(&v[6..]),
        state_margins: (0..ns).map(|_| rng.random_range(-1.0..1.0)).collect(),
        input_margins: (0..ni).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

#[test]
fn default_grid() {
    let cfg = NmpcConfig::default();
    cfg.validate().unwrap();
    assert_eq!(cfg.steps(), 5);
    assert!((cfg.h - 0.12).abs() < 1e-15);
}

#[test]
fn weight_validation() {
    let mut cfg = NmpcConfig::default();
    cfg.q_v = WeightMatrix::Diagonal(vec![1.0, 1.0, -1.0, 1.0, 1.0, 1.0]);
    let err = cfg.validate().unwrap_err().to_string();
    assert!(err.contains("q_v") && err.contains("positive definite"), "{err}");
    let mut cfg = NmpcConfig::default();
    let mut rows = vec![vec![0.0; 6]; 6];
    for (i, r) in rows.iter_mut().enumerate() {
        r[i] = 1.0;
    }
    rows[0][1] = 0.5;
    cfg.p_x = WeightMatrix::Full(rows);
    assert!(cfg.validate().unwrap_err().to_string().contains("symmetric"));
    let mut cfg = NmpcConfig::default();
    cfg.horizon = 0.5;
    assert!(cfg.validate().is_err());
    cfg.horizon = 0.1;
    assert!(cfg.validate().is_err());
}

#[test]
fn zero_length_prediction_is_the_initial_state() {
    let a = agent();
    let m = AgentPrediction::new(&a, 0.9, &PenaltyWeights::default());
    let x = resting(&a, &ObjectState::at_rest(Pose6::from_slice(&[1.0, 0.0, 0.7, 0.0, 0.0, 0.0])));
    let (states, obs) = predict(&m, &x, &[], 0.12, 2).unwrap();
    assert_eq!(states.len(), 1);
    assert_eq!(obs.len(), 1);
    assert_eq!(states[0], x);
}

#[test]
fn compensated_rest_stays_put() {
    let a = agent();
    let m = AgentPrediction::new(&a, 0.9, &PenaltyWeights::default());
    let pose = Pose6::from_slice(&[-0.7, 0.0, 0.72, 0.04, -0.07, 0.0]);
    let x = resting(&a, &ObjectState::at_rest(pose));
    let (_, obs) = predict(&m, &x, &[Vector6::zeros()], 0.12, 4).unwrap();
    let e = pose_error(&obs[1].pose, &pose);
    assert!(e.norm() < 1e-6, "{}", e.norm());
    assert!(obs[0].state_margins.iter().all(|&v| v > 0.0));
    assert!(obs[0].input_margins.iter().all(|&v| v > 0.0));
}

#[test]
fn rk4_step_halving() {
    let a = agent();
    let m = AgentPrediction::new(&a, 0.9, &PenaltyWeights::default());
    let object = ObjectState::new(
        Pose6::from_slice(&[0.0, 1.0, 0.7, 0.02, 0.03, 0.3]),
        Twist::new(Vector3::new(0.1, 0.05, 0.0), Vector3::new(0.0, 0.0, 0.02)),
    );
    let x = resting(&a, &object);
    let u = vec![Vector6::new(2.0, -1.0, 0.5, 0.1, 0.0, 0.2); 5];
    let (coarse, _) = predict(&m, &x, &u, 0.12, 2).unwrap();
    let (fine, _) = predict(&m, &x, &u, 0.12, 4).unwrap();
    let a = coarse.last().unwrap().to_vector();
    let b = fine.last().unwrap().to_vector();
    let d = (a - b).amax();
    assert!(d <= 1e-5, "{d}");
}

#[test]
fn cost_is_zero_on_the_reference() {
    let cfg = NmpcConfig::default();
    let pose = Pose6::from_slice(&[1.0, 2.0, 3.0, 0.1, 0.0, -0.2]);
    let reference = still_reference(pose, 5);
    let obs = vec![
        Observation { pose, twist: Vector6::zeros(), state_margins: vec![0.5; 3], input_margins: vec![0.1; 2] };
        6
    ];
    let u = vec![Vector6::zeros(); 5];
    let c = cost(&obs, &reference, &u, &u, &cfg, &[1.0; 3], &[1.0; 2]).unwrap();
    assert_eq!(c.total(), 0.0);
}

#[test]
fn cost_matches_independent_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = rng.random_range(1..7);
        let (ns, ni) = (4, 3);
        let obs: Vec<Observation> = (0..=n).map(|_| random_observation(&mut rng, ns, ni)).collect();
        let reference = Reference {
            poses: (0..=n).map(|_| random_observation(&mut rng, 0, 0).pose).collect(),
            twists: (0..=n).map(|_| random_observation(&mut rng, 0, 0).twist).collect(),
        };
        let u: Vec<Vector6<f64>> = (0..n).map(|_| random_observation(&mut rng, 0, 0).twist * 5.0).collect();
        let ur: Vec<Vector6<f64>> = (0..n).map(|_| random_observation(&mut rng, 0, 0).twist).collect();
        let sw: Vec<f64> = (0..ns).map(|_| rng.random_range(0.0..100.0)).collect();
        let iw: Vec<f64> = (0..ni).map(|_| rng.random_range(0.0..100.0)).collect();
        let mut cfg = NmpcConfig::default();
        cfg.h = 0.1;
        cfg.horizon = 0.1 * n as f64;
        let diag: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..2.0)).collect();
        cfg.q_x = WeightMatrix::Diagonal(diag.clone());
        let c = cost(&obs, &reference, &u, &ur, &cfg, &sw, &iw).unwrap();

        // scalar loops, no matrix algebra
        let wrap = crate::spatial::wrap_angle;
        let mut expected = 0.0;
        for k in 0..=n {
            let o = &obs[k];
            let mut ex = [0.0; 6];
            for r in 0..3 {
                ex[r] = o.pose.position[r] - reference.poses[k].position[r];
                ex[r + 3] = wrap(o.pose.euler[r] - reference.poses[k].euler[r]);
            }
            if k < n {
                for r in 0..6 {
                    let ev = o.twist[r] - reference.twists[k][r];
                    let du = u[k][r] - ur[k][r];
                    expected += 0.1 * (diag[r] * ex[r] * ex[r] + 0.4 * ev * ev + 0.3 * du * du);
                }
                for j in 0..ni {
                    if o.input_margins[j] < 0.0 {
                        expected += iw[j] * o.input_margins[j].powi(2);
                    }
                }
            } else {
                for v in ex {
                    expected += 0.8 * v * v;
                }
            }
            if k > 0 {
                for j in 0..ns {
                    if o.state_margins[j] < 0.0 {
                        expected += sw[j] * o.state_margins[j].powi(2);
                    }
                }
            }
        }
        assert!((c.total() - expected).abs() <= 1e-10 * expected.max(1.0), "{} vs {expected}", c.total());
    }
}

#[test]
fn doubling_state_weights_doubles_state_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let obs: Vec<Observation> = (0..6).map(|_| random_observation(&mut rng, 0, 0)).collect();
    let reference = still_reference(Pose6::identity(), 5);
    let u = vec![Vector6::repeat(0.5); 5];
    let ur = vec![Vector6::zeros(); 5];
    let cfg = NmpcConfig::default();
    let mut doubled = cfg.clone();
    doubled.q_x = WeightMatrix::Scalar(1.6);
    doubled.q_v = WeightMatrix::Scalar(0.8);
    let a = cost(&obs, &reference, &u, &ur, &cfg, &[], &[]).unwrap();
    let b = cost(&obs, &reference, &u, &ur, &doubled, &[], &[]).unwrap();
    assert!((b.state - 2.0 * a.state).abs() < 1e-12);
    assert_eq!(a.input, b.input);
}

#[test]
fn matches_lqr_on_the_double_integrator() {
    let cfg = NmpcConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let x0 = (
            Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            Vector6::from_fn(|_, _| rng.random_range(-0.5..0.5)),
        );
        let reference = still_reference(Pose6::identity(), 5);
        let sol = solve_fhocp(&DoubleIntegrator, &x0, &reference, None, &cfg, Execution::Sequential).unwrap();
        let lqr = lqr_first_input(&x0, &cfg).unwrap();
        let rel = (sol.first_input() - lqr).norm() / lqr.norm();
        assert!(rel < 0.02, "{rel}");
        assert!(sol.cost.total() <= sol.initial_cost);
        assert!(sol.history.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn holding_at_the_goal_needs_only_the_load_share() {
    let a = agent();
    let m = AgentPrediction::new(&a, 0.9, &PenaltyWeights::default());
    let pose = Pose6::from_slice(&[12.0, 6.5, 0.65, 0.0, 0.0, 0.0]);
    let x = resting(&a, &ObjectState::at_rest(pose));
    let cfg = NmpcConfig::default();
    let sol = solve_fhocp(&m, &x, &still_reference(pose, 5), None, &cfg, Execution::Sequential).unwrap();
    // u_hat is the wrench on top of the restoring-force compensation
    assert!(sol.first_input().norm() < 1e-3, "{}", sol.first_input().norm());
    let eval = a.evaluate(&x).unwrap();
    let qdd = a.acceleration(&x, &eval, &sol.first_input()).unwrap();
    let ee_acc = &eval.dynamics.kin.end_effector.jacobian * qdd;
    assert!(ee_acc.norm() <= 1e-3, "{}", ee_acc.norm());
}

#[test]
fn solve_is_deterministic_and_descends() {
    let a = agent();
    let m = AgentPrediction::new(&a, 0.9, &PenaltyWeights::default());
    let object = ObjectState::new(
        Pose6::from_slice(&[-0.7, 0.0, 0.72, 0.04, -0.07, 0.0]),
        Twist::new(Vector3::new(0.05, 0.0, 0.0), Vector3::zeros()),
    );
    let x = resting(&a, &object);
    let world = SphereWorld::new(Vector3::new(5.65, 0.25, 0.75), 14.0, vec![], 1.0, 0.7);
    let goal = Pose6::from_slice(&[6.0, -6.0, 0.85, 0.0, 0.0, 0.0]);
    let reference = crate::navfun::propagate_reference(&object, &goal, &world, &NavFunConfig::default(), 5, 0.12, 0.05).unwrap();
    let cfg = NmpcConfig::default();
    let warm = vec![Vector6::repeat(0.3); 5];
    let s1 = solve_fhocp(&m, &x, &reference, Some(&warm), &cfg, Execution::Parallel).unwrap();
    let s2 = solve_fhocp(&m, &x, &reference, Some(&warm), &cfg, Execution::Sequential).unwrap();
    assert_eq!(s1.inputs, s2.inputs);
    assert!(s1.cost.total() <= s1.initial_cost);
    assert!(s1.history.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(s1.states.len(), 6);
    // the least-squares residual and the cost agree
    let last = *s1.history.last().unwrap();
    assert!((s1.cost.total() - last).abs() <= 1e-10 * last.max(1.0));
}

#[test]
fn warm_start_shift() {
    let u: Vec<Vector6<f64>> = (0..5).map(|k| Vector6::repeat(k as f64)).collect();
    let s = shift_warm_start(&u);
    assert_eq!(s.len(), 5);
    assert_eq!(s[0], u[1]);
    assert_eq!(s[3], u[4]);
    assert_eq!(s[4], u[4]);
}

#[test]
fn controller_rejects_foreign_measurements() {
    let a = agent();
    let world = SphereWorld::new(Vector3::new(5.65, 0.25, 0.75), 14.0, vec![], 1.0, 0.7);
    let goal = Pose6::from_slice(&[6.0, -6.0, 0.85, 0.0, 0.0, 0.0]);
    let mut c = Controller::new(0, a.clone(), world, NavFunConfig::default(), vec![goal], NmpcConfig::default()).unwrap();
    let x = resting(&a, &ObjectState::at_rest(Pose6::from_slice(&[-0.7, 0.0, 0.72, 0.0, 0.0, 0.0])));
    let own = LocalMeasurement { agent: 0, time: 0.0, state: x.clone() };
    c.step(&own, Execution::Sequential).unwrap();
    assert!(c.audit().is_isolated(0));
    let foreign = LocalMeasurement { agent: 1, time: 0.12, state: x };
    assert_eq!(
        c.step(&foreign, Execution::Sequential).unwrap_err(),
        Error::IsolationViolation { controller: 0, agent: 1 }
    );
    assert!(!c.audit().is_isolated(0));
    assert_eq!(c.audit().reads.get(&0), Some(&1));
}
