//! Navigation-function reference for the object.
//!
//! `phi(x) = gamma / (gamma^k + beta)^(1/k)` with `gamma = |x - goal|^2` and
//! `beta` the product of the boundary and obstacle functions. The linear
//! reference velocity is `-K * grad phi`; the attitude is steered separately
//! toward the goal attitude at a bounded rate.

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::object::ObjectState;
use crate::spatial::{self, Pose6, Twist};
use crate::world::SphereWorld;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavFunConfig {
    #[serde(default = "default_k")]
    pub k: f64,
    pub gain: f64,
    pub max_ref_speed: f64,
    #[serde(default = "default_attitude_gain")]
    pub attitude_gain: f64,
    #[serde(default = "default_max_ref_rate")]
    pub max_ref_rate: f64,
    #[serde(default = "default_capture_radius")]
    pub capture_radius: f64,
}

fn default_k() -> f64 {
    4.0
}
fn default_attitude_gain() -> f64 {
    0.2
}
fn default_max_ref_rate() -> f64 {
    0.05
}
fn default_capture_radius() -> f64 {
    0.3
}

impl Default for NavFunConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            gain: 0.5,
            max_ref_speed: 0.5,
            attitude_gain: default_attitude_gain(),
            max_ref_rate: default_max_ref_rate(),
            capture_radius: default_capture_radius(),
        }
    }
}

impl NavFunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::Validation(s.into()));
        if !(self.k > 1.0) {
            return bad("navigation.k must be greater than 1");
        }
        if !(self.gain > 0.0) {
            return bad("navigation.gain must be positive");
        }
        if !(self.max_ref_speed > 0.0 && self.max_ref_rate > 0.0) {
            return bad("navigation reference limits must be positive");
        }
        if !(self.attitude_gain >= 0.0) {
            return bad("navigation.attitude_gain must be non-negative");
        }
        if !(self.capture_radius > 0.0) {
            return bad("navigation.capture_radius must be positive");
        }
        Ok(())
    }
}

fn obstacle_functions(x: &Vector3<f64>, world: &SphereWorld) -> Result<Vec<(f64, Vector3<f64>)>> {
    let r = world.team_radius;
    let mut out = Vec::with_capacity(world.obstacles.len() + 1);
    let dc = x - world.boundary_center;
    out.push(((world.boundary_radius - r).powi(2) - dc.norm_squared(), -2.0 * dc));
    for o in &world.obstacles {
        let d = x - o.center();
        out.push((d.norm_squared() - (o.radius + r).powi(2), 2.0 * d));
    }
    if out.iter().any(|(b, _)| *b <= 0.0) {
        return Err(Error::OutOfFreeSpace { clearance: world.clearance(x) });
    }
    Ok(out)
}

fn beta_and_gradient(x: &Vector3<f64>, world: &SphereWorld) -> Result<(f64, Vector3<f64>)> {
    let parts = obstacle_functions(x, world)?;
    let beta: f64 = parts.iter().map(|(b, _)| b).product();
    let mut grad = Vector3::zeros();
    for (j, (_, gj)) in parts.iter().enumerate() {
        let others: f64 = parts.iter().enumerate().filter(|(l, _)| *l != j).map(|(_, (b, _))| b).product();
        grad += gj * others;
    }
    Ok((beta, grad))
}

pub fn nf_value(x: &Vector3<f64>, goal: &Vector3<f64>, world: &SphereWorld, cfg: &NavFunConfig) -> Result<f64> {
    let (beta, _) = beta_and_gradient(x, world)?;
    let gamma = (x - goal).norm_squared();
    if gamma == 0.0 {
        return Ok(0.0);
    }
    Ok(gamma / (gamma.powf(cfg.k) + beta).powf(1.0 / cfg.k))
}

pub fn nf_gradient(
    x: &Vector3<f64>,
    goal: &Vector3<f64>,
    world: &SphereWorld,
    cfg: &NavFunConfig,
) -> Result<Vector3<f64>> {
    let (beta, dbeta) = beta_and_gradient(x, world)?;
    let d = x - goal;
    let gamma = d.norm_squared();
    let k = cfg.k;
    let s = gamma.powf(k) + beta;
    // quotient rule, simplified
    Ok((d * (2.0 * beta) - dbeta * (gamma / k)) * s.powf(-1.0 / k - 1.0))
}

fn clamp_norm(v: Vector3<f64>, limit: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > limit {
        v * (limit / n)
    } else {
        v
    }
}

/// Reference twist for an object at `pose` heading to `goal`.
pub fn desired_velocity(
    pose: &Pose6,
    goal: &Pose6,
    world: &SphereWorld,
    cfg: &NavFunConfig,
    pitch_margin: f64,
) -> Result<Twist> {
    spatial::euler_rate_matrix_inverse(&pose.euler, pitch_margin)?;
    let linear = clamp_norm(-nf_gradient(&pose.position, &goal.position, world, cfg)? * cfg.gain, cfg.max_ref_speed);
    let err = (goal.euler - pose.euler).map(spatial::wrap_angle);
    let omega = spatial::euler_rate_matrix(&pose.euler) * (err * cfg.attitude_gain);
    Ok(Twist::new(linear, clamp_norm(omega, cfg.max_ref_rate)))
}

/// Reference poses and twists on the prediction grid `t_j + k h`, `k = 0..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub poses: Vec<Pose6>,
    pub twists: Vec<Vector6<f64>>,
}

impl Reference {
    pub fn steps(&self) -> usize {
        self.poses.len().saturating_sub(1)
    }
}

fn pose_rate(
    x: &Vector6<f64>,
    goal: &Pose6,
    world: &SphereWorld,
    cfg: &NavFunConfig,
    pitch_margin: f64,
) -> Result<(Vector6<f64>, Vector6<f64>)> {
    let pose = Pose6 { position: x.fixed_rows::<3>(0).into_owned(), euler: x.fixed_rows::<3>(3).into_owned() };
    let twist = desired_velocity(&pose, goal, world, cfg, pitch_margin)?.to_vector();
    let jinv = spatial::euler_rate_jacobian_inverse(&pose.euler, pitch_margin)?;
    Ok((jinv * twist, twist))
}

/// Integrates the reference field with RK4 from the (reconstructed) object
/// pose over `steps` intervals of length `h`.
pub fn propagate_reference(
    object: &ObjectState,
    goal: &Pose6,
    world: &SphereWorld,
    cfg: &NavFunConfig,
    steps: usize,
    h: f64,
    pitch_margin: f64,
) -> Result<Reference> {
    let mut x = object.pose.to_vector();
    let mut poses = Vec::with_capacity(steps + 1);
    let mut twists = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let (k1, twist) = pose_rate(&x, goal, world, cfg, pitch_margin)?;
        poses.push(Pose6::from_vector(&x));
        twists.push(twist);
        if k == steps {
            break;
        }
        let (k2, _) = pose_rate(&(x + k1 * (0.5 * h)), goal, world, cfg, pitch_margin)?;
        let (k3, _) = pose_rate(&(x + k2 * (0.5 * h)), goal, world, cfg, pitch_margin)?;
        let (k4, _) = pose_rate(&(x + k3 * h), goal, world, cfg, pitch_margin)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        // keep the attitude in the principal range without moving the point
        let e = spatial::wrap_euler(&x.fixed_rows::<3>(3).into_owned());
        x.fixed_rows_mut::<3>(3).copy_from(&e);
    }
    Ok(Reference { poses, twists })
}

/// Active goal along an ordered waypoint list.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointSequence {
    waypoints: Vec<Pose6>,
    capture_radius: f64,
    index: usize,
    done: bool,
}

impl WaypointSequence {
    pub fn new(waypoints: Vec<Pose6>, capture_radius: f64) -> Self {
        assert!(!waypoints.is_empty(), "waypoint list must not be empty");
        Self { waypoints, capture_radius, index: 0, done: false }
    }

    pub fn active(&self) -> &Pose6 {
        &self.waypoints[self.index]
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn finished(&self) -> bool {
        self.done
    }

    /// Advances past every waypoint within the capture radius; returns the
    /// indices captured by this call.
    pub fn update(&mut self, position: &Vector3<f64>) -> Vec<usize> {
        let mut captured = Vec::new();
        while !self.done && (position - self.waypoints[self.index].position).norm() <= self.capture_radius {
            captured.push(self.index);
            if self.index + 1 < self.waypoints.len() {
                self.index += 1;
            } else {
                self.done = true;
            }
        }
        captured
    }
}

/// Outcome of following the normalized negative gradient from one start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOutcome {
    pub reached: bool,
    pub min_clearance: f64,
    pub final_distance: f64,
    pub iterations: usize,
}

/// Gradient-flow path from `start`; the step shrinks near obstacles and the goal.
pub fn descend(
    start: &Vector3<f64>,
    goal: &Vector3<f64>,
    world: &SphereWorld,
    cfg: &NavFunConfig,
    tolerance: f64,
    max_iterations: usize,
) -> Result<DescentOutcome> {
    let mut x = *start;
    let mut min_clearance = world.clearance(&x);
    for it in 0..max_iterations {
        let dist = (x - goal).norm();
        if dist < tolerance {
            return Ok(DescentOutcome { reached: true, min_clearance, final_distance: dist, iterations: it });
        }
        let g = nf_gradient(&x, goal, world, cfg)?;
        let gn = g.norm();
        if gn < 1e-300 {
            break;
        }
        let step = 0.05f64.min(0.25 * world.clearance(&x)).min(0.5 * dist);
        x -= g * (step / gn);
        min_clearance = min_clearance.min(world.clearance(&x));
        if min_clearance <= 0.0 {
            break;
        }
    }
    let final_distance = (x - goal).norm();
    Ok(DescentOutcome { reached: final_distance < tolerance, min_clearance, final_distance, iterations: max_iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Obstacle;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn world() -> SphereWorld {
        let obs = [(4.0, -4.5), (9.0, -1.5), (9.0, 5.0)]
            .iter()
            .map(|&(x, y)| Obstacle { center: [x, y, 0.75], radius: 0.6 })
            .collect();
        SphereWorld::new(Vector3::new(5.65, 0.25, 0.75), 14.0, obs, 1.0, 0.7)
    }

    fn one_obstacle() -> SphereWorld {
        SphereWorld::new(
            Vector3::zeros(),
            10.0,
            vec![Obstacle { center: [2.0, 1.0, 0.0], radius: 0.5 }],
            0.5,
            0.5,
        )
    }

    #[test]
    fn value_at_goal_is_zero() {
        let g = Vector3::new(12.0, 6.5, 0.65);
        assert_eq!(nf_value(&g, &g, &world(), &NavFunConfig::default()).unwrap(), 0.0);
        assert_eq!(nf_gradient(&g, &g, &world(), &NavFunConfig::default()).unwrap(), Vector3::zeros());
    }

    #[test]
    fn value_tends_to_one_on_inflated_surface() {
        let w = world();
        let cfg = NavFunConfig::default();
        let g = Vector3::new(12.0, 6.5, 0.65);
        let near = Vector3::new(9.0 - 2.3 - 1e-9, -1.5, 0.75);
        assert!(nf_value(&near, &g, &w, &cfg).unwrap() > 0.999);
        let inside = Vector3::new(9.0, -1.5, 0.75);
        assert!(matches!(nf_value(&inside, &g, &w, &cfg), Err(Error::OutOfFreeSpace { .. })));
    }

    #[test]
    fn one_obstacle_value_by_direct_formula() {
        let w = one_obstacle();
        let cfg = NavFunConfig { k: 3.0, ..NavFunConfig::default() };
        let x = Vector3::new(-1.0, 2.0, 0.5);
        let goal = Vector3::new(4.0, -1.0, 0.0);
        let gamma: f64 = 25.0 + 9.0 + 0.25;
        let b0 = (10.0f64 - 1.0).powi(2) - (1.0 + 4.0 + 0.25);
        let b1 = (9.0 + 1.0 + 0.25) - (1.5f64).powi(2);
        let expected = gamma / (gamma.powi(3) + b0 * b1).cbrt();
        assert_relative_eq!(nf_value(&x, &goal, &w, &cfg).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn far_from_obstacles_points_home() {
        let w = SphereWorld::new(Vector3::zeros(), 1000.0, vec![], 0.5, 0.5);
        let goal = Vector3::new(1.0, 2.0, 0.0);
        let x = Vector3::new(3.0, -1.0, 0.5);
        let v = desired_velocity(
            &Pose6::new(x, Vector3::zeros()),
            &Pose6::new(goal, Vector3::zeros()),
            &w,
            &NavFunConfig::default(),
            0.05,
        )
        .unwrap();
        let dir = (goal - x).normalize();
        assert!(v.linear.normalize().dot(&dir) > 0.999);
    }

    #[test]
    fn desired_velocity_is_zero_at_goal() {
        let goal = Pose6::new(Vector3::new(12.0, 6.5, 0.65), Vector3::new(0.0, 0.0, 0.3));
        let v = desired_velocity(&goal, &goal, &world(), &NavFunConfig::default(), 0.05).unwrap();
        assert_eq!(v.to_vector(), Vector6::zeros());
    }

    #[test]
    fn reference_grid_and_determinism() {
        let w = world();
        let cfg = NavFunConfig::default();
        let start = ObjectState::at_rest(Pose6::from_slice(&[-0.7, 0.0, 0.72, 0.04, -0.07, 0.0]));
        let goal = Pose6::from_slice(&[6.0, -6.0, 0.85, 0.0, 0.0, 0.0]);
        let a = propagate_reference(&start, &goal, &w, &cfg, 5, 0.12, 0.05).unwrap();
        let b = propagate_reference(&start, &goal, &w, &cfg, 5, 0.12, 0.05).unwrap();
        assert_eq!(a.steps(), 5);
        assert_eq!(a, b);
        let at_goal = propagate_reference(&ObjectState::at_rest(goal), &goal, &w, &cfg, 5, 0.12, 0.05).unwrap();
        assert!(at_goal.poses.iter().all(|p| *p == goal));
    }

    #[test]
    fn waypoint_switching() {
        let wps = vec![
            Pose6::from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            Pose6::from_slice(&[2.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ];
        let mut s = WaypointSequence::new(wps, 0.3);
        assert!(s.update(&Vector3::new(0.5, 0.0, 0.0)).is_empty());
        assert_eq!(s.update(&Vector3::new(0.8, 0.0, 0.0)), vec![0]);
        assert_eq!(s.index(), 1);
        assert_eq!(s.update(&Vector3::new(1.9, 0.1, 0.0)), vec![1]);
        assert!(s.finished());
    }

    #[test]
    fn gradient_pushes_away_near_obstacles() {
        let w = world();
        let cfg = NavFunConfig::default();
        let goal = Vector3::new(12.0, 6.5, 0.65);
        for o in &w.obstacles {
            for angle in [0.3f64, 1.7, 2.9, 4.4, 5.5] {
                let n = Vector3::new(angle.cos(), angle.sin(), 0.0);
                let x = o.center() + n * (o.radius + w.team_radius + 1e-4);
                let g = nf_gradient(&x, &goal, &w, &cfg).unwrap();
                // descending moves away from the obstacle
                assert!(-g.dot(&n) > 0.0);
            }
        }
    }

    fn free_point() -> impl Strategy<Value = Vector3<f64>> {
        prop::array::uniform3(-8.0..19.0f64)
            .prop_map(Vector3::from)
            .prop_filter("free", |x| world().clearance(x) > 0.05)
    }

    proptest! {
        #[test]
        fn value_in_unit_interval(x in free_point()) {
            let v = nf_value(&x, &Vector3::new(12.0, 6.5, 0.65), &world(), &NavFunConfig::default()).unwrap();
            prop_assert!((0.0..1.0).contains(&v));
        }

        #[test]
        fn gradient_matches_finite_differences(x in free_point(), k in 2.0..8.0f64) {
            let w = world();
            let cfg = NavFunConfig { k, ..NavFunConfig::default() };
            let goal = Vector3::new(12.0, 6.5, 0.65);
            let g = nf_gradient(&x, &goal, &w, &cfg).unwrap();
            let h = 1e-6;
            let fd = Vector3::from_fn(|i, _| {
                let mut e = Vector3::zeros();
                e[i] = h;
                (nf_value(&(x + e), &goal, &w, &cfg).unwrap() - nf_value(&(x - e), &goal, &w, &cfg).unwrap()) / (2.0 * h)
            });
            prop_assert!((fd - g).norm() <= 1e-6 * g.norm().max(1e-3));
        }
    }
}
