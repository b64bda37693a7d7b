//! Sphere world: a bounding ball with spherical obstacles, seen by the team
//! ball of radius `R = agent_radius + object_radius`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Obstacle {
    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereWorld {
    pub boundary_center: Vector3<f64>,
    pub boundary_radius: f64,
    pub obstacles: Vec<Obstacle>,
    pub agent_radius: f64,
    pub team_radius: f64,
}

impl SphereWorld {
    pub fn new(
        boundary_center: Vector3<f64>,
        boundary_radius: f64,
        obstacles: Vec<Obstacle>,
        agent_radius: f64,
        object_radius: f64,
    ) -> Self {
        Self {
            boundary_center,
            boundary_radius,
            obstacles,
            agent_radius,
            team_radius: agent_radius + object_radius,
        }
    }

    /// Signed distance from the team ball centred at `x` to the nearest
    /// obstacle or the boundary.
    pub fn clearance(&self, x: &Vector3<f64>) -> f64 {
        let r = self.team_radius;
        let boundary = self.boundary_radius - (x - self.boundary_center).norm() - r;
        self.obstacles
            .iter()
            .map(|o| (x - o.center()).norm() - o.radius - r)
            .fold(boundary, f64::min)
    }

    pub fn in_free_space(&self, x: &Vector3<f64>) -> bool {
        self.clearance(x) > 0.0
    }

    /// Structural checks plus free-space membership of the given points.
    pub fn validate(&self, points: &[(&str, Vector3<f64>)]) -> Result<()> {
        let bad = |s: String| Err(Error::Validation(s));
        if !(self.boundary_radius > 0.0) {
            return bad("world.boundary_radius must be positive".into());
        }
        if !(self.agent_radius > 0.0) || !(self.team_radius > self.agent_radius) {
            return bad("world: agent and object radii must be positive".into());
        }
        if self.boundary_radius <= self.team_radius {
            return bad("world: boundary is smaller than the team ball".into());
        }
        for (k, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) {
                return bad(format!("world.obstacles[{k}]: radius must be positive"));
            }
            if (o.center() - self.boundary_center).norm() + o.radius >= self.boundary_radius {
                return bad(format!("world.obstacles[{k}] is not strictly inside the boundary"));
            }
        }
        let r = self.team_radius;
        for i in 0..self.obstacles.len() {
            for j in i + 1..self.obstacles.len() {
                let (a, b) = (&self.obstacles[i], &self.obstacles[j]);
                let d = (a.center() - b.center()).norm();
                if d <= a.radius + b.radius + 2.0 * r {
                    return bad(format!(
                        "world.obstacles[{i}] and [{j}] overlap once inflated by the team radius {r:.3} m"
                    ));
                }
            }
        }
        for (name, p) in points {
            let c = self.clearance(p);
            if c <= 0.0 {
                return bad(format!("{name} at ({:.3}, {:.3}, {:.3}) is not in free space (clearance {c:.3} m)", p.x, p.y, p.z));
            }
        }
        Ok(())
    }
}
