//! Scenario files: everything a closed-loop run needs, in SI units.
//!
//! The format is TOML. Unknown keys are rejected everywhere so that a typo
//! cannot silently fall back to a default.

use std::path::Path;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::error::{Error, Result};
use crate::grasp::{GraspGeometry, GraspPoint, LoadSharing, NullMotion};
use crate::navfun::NavFunConfig;
use crate::nmpc::NmpcConfig;
use crate::object::{ObjectParams, ObjectState};
use crate::sim::{Baumgarte, Plant, PlantState};
use crate::spatial::Pose6;
use crate::uvms::{UvmsModel, UvmsParams};
use crate::world::{Obstacle, SphereWorld};

/// The bundled two-agent scenario.
pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Simulated time budget [s].
    pub budget: f64,
    /// Plant substeps between logged rows.
    #[serde(default = "default_log_stride")]
    pub log_stride: usize,
    /// Time the active waypoint must stay unchanged before the motion counts as steady [s].
    #[serde(default = "default_settle")]
    pub settle: f64,
    /// Plant substeps per sampling interval.
    #[serde(default = "default_plant_substeps")]
    pub plant_substeps: usize,
}

fn default_log_stride() -> usize {
    1
}
fn default_settle() -> f64 {
    10.0
}
fn default_plant_substeps() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub boundary_center: [f64; 3],
    pub boundary_radius: f64,
    /// Radius of the ball enclosing one UVMS [m].
    pub agent_radius: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectModel {
    /// Slender cylinder along the object x axis.
    Cylinder { mass: f64, length: f64, radius: f64, net_restoring: f64, bounding_radius: f64 },
    Explicit(ObjectParams),
}

impl ObjectModel {
    pub fn params(&self) -> ObjectParams {
        match self {
            ObjectModel::Cylinder { mass, length, radius, net_restoring, bounding_radius } => {
                ObjectParams::cylinder(*mass, *length, *radius, *net_restoring, *bounding_radius)
            }
            ObjectModel::Explicit(p) => p.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    /// `[x, y, z, roll, pitch, yaw]`
    pub initial_pose: [f64; 6],
    pub model: ObjectModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// Starting guess for the vehicle; the grasp is closed exactly by
    /// inverse kinematics from here and the arm's home posture.
    pub initial_vehicle_pose: [f64; 6],
    pub grasp: GraspPoint,
    pub uvms: UvmsParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavigationConfig {
    #[serde(default = "default_k")]
    pub k: f64,
    pub gain: f64,
    pub max_ref_speed: f64,
    #[serde(default)]
    pub attitude_gain: Option<f64>,
    #[serde(default)]
    pub max_ref_rate: Option<f64>,
    #[serde(default)]
    pub capture_radius: Option<f64>,
    /// Ordered object poses `[x, y, z, roll, pitch, yaw]`.
    pub waypoints: Vec<[f64; 6]>,
}

fn default_k() -> f64 {
    NavFunConfig::default().k
}

impl NavigationConfig {
    pub fn nav(&self) -> NavFunConfig {
        let d = NavFunConfig::default();
        NavFunConfig {
            k: self.k,
            gain: self.gain,
            max_ref_speed: self.max_ref_speed,
            attitude_gain: self.attitude_gain.unwrap_or(d.attitude_gain),
            max_ref_rate: self.max_ref_rate.unwrap_or(d.max_ref_rate),
            capture_radius: self.capture_radius.unwrap_or(d.capture_radius),
        }
    }

    pub fn waypoints(&self) -> Vec<Pose6> {
        self.waypoints.iter().map(|w| Pose6::from_slice(w)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(default)]
    pub baumgarte: Baumgarte,
    #[serde(default)]
    pub null_motion: NullMotion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Write the figure data files next to the log.
    #[serde(default = "default_true")]
    pub plots: bool,
    /// Keep every n-th logged row in the figure data.
    #[serde(default = "default_plot_stride")]
    pub plot_stride: usize,
}

fn default_true() -> bool {
    true
}
fn default_plot_stride() -> usize {
    10
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { plots: true, plot_stride: default_plot_stride() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub run: RunConfig,
    pub world: WorldConfig,
    pub object: ObjectConfig,
    pub agents: Vec<AgentConfig>,
    /// One coefficient per agent.
    pub load_sharing: Vec<f64>,
    pub navigation: NavigationConfig,
    pub nmpc: NmpcConfig,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A validated scenario with every model built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub world: SphereWorld,
    pub nav: NavFunConfig,
    pub waypoints: Vec<Pose6>,
    pub agents: Vec<Agent>,
    pub plant: Plant,
    pub initial: PlantState,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    pub fn bundled() -> Result<Self> {
        Self::from_toml(DEFAULT_SCENARIO)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn world(&self) -> SphereWorld {
        SphereWorld::new(
            Vector3::from(self.world.boundary_center),
            self.world.boundary_radius,
            self.world.obstacles.clone(),
            self.world.agent_radius,
            self.object.model.params().bounding_radius,
        )
    }

    pub fn geometry(&self) -> GraspGeometry {
        GraspGeometry::new(self.agents.iter().map(|a| a.grasp).collect())
    }

    /// Checks every cross-module invariant and builds the models, including
    /// the exactly grasped initial state.
    pub fn build(&self) -> Result<Scenario> {
        let bad = |s: String| Err(Error::Validation(s));
        if !(self.run.budget >= 0.0) {
            return bad("run.budget must be non-negative".into());
        }
        if self.run.log_stride == 0 || self.run.plant_substeps == 0 || self.output.plot_stride == 0 {
            return bad("run.log_stride, run.plant_substeps and output.plot_stride must be at least 1".into());
        }
        if !(self.run.settle >= 0.0) {
            return bad("run.settle must be non-negative".into());
        }
        if self.agents.is_empty() {
            return bad("at least one [[agents]] entry is required".into());
        }
        if self.load_sharing.len() != self.agents.len() {
            return bad(format!(
                "load_sharing has {} coefficients for {} agents",
                self.load_sharing.len(),
                self.agents.len()
            ));
        }
        let shares = LoadSharing::new(self.load_sharing.clone())?;
        let object = self.object.model.params();
        object.validate()?;
        self.nmpc.validate()?;
        let nav = self.navigation.nav();
        nav.validate()?;
        if self.navigation.waypoints.is_empty() {
            return bad("navigation.waypoints must not be empty".into());
        }
        let geom = self.geometry();
        geom.validate(self.world.agent_radius)?;

        let world = self.world();
        let pose = Pose6::from_slice(&self.object.initial_pose);
        let waypoints = self.navigation.waypoints();
        let mut points = vec![("object.initial_pose".to_string(), pose.position)];
        for (k, w) in waypoints.iter().enumerate() {
            points.push((format!("navigation.waypoints[{k}]"), w.position));
        }
        let named: Vec<(&str, Vector3<f64>)> = points.iter().map(|(n, p)| (n.as_str(), *p)).collect();
        world.validate(&named)?;

        let mut models = Vec::with_capacity(self.agents.len());
        for (i, a) in self.agents.iter().enumerate() {
            let m = UvmsModel::new(a.uvms.clone()).map_err(|e| match e {
                Error::Validation(s) => Error::Validation(format!("agents[{i}].uvms: {s}")),
                other => other,
            })?;
            models.push(m);
        }
        let agents: Vec<Agent> = models
            .iter()
            .enumerate()
            .map(|(i, m)| Agent::new(m.clone(), object.clone(), geom.points[i], shares.get(i), self.plant.null_motion))
            .collect();
        let plant = Plant::new(models, object, geom, self.plant.baumgarte)?;
        let guesses: Vec<DVector<f64>> = self
            .agents
            .iter()
            .map(|a| DVector::from_iterator(a.uvms.dof(), a.initial_vehicle_pose.iter().chain(&a.uvms.posture.home).copied()))
            .collect();
        let initial = plant.initial_state(&ObjectState::at_rest(pose), &guesses)?;
        for (i, (m, s)) in plant.models.iter().zip(&initial.agents).enumerate() {
            let det = m.singularity_measure(&s.q)?;
            if det <= m.params().singularity_threshold {
                return Err(Error::InfeasibleStart(format!("agent {i} starts near a kinematic singularity (det {det:.3e})")));
            }
            for (k, (&qk, &b)) in s.q.iter().skip(6).zip(&m.params().joint_position_bounds).enumerate() {
                if qk.abs() >= b {
                    return Err(Error::InfeasibleStart(format!("agent {i}: arm joint {k} starts at {qk:.3} rad, outside (-{b}, {b})")));
                }
            }
        }
        Ok(Scenario {
            config: self.clone(),
            world,
            nav,
            waypoints,
            agents,
            plant,
            initial,
        })
    }
}
