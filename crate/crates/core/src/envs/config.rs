use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::compliant::CompliantParams;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::marker::MarkerParams;
use crate::optical::{LightingModel, ShadowParams};
use crate::softbody::{ContactParams, Material, SolverParams};
use crate::tactile_render::SensorConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    BallRolling,
    ObjectLifting,
    BeamTwisting,
    ObjectPushing,
}

impl TaskName {
    pub const ALL: [TaskName; 4] =
        [TaskName::BallRolling, TaskName::ObjectLifting, TaskName::BeamTwisting, TaskName::ObjectPushing];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskName::BallRolling => "ball_rolling",
            TaskName::ObjectLifting => "object_lifting",
            TaskName::BeamTwisting => "beam_twisting",
            TaskName::ObjectPushing => "object_pushing",
        }
    }

    pub fn sensor_count(&self) -> usize {
        match self {
            TaskName::ObjectLifting | TaskName::BeamTwisting => 2,
            TaskName::BallRolling | TaskName::ObjectPushing => 1,
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown environment '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysicsMode {
    /// Kinematic rigid gelpads with compliant penalty contact.
    #[default]
    Rigid,
    /// FEM gelpads and objects solved with barrier contact.
    Soft,
}

impl fmt::Display for PhysicsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhysicsMode::Rigid => "rigid",
            PhysicsMode::Soft => "soft",
        })
    }
}

impl FromStr for PhysicsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rigid" | "rigid-compliant" => Ok(PhysicsMode::Rigid),
            "soft" | "soft-ipc" => Ok(PhysicsMode::Soft),
            _ => Err(Error::config(format!("unknown physics mode '{s}' (rigid | soft)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Icosphere surface (rigid) or layered tet ball (soft) with this subdivision level.
    Sphere { radius: f64, subdivisions: usize },
    Box { half_extents: Vec3, cells: [usize; 3] },
}

/// How an object is held in place.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fixture {
    #[default]
    Free,
    /// Immovable.
    Fixed,
    /// Bottom face clamped to a fixed plate; soft mode only.
    Base,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub material: Material,
    /// Nominal pose of the shape's center before randomization.
    pub pose: Pose,
    #[serde(default)]
    pub fixture: Fixture,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GelConfig {
    pub material: Material,
    /// Tet cells along case (x, y, z).
    pub cells: [usize; 3],
    /// Collider cells of the rigid gel box.
    pub rigid_cells: [usize; 3],
    pub attachment_stiffness: f64,
}

impl Default for GelConfig {
    fn default() -> Self {
        GelConfig {
            material: Material { youngs_modulus: 2e5, poisson_ratio: 0.45, density: 1100.0 },
            cells: [8, 6, 2],
            rigid_cells: [16, 12, 1],
            attachment_stiffness: crate::softbody::DEFAULT_ATTACHMENT_STIFFNESS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Randomization {
    /// Uniform jitter of the object's x and y (m).
    pub position: f64,
    /// Uniform jitter of the object's yaw (rad).
    pub yaw: f64,
}

impl Default for Randomization {
    fn default() -> Self {
        Randomization { position: 5e-3, yaw: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionLimits {
    pub linear: f64,
    pub angular: f64,
    pub grip: f64,
}

impl Default for ActionLimits {
    fn default() -> Self {
        ActionLimits { linear: 0.1, angular: 4.0, grip: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub heightmap: bool,
    pub rgb: bool,
    pub shadows: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { heightmap: true, rgb: true, shadows: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub physics_mode: PhysicsMode,
    pub sensors: Vec<SensorConfig>,
    pub objects: Vec<ObjectSpec>,
    pub gel: GelConfig,
    /// Adds a static ground slab with its top at z = 0.
    pub ground: bool,
    pub gravity: Vec3,
    /// Frame step `dt` plus Newton settings for soft mode.
    pub solver: SolverParams,
    pub contact: ContactParams,
    pub compliant: CompliantParams,
    /// Largest compliant substep (s).
    pub rigid_substep: f64,
    /// Zero-action frames run before the initial state is captured.
    pub settle_steps: usize,
    /// Initial clearance between gel surfaces and the object (m).
    pub approach_gap: f64,
    pub lighting: LightingModel,
    pub shadow: ShadowParams,
    pub marker: MarkerParams,
    pub render: RenderOptions,
    pub randomization: Randomization,
    pub limits: ActionLimits,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            physics_mode: PhysicsMode::Rigid,
            sensors: vec![SensorConfig::default()],
            objects: Vec::new(),
            gel: GelConfig::default(),
            ground: true,
            gravity: Vec3::new(0.0, 0.0, -9.81),
            solver: SolverParams::default(),
            contact: ContactParams { dhat: 2e-4, ..ContactParams::default() },
            compliant: CompliantParams { c_d: 1.0, ..CompliantParams::default() },
            rigid_substep: 1e-3,
            settle_steps: 10,
            approach_gap: 1e-3,
            lighting: LightingModel::default(),
            shadow: ShadowParams::default(),
            marker: MarkerParams::default(),
            render: RenderOptions::default(),
            randomization: Randomization::default(),
            limits: ActionLimits::default(),
            max_steps: 300,
            seed: 0,
        }
    }
}

/// Gap left between resting objects and the ground (m).
pub(crate) const GROUND_GAP: f64 = 1e-4;

fn soft_material(e: f64) -> Material {
    Material { youngs_modulus: e, poisson_ratio: 0.4, density: 1000.0 }
}

impl SceneConfig {
    /// Default scene for a task.
    pub fn preset(task: TaskName, mode: PhysicsMode) -> SceneConfig {
        let base = SceneConfig { physics_mode: mode, sensors: vec![SensorConfig::default(); task.sensor_count()], ..Default::default() };
        let object = |shape: Shape, e: f64, z: f64| ObjectSpec {
            shape,
            material: soft_material(e),
            pose: Pose::from_translation(Vec3::new(0.0, 0.0, z)),
            fixture: Fixture::Free,
        };
        match task {
            TaskName::BallRolling => {
                let r = 6e-3;
                let subdivisions = if mode == PhysicsMode::Soft { 1 } else { 3 };
                SceneConfig {
                    objects: vec![object(Shape::Sphere { radius: r, subdivisions }, 5e5, r + GROUND_GAP)],
                    ..base
                }
            }
            TaskName::ObjectLifting => {
                let h = 8e-3;
                SceneConfig {
                    objects: vec![object(Shape::Box { half_extents: Vec3::repeat(h), cells: [3, 3, 3] }, 1e6, h + GROUND_GAP)],
                    ..base
                }
            }
            TaskName::BeamTwisting => {
                let half = Vec3::new(4e-3, 4e-3, 20e-3);
                SceneConfig {
                    objects: vec![ObjectSpec {
                        fixture: Fixture::Base,
                        ..object(Shape::Box { half_extents: half, cells: [2, 2, 10] }, 1e5, half.z)
                    }],
                    ground: false,
                    ..base
                }
            }
            TaskName::ObjectPushing => {
                let half = Vec3::new(10e-3, 10e-3, 10e-3);
                SceneConfig {
                    objects: vec![object(Shape::Box { half_extents: half, cells: [2, 2, 2] }, 1e6, half.z + GROUND_GAP)],
                    ..base
                }
            }
        }
    }

    pub fn validate_for(&self, task: TaskName) -> Result<()> {
        if self.sensors.is_empty() {
            return Err(Error::config("at least one sensor is required"));
        }
        if self.sensors.len() != task.sensor_count() {
            return Err(Error::config(format!(
                "{task} needs {} sensor(s), config has {}",
                task.sensor_count(),
                self.sensors.len()
            )));
        }
        if task == TaskName::BeamTwisting && self.physics_mode != PhysicsMode::Soft {
            return Err(Error::config("beam_twisting simulates the beam as a soft body and requires soft mode"));
        }
        if self.objects.is_empty() {
            return Err(Error::config("at least one object is required"));
        }
        for s in &self.sensors {
            s.validate().map_err(|e| Error::config(format!("sensor: {e}")))?;
        }
        for (i, o) in self.objects.iter().enumerate() {
            o.material.validate().map_err(|e| Error::config(format!("object {i}: {e}")))?;
            match o.shape {
                Shape::Sphere { radius, .. } if !(radius > 0.0 && radius.is_finite()) => {
                    return Err(Error::config(format!("object {i}: sphere radius must be > 0")));
                }
                Shape::Box { half_extents, cells } => {
                    if !half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) || cells.contains(&0) {
                        return Err(Error::config(format!("object {i}: box needs positive half extents and cells")));
                    }
                }
                _ => {}
            }
            if !o.pose.is_finite() {
                return Err(Error::config(format!("object {i}: pose is not finite")));
            }
            if o.fixture == Fixture::Base && self.physics_mode == PhysicsMode::Rigid {
                return Err(Error::config(format!("object {i}: base fixture needs soft mode")));
            }
        }
        let g = &self.gel;
        g.material.validate().map_err(|e| Error::config(format!("gel: {e}")))?;
        if g.cells.contains(&0) || g.rigid_cells.contains(&0) || !(g.attachment_stiffness > 0.0) {
            return Err(Error::config("gel cells and attachment stiffness must be positive"));
        }
        match self.physics_mode {
            PhysicsMode::Soft => {
                self.solver.validate().map_err(|e| Error::config(format!("solver: {e}")))?;
                self.contact.validate().map_err(|e| Error::config(format!("contact: {e}")))?;
            }
            PhysicsMode::Rigid => {
                if !(self.solver.dt > 0.0 && self.solver.dt.is_finite()) {
                    return Err(Error::config("solver.dt must be > 0"));
                }
                self.compliant.validate().map_err(|e| Error::config(format!("compliant: {e}")))?;
                if !(self.rigid_substep > 0.0 && self.rigid_substep.is_finite()) {
                    return Err(Error::config("rigid_substep must be > 0"));
                }
            }
        }
        self.lighting.validate().map_err(|e| Error::config(format!("lighting: {e}")))?;
        self.marker.validate().map_err(|e| Error::config(format!("marker: {e}")))?;
        let r = &self.randomization;
        let l = &self.limits;
        let nonneg = [r.position, r.yaw, l.linear, l.angular, l.grip, self.approach_gap];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::config("randomization, limits and approach gap must be finite and >= 0"));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::config("gravity must be finite"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<SceneConfig> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("scene config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SceneConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Applies `key=value` overrides with dotted keys, e.g. `contact.mu_s=0`.
    ///
    /// Values are parsed as JSON, falling back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<SceneConfig> {
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| Error::config(format!("override '{o}' is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut v, key, value)?;
        }
        serde_json::from_value(v).map_err(|e| Error::config(format!("after overrides: {e}")))
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if !map.contains_key(*part) {
                    return Err(Error::config(format!("unknown config key '{key}'")));
                }
                map.get_mut(*part).expect("checked")
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| Error::config(format!("'{part}' in '{key}' is not an index")))?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| Error::config(format!("index {idx} out of range ({len}) in '{key}'")))?
            }
            _ => return Err(Error::config(format!("'{key}' descends into a scalar"))),
        };
        if last {
            *cur = value;
            return Ok(());
        }
    }
    Err(Error::config("empty override key"))
}
